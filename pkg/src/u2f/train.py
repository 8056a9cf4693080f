"""Loss, metrics, Adam, dataset splitting and the training loop."""
import csv
import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

FRAMES = 30
EVAL_BATCH = 10  # fixed so dev metrics do not depend on the training batch size


# ---------------------------------------------------------------------------
# Loss and metrics
# ---------------------------------------------------------------------------

def mae_loss(pred, target):
    """Mean absolute error and its gradient with respect to ``pred``.

    The subgradient at exact ties is 0.
    """
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.abs(diff).mean()), np.sign(diff) / diff.size


def joint_mae_loss(pred_f1, pred_f2, target_f1, target_f2):
    """Mean of the two heads' MAE, with gradients for both heads."""
    l1, g1 = mae_loss(pred_f1, target_f1)
    l2, g2 = mae_loss(pred_f2, target_f2)
    return 0.5 * (l1 + l2), 0.5 * g1, 0.5 * g2


def r_squared(pred, target):
    """Coefficient of determination ``1 - SS_res / SS_tot`` of one trajectory."""
    pred = np.asarray(pred, dtype=float).ravel()
    target = np.asarray(target, dtype=float).ravel()
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    ss_tot = np.sum((target - target.mean()) ** 2)
    if ss_tot == 0:
        raise ValueError("R^2 is undefined for a constant target")
    return 1.0 - np.sum((target - pred) ** 2) / ss_tot


def mean_r_squared(pred, target):
    """Average per-sample R^2 over the rows of (N, L) arrays."""
    return float(np.mean([r_squared(p, t) for p, t in zip(pred, target)]))


def pooled_r_squared(pred, target):
    """R^2 of per-sample trajectories with each sample's own mean as baseline,
    pooled over samples (``1 - sum SS_res / sum SS_tot``)."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    ss_res = np.sum((target - pred) ** 2)
    ss_tot = np.sum((target - target.mean(axis=1, keepdims=True)) ** 2)
    if ss_tot == 0:
        raise ValueError("R^2 is undefined for constant targets")
    return float(1.0 - ss_res / ss_tot)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(state, params, grads):
    """Bias-corrected Adam update of ``params`` (name -> array) in place.

    Raises FloatingPointError before touching anything if a gradient is not
    finite.
    """
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, g in grads.items():
        p = params[name]
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


# ---------------------------------------------------------------------------
# Splitting and normalization
# ---------------------------------------------------------------------------

@dataclass
class SplitSpec:
    fractions: tuple = (0.8, 0.1, 0.1)
    seed: int = 0


def split_dataset(n, spec=None):
    """Seeded shuffle into train/dev/test of sizes floor(0.8n), floor(0.1n), rest."""
    spec = SplitSpec() if spec is None else spec
    if n < 10:
        raise ValueError(f"need at least 10 samples to split, got {n}")
    perm = np.random.default_rng(spec.seed).permutation(n)
    n_train = int(np.floor(spec.fractions[0] * n))
    n_dev = int(np.floor(spec.fractions[1] * n))
    return perm[:n_train], perm[n_train:n_train + n_dev], perm[n_train + n_dev:]


@dataclass
class Normalizer:
    """Per-formant min-max scaling between Hz and [0, 1]."""
    f1_min: float
    f1_max: float
    f2_min: float
    f2_max: float

    @classmethod
    def fit(cls, labels):
        labels = np.asarray(labels, dtype=float)
        f1, f2 = labels[:, :FRAMES], labels[:, FRAMES:]
        norm = cls(float(f1.min()), float(f1.max()), float(f2.min()), float(f2.max()))
        if not (norm.f1_min < norm.f1_max and norm.f2_min < norm.f2_max):
            raise ValueError("training labels have no range; cannot normalize")
        return norm

    def as_tuple(self):
        return (self.f1_min, self.f1_max, self.f2_min, self.f2_max)

    def normalize(self, labels):
        labels = np.asarray(labels, dtype=float)
        return np.concatenate([
            (labels[:, :FRAMES] - self.f1_min) / (self.f1_max - self.f1_min),
            (labels[:, FRAMES:] - self.f2_min) / (self.f2_max - self.f2_min)], axis=1)

    def denormalize(self, f1, f2):
        return (np.asarray(f1) * (self.f1_max - self.f1_min) + self.f1_min,
                np.asarray(f2) * (self.f2_max - self.f2_min) + self.f2_min)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    """Regression metrics; MAE values are in normalized units.

    ``mean_r2`` is the per-sample R^2 of the concatenated f1/f2 trajectory in
    Hz averaged over samples.  ``r2_f1`` / ``r2_f2`` pool residuals over
    samples for one formant, and ``mean_r2_normalized`` repeats the
    concatenated metric on the normalized scale.
    """
    mae_f1: float
    mae_f2: float
    mae: float
    r2_f1: float
    r2_f2: float
    mean_r2: float
    mean_r2_normalized: float
    predicted_hz: np.ndarray = field(repr=False, default=None)
    target_hz: np.ndarray = field(repr=False, default=None)

    def as_row(self):
        return {k: getattr(self, k) for k in
                ("mae_f1", "mae_f2", "mae", "r2_f1", "r2_f2", "mean_r2", "mean_r2_normalized")}


def predict(model, clips, indices=None, batch_size=EVAL_BATCH):
    """Run inference; returns normalized ``(f1, f2)`` arrays of shape (N, 30)."""
    indices = np.arange(len(clips)) if indices is None else np.asarray(indices)
    out1, out2 = [], []
    for start in range(0, len(indices), batch_size):
        idx = indices[start:start + batch_size]
        x = np.asarray(clips[idx], dtype=np.float64)[:, None]
        f1, f2 = model.forward(x, training=False)
        out1.append(f1)
        out2.append(f2)
    return np.concatenate(out1), np.concatenate(out2)


def evaluate(model, clips, labels, indices=None, batch_size=EVAL_BATCH, norm=None):
    norm = _model_norm(model) if norm is None else norm
    indices = np.arange(len(clips)) if indices is None else np.asarray(indices)
    p1, p2 = predict(model, clips, indices, batch_size)
    target_n = norm.normalize(labels[indices])
    pred_n = np.concatenate([p1, p2], axis=1)
    h1, h2 = norm.denormalize(p1, p2)
    pred_hz = np.concatenate([h1, h2], axis=1)
    target_hz = np.asarray(labels[indices], dtype=float)
    mae_f1 = float(np.abs(p1 - target_n[:, :FRAMES]).mean())
    mae_f2 = float(np.abs(p2 - target_n[:, FRAMES:]).mean())
    return EvalReport(
        mae_f1=mae_f1, mae_f2=mae_f2, mae=0.5 * (mae_f1 + mae_f2),
        r2_f1=pooled_r_squared(h1, target_hz[:, :FRAMES]),
        r2_f2=pooled_r_squared(h2, target_hz[:, FRAMES:]),
        mean_r2=mean_r_squared(pred_hz, target_hz),
        mean_r2_normalized=mean_r_squared(pred_n, target_n),
        predicted_hz=pred_hz, target_hz=target_hz)


def _model_norm(model):
    if model.norm is None:
        raise ValueError("model carries no normalization constants; train it first")
    return Normalizer(*model.norm)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    train_mae: float
    dev_mae: float
    dev_mean_r2: float


def train_loop(model, clips, labels, epochs=100, batch_size=10, learning_rate=1e-3,
               seed=0, split=None, adam=None, progress=None):
    """Train ``model`` in place on min-max normalized targets.

    ``clips`` is (N, 30, 50, 82), ``labels`` (N, 60) in Hz.  Normalization
    constants come from the training split only and are stored on the model
    as ``model.norm``.  Returns ``(model, history, splits)``.
    """
    n = len(clips)
    if n == 0:
        raise ValueError("empty dataset")
    if len(labels) != n:
        raise ValueError(f"{n} clips but {len(labels)} label rows")
    split = SplitSpec(seed=seed) if split is None else split
    train_idx, dev_idx, test_idx = split_dataset(n, split)
    if batch_size < 1 or batch_size > len(train_idx):
        raise ValueError(f"batch size {batch_size} must be in [1, {len(train_idx)}] "
                         f"(training split size)")
    norm = Normalizer.fit(labels[train_idx])
    model.norm = norm.as_tuple()
    targets = norm.normalize(labels)
    adam = AdamState(learning_rate=learning_rate) if adam is None else adam
    order_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    params = dict(model.named_parameters())

    history = []
    for epoch in range(1, epochs + 1):
        perm = order_rng.permutation(train_idx)
        total = 0.0
        for start in range(0, len(perm), batch_size):
            idx = perm[start:start + batch_size]
            x = np.asarray(clips[idx], dtype=np.float64)[:, None]
            y = targets[idx]
            f1, f2 = model.forward(x, training=True)
            loss, g1, g2 = joint_mae_loss(f1, f2, y[:, :FRAMES], y[:, FRAMES:])
            model.zero_grad()
            model.backward(g1, g2, input_grad=False)
            adam_step(adam, params, dict(model.named_gradients()))
            total += loss * len(idx)
        model.epoch = epoch
        train_mae = total / len(perm)
        if len(dev_idx):
            dev = evaluate(model, clips, labels, dev_idx, EVAL_BATCH, norm)
            rec = EpochRecord(epoch, train_mae, dev.mae, dev.mean_r2)
        else:
            rec = EpochRecord(epoch, train_mae, float("nan"), float("nan"))
        history.append(rec)
        logger.info("epoch %d train_mae %.5f dev_mae %.5f dev_mean_r2 %.5f",
                    rec.epoch, rec.train_mae, rec.dev_mae, rec.dev_mean_r2)
        if progress is not None:
            progress(rec)
    return model, history, (train_idx, dev_idx, test_idx)


def write_history(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "trainMAE", "devMAE", "devMeanR2"])
        for rec in history:
            w.writerow([rec.epoch, repr(rec.train_mae), repr(rec.dev_mae), repr(rec.dev_mean_r2)])


def read_history(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [EpochRecord(int(r["epoch"]), float(r["trainMAE"]), float(r["devMAE"]),
                        float(r["devMeanR2"])) for r in rows]
