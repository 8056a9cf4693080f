import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from u2f.checkpoint import encode_checkpoint
from u2f.model import build_model
from u2f.train import (AdamState, Normalizer, SplitSpec, adam_step, evaluate, joint_mae_loss,
                       mae_loss, mean_r_squared, pooled_r_squared, r_squared, read_history,
                       split_dataset, train_loop, write_history)


def test_mae_examples():
    t = np.linspace(0, 1, 30)
    assert mae_loss(t, t)[0] == 0
    assert mae_loss(t + 0.1, t)[0] == pytest.approx(0.1)


def test_mae_gradient_is_sign_over_count():
    pred = np.array([0.2, 0.5, 0.9, 0.4])
    target = np.array([0.3, 0.5, 0.1, 0.0])
    _, g = mae_loss(pred, target)
    assert g.tolist() == [-0.25, 0.0, 0.25, 0.25]


def test_joint_loss_is_mean_of_heads():
    rng = np.random.default_rng(0)
    p1, p2, t1, t2 = rng.uniform(size=(4, 2, 30))
    loss, g1, g2 = joint_mae_loss(p1, p2, t1, t2)
    assert loss == pytest.approx(0.5 * (np.abs(p1 - t1).mean() + np.abs(p2 - t2).mean()))
    np.testing.assert_array_equal(g1, 0.5 * mae_loss(p1, t1)[1])


def test_r2_examples():
    t = np.linspace(300, 800, 60)
    assert r_squared(t, t) == 1.0
    assert r_squared(np.full_like(t, t.mean()), t) == pytest.approx(0.0, abs=1e-15)
    assert r_squared([0, 1, 3], [0, 1, 2]) == pytest.approx(0.5)


def test_r2_constant_target():
    with pytest.raises(ValueError):
        r_squared([1, 2, 3], [2, 2, 2])


@given(arrays(np.float64, 12, elements=st.floats(-5, 5)), arrays(np.float64, 12, elements=st.floats(-5, 5)))
def test_r2_at_most_one(pred, target):
    if np.ptp(target) < 1e-3:
        return
    assert r_squared(pred, target) <= 1.0 + 1e-12


def test_mean_and_pooled_r2():
    target = np.array([[0.0, 1.0, 2.0], [0.0, 2.0, 4.0]])
    pred = np.array([[0.0, 1.0, 3.0], [0.0, 2.0, 4.0]])
    assert mean_r_squared(pred, target) == pytest.approx(0.75)
    # SSres = 1, SStot = 2 + 8
    assert pooled_r_squared(pred, target) == pytest.approx(0.9)


def test_adam_zero_gradient_and_zero_lr():
    p = {"w": np.array([1.0, -2.0])}
    adam_step(AdamState(), p, {"w": np.zeros(2)})
    assert p["w"].tolist() == [1.0, -2.0]
    adam_step(AdamState(learning_rate=0.0), p, {"w": np.array([3.0, 4.0])})
    assert p["w"].tolist() == [1.0, -2.0]


def test_adam_first_step():
    # m_hat = 1, v_hat = 1, so the step is lr * 1 / (1 + eps)
    p = {"w": np.array([0.5])}
    adam_step(AdamState(learning_rate=0.001), p, {"w": np.array([1.0])})
    assert abs((0.5 - p["w"][0]) - 0.001) < 1e-5
    assert 0.5 - p["w"][0] == pytest.approx(0.001 / (1 + 1e-8), rel=1e-12)


def test_adam_second_step_by_hand():
    p = {"w": np.array([0.0])}
    s = AdamState(learning_rate=0.1)
    adam_step(s, p, {"w": np.array([1.0])})
    adam_step(s, p, {"w": np.array([-2.0])})
    m = 0.9 * 0.1 * 1.0 + 0.1 * -2.0
    v = 0.999 * 0.001 * 1.0 + 0.001 * 4.0
    m_hat, v_hat = m / (1 - 0.9 ** 2), v / (1 - 0.999 ** 2)
    expected = -0.1 * (1 / (1 + 1e-8)) - 0.1 * m_hat / (np.sqrt(v_hat) + 1e-8)
    assert p["w"][0] == pytest.approx(expected, rel=1e-12)


def test_adam_rejects_non_finite():
    p = {"w": np.array([1.0, 2.0])}
    s = AdamState()
    with pytest.raises(FloatingPointError):
        adam_step(s, p, {"w": np.array([np.nan, 0.0])})
    assert p["w"].tolist() == [1.0, 2.0] and s.step == 0


@pytest.mark.parametrize("n,sizes", [(10, (8, 1, 1)), (13082, (10465, 1308, 1309)), (2000, (1600, 200, 200))])
def test_split_sizes(n, sizes):
    parts = split_dataset(n, SplitSpec(seed=0))
    assert tuple(len(p) for p in parts) == sizes
    assert sorted(np.concatenate(parts).tolist()) == list(range(n))


def test_split_seeding():
    a = split_dataset(500, SplitSpec(seed=1))
    b = split_dataset(500, SplitSpec(seed=1))
    c = split_dataset(500, SplitSpec(seed=2))
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not np.array_equal(a[0], c[0])


def test_split_too_small():
    with pytest.raises(ValueError):
        split_dataset(9)


def test_normalizer_roundtrip():
    rng = np.random.default_rng(0)
    labels = np.concatenate([rng.uniform(300, 800, (5, 30)), rng.uniform(900, 2200, (5, 30))], axis=1)
    norm = Normalizer.fit(labels)
    z = norm.normalize(labels)
    assert z.min() == 0 and z.max() == 1
    h1, h2 = norm.denormalize(z[:, :30], z[:, 30:])
    np.testing.assert_allclose(np.concatenate([h1, h2], axis=1), labels, rtol=1e-13)


def test_training_reduces_loss(reduced_config, tiny_dataset):
    clips, labels = tiny_dataset
    model = build_model(reduced_config, seed=0)
    _, history, splits = train_loop(model, clips, labels, epochs=5, batch_size=10, seed=0)
    assert [len(s) for s in splits] == [51, 6, 7]
    assert history[-1].train_mae < history[0].train_mae
    assert model.epoch == 5 and model.norm is not None
    norm = Normalizer.fit(labels[splits[0]])
    assert model.norm == norm.as_tuple()
    dev = evaluate(model, clips, labels, splits[1])
    assert dev.mae == history[-1].dev_mae and dev.mean_r2 == history[-1].dev_mean_r2


def test_training_is_deterministic(reduced_config, tiny_dataset):
    clips, labels = tiny_dataset
    runs = []
    for _ in range(2):
        model = build_model(reduced_config, seed=3)
        _, history, _ = train_loop(model, clips[:20], labels[:20], epochs=1, batch_size=4, seed=3)
        runs.append((encode_checkpoint(model), history))
    assert runs[0][0] == runs[1][0]
    assert runs[0][1] == runs[1][1]


def test_batch_larger_than_training_split(reduced_config, tiny_dataset):
    clips, labels = tiny_dataset
    with pytest.raises(ValueError):
        train_loop(build_model(reduced_config), clips[:10], labels[:10], epochs=1, batch_size=20)


def test_empty_dataset(reduced_config):
    with pytest.raises(ValueError):
        train_loop(build_model(reduced_config), np.zeros((0, 30, 50, 82)), np.zeros((0, 60)))


def test_history_csv_roundtrip(tmp_path):
    from u2f.train import EpochRecord
    history = [EpochRecord(1, 0.25000000000000011, 0.1, 0.8), EpochRecord(2, 0.125, 0.05, 0.91)]
    path = tmp_path / "h.csv"
    write_history(path, history)
    assert path.read_text().splitlines()[0] == "epoch,trainMAE,devMAE,devMeanR2"
    assert read_history(path) == history
