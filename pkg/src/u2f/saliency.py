"""Gradient-magnitude saliency maps for a trained model."""
import numpy as np


def _nearest_indices(n_in, n_out):
    return (np.arange(n_out) * n_in) // n_out


def _scale_frames(maps):
    lo = maps.min(axis=(1, 2), keepdims=True)
    hi = maps.max(axis=(1, 2), keepdims=True)
    span = hi - lo
    return np.where(span > 0, (maps - lo) / np.where(span > 0, span, 1.0), 0.0)


def compute_saliency(model, clip, mode="input"):
    """Per-frame saliency of ``sum(f1) + sum(f2)`` for one clip.

    ``mode="input"`` returns ``|d out / d pixel|``.  ``mode="lastconv"`` uses
    the channel mean of ``|d out / d a|`` over the last convolutional block's
    activation (before pooling), upsampled by nearest neighbour to the clip
    size.  Each frame is min-max scaled to [0, 1]; flat frames become zero.
    """
    if mode not in ("input", "lastconv"):
        raise ValueError(f"mode must be 'input' or 'lastconv', got {mode!r}")
    for name, p in model.named_parameters():
        if not np.all(np.isfinite(p)):
            raise ValueError(f"parameter {name} is not finite")
    clip = np.asarray(clip, dtype=np.float64)
    if clip.ndim != 3:
        raise ValueError(f"expected one (T, H, W) clip, got shape {clip.shape}")
    f1, f2 = model.forward(clip[None, None], training=False)
    model.zero_grad()
    grad_x = model.backward(np.ones_like(f1), np.ones_like(f2), input_grad=(mode == "input"))
    if mode == "input":
        maps = np.abs(grad_x[0, 0])
    else:
        g = np.abs(model.activation_grads["last_conv"][0]).mean(axis=0)
        T, H, W = clip.shape
        ti = _nearest_indices(g.shape[0], T)
        hi = _nearest_indices(g.shape[1], H)
        wi = _nearest_indices(g.shape[2], W)
        maps = g[np.ix_(ti, hi, wi)]
    return _scale_frames(maps)
