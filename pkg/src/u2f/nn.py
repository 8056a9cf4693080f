"""Differentiable tensor kernels used by the U2F network.

Every operation comes as a ``*_forward`` function returning ``(output, ctx)``
and a matching ``*_backward(ctx, grad_output)`` returning gradients with
respect to the differentiable inputs.  Tensors are plain ``numpy`` arrays in
``(batch, channels, time, height, width)`` layout; all math runs in float64.
"""
from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    """Raised when tensor extents do not satisfy an operation's contract."""


def _as_triple(value):
    if np.isscalar(value):
        return (int(value),) * 3
    value = tuple(int(v) for v in value)
    if len(value) != 3:
        raise ShapeError(f"expected 3 values, got {value}")
    return value


# ---------------------------------------------------------------------------
# 3D convolution (stride 1, zero padding, grouped)
# ---------------------------------------------------------------------------

def conv3d_forward(x, weight, bias=None, padding=0, groups=1):
    """Grouped 3D convolution with unit stride.

    Parameters
    ----------
    x : ndarray, shape (B, Cin, T, H, W)
    weight : ndarray, shape (Cout, Cin // groups, kt, kh, kw)
    bias : ndarray of shape (Cout,) or None
    padding : int or (pt, ph, pw)
        Zero padding added on both sides of each axis.
    groups : int
        Input group ``g`` only feeds output group ``g``.

    Returns
    -------
    out : ndarray, shape (B, Cout, T', H', W') with ``T' = T + 2*pt - kt + 1``
    ctx : tuple
        Saved state for :func:`conv3d_backward`.
    """
    if x.ndim != 5 or weight.ndim != 5:
        raise ShapeError(f"conv3d expects 5-D input and weight, got {x.shape} and {weight.shape}")
    B, cin, T, H, W = x.shape
    cout, cg, kt, kh, kw = weight.shape
    if groups < 1 or cin % groups or cout % groups:
        raise ShapeError(f"groups={groups} must divide in_channels={cin} and out_channels={cout}")
    if cg != cin // groups:
        raise ShapeError(
            f"weight expects {cg * groups} input channels (groups={groups}), input has {cin}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"bias shape {bias.shape} != ({cout},)")
    pt, ph, pw = _as_triple(padding)
    To, Ho, Wo = T + 2 * pt - kt + 1, H + 2 * ph - kh + 1, W + 2 * pw - kw + 1
    if min(To, Ho, Wo) < 1:
        raise ShapeError(f"kernel {(kt, kh, kw)} larger than padded input {(T, H, W)}")

    K = kt * kh * kw
    N = To * Ho * Wo
    cog = cout // groups
    if K == 1 and (pt, ph, pw) == (0, 0, 0):
        cols = x.reshape(B, groups, cg, N)
    else:
        xp = np.pad(x, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)))
        cols = np.empty((B, cin, K, To, Ho, Wo))
        k = 0
        for dt in range(kt):
            for dh in range(kh):
                for dw in range(kw):
                    cols[:, :, k] = xp[:, :, dt:dt + To, dh:dh + Ho, dw:dw + Wo]
                    k += 1
        cols = cols.reshape(B, groups, cg * K, N)
    wmat = weight.reshape(groups, cog, cg * K)
    out = np.matmul(wmat, cols)
    out = out.reshape(B, cout, To, Ho, Wo)
    if bias is not None:
        out += bias.reshape(1, cout, 1, 1, 1)
    ctx = (cols, weight, bias is not None, x.shape, (pt, ph, pw), groups)
    return out, ctx


def conv3d_backward(ctx, grad_out):
    """Return ``(grad_input, grad_weight, grad_bias)`` for :func:`conv3d_forward`.

    ``grad_bias`` is None when the forward pass had no bias.
    """
    cols, weight, has_bias, in_shape, (pt, ph, pw), groups = ctx
    B, cin, T, H, W = in_shape
    cout, cg, kt, kh, kw = weight.shape
    To, Ho, Wo = T + 2 * pt - kt + 1, H + 2 * ph - kh + 1, W + 2 * pw - kw + 1
    if grad_out.shape != (B, cout, To, Ho, Wo):
        raise ShapeError(f"upstream gradient {grad_out.shape} != forward output {(B, cout, To, Ho, Wo)}")
    K = kt * kh * kw
    N = To * Ho * Wo
    cog = cout // groups
    g = grad_out.reshape(B, groups, cog, N)

    grad_w = np.matmul(g, cols.transpose(0, 1, 3, 2)).sum(axis=0).reshape(weight.shape)
    grad_b = grad_out.sum(axis=(0, 2, 3, 4)) if has_bias else None

    wmat = weight.reshape(groups, cog, cg * K)
    dcols = np.matmul(wmat.transpose(0, 2, 1), g)
    if K == 1 and (pt, ph, pw) == (0, 0, 0):
        return dcols.reshape(in_shape), grad_w, grad_b
    dcols = dcols.reshape(B, cin, K, To, Ho, Wo)
    dxp = np.zeros((B, cin, T + 2 * pt, H + 2 * ph, W + 2 * pw))
    k = 0
    for dt in range(kt):
        for dh in range(kh):
            for dw in range(kw):
                dxp[:, :, dt:dt + To, dh:dh + Ho, dw:dw + Wo] += dcols[:, :, k]
                k += 1
    grad_x = dxp[:, :, pt:pt + T, ph:ph + H, pw:pw + W]
    return np.ascontiguousarray(grad_x), grad_w, grad_b


# ---------------------------------------------------------------------------
# Batch normalization over (B, T, H, W) per channel
# ---------------------------------------------------------------------------

def _channel_dot(a, b):
    B, C = a.shape[:2]
    return np.einsum("bcn,bcn->c", a.reshape(B, C, -1), b.reshape(B, C, -1))


def batch_norm3d_forward(x, gamma, beta, running_mean, running_var,
                         training=True, eps=1e-5):
    """Per-channel batch normalization for 5-D activations.

    In training mode the batch statistics are used and returned in ``ctx``
    (as ``ctx["batch_mean"]`` / ``ctx["batch_var"]``, the latter unbiased) so
    the caller can update its running buffers.  Inference mode normalizes with
    ``running_mean`` / ``running_var``.
    """
    C = x.shape[1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError(f"gamma/beta must have shape ({C},), got {gamma.shape}, {beta.shape}")
    if eps <= 0:
        raise ValueError("eps must be positive")
    shape = (1, C) + (1,) * (x.ndim - 2)
    axes = (0,) + tuple(range(2, x.ndim))
    m = x.size // C
    if training:
        if m < 2:
            raise ValueError("batch norm in training mode needs more than one value per channel")
        mean = x.mean(axis=axes)
        xc = x - mean.reshape(shape)
        var = _channel_dot(xc, xc) / m
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = xc
        xhat *= inv_std.reshape(shape)
        out = xhat * gamma.reshape(shape)
        out += beta.reshape(shape)
        ctx = {"xhat": xhat, "inv_std": inv_std, "gamma": gamma, "training": True,
               "batch_mean": mean, "batch_var": var * m / (m - 1)}
    else:
        inv_std = 1.0 / np.sqrt(running_var + eps)
        scale = gamma * inv_std
        out = x * scale.reshape(shape)
        out += (beta - running_mean * scale).reshape(shape)
        ctx = {"x": x, "inv_std": inv_std, "gamma": gamma, "running_mean": running_mean,
               "training": False}
    return out, ctx


def batch_norm3d_backward(ctx, grad_out):
    """Return ``(grad_input, grad_gamma, grad_beta)``."""
    gamma = ctx["gamma"]
    C = gamma.shape[0]
    shape = (1, C) + (1,) * (grad_out.ndim - 2)
    axes = (0,) + tuple(range(2, grad_out.ndim))
    grad_beta = grad_out.sum(axis=axes)
    inv_std = ctx["inv_std"]
    if ctx["training"]:
        xhat = ctx["xhat"]
        if grad_out.shape != xhat.shape:
            raise ShapeError(f"upstream gradient {grad_out.shape} != forward output {xhat.shape}")
        m = grad_out.size // C
        grad_gamma = _channel_dot(grad_out, xhat)
        # dx = gamma * inv_std * (g - mean(g) - xhat * mean(g * xhat))
        grad_x = xhat * (-grad_gamma / m).reshape(shape)
        grad_x += grad_out
        grad_x -= (grad_beta / m).reshape(shape)
        grad_x *= (gamma * inv_std).reshape(shape)
    else:
        x = ctx["x"]
        xhat = (x - ctx["running_mean"].reshape(shape)) * inv_std.reshape(shape)
        grad_gamma = _channel_dot(grad_out, xhat)
        grad_x = grad_out * (gamma * inv_std).reshape(shape)
    return grad_x, grad_gamma, grad_beta


# ---------------------------------------------------------------------------
# Elementwise / pooling / dense
# ---------------------------------------------------------------------------

def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(mask, grad_out):
    return grad_out * mask


_WINDOW_OFFSETS = [(a, b, c) for a in (0, 1) for b in (0, 1) for c in (0, 1)]


def _window_views(x):
    B, C, T, H, W = x.shape
    To, Ho, Wo = T // 2, H // 2, W // 2
    return [x[:, :, a:2 * To:2, b:2 * Ho:2, c:2 * Wo:2] for a, b, c in _WINDOW_OFFSETS]


def max_pool3d_forward(x, kernel=2, stride=2):
    """Non-overlapping 2x2x2 max pooling over (T, H, W).

    Trailing odd rows are dropped, so every output extent is ``floor(n / 2)``.
    Ties resolve to the first element of the window in (t, h, w) scan order.
    """
    if kernel != 2 or stride != 2:
        raise ValueError("only kernel=2, stride=2 pooling is supported")
    if x.ndim != 5:
        raise ShapeError(f"max pool expects 5-D input, got {x.shape}")
    if min(x.shape[2:]) < 2:
        raise ShapeError(f"cannot pool axes {x.shape[2:]}: every extent must be >= 2")
    views = _window_views(x)
    out = views[0].copy()
    for v in views[1:]:
        np.maximum(out, v, out=out)
    idx = np.full(out.shape, 7, dtype=np.uint8)
    for k in range(6, -1, -1):
        idx[views[k] == out] = k
    return out, (idx, x.shape)


def max_pool3d_backward(ctx, grad_out):
    idx, in_shape = ctx
    if grad_out.shape != idx.shape:
        raise ShapeError(f"upstream gradient {grad_out.shape} != pooled shape {idx.shape}")
    grad_x = np.zeros(in_shape)
    for k, view in enumerate(_window_views(grad_x)):
        view[...] = np.where(idx == k, grad_out, 0.0)
    return grad_x


def linear_forward(x, weight, bias):
    """Affine map ``x @ weight.T + bias`` for ``x`` of shape (B, n), weight (m, n)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"linear: bias {bias.shape} != ({weight.shape[0]},)")
    return x @ weight.T + bias, (x, weight)


def linear_backward(ctx, grad_out):
    x, weight = ctx
    if grad_out.shape != (x.shape[0], weight.shape[0]):
        raise ShapeError(f"upstream gradient {grad_out.shape} != {(x.shape[0], weight.shape[0])}")
    return grad_out @ weight, grad_out.T @ x, grad_out.sum(axis=0)


# ---------------------------------------------------------------------------
# Channel permutations
# ---------------------------------------------------------------------------

def shuffle_permutation(channels, groups):
    """Source channel for each output position of a ``groups``-way shuffle.

    Input channel ``g * N + c`` (``N = channels // groups``) lands at output
    position ``c * groups + g``.
    """
    if groups < 1 or channels % groups:
        raise ShapeError(f"groups={groups} does not divide channels={channels}")
    n = channels // groups
    return np.arange(channels).reshape(groups, n).T.reshape(-1)


def channel_shuffle(x, groups):
    B, C = x.shape[:2]
    if groups < 1 or C % groups:
        raise ShapeError(f"groups={groups} does not divide channels={C}")
    rest = x.shape[2:]
    out = x.reshape((B, groups, C // groups) + rest).swapaxes(1, 2)
    return out.reshape(x.shape)


def channel_shuffle_backward(grad_out, groups):
    """Inverse permutation of :func:`channel_shuffle`."""
    C = grad_out.shape[1]
    return channel_shuffle(grad_out, C // groups)


def channel_split(x, sizes):
    sizes = [int(s) for s in sizes]
    if any(s <= 0 for s in sizes):
        raise ShapeError(f"split sizes must be positive, got {sizes}")
    if sum(sizes) != x.shape[1]:
        raise ShapeError(f"split sizes {sizes} do not sum to {x.shape[1]} channels")
    bounds = np.cumsum([0] + sizes)
    return [x[:, a:b] for a, b in zip(bounds[:-1], bounds[1:])]


def channel_concat(parts):
    return np.concatenate(parts, axis=1)


# ---------------------------------------------------------------------------
# Finite-difference gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    per_input: dict = field(default_factory=dict)

    def passed(self, tol):
        return self.max_rel_error < tol


def relative_error(analytic, numeric, floor=1e-8):
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def finite_difference_check(forward, backward, inputs, step=1e-5, seed=0, check=None):
    """Compare analytic gradients to central differences.

    ``forward(*inputs)`` must return ``(out, ctx)``; ``backward(ctx, g)``
    returns one gradient per input (None for inputs that are not
    differentiated).  The scalar probed is ``sum(out * R)`` for a fixed random
    ``R``.  ``check`` optionally restricts the checked input positions.
    """
    inputs = [np.array(a, dtype=np.float64) for a in inputs]
    rng = np.random.default_rng(seed)
    out, ctx = forward(*inputs)
    proj = rng.standard_normal(out.shape)
    grads = backward(ctx, proj)
    if not isinstance(grads, (tuple, list)):
        grads = (grads,)

    def loss():
        return float(np.sum(forward(*inputs)[0] * proj))

    report = GradCheckReport(max_rel_error=0.0)
    positions = range(len(inputs)) if check is None else check
    for i in positions:
        if grads[i] is None:
            continue
        a = inputs[i]
        numeric = np.zeros_like(a)
        flat = a.reshape(-1)
        num_flat = numeric.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            up = loss()
            flat[j] = orig - step
            down = loss()
            flat[j] = orig
            num_flat[j] = (up - down) / (2 * step)
        err = float(relative_error(grads[i], numeric).max()) if a.size else 0.0
        report.per_input[i] = err
        report.max_rel_error = max(report.max_rel_error, err)
    return report


# ---------------------------------------------------------------------------
# Fused single-channel stem: 1x1x1 conv -> batch norm -> ReLU -> 2x max pool
# ---------------------------------------------------------------------------

def _window_extrema(x):
    """Max and min of each 2x2x2 window of a (B, 1, T, H, W) array, with the
    in-window index of their first occurrence."""
    B, _, T, H, W = x.shape
    To, Ho, Wo = T // 2, H // 2, W // 2
    win = x[:, 0, :2 * To, :2 * Ho, :2 * Wo].reshape(B, To, 2, Ho, 2, Wo, 2)
    win = win.transpose(0, 1, 3, 5, 2, 4, 6).reshape(B, To, Ho, Wo, 8)
    imax = win.argmax(axis=-1)
    imin = win.argmin(axis=-1)
    vmax = np.take_along_axis(win, imax[..., None], axis=-1)[..., 0]
    vmin = np.take_along_axis(win, imin[..., None], axis=-1)[..., 0]
    return vmax, vmin, imax, imin


def _scatter_windows(values, idx, in_shape):
    """Place ``values`` (B, To, Ho, Wo) at window offsets ``idx`` of a zero
    array shaped like the (B, 1, T, H, W) input."""
    B, _, T, H, W = in_shape
    To, Ho, Wo = T // 2, H // 2, W // 2
    win = np.zeros((B, To, Ho, Wo, 8))
    np.put_along_axis(win, idx[..., None], values[..., None], axis=-1)
    win = win.reshape(B, To, Ho, Wo, 2, 2, 2).transpose(0, 1, 4, 2, 5, 3, 6)
    out = np.zeros(in_shape)
    out[:, 0, :2 * To, :2 * Ho, :2 * Wo] = win.reshape(B, 2 * To, 2 * Ho, 2 * Wo)
    return out


def stem_forward(x, weight, bias, gamma, beta, running_mean, running_var,
                 training=True, eps=1e-5):
    """Pointwise conv, batch norm, ReLU and 2x2x2 max pool for one input channel.

    With a single input channel every output channel is a per-channel affine
    function ``a_c * x + d_c`` of the input up to the ReLU, so the pooled
    maximum is taken at the window maximum of ``x`` when ``a_c >= 0`` and at
    the window minimum otherwise.  The result equals the unfused chain
    whenever ``a_c != 0``; full-resolution work is limited to the input.
    """
    B, cin, T, H, W = x.shape
    C = weight.shape[0]
    if cin != 1 or weight.shape != (C, 1, 1, 1, 1):
        raise ShapeError(f"stem needs a single input channel and 1x1x1 kernels, got "
                         f"{x.shape} / {weight.shape}")
    if min(T, H, W) < 2:
        raise ShapeError(f"cannot pool axes {(T, H, W)}: every extent must be >= 2")
    w = weight.reshape(C)
    vmax, vmin, imax, imin = _window_extrema(x)
    ctx = {"in_shape": x.shape, "imax": imax, "imin": imin, "w": w, "bias": bias,
           "gamma": gamma, "training": training}
    if training:
        M = x.size
        if M < 2:
            raise ValueError("batch norm in training mode needs more than one value per channel")
        mu = x.mean()
        xc = x - mu
        var_x = float(np.vdot(xc, xc)) / M
        q = 1.0 / np.sqrt(w * w * var_x + eps)
        a = gamma * w * q
        d = beta - a * mu
        ctx.update(x=x, mu=mu, var_x=var_x, q=q, M=M,
                   batch_mean=w * mu + bias, batch_var=w * w * var_x * M / (M - 1))
    else:
        s = 1.0 / np.sqrt(running_var + eps)
        a = gamma * w * s
        d = gamma * (bias - running_mean) * s + beta
        ctx.update(s=s, running_mean=running_mean)
    pos = (a >= 0).reshape(1, C, 1, 1, 1)
    sel = np.where(pos, vmax[:, None], vmin[:, None])
    pre = sel * a.reshape(1, C, 1, 1, 1)
    pre += d.reshape(1, C, 1, 1, 1)
    mask = pre > 0
    ctx.update(sel=sel, mask=mask, pos=pos.reshape(C), a=a)
    return pre * mask, ctx


def stem_backward(ctx, grad_out, input_grad=True):
    """Return ``(grad_x, grad_weight, grad_bias, grad_gamma, grad_beta)``.

    ``grad_x`` is None when ``input_grad`` is false.
    """
    if grad_out.shape != ctx["sel"].shape:
        raise ShapeError(f"upstream gradient {grad_out.shape} != stem output {ctx['sel'].shape}")
    g = grad_out * ctx["mask"]
    sel = ctx["sel"]
    w, bias, gamma, pos = ctx["w"], ctx["bias"], ctx["gamma"], ctx["pos"]
    C = w.shape[0]
    sum_g = g.sum(axis=(0, 2, 3, 4))
    if ctx["training"]:
        mu, var_x, q, M = ctx["mu"], ctx["var_x"], ctx["q"], ctx["M"]
        k = w * q
        sum_gu = _channel_dot(g, sel) - mu * sum_g
        grad_beta = sum_g
        grad_gamma = k * sum_gu
        grad_w = gamma * sum_gu * _dscale_dw(q, w, var_x)
        grad_b = np.zeros(C)
        coef = gamma * k
        if input_grad:
            grad_x = (-(coef * sum_g).sum() / M) + (ctx["x"] - mu) * (
                (2.0 / M) * (gamma * (-0.5) * w ** 3 * q ** 3 * sum_gu).sum())
    else:
        s = ctx["s"]
        sum_gx = _channel_dot(g, sel)
        grad_beta = sum_g
        grad_gamma = s * (w * sum_gx + (bias - ctx["running_mean"]) * sum_g)
        grad_w = gamma * s * sum_gx
        grad_b = gamma * s * sum_g
        coef = gamma * w * s
        if input_grad:
            grad_x = np.zeros(ctx["in_shape"])
    if not input_grad:
        return None, grad_w.reshape(C, 1, 1, 1, 1), grad_b, grad_gamma, grad_beta
    cw = coef.reshape(1, C, 1, 1, 1)
    up = (g[:, pos] * cw[:, pos]).sum(axis=1) if pos.any() else None
    down = (g[:, ~pos] * cw[:, ~pos]).sum(axis=1) if (~pos).any() else None
    if up is not None:
        grad_x = grad_x + _scatter_windows(up, ctx["imax"], ctx["in_shape"])
    if down is not None:
        grad_x = grad_x + _scatter_windows(down, ctx["imin"], ctx["in_shape"])
    return grad_x, grad_w.reshape(C, 1, 1, 1, 1), grad_b, grad_gamma, grad_beta


def _dscale_dw(q, w, var_x):
    # d/dw [w / sqrt(w^2 var + eps)] = eps / (w^2 var + eps)^1.5 = (1 - w^2 var q^2) q
    return q * (1.0 - w * w * var_x * q * q)
