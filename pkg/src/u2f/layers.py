"""Stateful layer wrappers around the kernels in :mod:`u2f.nn`.

A layer owns its parameters (``params``), their gradients (``grads``) and
non-trainable ``buffers``.  ``forward`` caches what ``backward`` needs; a
layer therefore supports one outstanding forward pass at a time.
"""
import numpy as np

from . import nn


class Layer:
    def __init__(self):
        self.params = {}
        self.grads = {}
        self.buffers = {}
        self._ctx = None

    def zero_grad(self):
        for name, p in self.params.items():
            self.grads[name] = np.zeros_like(p)

    def forward(self, x, training):
        raise NotImplementedError

    def backward(self, grad_out):
        raise NotImplementedError


class Conv3d(Layer):
    def __init__(self, in_channels, out_channels, kernel, padding=0, groups=1, rng=None):
        super().__init__()
        if in_channels % groups or out_channels % groups:
            raise nn.ShapeError(
                f"groups={groups} must divide in={in_channels} and out={out_channels}")
        kernel = nn._as_triple(kernel)
        self.padding = nn._as_triple(padding)
        self.groups = groups
        fan_in = (in_channels // groups) * int(np.prod(kernel))
        bound = np.sqrt(1.0 / fan_in)
        rng = np.random.default_rng() if rng is None else rng
        self.params["weight"] = rng.uniform(
            -bound, bound, (out_channels, in_channels // groups) + kernel)
        self.params["bias"] = np.zeros(out_channels)
        self.zero_grad()

    def forward(self, x, training=True):
        out, self._ctx = nn.conv3d_forward(
            x, self.params["weight"], self.params["bias"], self.padding, self.groups)
        return out

    def backward(self, grad_out):
        gx, gw, gb = nn.conv3d_backward(self._ctx, grad_out)
        self.grads["weight"] += gw
        self.grads["bias"] += gb
        self._ctx = None
        return gx


class BatchNorm3d(Layer):
    def __init__(self, channels, momentum=0.1, eps=1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.params["gamma"] = np.ones(channels)
        self.params["beta"] = np.zeros(channels)
        self.buffers["running_mean"] = np.zeros(channels)
        self.buffers["running_var"] = np.ones(channels)
        self.zero_grad()

    def forward(self, x, training=True):
        out, ctx = nn.batch_norm3d_forward(
            x, self.params["gamma"], self.params["beta"],
            self.buffers["running_mean"], self.buffers["running_var"],
            training=training, eps=self.eps)
        if training:
            m = self.momentum
            self.buffers["running_mean"] = (1 - m) * self.buffers["running_mean"] + m * ctx["batch_mean"]
            self.buffers["running_var"] = (1 - m) * self.buffers["running_var"] + m * ctx["batch_var"]
        self._ctx = ctx
        return out

    def backward(self, grad_out):
        gx, gg, gb = nn.batch_norm3d_backward(self._ctx, grad_out)
        self.grads["gamma"] += gg
        self.grads["beta"] += gb
        self._ctx = None
        return gx


class ReLU(Layer):
    def forward(self, x, training=True):
        out, self._ctx = nn.relu_forward(x)
        return out

    def backward(self, grad_out):
        gx = nn.relu_backward(self._ctx, grad_out)
        self._ctx = None
        return gx


class MaxPool3d(Layer):
    def forward(self, x, training=True):
        out, self._ctx = nn.max_pool3d_forward(x)
        return out

    def backward(self, grad_out):
        gx = nn.max_pool3d_backward(self._ctx, grad_out)
        self._ctx = None
        return gx


class Linear(Layer):
    def __init__(self, in_features, out_features, rng=None):
        super().__init__()
        bound = np.sqrt(1.0 / in_features)
        rng = np.random.default_rng() if rng is None else rng
        self.params["weight"] = rng.uniform(-bound, bound, (out_features, in_features))
        self.params["bias"] = np.zeros(out_features)
        self.zero_grad()

    def forward(self, x, training=True):
        out, self._ctx = nn.linear_forward(x, self.params["weight"], self.params["bias"])
        return out

    def backward(self, grad_out):
        gx, gw, gb = nn.linear_backward(self._ctx, grad_out)
        self.grads["weight"] += gw
        self.grads["bias"] += gb
        self._ctx = None
        return gx
