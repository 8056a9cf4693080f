"""The U2F network: pointwise conv, hybrid spatio-temporal block, channel
shuffle, grouped conv and two formant regression heads."""
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import nn
from .layers import BatchNorm3d, Conv3d, Linear, MaxPool3d, ReLU

BRANCHES = ("spatial", "temporal", "joint")
BRANCH_GEOMETRY = {
    # name: (kernel, padding)
    "spatial": ((1, 3, 3), (0, 1, 1)),
    "temporal": ((3, 1, 1), (1, 0, 0)),
    "joint": ((3, 3, 3), (1, 1, 1)),
}


class ConfigError(ValueError):
    pass


@dataclass
class U2FConfig:
    input_shape: tuple = (1, 30, 50, 82)
    layer1_filters: int = 48
    hybrid_filters_per_branch: int = 32
    grouped_conv_filters: int = 32
    grouped_conv_groups: int = 4
    head_outputs: int = 30
    use_spatial_branch: bool = True
    use_temporal_branch: bool = True
    use_joint_branch: bool = True
    use_shuffle: bool = True
    hybrid_as_plain3d: bool = False

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)

    @property
    def active_branches(self):
        flags = (self.use_spatial_branch, self.use_temporal_branch, self.use_joint_branch)
        return tuple(name for name, on in zip(BRANCHES, flags) if on)

    @property
    def hybrid_channels(self):
        """Total channels leaving the hybrid block (kept fixed under ablation)."""
        return 3 * self.hybrid_filters_per_branch

    @property
    def shuffle_groups(self):
        if self.hybrid_as_plain3d:
            return 3
        return len(self.active_branches)

    def branch_layout(self):
        """``[(name, in_channels, out_channels), ...]`` for the hybrid block."""
        if self.hybrid_as_plain3d:
            return [("plain3d", self.layer1_filters, self.hybrid_channels)]
        n = len(self.active_branches)
        return [(name, self.layer1_filters // n, self.hybrid_channels // n)
                for name in self.active_branches]

    def shape_chain(self):
        """Spatio-temporal extents after each of the three pooling stages."""
        chain = []
        extent = self.input_shape[1:]
        for _ in range(3):
            if min(extent) < 2:
                raise ConfigError(f"input {self.input_shape} too small for three 2x pooling stages")
            extent = tuple(e // 2 for e in extent)
            chain.append(extent)
        return chain

    @property
    def flatten_size(self):
        t, h, w = self.shape_chain()[-1]
        return self.grouped_conv_filters * t * h * w

    def validate(self):
        if len(self.input_shape) != 4 or self.input_shape[0] != 1:
            raise ConfigError(f"input_shape must be (1, T, H, W), got {self.input_shape}")
        for name in ("layer1_filters", "hybrid_filters_per_branch", "grouped_conv_filters",
                     "grouped_conv_groups", "head_outputs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if not self.hybrid_as_plain3d:
            n = len(self.active_branches)
            if n == 0:
                raise ConfigError("at least one hybrid branch must be enabled")
            if self.layer1_filters % n:
                raise ConfigError(
                    f"layer1_filters={self.layer1_filters} not divisible by {n} active branches")
            if self.hybrid_channels % n:
                raise ConfigError(
                    f"hybrid channels {self.hybrid_channels} not divisible by {n} active branches")
        if self.use_shuffle and self.hybrid_channels % self.shuffle_groups:
            raise ConfigError(
                f"shuffle groups {self.shuffle_groups} do not divide {self.hybrid_channels} channels")
        g = self.grouped_conv_groups
        if self.hybrid_channels % g or self.grouped_conv_filters % g:
            raise ConfigError(
                f"grouped_conv_groups={g} must divide {self.hybrid_channels} and "
                f"{self.grouped_conv_filters}")
        self.shape_chain()
        return self

    def to_dict(self):
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)


ABLATIONS = {
    "spatial": {"use_spatial_branch": False},
    "temporal": {"use_temporal_branch": False},
    "shuffle": {"use_shuffle": False},
    "plain3d": {"hybrid_as_plain3d": True},
}


def ablated(config, name):
    """Return a copy of ``config`` with the named ablation switched on."""
    if name not in ABLATIONS:
        raise ConfigError(f"unknown ablation {name!r}; choose from {sorted(ABLATIONS)}")
    return U2FConfig(**{**asdict(config), **ABLATIONS[name]})


class U2FNet:
    """Network with two parallel formant heads.

    ``forward`` returns ``(f1, f2)`` each of shape (B, head_outputs).
    ``backward`` takes the matching upstream gradients, accumulates parameter
    gradients and returns the gradient with respect to the input batch.
    """

    def __init__(self, config, seed=0):
        self.config = config.validate()
        self.seed = int(seed)
        self.norm = None  # (f1min, f1max, f2min, f2max) in Hz once trained
        self.epoch = 0
        rng = np.random.default_rng(self.seed)
        c = config
        self.layers = {}
        self.layers["conv1"] = Conv3d(1, c.layer1_filters, 1, rng=rng)
        self.layers["bn1"] = BatchNorm3d(c.layer1_filters)
        self.layers["relu1"] = ReLU()
        self.layers["pool1"] = MaxPool3d()
        self.branches = c.branch_layout()
        for name, cin, cout in self.branches:
            kernel, pad = ((3, 3, 3), (1, 1, 1)) if name == "plain3d" else BRANCH_GEOMETRY[name]
            self.layers[name] = Conv3d(cin, cout, kernel, pad, rng=rng)
        self.layers["bn2"] = BatchNorm3d(c.hybrid_channels)
        self.layers["relu2"] = ReLU()
        self.layers["pool2"] = MaxPool3d()
        self.layers["conv3"] = Conv3d(c.hybrid_channels, c.grouped_conv_filters, 1,
                                      groups=c.grouped_conv_groups, rng=rng)
        self.layers["bn3"] = BatchNorm3d(c.grouped_conv_filters)
        self.layers["relu3"] = ReLU()
        self.layers["pool3"] = MaxPool3d()
        self.layers["head_f1"] = Linear(c.flatten_size, c.head_outputs, rng=rng)
        self.layers["head_f2"] = Linear(c.flatten_size, c.head_outputs, rng=rng)
        self.activation_grads = {}
        self.fused_stem = True
        self._stem_ctx = None
        self._flat_shape = None

    # -- parameter access -------------------------------------------------
    def named_parameters(self):
        for lname, layer in self.layers.items():
            for pname, p in layer.params.items():
                yield f"{lname}.{pname}", p

    def named_buffers(self):
        for lname, layer in self.layers.items():
            for bname, b in layer.buffers.items():
                yield f"{lname}.{bname}", b

    def named_gradients(self):
        for lname, layer in self.layers.items():
            for pname in layer.params:
                yield f"{lname}.{pname}", layer.grads[pname]

    def num_parameters(self):
        return sum(p.size for _, p in self.named_parameters())

    def state_dict(self):
        state = dict(self.named_parameters())
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state):
        expected = self.state_dict()
        missing = set(expected) - set(state)
        extra = set(state) - set(expected)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for key, value in state.items():
            lname, item = key.split(".", 1)
            layer = self.layers[lname]
            store = layer.params if item in layer.params else layer.buffers
            if store[item].shape != value.shape:
                raise nn.ShapeError(f"{key}: shape {value.shape} != {store[item].shape}")
            store[item] = np.array(value, dtype=np.float64)

    def zero_grad(self):
        for layer in self.layers.values():
            layer.zero_grad()

    # -- computation ------------------------------------------------------
    def forward(self, x, training=False):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 5 or x.shape[1:] != self.config.input_shape:
            raise nn.ShapeError(
                f"expected input (B, {', '.join(map(str, self.config.input_shape))}), got {x.shape}")
        L = self.layers
        h = self._stem_forward(x, training)
        if len(self.branches) == 1 and self.branches[0][0] == "plain3d":
            h = L["plain3d"].forward(h, training)
        else:
            parts = nn.channel_split(h, [cin for _, cin, _ in self.branches])
            h = nn.channel_concat(
                [L[name].forward(p, training) for (name, _, _), p in zip(self.branches, parts)])
        # max pooling commutes with ReLU; pooling first does the ReLU on 1/8 of the data
        for name in ("bn2", "pool2", "relu2"):
            h = L[name].forward(h, training)
        if self.config.use_shuffle:
            h = nn.channel_shuffle(h, self.config.shuffle_groups)
        for name in ("conv3", "bn3", "pool3", "relu3"):
            h = L[name].forward(h, training)
        self._flat_shape = h.shape
        flat = h.reshape(h.shape[0], -1)
        return L["head_f1"].forward(flat, training), L["head_f2"].forward(flat, training)

    def backward(self, grad_f1, grad_f2, input_grad=True):
        L = self.layers
        g = L["head_f1"].backward(grad_f1) + L["head_f2"].backward(grad_f2)
        g = g.reshape(self._flat_shape)
        g = L["relu3"].backward(g)
        g = L["pool3"].backward(g)
        self.activation_grads["last_conv"] = g
        for name in ("bn3", "conv3"):
            g = L[name].backward(g)
        if self.config.use_shuffle:
            g = nn.channel_shuffle_backward(g, self.config.shuffle_groups)
        for name in ("relu2", "pool2", "bn2"):
            g = L[name].backward(g)
        if len(self.branches) == 1 and self.branches[0][0] == "plain3d":
            g = L["plain3d"].backward(g)
        else:
            parts = nn.channel_split(g, [cout for _, _, cout in self.branches])
            g = nn.channel_concat(
                [L[name].backward(np.ascontiguousarray(p))
                 for (name, _, _), p in zip(self.branches, parts)])
        return self._stem_backward(g, input_grad)

    def _stem_forward(self, x, training):
        L = self.layers
        if not self.fused_stem:
            h = x
            for name in ("conv1", "bn1", "relu1", "pool1"):
                h = L[name].forward(h, training)
            return h
        conv, bn = L["conv1"], L["bn1"]
        out, ctx = nn.stem_forward(
            x, conv.params["weight"], conv.params["bias"], bn.params["gamma"],
            bn.params["beta"], bn.buffers["running_mean"], bn.buffers["running_var"],
            training=training, eps=bn.eps)
        if training:
            m = bn.momentum
            bn.buffers["running_mean"] = (1 - m) * bn.buffers["running_mean"] + m * ctx["batch_mean"]
            bn.buffers["running_var"] = (1 - m) * bn.buffers["running_var"] + m * ctx["batch_var"]
        self._stem_ctx = ctx
        return out

    def _stem_backward(self, g, input_grad=True):
        L = self.layers
        if not self.fused_stem:
            for name in ("pool1", "relu1", "bn1", "conv1"):
                g = L[name].backward(g)
            return g
        gx, gw, gb, ggamma, gbeta = nn.stem_backward(self._stem_ctx, g, input_grad)
        self._stem_ctx = None
        L["conv1"].grads["weight"] += gw
        L["conv1"].grads["bias"] += gb
        L["bn1"].grads["gamma"] += ggamma
        L["bn1"].grads["beta"] += gbeta
        return gx


def build_model(config=None, seed=0):
    return U2FNet(U2FConfig() if config is None else config, seed=seed)
