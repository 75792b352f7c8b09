"""LSTM-CNN assembly: LSTM block, skip concatenation, two conv units, FC head."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .nn import layers as L

PARAM_NAMES = (
    "lstm.W", "lstm.U", "lstm.b",
    "conv1.kernels", "conv1.bias",
    "conv2.kernels", "conv2.bias",
    "fc1.W", "fc1.b",
    "fc2.W", "fc2.b",
)


@dataclass(frozen=True)
class ModelConfig:
    window: int = 128
    n_features: int = 2
    lstm_hidden: int = 2
    conv1_channels: int = 16
    conv2_channels: int = 32
    kernel_size: int = 3
    conv_stride: int = 2
    pool_size: int = 2
    pool_stride: int = 2
    fc_hidden: int = 64
    dropout: float = 0.5
    n_classes: int = 2

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown model config keys {sorted(unknown)}")
        return cls(**d)

    def shape_chain(self):
        """Stage names and output shapes; raises ConfigError naming the first stage that does not fit."""
        for name, value in asdict(self).items():
            if name == "dropout":
                if not 0.0 <= value < 1.0:
                    raise ConfigError(f"dropout must lie in [0, 1), got {value}")
            elif value < 1:
                raise ConfigError(f"{name} must be positive, got {value}")
        stages = [("concat", (self.n_features + self.lstm_hidden, self.window))]
        length = self.window
        for stage, channels, k, s in (
            ("conv1", self.conv1_channels, self.kernel_size, self.conv_stride),
            ("pool1", self.conv1_channels, self.pool_size, self.pool_stride),
            ("conv2", self.conv2_channels, self.kernel_size, self.conv_stride),
            ("pool2", self.conv2_channels, self.pool_size, self.pool_stride),
        ):
            if length < k:
                raise ConfigError(
                    f"stage {stage}: input length {length} shorter than kernel {k} "
                    f"(window {self.window} too small)"
                )
            length = L.out_length(length, k, s)
            stages.append((stage, (channels, length)))
        stages.append(("flatten", (self.conv2_channels * length,)))
        stages.append(("fc1", (self.fc_hidden,)))
        stages.append(("fc2", (self.n_classes,)))
        return stages

    @property
    def flat_size(self):
        return self.shape_chain()[-3][1][0]


@dataclass
class ModelParams:
    config: ModelConfig
    arrays: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.arrays[name]

    def copy(self):
        return ModelParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def expected_shapes(self):
        c = self.config
        F, H, C1, C2, k = c.n_features, c.lstm_hidden, c.conv1_channels, c.conv2_channels, c.kernel_size
        return {
            "lstm.W": (4 * H, F), "lstm.U": (4 * H, H), "lstm.b": (4 * H,),
            "conv1.kernels": (C1, F + H, k), "conv1.bias": (C1,),
            "conv2.kernels": (C2, C1, k), "conv2.bias": (C2,),
            "fc1.W": (c.fc_hidden, c.flat_size), "fc1.b": (c.fc_hidden,),
            "fc2.W": (c.n_classes, c.fc_hidden), "fc2.b": (c.n_classes,),
        }

    def check(self):
        expected = self.expected_shapes()
        if set(self.arrays) != set(expected):
            raise ShapeError(f"parameter names {sorted(self.arrays)} != {sorted(expected)}")
        for name, shape in expected.items():
            if self.arrays[name].shape != shape:
                raise ShapeError(f"{name}: shape {self.arrays[name].shape}, expected {shape}")
        return self


def build_model(config=None, seed=0):
    """Initialize all weights (Glorot-uniform, forget-gate bias 1) from ``seed``."""
    config = config or ModelConfig()
    config.shape_chain()
    rng = np.random.default_rng(seed)
    params = ModelParams(config)
    shapes = params.expected_shapes()
    F, H, k = config.n_features, config.lstm_hidden, config.kernel_size
    fans = {
        "lstm.W": (F, 4 * H),
        "lstm.U": (H, 4 * H),
        "conv1.kernels": ((F + H) * k, config.conv1_channels * k),
        "conv2.kernels": (config.conv1_channels * k, config.conv2_channels * k),
        "fc1.W": (config.flat_size, config.fc_hidden),
        "fc2.W": (config.fc_hidden, config.n_classes),
    }
    for name in PARAM_NAMES:
        if name in fans:
            params.arrays[name] = L.glorot_uniform(rng, shapes[name], *fans[name])
        else:
            params.arrays[name] = np.zeros(shapes[name])
    params.arrays["lstm.b"][H : 2 * H] = 1.0
    return params


def count_params(params):
    return int(sum(a.size for a in params.arrays.values()))


def model_forward(params, patch, mode="infer", rng=None):
    """Logits for one patch ``(F, w)`` or a batch ``(N, F, w)``; returns ``(logits, cache)``."""
    c = params.config
    x = np.asarray(patch, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[1:] != (c.n_features, c.window):
        raise ShapeError(f"patch shape {x.shape[1:]} does not match ({c.n_features}, {c.window})")
    p = params.arrays
    hseq, lstm_cache = L.lstm_forward(x, p["lstm.W"], p["lstm.U"], p["lstm.b"])
    cat = np.concatenate([x, hseq], axis=1)
    z1 = L.conv1d_forward(cat, p["conv1.kernels"], p["conv1.bias"], c.conv_stride)
    a1 = L.relu(z1)
    m1, arg1 = L.maxpool1d(a1, c.pool_size, c.pool_stride)
    z2 = L.conv1d_forward(m1, p["conv2.kernels"], p["conv2.bias"], c.conv_stride)
    a2 = L.relu(z2)
    m2, arg2 = L.maxpool1d(a2, c.pool_size, c.pool_stride)
    flat = m2.reshape(len(x), -1)
    z3 = L.dense_forward(flat, p["fc1.W"], p["fc1.b"])
    a3 = L.relu(z3)
    d3, mask = L.dropout(a3, c.dropout, mode, rng)
    logits = L.dense_forward(d3, p["fc2.W"], p["fc2.b"])
    cache = dict(
        single=single, lstm=lstm_cache, cat=cat, z1=z1, a1=a1, arg1=arg1, m1=m1,
        z2=z2, a2=a2, arg2=arg2, m2=m2, flat=flat, z3=z3, mask=mask, d3=d3,
    )
    return (logits[0] if single else logits), cache


def model_backward(params, cache, grad_logits, return_input_grad=False):
    """Gradients of every parameter array given d(loss)/d(logits)."""
    c = params.config
    p = params.arrays
    g = np.asarray(grad_logits, dtype=np.float64)
    if cache["single"]:
        g = g[None]
    if g.shape != (cache["flat"].shape[0], c.n_classes):
        raise ShapeError(f"grad_logits shape {g.shape} mismatched")
    grads = {}
    g_d3, grads["fc2.W"], grads["fc2.b"] = L.dense_backward(cache["d3"], p["fc2.W"], g)
    g_a3 = L.dropout_backward(cache["mask"], g_d3)
    g_z3 = L.relu_backward(cache["z3"], g_a3)
    g_flat, grads["fc1.W"], grads["fc1.b"] = L.dense_backward(cache["flat"], p["fc1.W"], g_z3)
    g_m2 = g_flat.reshape(cache["m2"].shape)
    g_a2 = L.maxpool1d_backward(cache["a2"].shape, cache["arg2"], g_m2)
    g_z2 = L.relu_backward(cache["z2"], g_a2)
    g_m1, grads["conv2.kernels"], grads["conv2.bias"] = L.conv1d_backward(
        cache["m1"], p["conv2.kernels"], c.conv_stride, g_z2
    )
    g_a1 = L.maxpool1d_backward(cache["a1"].shape, cache["arg1"], g_m1)
    g_z1 = L.relu_backward(cache["z1"], g_a1)
    g_cat, grads["conv1.kernels"], grads["conv1.bias"] = L.conv1d_backward(
        cache["cat"], p["conv1.kernels"], c.conv_stride, g_z1
    )
    F = c.n_features
    g_x_lstm, grads["lstm.W"], grads["lstm.U"], grads["lstm.b"] = L.lstm_backward(
        cache["lstm"], g_cat[:, F:]
    )
    if return_input_grad:
        g_x = g_cat[:, :F] + g_x_lstm
        return grads, (g_x[0] if cache["single"] else g_x)
    return grads


def predict_proba(params, X, batch_size=512):
    """Class probabilities for a stack of patches, in infer mode."""
    X = np.asarray(X, dtype=np.float64)
    out = [
        L.softmax(model_forward(params, X[i : i + batch_size], "infer")[0])
        for i in range(0, len(X), batch_size)
    ]
    return np.concatenate(out) if out else np.empty((0, params.config.n_classes))


def model_gradient_check(seed=0, config=None, h=1e-5, fault=0.0, max_entries=None):
    """Finite-difference check of the full network loss (dropout off); returns max rel error.

    ``max_entries`` limits how many entries per array are probed (chosen at
    random), which keeps the default-size network affordable.
    """
    from .nn.gradcheck import relative_error

    config = config or ModelConfig(
        window=32, conv1_channels=4, conv2_channels=6, fc_hidden=8, dropout=0.0
    )
    if config.dropout:
        config = ModelConfig(**{**config.to_dict(), "dropout": 0.0})
    rng = np.random.default_rng(seed)
    params = build_model(config, seed)
    # Random biases so no unit sits exactly at a ReLU kink or pool tie.
    for name in PARAM_NAMES:
        if name.endswith((".b", ".bias")):
            params.arrays[name] = rng.normal(scale=0.1, size=params.arrays[name].shape)
    x = rng.uniform(size=(2, config.n_features, config.window))
    y = rng.integers(0, config.n_classes, size=2)

    def loss():
        return L.softmax_cross_entropy(model_forward(params, x, "infer")[0], y)[0]

    logits, cache = model_forward(params, x, "infer")
    grads = model_backward(params, cache, L.softmax_cross_entropy(logits, y)[1])
    worst = 0.0
    for name in PARAM_NAMES:
        arr = params.arrays[name]
        flat = arr.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, max_entries, replace=False)
        analytic = grads[name].reshape(-1)[idx] * (1.0 + fault)
        numeric = np.empty(len(idx))
        for j, k in enumerate(idx):
            orig = flat[k]
            flat[k] = orig + h
            fp = loss()
            flat[k] = orig - h
            fm = loss()
            flat[k] = orig
            numeric[j] = (fp - fm) / (2.0 * h)
        worst = max(worst, float(relative_error(analytic, numeric).max()))
    return worst
