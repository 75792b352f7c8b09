"""Adam, the mini-batch training loop, and checkpoint persistence."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ._random import stage_rng
from .errors import ConfigError, CorruptCheckpointError, NumericError, ShapeError, VersionMismatchError
from .model import ModelConfig, ModelParams, PARAM_NAMES, build_model, model_backward, model_forward
from .nn.layers import softmax_cross_entropy

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "pdtrace-checkpoint"
CHECKPOINT_VERSION = 1
HISTORY_COLUMNS = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64
    epochs: int = 200
    val_fraction: float = 0.2
    seed: int = 0
    selection: str = "val_acc"

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("betas must lie in [0, 1)")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not 0 < self.val_fraction < 1:
            raise ConfigError("val_fraction must lie in (0, 1)")
        if self.selection != "val_acc":
            raise ConfigError(f"unsupported selection metric {self.selection!r}")

    def to_dict(self):
        return asdict(self)


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls(
            {k: np.zeros_like(a) for k, a in params.arrays.items()},
            {k: np.zeros_like(a) for k, a in params.arrays.items()},
        )


def adam_step(params, grads, state, config):
    """One in-place Adam update of ``params.arrays``; returns ``(params, state)``."""
    state.step += 1
    b1, b2 = config.beta1, config.beta2
    corr1 = 1.0 - b1**state.step
    corr2 = 1.0 - b2**state.step
    for name, theta in params.arrays.items():
        g = grads[name]
        if g.shape != theta.shape:
            raise ShapeError(f"{name}: gradient shape {g.shape} != parameter shape {theta.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        theta -= config.lr * (m / corr1) / (np.sqrt(v / corr2) + config.eps)
    return params, state


def split_indices(n, val_fraction=0.2, seed=0):
    """Shuffle ``0..n-1``; the first ``ceil((1 - val_fraction) * n)`` train, the rest validate."""
    if n < 5:
        raise ConfigError(f"need at least 5 patches to split, got {n}")
    order = stage_rng(seed, "split").permutation(n)
    # Rounding guards against 0.8 * 10 evaluating to 8.000000000000002.
    n_train = math.ceil(round((1.0 - val_fraction) * n, 9))
    return order[:n_train], order[n_train:]


def split_patches(patches, val_fraction=0.2, seed=0):
    """Random train/validation partition of a list or array of patches."""
    tr, va = split_indices(len(patches), val_fraction, seed)
    if isinstance(patches, np.ndarray):
        return patches[tr], patches[va]
    return [patches[i] for i in tr], [patches[i] for i in va]


@dataclass
class TrainHistory:
    rows: list = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def append(self, epoch, train_loss, train_acc, val_loss, val_acc):
        self.rows.append(dict(zip(HISTORY_COLUMNS, (epoch, train_loss, train_acc, val_loss, val_acc))))

    def column(self, name):
        return np.array([r[name] for r in self.rows], dtype=float)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(HISTORY_COLUMNS)
            for r in self.rows:
                writer.writerow([r["epoch"]] + [repr(float(r[c])) for c in HISTORY_COLUMNS[1:]])

    @classmethod
    def from_csv(cls, path):
        hist = cls()
        with open(path, newline="") as fh:
            for r in csv.DictReader(fh):
                hist.append(int(r["epoch"]), *(float(r[c]) for c in HISTORY_COLUMNS[1:]))
        return hist


def aggregate_histories(histories, path):
    """Write per-epoch mean/min/max of every curve across runs."""
    n = min(len(h) for h in histories)
    header = ["epoch"] + [f"{c}_{s}" for c in HISTORY_COLUMNS[1:] for s in ("mean", "min", "max")]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for e in range(n):
            row = [e + 1]
            for c in HISTORY_COLUMNS[1:]:
                vals = np.array([h.rows[e][c] for h in histories])
                row += [repr(float(vals.mean())), repr(float(vals.min())), repr(float(vals.max()))]
            writer.writerow(row)


@dataclass
class Checkpoint:
    params: ModelParams
    metadata: dict = field(default_factory=dict)

    @property
    def config(self):
        return self.params.config


def evaluate_patches(params, X, y, batch_size=512):
    """Mean cross-entropy and accuracy in infer mode."""
    if len(X) == 0:
        return float("nan"), float("nan")
    total_loss, correct = 0.0, 0
    for i in range(0, len(X), batch_size):
        logits, _ = model_forward(params, X[i : i + batch_size], "infer")
        yb = y[i : i + batch_size]
        loss, _ = softmax_cross_entropy(logits, yb)
        total_loss += loss * len(yb)
        correct += int(np.sum(np.argmax(logits, axis=1) == yb))
    return total_loss / len(X), correct / len(X)


def train_model(X, y, config=None, model_config=None, X_val=None, y_val=None, callback=None):
    """Train an LSTM-CNN with Adam, keeping the epoch with the best validation accuracy.

    ``X`` is ``(n, F, w)`` patches and ``y`` their class indices. Without an
    explicit validation set the patches are split ``1 - val_fraction`` /
    ``val_fraction``. Ties in validation accuracy go to the lower
    validation loss, then to the earlier epoch.

    Returns ``(best Checkpoint, TrainHistory)``.
    """
    config = config or TrainConfig()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if model_config is None:
        model_config = ModelConfig(window=X.shape[2], n_features=X.shape[1])
    if X.shape[1:] != (model_config.n_features, model_config.window):
        raise ShapeError(
            f"patches {X.shape[1:]} do not match the model input "
            f"({model_config.n_features}, {model_config.window})"
        )
    if X_val is None:
        tr, va = split_indices(len(X), config.val_fraction, config.seed)
        X, y, X_val, y_val = X[tr], y[tr], X[va], y[va]
    else:
        X_val = np.asarray(X_val, dtype=np.float64)
        y_val = np.asarray(y_val, dtype=np.int64)

    params = build_model(model_config, int(stage_rng(config.seed, "init").integers(2**31)))
    state = AdamState.zeros_like(params)
    shuffle_rng = stage_rng(config.seed, "shuffle")
    dropout_rng = stage_rng(config.seed, "dropout")
    history = TrainHistory()
    best = (params.copy(), {"epoch": 0, "val_acc": None, "val_loss": None})
    best_key = None

    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(X))
        loss_sum, correct = 0.0, 0
        for b, start in enumerate(range(0, len(X), config.batch_size)):
            idx = order[start : start + config.batch_size]
            logits, cache = model_forward(params, X[idx], "train", dropout_rng)
            loss, g = softmax_cross_entropy(logits, y[idx])
            if not math.isfinite(loss):
                raise NumericError(f"non-finite loss {loss} at epoch {epoch}, batch {b}")
            adam_step(params, model_backward(params, cache, g), state, config)
            loss_sum += loss * len(idx)
            correct += int(np.sum(np.argmax(logits, axis=1) == y[idx]))
        val_loss, val_acc = evaluate_patches(params, X_val, y_val)
        history.append(epoch, loss_sum / len(X), correct / len(X), val_loss, val_acc)
        key = (val_acc, -val_loss)
        if best_key is None or key > best_key:
            best_key = key
            best = (params.copy(), {"epoch": epoch, "val_acc": val_acc, "val_loss": val_loss})
        log.info("epoch %d loss %.4f acc %.4f val_loss %.4f val_acc %.4f", epoch, *list(history.rows[-1].values())[1:])
        if callback is not None:
            callback(epoch, history.rows[-1])

    meta = {"seed": config.seed, **best[1], "train_config": config.to_dict()}
    return Checkpoint(best[0], meta), history


# -- persistence ------------------------------------------------------------

def _payload(ckpt):
    return {
        "config": ckpt.params.config.to_dict(),
        "arrays": {
            name: {"shape": list(a.shape), "data": [float(v) for v in a.ravel()]}
            for name, a in ckpt.params.arrays.items()
        },
        "metadata": ckpt.metadata,
    }


def _digest(payload):
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def save_checkpoint(ckpt, path):
    """Write a self-describing JSON checkpoint; floats use shortest round-trip repr."""
    payload = _payload(ckpt)
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "sha256": _digest(payload),
        **payload,
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_checkpoint(path):
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorruptCheckpointError(f"{path}: not a complete checkpoint ({exc.msg})") from None
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CorruptCheckpointError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise VersionMismatchError(
            f"{path}: checkpoint version {doc.get('version')!r}, this build reads {CHECKPOINT_VERSION}"
        )
    try:
        payload = {k: doc[k] for k in ("config", "arrays", "metadata")}
    except KeyError as exc:
        raise CorruptCheckpointError(f"{path}: missing field {exc}") from None
    if _digest(payload) != doc.get("sha256"):
        raise CorruptCheckpointError(f"{path}: checksum mismatch")
    try:
        config = ModelConfig.from_dict(payload["config"])
        arrays = {}
        for name in PARAM_NAMES:
            entry = payload["arrays"][name]
            arrays[name] = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptCheckpointError(f"{path}: malformed weights ({exc})") from None
    params = ModelParams(config, arrays)
    try:
        params.check()
    except ShapeError as exc:
        raise CorruptCheckpointError(f"{path}: {exc}") from None
    return Checkpoint(params, payload["metadata"])

