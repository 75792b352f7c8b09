"""Central finite-difference verification of the analytic layer gradients."""
from __future__ import annotations

import numpy as np

from . import layers as L

LAYER_KINDS = ("conv1d", "maxpool1d", "relu", "lstm", "dense", "dropout", "softmax_ce")

# Layers whose output is linear (or piecewise linear with fixed routing) in
# the checked inputs are held to the tighter bound.
TOLERANCES = {
    "conv1d": 1e-6,
    "maxpool1d": 1e-6,
    "relu": 1e-6,
    "dense": 1e-6,
    "dropout": 1e-6,
    "softmax_ce": 1e-6,
    "lstm": 1e-4,
    "model": 1e-4,
}


def relative_error(analytic, numeric):
    a, n = np.asarray(analytic), np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def numeric_gradient(f, arr, h=1e-5):
    """Central differences of scalar ``f()`` w.r.t. every entry of ``arr`` (perturbed in place)."""
    grad = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        fp = f()
        flat[k] = orig - h
        fm = f()
        flat[k] = orig
        gflat[k] = (fp - fm) / (2.0 * h)
    return grad


def check_gradients(f, arrays, analytic, h=1e-5):
    """Max relative error per named array between ``analytic`` and finite differences of ``f``."""
    return {
        name: float(relative_error(analytic[name], numeric_gradient(f, arr, h)).max())
        for name, arr in arrays.items()
    }


def _distinct(rng, shape, spacing=1e-2):
    # Values at least ``spacing`` apart so perturbations cannot flip a max or a ReLU.
    n = int(np.prod(shape))
    vals = (np.arange(n) - n / 2) * spacing + rng.uniform(0.1, 0.4) * spacing
    return rng.permutation(vals).reshape(shape)


def layer_gradient_check(kind, seed=0, h=1e-5, fault=0.0):
    """Check one layer kind on a random fp64 instance; returns the max relative error.

    ``fault`` scales the analytic gradients by ``1 + fault`` to confirm the
    harness notices a wrong backward pass.
    """
    rng = np.random.default_rng(seed)
    if kind == "conv1d":
        x = rng.normal(size=(2, 3, 11))
        K = rng.normal(size=(4, 3, 3))
        b = rng.normal(size=4)
        R = rng.normal(size=(2, 4, L.out_length(11, 3, 2)))
        arrays = {"x": x, "kernels": K, "bias": b}
        f = lambda: float(np.sum(L.conv1d_forward(x, K, b, 2) * R))
        gx, gk, gb = L.conv1d_backward(x, K, 2, R)
        analytic = {"x": gx, "kernels": gk, "bias": gb}
    elif kind == "maxpool1d":
        x = _distinct(rng, (2, 3, 10))
        R = rng.normal(size=(2, 3, 5))
        arrays = {"x": x}
        f = lambda: float(np.sum(L.maxpool1d(x, 2, 2)[0] * R))
        _, arg = L.maxpool1d(x, 2, 2)
        analytic = {"x": L.maxpool1d_backward(x.shape, arg, R)}
    elif kind == "relu":
        x = _distinct(rng, (3, 12), spacing=5e-2)
        R = rng.normal(size=x.shape)
        arrays = {"x": x}
        f = lambda: float(np.sum(L.relu(x) * R))
        analytic = {"x": L.relu_backward(x, R)}
    elif kind == "lstm":
        x = rng.normal(size=(2, 2, 5))
        W = rng.normal(scale=0.5, size=(12, 2))
        U = rng.normal(scale=0.5, size=(12, 3))
        b = rng.normal(scale=0.5, size=12)
        R = rng.normal(size=(2, 3, 5))
        arrays = {"x": x, "W": W, "U": U, "b": b}
        f = lambda: float(np.sum(L.lstm_forward(x, W, U, b)[0] * R))
        _, cache = L.lstm_forward(x, W, U, b)
        gx, gW, gU, gb = L.lstm_backward(cache, R)
        analytic = {"x": gx, "W": gW, "U": gU, "b": gb}
    elif kind == "dense":
        x = rng.normal(size=(3, 7))
        W = rng.normal(size=(5, 7))
        b = rng.normal(size=5)
        R = rng.normal(size=(3, 5))
        arrays = {"x": x, "W": W, "b": b}
        f = lambda: float(np.sum(L.dense_forward(x, W, b) * R))
        gx, gW, gb = L.dense_backward(x, W, R)
        analytic = {"x": gx, "W": gW, "b": gb}
    elif kind == "dropout":
        x = rng.normal(size=(4, 9))
        R = rng.normal(size=x.shape)
        _, mask = L.dropout(x, 0.5, "train", np.random.default_rng(seed + 1))
        arrays = {"x": x}
        f = lambda: float(np.sum(x * mask * R))
        analytic = {"x": L.dropout_backward(mask, R)}
    elif kind == "softmax_ce":
        logits = rng.normal(scale=2.0, size=(4, 2))
        labels = rng.integers(0, 2, size=4)
        arrays = {"logits": logits}
        f = lambda: L.softmax_cross_entropy(logits, labels)[0]
        analytic = {"logits": L.softmax_cross_entropy(logits, labels)[1]}
    else:
        raise ValueError(f"unknown layer kind {kind!r}; choose from {LAYER_KINDS}")
    analytic = {k: v * (1.0 + fault) for k, v in analytic.items()}
    return max(check_gradients(f, arrays, analytic, h).values())
