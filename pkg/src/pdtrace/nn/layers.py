"""Forward and backward passes for the layers of the LSTM-CNN.

Every function accepts a single instance or a leading batch axis:
sequences are ``(C, L)`` or ``(N, C, L)``, LSTM inputs ``(F, w)`` or
``(N, F, w)``, dense inputs ``(in,)`` or ``(N, in)``. Inputs are never
modified in place. Padding is "valid" everywhere.
"""
from __future__ import annotations

import numpy as np

from ..errors import ShapeError


def _batched(x, ndim):
    x = np.asarray(x)
    if x.ndim == ndim - 1:
        return x[None], True
    if x.ndim != ndim:
        raise ShapeError(f"expected {ndim - 1}-D or {ndim}-D input, got shape {x.shape}")
    return x, False


def out_length(length, k, stride):
    return (length - k) // stride + 1


def _windows(x, k, stride):
    """View of shape (N, C, L_out, k) with windows ``x[..., j*stride : j*stride + k]``."""
    n_out = out_length(x.shape[-1], k, stride)
    idx = np.arange(n_out)[:, None] * stride + np.arange(k)[None, :]
    return x[..., idx]


def _scatter_windows(grad_cols, length, stride):
    """Adjoint of :func:`_windows`: add each window gradient back at its source."""
    n, c, n_out, k = grad_cols.shape
    out = np.zeros((n, c, length), dtype=grad_cols.dtype)
    stop = stride * (n_out - 1) + 1
    for tau in range(k):
        out[:, :, tau : tau + stop : stride] += grad_cols[:, :, :, tau]
    return out


# -- convolution ------------------------------------------------------------

def conv1d_forward(x, kernels, bias, stride=2):
    """Strided 1-D cross-correlation: ``out[c, j] = b[c] + sum_{i,t} K[c,i,t] x[i, j*s+t]``."""
    xb, single = _batched(x, 3)
    c_out, c_in, k = kernels.shape
    if xb.shape[1] != c_in:
        raise ShapeError(f"conv1d expects {c_in} input channels, got {xb.shape[1]}")
    if xb.shape[2] < k:
        raise ShapeError(f"conv1d input length {xb.shape[2]} shorter than kernel {k}")
    n, _, _ = xb.shape
    cols = _windows(xb, k, stride).transpose(0, 2, 1, 3).reshape(n, -1, c_in * k)
    out = (cols @ kernels.reshape(c_out, -1).T).transpose(0, 2, 1) + bias[None, :, None]
    return out[0] if single else out


def conv1d_backward(x, kernels, stride, grad_out):
    """Returns ``(grad_x, grad_kernels, grad_bias)``."""
    xb, single = _batched(x, 3)
    gb, _ = _batched(grad_out, 3)
    k = kernels.shape[2]
    expected = (xb.shape[0], kernels.shape[0], out_length(xb.shape[2], k, stride))
    if gb.shape != expected:
        raise ShapeError(f"conv1d grad_out shape {gb.shape} != forward output {expected}")
    n, c_in, _ = xb.shape
    c_out = kernels.shape[0]
    n_out = gb.shape[2]
    # Rows of ``cols`` are (sample, output position); columns (channel, tap).
    cols = _windows(xb, k, stride).transpose(0, 2, 1, 3).reshape(n * n_out, c_in * k)
    g2 = gb.transpose(0, 2, 1).reshape(n * n_out, c_out)
    grad_k = (g2.T @ cols).reshape(kernels.shape)
    grad_b = gb.sum(axis=(0, 2))
    grad_cols = (g2 @ kernels.reshape(c_out, -1)).reshape(n, n_out, c_in, k).transpose(0, 2, 1, 3)
    grad_x = _scatter_windows(grad_cols, xb.shape[2], stride)
    return (grad_x[0] if single else grad_x), grad_k, grad_b


# -- pooling ----------------------------------------------------------------

def maxpool1d(x, k=2, stride=2):
    """Max over windows; returns ``(out, argmax)`` with argmax as absolute input indices.

    Ties resolve to the earliest position in the window.
    """
    xb, single = _batched(x, 3)
    if xb.shape[2] < k:
        raise ShapeError(f"maxpool input length {xb.shape[2]} shorter than kernel {k}")
    cols = _windows(xb, k, stride)
    local = np.argmax(cols, axis=-1)
    out = np.take_along_axis(cols, local[..., None], axis=-1)[..., 0]
    start = np.arange(cols.shape[2]) * stride
    arg = local + start[None, None, :]
    if single:
        return out[0], arg[0]
    return out, arg


def maxpool1d_backward(input_shape, argmax, grad_out):
    """Route each pooled gradient to the input position that won the max."""
    ab, single = _batched(argmax, 3)
    gb, _ = _batched(grad_out, 3)
    if ab.shape != gb.shape:
        raise ShapeError(f"maxpool grad_out shape {gb.shape} != argmax shape {ab.shape}")
    length = input_shape[-1]
    n, c, _ = gb.shape
    grad = np.zeros((n, c, length), dtype=gb.dtype)
    ni, ci = np.meshgrid(np.arange(n), np.arange(c), indexing="ij")
    # Overlapping windows (stride < k) may share a winner, so accumulate.
    np.add.at(grad, (ni[..., None], ci[..., None], ab), gb)
    return grad[0] if single else grad


# -- activations ------------------------------------------------------------

def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(x, grad_out):
    # Subgradient 0 at x == 0.
    return np.where(np.asarray(x) > 0, grad_out, 0.0)


def sigmoid(z):
    # tanh form avoids overflow in exp for large |z|.
    return 0.5 * (1.0 + np.tanh(0.5 * z))


# -- dense ------------------------------------------------------------------

def dense_forward(x, W, b):
    xb, single = _batched(x, 2)
    if xb.shape[1] != W.shape[1]:
        raise ShapeError(f"dense expects {W.shape[1]} inputs, got {xb.shape[1]}")
    out = xb @ W.T + b
    return out[0] if single else out


def dense_backward(x, W, grad_out):
    """Returns ``(grad_x, grad_W, grad_b)``."""
    xb, single = _batched(x, 2)
    gb, _ = _batched(grad_out, 2)
    if gb.shape != (xb.shape[0], W.shape[0]):
        raise ShapeError(f"dense grad_out shape {gb.shape} mismatched")
    grad_x = gb @ W
    return (grad_x[0] if single else grad_x), gb.T @ xb, gb.sum(axis=0)


# -- dropout ----------------------------------------------------------------

def dropout(x, p=0.5, mode="train", rng=None):
    """Inverted dropout. Returns ``(out, mask)``; ``mask`` is None in infer mode."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if mode == "infer" or p == 0.0:
        return np.array(x, copy=True), None
    if mode != "train":
        raise ValueError(f"unknown mode {mode!r}")
    if rng is None:
        raise ValueError("train-mode dropout needs a random generator")
    mask = (rng.random(np.shape(x)) >= p) / (1.0 - p)
    return x * mask, mask


def dropout_backward(mask, grad_out):
    return np.array(grad_out, copy=True) if mask is None else grad_out * mask


# -- loss -------------------------------------------------------------------

def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits.

    For a single ``(C,)`` logit vector and an integer label this is the plain
    per-example loss.
    """
    lb, single = _batched(logits, 2)
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if labels.shape != (lb.shape[0],):
        raise ShapeError("one label per logit row required")
    z = lb - lb.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(lb.shape[0])
    loss = float(np.mean(log_norm - z[rows, labels]))
    grad = softmax(lb)
    grad[rows, labels] -= 1.0
    grad /= lb.shape[0]
    return loss, (grad[0] if single else grad)


# -- LSTM -------------------------------------------------------------------

def lstm_forward(x, W, U, b, h0=None, c0=None):
    """Run one LSTM layer over every time step of ``x``.

    Gate rows of ``W`` (4H x F), ``U`` (4H x H) and ``b`` (4H) are ordered
    input, forget, candidate, output. Returns ``(H_seq, cache)`` where
    ``H_seq`` has shape ``(H, w)`` (or ``(N, H, w)``).
    """
    xb, single = _batched(x, 3)
    n, f, steps = xb.shape
    hid = U.shape[1]
    if W.shape != (4 * hid, f) or U.shape != (4 * hid, hid) or b.shape != (4 * hid,):
        raise ShapeError(
            f"LSTM weights {W.shape}, {U.shape}, {b.shape} inconsistent with F={f}, H={hid}"
        )
    h = np.zeros((n, hid)) if h0 is None else np.broadcast_to(h0, (n, hid)).astype(float)
    c = np.zeros((n, hid)) if c0 is None else np.broadcast_to(c0, (n, hid)).astype(float)
    xw = np.einsum("nft,gf->ntg", xb, W) + b
    gates = np.empty((steps, n, 4 * hid))
    hs = np.empty((steps + 1, n, hid))
    cs = np.empty((steps + 1, n, hid))
    tanh_c = np.empty((steps, n, hid))
    hs[0], cs[0] = h, c
    for t in range(steps):
        z = xw[:, t] + hs[t] @ U.T
        g = gates[t]
        g[:, : 2 * hid] = sigmoid(z[:, : 2 * hid])
        g[:, 2 * hid : 3 * hid] = np.tanh(z[:, 2 * hid : 3 * hid])
        g[:, 3 * hid :] = sigmoid(z[:, 3 * hid :])
        i, fg, o = g[:, :hid], g[:, hid : 2 * hid], g[:, 3 * hid :]
        cand = g[:, 2 * hid : 3 * hid]
        cs[t + 1] = fg * cs[t] + i * cand
        tanh_c[t] = np.tanh(cs[t + 1])
        hs[t + 1] = o * tanh_c[t]
    out = hs[1:].transpose(1, 2, 0)
    cache = {"x": xb, "W": W, "U": U, "gates": gates, "h": hs, "c": cs, "tanh_c": tanh_c}
    return (out[0] if single else out), cache


def lstm_backward(cache, grad_hseq):
    """Backpropagation through time. Returns ``(grad_x, grad_W, grad_U, grad_b)``."""
    xb, W, U = cache["x"], cache["W"], cache["U"]
    gates, hs, cs, tanh_c = cache["gates"], cache["h"], cache["c"], cache["tanh_c"]
    single = np.ndim(grad_hseq) == 2
    gh, _ = _batched(grad_hseq, 3)
    n, f, steps = xb.shape
    hid = U.shape[1]
    if gh.shape != (n, hid, steps):
        raise ShapeError(f"LSTM grad shape {gh.shape} != {(n, hid, steps)}")
    dz = np.empty((steps, n, 4 * hid))
    dh_next = np.zeros((n, hid))
    dc_next = np.zeros((n, hid))
    for t in reversed(range(steps)):
        g = gates[t]
        i, fg, cand, o = g[:, :hid], g[:, hid : 2 * hid], g[:, 2 * hid : 3 * hid], g[:, 3 * hid :]
        dh = gh[:, :, t] + dh_next
        dc = dc_next + dh * o * (1.0 - tanh_c[t] ** 2)
        d = dz[t]
        d[:, :hid] = dc * cand * i * (1.0 - i)
        d[:, hid : 2 * hid] = dc * cs[t] * fg * (1.0 - fg)
        d[:, 2 * hid : 3 * hid] = dc * i * (1.0 - cand**2)
        d[:, 3 * hid :] = dh * tanh_c[t] * o * (1.0 - o)
        dh_next = d @ U
        dc_next = dc * fg
    grad_W = np.einsum("tng,nft->gf", dz, xb)
    grad_U = np.einsum("tng,tnh->gh", dz, hs[:-1])
    grad_b = dz.sum(axis=(0, 1))
    grad_x = np.einsum("tng,gf->nft", dz, W)
    return (grad_x[0] if single else grad_x), grad_W, grad_U, grad_b


# -- initialization ---------------------------------------------------------

def glorot_uniform(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)
