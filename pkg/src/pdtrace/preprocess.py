"""Velocity features, per-sequence min-max scaling and class-balanced windowing."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import CHANNELS, LABELS
from .errors import BalancingError, DataError, NumericError

DEFAULT_CHANNELS = ("vx", "vy")
PASSTHROUGH = ("a", "l", "p")
FEATURES = ("vx", "vy") + PASSTHROUGH
DEFAULT_WINDOW = 128
DEFAULT_STRIDE = 8


@dataclass(frozen=True)
class FeatureSeries:
    subject_id: str
    label: str
    channels: np.ndarray  # (F, L - 1)
    channel_names: tuple = DEFAULT_CHANNELS
    sequence_id: str = ""

    def __len__(self):
        return self.channels.shape[1]


@dataclass(frozen=True)
class Patch:
    subject_id: str
    label: str
    data: np.ndarray  # (F, w)
    source_offset: int
    sequence_id: str = ""


@dataclass(frozen=True)
class SegmentationPlan:
    stride: int
    expected_count: int


def patch_count(length, window, stride):
    if length < window:
        return 0
    return (length - window) // stride + 1


def velocity_features(seq, selected=DEFAULT_CHANNELS):
    """Finite-difference pen velocity, optionally with raw channels passed through.

    ``vx[k] = (x[k+1] - x[k]) / (t[k+1] - t[k])``; passthrough channels take
    samples ``1..L-1`` so every column lines up with the velocity ending there.
    """
    selected = tuple(selected)
    unknown = [c for c in selected if c not in FEATURES]
    if unknown or not selected:
        raise ValueError(f"unknown feature channels {unknown}; choose from {FEATURES}")
    s = seq.samples
    dt = np.diff(s[:, CHANNELS.index("t")])
    if np.any(dt <= 0):
        raise NumericError(
            f"sequence {seq.sequence_id}: non-positive time step at index "
            f"{int(np.argmax(dt <= 0)) + 1}"
        )
    rows = []
    for name in selected:
        if name == "vx":
            rows.append(np.diff(s[:, CHANNELS.index("x")]) / dt)
        elif name == "vy":
            rows.append(np.diff(s[:, CHANNELS.index("y")]) / dt)
        else:
            rows.append(s[1:, CHANNELS.index(name)].copy())
    return FeatureSeries(seq.subject_id, seq.label, np.vstack(rows), selected, seq.sequence_id)


def minmax_normalize(series):
    """Rescale each channel of one series onto [0, 1]; constant channels become 0."""
    x = series.channels
    lo = x.min(axis=1, keepdims=True)
    span = x.max(axis=1, keepdims=True) - lo
    out = np.zeros_like(x)
    np.divide(x - lo, span, out=out, where=span > 0)
    return FeatureSeries(
        series.subject_id, series.label, out, series.channel_names, series.sequence_id
    )


def segment(series, w, stride):
    """Cut windows of length ``w`` at offsets 0, stride, 2*stride, ..."""
    if w < 1 or stride < 1:
        raise ValueError("window and stride must be positive")
    n = patch_count(len(series), w, stride)
    return [
        Patch(
            series.subject_id,
            series.label,
            series.channels[:, k * stride : k * stride + w].copy(),
            k * stride,
            series.sequence_id,
        )
        for k in range(n)
    ]


def _class_total(lengths, strides, w):
    return sum(patch_count(n, w, s) for n, s in zip(lengths, strides))


def plan_balanced_strides(series, w, base_stride=DEFAULT_STRIDE):
    """Choose per-sequence strides so both classes yield about the same number of patches.

    The class with fewer patches at ``base_stride`` keeps that stride and sets
    the target. The other class gets the largest uniform stride that still
    overshoots the target, then its sequences are bumped by one, longest
    first, until the class total no longer exceeds the target; bumps that can
    be undone without overshooting are reverted, shortest first.

    Returns one :class:`SegmentationPlan` per input series, in input order.
    """
    series = list(series)
    lengths = [len(s) for s in series]
    by_class = {lab: [i for i, s in enumerate(series) if s.label == lab] for lab in LABELS}
    for lab, idx in by_class.items():
        if not any(lengths[i] >= w for i in idx):
            raise BalancingError(f"class {lab} has no sequence long enough for window {w}")

    strides = [base_stride] * len(series)
    totals = {
        lab: _class_total([lengths[i] for i in idx], [base_stride] * len(idx), w)
        for lab, idx in by_class.items()
    }
    minority = min(LABELS, key=lambda lab: (totals[lab], LABELS.index(lab)))
    majority = LABELS[1 - LABELS.index(minority)]
    target = totals[minority]
    idx = [i for i in by_class[majority] if lengths[i] >= w]
    lens = [lengths[i] for i in idx]

    if totals[majority] > target:
        if len(idx) > target:
            raise BalancingError(
                f"cannot reduce class {majority} to {target} patches even at one patch "
                f"per sequence ({len(idx)} sequences); increase base_stride"
            )
        s_max = max(lens) - w + 1
        s = base_stride
        while s < s_max and _class_total(lens, [s + 1] * len(lens), w) > target:
            s += 1
        cur = [s] * len(lens)
        order = sorted(range(len(lens)), key=lambda k: (-lens[k], k))
        bumped = []
        for k in order:
            if _class_total(lens, cur, w) <= target:
                break
            cur[k] += 1
            bumped.append(k)
        for k in reversed(bumped):
            cur[k] -= 1
            if _class_total(lens, cur, w) > target:
                cur[k] += 1
        for k, i in enumerate(idx):
            strides[i] = cur[k]

    return [SegmentationPlan(s, patch_count(n, w, s)) for n, s in zip(lengths, strides)]


@dataclass
class PatchSet:
    """Stacked patches with their provenance, ready for the classifier."""

    X: np.ndarray  # (n, F, w)
    y: np.ndarray  # (n,) class index, HC=0 / PD=1
    subject_ids: list
    sequence_ids: list
    offsets: np.ndarray
    channel_names: tuple = DEFAULT_CHANNELS
    window: int = DEFAULT_WINDOW
    strides: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.y)

    def patches(self):
        return [
            Patch(sid, LABELS[int(lab)], x, int(off), qid)
            for x, lab, sid, qid, off in zip(
                self.X, self.y, self.subject_ids, self.sequence_ids, self.offsets
            )
        ]


def features(seq, channels=DEFAULT_CHANNELS):
    return minmax_normalize(velocity_features(seq, channels))


def build_patch_set(series, window, strides, channel_names=DEFAULT_CHANNELS):
    """Segment each series with its own stride and stack the windows in input order."""
    X, y, sids, qids, offs = [], [], [], [], []
    stride_map = {}
    for s, stride in zip(series, strides):
        stride_map[s.sequence_id] = int(stride)
        for p in segment(s, window, stride):
            X.append(p.data)
            y.append(LABELS.index(p.label))
            sids.append(p.subject_id)
            qids.append(p.sequence_id)
            offs.append(p.source_offset)
    f = len(channel_names)
    return PatchSet(
        np.array(X, dtype=np.float64).reshape(len(X), f, window),
        np.array(y, dtype=np.int64),
        sids,
        qids,
        np.array(offs, dtype=np.int64),
        tuple(channel_names),
        window,
        stride_map,
    )


def prepare_training_patches(
    sequences, window=DEFAULT_WINDOW, base_stride=DEFAULT_STRIDE, channels=DEFAULT_CHANNELS
):
    """Velocity -> normalize -> balance -> segment for a list of training sequences."""
    series = [features(s, channels) for s in sequences]
    plans = plan_balanced_strides(series, window, base_stride)
    return build_patch_set(series, window, [p.stride for p in plans], channels)


def prepare_eval_patches(sequences, window=DEFAULT_WINDOW, stride=None, channels=DEFAULT_CHANNELS):
    stride = stride or max(1, window // 2)
    series = [features(s, channels) for s in sequences]
    return build_patch_set(series, window, [stride] * len(series), channels)


def save_patch_set(ps, directory):
    """Persist a patch set as ``manifest.json`` plus a flat ``patches.csv``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": "pdtrace-patches",
        "version": 1,
        "window": ps.window,
        "channel_names": list(ps.channel_names),
        "strides": ps.strides,
        "patches": [
            {"subject_id": s, "sequence_id": q, "label": LABELS[int(lab)], "offset": int(o)}
            for s, q, lab, o in zip(ps.subject_ids, ps.sequence_ids, ps.y, ps.offsets)
        ],
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=1))
    header = ["patch"] + [f"{c}_{t}" for c in ps.channel_names for t in range(ps.window)]
    with open(directory / "patches.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for k, x in enumerate(ps.X):
            writer.writerow([k] + [repr(float(v)) for v in x.ravel()])


def load_patch_set(directory):
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text())
        with open(directory / "patches.csv", newline="") as fh:
            rows = list(csv.reader(fh))[1:]
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read patch set in {directory}: {exc}") from exc
    w, names = manifest["window"], tuple(manifest["channel_names"])
    meta = manifest["patches"]
    if len(rows) != len(meta):
        raise DataError("patch manifest and CSV disagree on patch count")
    X = np.array([[float(v) for v in r[1:]] for r in rows], dtype=np.float64)
    return PatchSet(
        X.reshape(len(meta), len(names), w),
        np.array([LABELS.index(m["label"]) for m in meta], dtype=np.int64),
        [m["subject_id"] for m in meta],
        [m["sequence_id"] for m in meta],
        np.array([m["offset"] for m in meta], dtype=np.int64),
        names,
        w,
        manifest["strides"],
    )
