"""Confusion-matrix metrics and patch/sequence-level evaluation (PD is the positive class)."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import HC, LABELS, PD
from .errors import DataError, ShapeError
from .preprocess import DEFAULT_CHANNELS, features, patch_count, segment

log = logging.getLogger(__name__)

METRICS = ("accuracy", "precision", "recall", "specificity", "f1", "mcc")


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be nonnegative")

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class MetricReport:
    level: str
    accuracy: float
    precision: float
    recall: float
    specificity: float
    f1: float
    mcc: float
    confusion: ConfusionMatrix
    undefined: list = field(default_factory=list)

    def to_dict(self):
        d = asdict(self)
        d["confusion"] = asdict(self.confusion)
        return d


def _to_index(v):
    if isinstance(v, str):
        return LABELS.index(v.upper())
    return int(v)


def confusion(predictions, labels):
    predictions = [_to_index(p) for p in predictions]
    labels = [_to_index(t) for t in labels]
    if len(predictions) != len(labels):
        raise ShapeError(f"{len(predictions)} predictions vs {len(labels)} labels")
    if not labels:
        raise ValueError("need at least one prediction")
    pairs = list(zip(predictions, labels))
    return ConfusionMatrix(
        tp=pairs.count((PD, PD)),
        fp=pairs.count((PD, HC)),
        tn=pairs.count((HC, HC)),
        fn=pairs.count((HC, PD)),
    )


def compute_metrics(cm, level="P"):
    """Six confusion-matrix metrics; a zero denominator yields 0 and is listed in ``undefined``."""
    if cm.total == 0:
        raise ValueError("cannot compute metrics of an empty confusion matrix")
    undefined = []

    def ratio(name, num, den):
        if den == 0:
            undefined.append(name)
            return 0.0
        return num / den

    tp, fp, tn, fn = cm.tp, cm.fp, cm.tn, cm.fn
    accuracy = (tp + tn) / cm.total
    precision = ratio("precision", tp, tp + fp)
    recall = ratio("recall", tp, tp + fn)
    specificity = ratio("specificity", tn, tn + fp)
    if "precision" in undefined or "recall" in undefined:
        undefined.append("f1")
        f1 = 0.0
    else:
        f1 = ratio("f1", 2 * precision * recall, precision + recall)
    mcc = ratio(
        "mcc", tp * tn - fp * fn, math.sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn))
    )
    return MetricReport(level, accuracy, precision, recall, specificity, f1, mcc, cm, undefined)


def majority_vote(predictions, pd_probabilities=None):
    """Sequence class from its patch predictions.

    Ties in the vote go to the class with the higher mean predicted
    probability, and remaining ties to PD.
    """
    votes = [_to_index(p) for p in predictions]
    if not votes:
        raise ValueError("majority vote needs at least one patch")
    n_pd = votes.count(PD)
    n_hc = len(votes) - n_pd
    if n_pd != n_hc:
        return PD if n_pd > n_hc else HC
    if pd_probabilities is not None:
        mean_pd = float(np.mean(pd_probabilities))
        if mean_pd != 1.0 - mean_pd:
            return PD if mean_pd > 0.5 else HC
    return PD


def _proba_fn(model):
    from .model import ModelParams, predict_proba
    from .train import Checkpoint

    if isinstance(model, Checkpoint):
        model = model.params
    if isinstance(model, ModelParams):
        return lambda X: predict_proba(model, X)
    if hasattr(model, "predict_proba"):
        return model.predict_proba
    if callable(model):
        return model
    raise TypeError(f"cannot score patches with {type(model).__name__}")


@dataclass
class EvaluationResult:
    patch: MetricReport
    sequence: MetricReport
    detail: list

    def to_dict(self):
        return {"P": self.patch.to_dict(), "S": self.sequence.to_dict(), "sequences": self.detail}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    def to_table(self, name="LSTM-CNN"):
        """Plain-text row in the layout of a P/S comparison table."""
        titles = {"accuracy": "Accuracy", "precision": "Precision", "recall": "Recall",
                  "specificity": "Specificity", "f1": "F1 score", "mcc": "MCC"}
        header = ["Model"] + [f"{titles[m]} (P/S)" for m in METRICS]
        cells = [name] + [
            f"{getattr(self.patch, m):.4f} / {getattr(self.sequence, m):.4f}" for m in METRICS
        ]
        widths = [max(len(h), len(c)) for h, c in zip(header, cells)]

        def line(row):
            return "| " + " | ".join(v.ljust(w) for v, w in zip(row, widths)) + " |"

        sep = "|" + "|".join("-" * (w + 2) for w in widths) + "|"
        return "\n".join([line(header), sep, line(cells)]) + "\n"


def evaluate(model, sequences, window=128, stride=None, channels=DEFAULT_CHANNELS):
    """Patch-level and majority-vote sequence-level metrics on held-out sequences.

    ``model`` may be a Checkpoint, ModelParams, an estimator with
    ``predict_proba`` or a plain callable mapping ``(n, F, w)`` patches to
    ``(n, 2)`` probabilities. Sequences too short for one window are skipped
    and reported in the detail list.
    """
    stride = stride or max(1, window // 2)
    proba = _proba_fn(model)
    patch_pred, patch_true, seq_pred, seq_true, detail = [], [], [], [], []
    for seq in sequences:
        series = features(seq, channels)
        if patch_count(len(series), window, stride) == 0:
            log.warning("sequence %s too short for window %d; skipped", seq.sequence_id, window)
            detail.append({"sequence_id": seq.sequence_id, "subject_id": seq.subject_id,
                           "label": seq.label, "skipped": True})
            continue
        X = np.stack([p.data for p in segment(series, window, stride)])
        p = np.asarray(proba(X))
        votes = np.argmax(p, axis=1)
        verdict = majority_vote(votes, p[:, PD])
        patch_pred.extend(votes.tolist())
        patch_true.extend([seq.target] * len(votes))
        seq_pred.append(verdict)
        seq_true.append(seq.target)
        detail.append({
            "sequence_id": seq.sequence_id,
            "subject_id": seq.subject_id,
            "label": seq.label,
            "skipped": False,
            "votes": {"HC": int(np.sum(votes == HC)), "PD": int(np.sum(votes == PD))},
            "mean_p_pd": float(p[:, PD].mean()),
            "verdict": LABELS[verdict],
        })
    if not seq_true:
        raise DataError(f"no evaluable sequences among {len(sequences)} (window {window})")
    return EvaluationResult(
        compute_metrics(confusion(patch_pred, patch_true), "P"),
        compute_metrics(confusion(seq_pred, seq_true), "S"),
        detail,
    )
