"""scikit-learn compatible wrappers around the LSTM-CNN and the patch pipeline."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_is_fitted

from .data import DrawSequence, validate_sequence
from .errors import DataError
from .metrics import majority_vote
from .model import ModelConfig, model_forward, predict_proba
from .preprocess import (
    DEFAULT_CHANNELS,
    DEFAULT_STRIDE,
    DEFAULT_WINDOW,
    build_patch_set,
    features,
    plan_balanced_strides,
)
from .train import TrainConfig, train_model


def check_patches(X, n_features=None, window=None):
    """Validate a stack of patches shaped ``(n, F, w)``; returns a float64 array."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3:
        raise ValueError(f"expected patches of shape (n, F, w), got {X.shape}")
    if X.shape[0] == 0:
        raise ValueError("no patches given")
    if not np.all(np.isfinite(X)):
        raise ValueError("patches contain NaN or infinite values")
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(f"patches have {X.shape[1]} channels, model expects {n_features}")
    if window is not None and X.shape[2] != window:
        raise ValueError(f"patches have length {X.shape[2]}, model expects {window}")
    return X


def check_sequences(sequences, min_len):
    """Reject anything that is not a usable DrawSequence."""
    sequences = list(sequences)
    if not sequences:
        raise DataError("no sequences given")
    for seq in sequences:
        if not isinstance(seq, DrawSequence):
            raise TypeError(f"expected DrawSequence, got {type(seq).__name__}")
        report = validate_sequence(seq, min_len)
        if not report.usable:
            raise DataError(f"sequence {seq.sequence_id} failed validation: {report.issues[:5]}")
    return sequences


class LstmCnnClassifier(ClassifierMixin, BaseEstimator):
    """Patch-level LSTM-CNN classifier trained with Adam.

    ``fit`` takes patches ``X`` of shape ``(n, F, w)`` and two class labels
    ``y``; the window and channel count are read from ``X``. Labels are
    sorted, so for ``{"HC", "PD"}`` or ``{0, 1}`` the second class is PD.
    """

    def __init__(
        self,
        lstm_hidden=2,
        conv1_channels=16,
        conv2_channels=32,
        kernel_size=3,
        conv_stride=2,
        pool_size=2,
        pool_stride=2,
        fc_hidden=64,
        dropout=0.5,
        lr=0.001,
        beta1=0.9,
        beta2=0.999,
        eps=1e-8,
        batch_size=64,
        epochs=200,
        val_fraction=0.2,
        random_state=0,
    ):
        self.lstm_hidden = lstm_hidden
        self.conv1_channels = conv1_channels
        self.conv2_channels = conv2_channels
        self.kernel_size = kernel_size
        self.conv_stride = conv_stride
        self.pool_size = pool_size
        self.pool_stride = pool_stride
        self.fc_hidden = fc_hidden
        self.dropout = dropout
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.batch_size = batch_size
        self.epochs = epochs
        self.val_fraction = val_fraction
        self.random_state = random_state

    def _model_config(self, n_features, window):
        return ModelConfig(
            window=window,
            n_features=n_features,
            lstm_hidden=self.lstm_hidden,
            conv1_channels=self.conv1_channels,
            conv2_channels=self.conv2_channels,
            kernel_size=self.kernel_size,
            conv_stride=self.conv_stride,
            pool_size=self.pool_size,
            pool_stride=self.pool_stride,
            fc_hidden=self.fc_hidden,
            dropout=self.dropout,
            n_classes=2,
        )

    def _train_config(self):
        return TrainConfig(
            lr=self.lr,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
            batch_size=self.batch_size,
            epochs=self.epochs,
            val_fraction=self.val_fraction,
            seed=int(self.random_state or 0),
        )

    def fit(self, X, y, X_val=None, y_val=None):
        X = check_patches(X)
        y = np.asarray(y)
        if y.shape != (X.shape[0],):
            raise ValueError(f"y must have shape ({X.shape[0]},), got {y.shape}")
        self.classes_ = unique_labels(y)
        if len(self.classes_) != 2:
            raise ValueError(f"binary classification only; got classes {self.classes_}")
        index = np.searchsorted(self.classes_, y)
        val_index = None
        if X_val is not None:
            X_val = check_patches(X_val, X.shape[1], X.shape[2])
            val_index = np.searchsorted(self.classes_, np.asarray(y_val))
        self.checkpoint_, self.history_ = train_model(
            X, index, self._train_config(), self._model_config(X.shape[1], X.shape[2]),
            X_val, val_index,
        )
        self.params_ = self.checkpoint_.params
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "params_")
        c = self.params_.config
        X = check_patches(X, c.n_features, c.window)
        logits = np.concatenate(
            [model_forward(self.params_, X[i : i + 512], "infer")[0] for i in range(0, len(X), 512)]
        )
        return logits[:, 1] - logits[:, 0]

    def predict_proba(self, X):
        check_is_fitted(self, "params_")
        c = self.params_.config
        return predict_proba(self.params_, check_patches(X, c.n_features, c.window))

    def predict(self, X):
        check_is_fitted(self, "params_")
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    @classmethod
    def from_checkpoint(cls, checkpoint):
        """Wrap trained parameters without retraining; classes are ``[0, 1]`` (HC, PD)."""
        c = checkpoint.params.config
        est = cls(
            lstm_hidden=c.lstm_hidden, conv1_channels=c.conv1_channels,
            conv2_channels=c.conv2_channels, kernel_size=c.kernel_size,
            conv_stride=c.conv_stride, pool_size=c.pool_size, pool_stride=c.pool_stride,
            fc_hidden=c.fc_hidden, dropout=c.dropout,
        )
        est.checkpoint_ = checkpoint
        est.params_ = checkpoint.params
        est.classes_ = np.array([0, 1])
        est.n_features_in_ = c.n_features
        est.history_ = None
        return est


class PatchExtractor(TransformerMixin, BaseEstimator):
    """Turn drawing sequences into normalized velocity patches.

    With ``balance=True`` the strides fitted on the training sequences equalize
    per-class patch counts; ``transform`` on other sequences (or with
    ``balance=False``) uses the fixed ``stride``.
    """

    def __init__(self, window=DEFAULT_WINDOW, stride=DEFAULT_STRIDE, channels=DEFAULT_CHANNELS, balance=True):
        self.window = window
        self.stride = stride
        self.channels = channels
        self.balance = balance

    def fit(self, sequences, y=None):
        sequences = check_sequences(sequences, self.window + 1)
        if self.balance:
            series = [features(s, self.channels) for s in sequences]
            plans = plan_balanced_strides(series, self.window, self.stride)
            self.strides_ = {s.sequence_id: p.stride for s, p in zip(sequences, plans)}
        else:
            self.strides_ = {}
        return self

    def transform_patch_set(self, sequences):
        check_is_fitted(self, "strides_")
        sequences = check_sequences(sequences, self.window + 1)
        series = [features(s, self.channels) for s in sequences]
        strides = [self.strides_.get(s.sequence_id, self.stride) for s in sequences]
        return build_patch_set(series, self.window, strides, self.channels)

    def transform(self, sequences):
        return self.transform_patch_set(sequences).X

    def fit_transform(self, sequences, y=None):
        return self.fit(sequences).transform(sequences)


class SequenceClassifier(ClassifierMixin, BaseEstimator):
    """Sequence-level classifier: patch extraction, LSTM-CNN, majority vote.

    ``fit`` accepts DrawSequence objects (labels are read from them when
    ``y`` is omitted); predictions are ``"HC"``/``"PD"``.
    """

    def __init__(self, window=DEFAULT_WINDOW, stride=DEFAULT_STRIDE, eval_stride=None,
                 channels=DEFAULT_CHANNELS, epochs=200, batch_size=64, lr=0.001, random_state=0):
        self.window = window
        self.stride = stride
        self.eval_stride = eval_stride
        self.channels = channels
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.random_state = random_state

    def fit(self, sequences, y=None):
        sequences = list(sequences)
        if y is not None:
            sequences = [DrawSequence(s.subject_id, lab, s.samples, s.sequence_id)
                         for s, lab in zip(sequences, y)]
        self.extractor_ = PatchExtractor(self.window, self.stride, self.channels, True).fit(sequences)
        ps = self.extractor_.transform_patch_set(sequences)
        self.patch_model_ = LstmCnnClassifier(
            epochs=self.epochs, batch_size=self.batch_size, lr=self.lr, random_state=self.random_state
        ).fit(ps.X, ps.y)
        self.classes_ = np.array(["HC", "PD"])
        return self

    def _patch_probas(self, sequences):
        check_is_fitted(self, "patch_model_")
        stride = self.eval_stride or max(1, self.window // 2)
        out = []
        for s in check_sequences(sequences, self.window + 1):
            series = features(s, self.channels)
            ps = build_patch_set([series], self.window, [stride], self.channels)
            out.append(self.patch_model_.predict_proba(ps.X))
        return out

    def predict_proba(self, sequences):
        return np.array([[1 - p[:, 1].mean(), p[:, 1].mean()] for p in self._patch_probas(sequences)])

    def predict(self, sequences):
        return np.array([
            self.classes_[majority_vote(np.argmax(p, axis=1), p[:, 1])]
            for p in self._patch_probas(sequences)
        ])
