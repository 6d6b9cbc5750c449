"""Measurement-domain classifiers, accuracy curves and the safe interval.

Accuracies here come from a linear softmax classifier trained on simulated
measurements. They are empirical lower bounds on recognisability, not the
Bayes-optimal rates, and curves are reported as measured (monotonicity in
the sampling rate is checked, never imposed).
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from typing import Literal, Optional, Sequence

import numpy as np

from spx.errors import InvalidArgument, InvalidDataset
from spx.sensing import MeasurementBatch

Task = Literal["privacy", "behavior"]
Split = Literal["train", "val", "test"]

CURVE_COLUMNS = ("rho", "M", "mean_accuracy", "std_error", "trials")
LOWER_BOUND_CAVEAT = "linear-softmax accuracy; empirical lower bound on Bayes-optimal recognisability"


@dataclass(frozen=True, eq=False)
class LabeledMeasurementSet:
    features: np.ndarray
    labels: np.ndarray
    k: int
    task: Task
    rho: float
    split: Split
    seeds: Optional[np.ndarray] = None

    def __post_init__(self):
        features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if features.shape[0] != labels.size:
            raise InvalidArgument(f"{features.shape[0]} samples but {labels.size} labels")
        if labels.size and (labels.min() < 0 or labels.max() >= self.k):
            raise InvalidArgument(f"labels must lie in [0, {self.k})")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.labels.size

    def leading(self, m: int, m_total: int) -> "LabeledMeasurementSet":
        """Restrict features to those of the leading ``m`` measurement rows."""
        cols = feature_columns(self.task, m, m_total)
        return LabeledMeasurementSet(
            self.features[:, cols], self.labels, self.k, self.task, self.rho * m / m_total,
            self.split, self.seeds,
        )


def feature_columns(task: Task, m: int, m_total: int) -> np.ndarray:
    """Feature indices belonging to the first ``m`` of ``m_total`` rows."""
    if task == "privacy":
        return np.arange(m)
    return np.concatenate([np.arange(m), m_total + np.arange(m)])


@dataclass(frozen=True, eq=False)
class LinearSoftmaxModel:
    weights: np.ndarray
    bias: np.ndarray
    task: Task
    trained_rho: float

    @property
    def k(self) -> int:
        return self.bias.size


@dataclass(frozen=True)
class CurvePoint:
    rho: float
    m: int
    mean_accuracy: float
    std_error: float
    trials: int


@dataclass(frozen=True)
class AccuracyCurve:
    points: tuple[CurvePoint, ...]
    task: Task
    k: int

    def __post_init__(self):
        rhos = [p.rho for p in self.points]
        if any(b <= a for a, b in zip(rhos, rhos[1:])):
            raise InvalidArgument("curve points must be sorted by strictly increasing rho")
        if any(not 0.0 <= p.mean_accuracy <= 1.0 for p in self.points):
            raise InvalidArgument("accuracies must lie in [0, 1]")

    @property
    def rhos(self) -> np.ndarray:
        return np.array([p.rho for p in self.points])

    @property
    def accuracies(self) -> np.ndarray:
        return np.array([p.mean_accuracy for p in self.points])


@dataclass(frozen=True)
class SafeInterval:
    rho_beh_star: Optional[float]
    rho_priv_star: Optional[float]
    interval: Optional[tuple[float, float]]
    alpha_beh: float
    beta_priv: float

    @property
    def empty(self) -> bool:
        return self.interval is None

    def as_dict(self) -> dict[str, object]:
        return {
            "rho_beh_star": self.rho_beh_star,
            "rho_priv_star": self.rho_priv_star,
            "interval": "EMPTY" if self.interval is None else list(self.interval),
            "alpha_beh": self.alpha_beh,
            "beta_priv": self.beta_priv,
        }


def temporal_features(batch: MeasurementBatch | np.ndarray) -> np.ndarray:
    """``[mean_t Y; mean_t |Y[:, t+1] - Y[:, t]|]``, length ``2M``."""
    values = batch.values if isinstance(batch, MeasurementBatch) else np.asarray(batch, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    if values.size == 0 or values.shape[1] < 1:
        raise InvalidArgument("temporal_features needs a non-empty batch")
    mean = values.mean(axis=1)
    if values.shape[1] == 1:
        motion = np.zeros_like(mean)
    else:
        motion = np.abs(np.diff(values, axis=1)).mean(axis=1)
    return np.concatenate([mean, motion])


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_objective(
    weights: np.ndarray, bias: np.ndarray, features: np.ndarray, labels: np.ndarray, l2: float
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy plus ``l2/2 ||W||_F^2`` and its gradients ``(dW, dc)``."""
    n = features.shape[0]
    logits = features @ weights.T + bias
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    log_probs = shifted - log_norm[:, None]
    loss = -log_probs[np.arange(n), labels].mean() + 0.5 * l2 * float(np.sum(weights**2))
    delta = np.exp(log_probs)
    delta[np.arange(n), labels] -= 1.0
    delta /= n
    return float(loss), delta.T @ features + l2 * weights, delta.sum(axis=0)


def train_softmax(
    data: LabeledMeasurementSet,
    epochs: int = 500,
    lr: float = 0.05,
    l2: float = 1e-4,
    seed: int = 0,
    *,
    standardize: bool = True,
) -> LinearSoftmaxModel:
    """Full-batch gradient descent from zero weights for a fixed epoch count.

    With ``standardize`` the features are z-scored with training statistics
    before descent and the scaling is folded back into the returned weights,
    so the model acts on raw features. The procedure is deterministic;
    ``seed`` is accepted for interface uniformity and recorded nowhere.
    """
    if epochs < 0 or lr <= 0 or l2 < 0:
        raise InvalidArgument("epochs >= 0, lr > 0 and l2 >= 0 are required")
    present = np.unique(data.labels)
    if data.k < 2 or present.size < 2:
        raise InvalidDataset("training needs at least two classes with samples")
    x = data.features
    if standardize:
        mu = x.mean(axis=0)
        scale = x.std(axis=0)
        scale[scale == 0] = 1.0
        x = (x - mu) / scale
    w, c = _descend(x, data.labels, data.k, epochs, lr, l2)
    if standardize:
        w = w / scale
        c = c - w @ mu
    return LinearSoftmaxModel(w, c, data.task, data.rho)


def _descend(x: np.ndarray, labels: np.ndarray, k: int, epochs: int, lr: float, l2: float):
    # Same gradient as softmax_objective, minus the loss value and with
    # preallocated buffers; this loop dominates sweep runtime.
    n = x.shape[0]
    onehot = np.zeros((n, k))
    onehot[np.arange(n), labels] = 1.0
    w = np.zeros((k, x.shape[1]))
    c = np.zeros(k)
    logits = np.empty((n, k))
    step = lr / n
    decay = 1.0 - lr * l2
    for _ in range(epochs):
        np.matmul(x, w.T, out=logits)
        logits += c
        logits -= logits.max(axis=1, keepdims=True)
        np.exp(logits, out=logits)
        logits /= logits.sum(axis=1, keepdims=True)
        logits -= onehot
        gc = logits.sum(axis=0)
        w *= decay
        w -= step * (logits.T @ x)
        c -= step * gc
    return w, c


def predict(model: LinearSoftmaxModel, features: np.ndarray) -> tuple[int, np.ndarray]:
    """MAP label and posterior; ``np.argmax`` breaks ties toward the lowest index."""
    features = np.asarray(features, dtype=np.float64).reshape(-1)
    if features.size != model.weights.shape[1]:
        raise InvalidArgument(f"expected {model.weights.shape[1]} features, got {features.size}")
    probs = softmax(model.weights @ features + model.bias)
    return int(np.argmax(probs)), probs


def predict_batch(model: LinearSoftmaxModel, features: np.ndarray) -> np.ndarray:
    features = np.atleast_2d(features)
    if features.shape[1] != model.weights.shape[1]:
        raise InvalidArgument(f"expected {model.weights.shape[1]} features, got {features.shape[1]}")
    return np.argmax(features @ model.weights.T + model.bias, axis=1)


def accuracy(model: LinearSoftmaxModel, data: LabeledMeasurementSet) -> float:
    return float(np.mean(predict_batch(model, data.features) == data.labels))


def privacy_advantage(curve: AccuracyCurve) -> np.ndarray:
    if curve.k < 2:
        raise InvalidArgument("privacy advantage needs k >= 2")
    return curve.accuracies - 1.0 / curve.k


def critical_rate(curve: AccuracyCurve, threshold: float, mode: Literal["priv_sup", "beh_inf"]) -> Optional[float]:
    """Critical rate on the sampled grid, or ``None`` when no point qualifies."""
    if not curve.points:
        raise InvalidArgument("empty curve")
    if not 0.0 < threshold < 1.0:
        raise InvalidArgument("threshold must lie in (0, 1)")
    if mode == "priv_sup":
        hits = [p.rho for p in curve.points if p.mean_accuracy <= threshold]
        return max(hits) if hits else None
    if mode == "beh_inf":
        hits = [p.rho for p in curve.points if p.mean_accuracy >= threshold]
        return min(hits) if hits else None
    raise InvalidArgument(f"unknown mode {mode!r}")


def safe_interval(beh_curve: AccuracyCurve, priv_curve: AccuracyCurve, alpha: float, beta: float) -> SafeInterval:
    if len(beh_curve.points) != len(priv_curve.points) or not np.array_equal(beh_curve.rhos, priv_curve.rhos):
        raise InvalidArgument("behavior and privacy curves must share the same rho grid")
    beh = critical_rate(beh_curve, alpha, "beh_inf")
    priv = critical_rate(priv_curve, beta, "priv_sup")
    interval = (beh, priv) if beh is not None and priv is not None and beh <= priv else None
    return SafeInterval(beh, priv, interval, alpha, beta)


def summarize(values: Sequence[float]) -> tuple[float, float]:
    """Mean and standard error (sample std / sqrt(n)) with exactly rounded sums."""
    n = len(values)
    mean = math.fsum(values) / n
    if n < 2:
        return mean, 0.0
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var / n)


def write_curve(path: str | os.PathLike, curve: AccuracyCurve) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CURVE_COLUMNS)
        for p in curve.points:
            writer.writerow([repr(p.rho), p.m, repr(p.mean_accuracy), repr(p.std_error), p.trials])


def read_curve(path: str | os.PathLike, task: Task = "behavior", k: int = 0) -> AccuracyCurve:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(CURVE_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise InvalidArgument(f"{path}: missing columns {sorted(missing)}")
        points = tuple(
            CurvePoint(float(r["rho"]), int(r["M"]), float(r["mean_accuracy"]), float(r["std_error"]), int(r["trials"]))
            for r in reader
        )
    return AccuracyCurve(points, task, k)
