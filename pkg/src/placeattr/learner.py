"""Per-attribute feature selection and linear classifiers.

Columns are ranked by mutual information with the label after equal-frequency
discretization. Classifiers are linear (hinge or logistic loss, L2 penalty)
fitted by seeded stochastic subgradient descent on standardized features.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numba
import numpy as np

from .domain import DegenerateLabelsError, LabelTable, PlaceAttrError, ValidationError
from .features import EMBEDDING, FeatureMatrix
from .seeding import rng_for

MODEL_FORMAT_VERSION = 1
DEFAULT_K = 10_000
DEFAULT_BINS = 8

LossKind = Literal["hinge", "logistic"]


class TrainingDivergedError(PlaceAttrError, FloatingPointError):
    """SGD produced a non-finite loss."""


# --- mutual information ---------------------------------------------------------------


def equal_frequency_bins(X, n_bins: int = DEFAULT_BINS) -> np.ndarray:
    """Bin index per value from its rank; tied values always share a bin.

    Works column-wise on 2-d input. Only the ordering of values matters, so any
    strictly increasing transform of a column leaves its bins unchanged.
    """
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    X = np.asarray(X, dtype=np.float64)
    squeeze = X.ndim == 1
    if squeeze:
        X = X[:, None]
    n = X.shape[0]
    order = np.argsort(X, axis=0, kind="stable")
    srt = np.take_along_axis(X, order, axis=0)
    pos = np.arange(n)[:, None]
    is_start = np.ones_like(srt, dtype=bool)
    is_start[1:] = srt[1:] != srt[:-1]
    first = np.maximum.accumulate(np.where(is_start, pos, 0), axis=0)
    bins_sorted = first * n_bins // n
    out = np.empty_like(bins_sorted)
    np.put_along_axis(out, order, bins_sorted, axis=0)
    return out[:, 0] if squeeze else out


def _check_labels(labels) -> np.ndarray:
    y = np.asarray(labels).astype(bool)
    if y.all() or not y.any():
        raise DegenerateLabelsError("mutual information needs both label values present")
    return y


def mutual_information_columns(X, labels, n_bins: int = DEFAULT_BINS) -> np.ndarray:
    """Plug-in mutual information (nats) of every column with a binary label."""
    y = _check_labels(labels).astype(np.int64)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != len(y):
        raise ValidationError("X must be 2-d with one row per label")
    n, d = X.shape
    bins = equal_frequency_bins(X, n_bins)
    cell = (np.arange(d)[None, :] * n_bins + bins) * 2 + y[:, None]
    joint = np.bincount(cell.ravel(), minlength=d * n_bins * 2).reshape(d, n_bins, 2)
    n_x = joint.sum(axis=2, keepdims=True)
    n_y = np.bincount(y, minlength=2).reshape(1, 1, 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        # integer products keep the independence ratio exactly 1
        ratio = (joint * n) / (n_x * n_y)
        terms = np.where(joint > 0, joint / n * np.log(ratio), 0.0)
    # summing sorted terms makes equal tables (up to bin order) tie exactly
    return np.sort(terms.reshape(d, -1), axis=1).sum(axis=1)


def mutual_information(column, labels, n_bins: int = DEFAULT_BINS) -> float:
    column = np.asarray(column, dtype=np.float64)
    return float(mutual_information_columns(column[:, None], labels, n_bins)[0])


@dataclass
class SelectionReport:
    attribute_name: str
    ranked: list[tuple[str, float]]
    k_kept: int
    bypassed: list[str] = field(default_factory=list)

    @property
    def selected(self) -> list[str]:
        return [name for name, _ in self.ranked[: self.k_kept]] + list(self.bypassed)


def labeled_rows(matrix: FeatureMatrix, labels: LabelTable) -> tuple[list[str], np.ndarray]:
    ids = [r for r in matrix.row_ids if r in labels.entries]
    y = np.array([labels.entries[r] for r in ids], dtype=bool)
    return ids, y


def select_features(
    matrix: FeatureMatrix,
    labels: LabelTable,
    k: int = DEFAULT_K,
    n_bins: int = DEFAULT_BINS,
    row_ids: Sequence[str] | None = None,
) -> SelectionReport:
    """Keep the ``k`` columns with highest mutual information.

    Embedding columns are never ranked; they are carried through as-is.
    ``row_ids`` restricts the statistics to a subset of labeled rows.
    """
    if row_ids is None:
        ids, y = labeled_rows(matrix, labels)
    else:
        ids = list(row_ids)
        y = np.array([labels.entries[r] for r in ids], dtype=bool)
    if len(ids) == 0 or y.all() or not y.any():
        raise DegenerateLabelsError(
            f"attribute {labels.attribute_name!r}: selection needs positive and negative labeled rows in the matrix"
        )
    rankable = [c for c, g in zip(matrix.columns, matrix.groups) if g != EMBEDDING]
    bypassed = [c for c, g in zip(matrix.columns, matrix.groups) if g == EMBEDDING]
    ranked: list[tuple[str, float]] = []
    if rankable:
        X = matrix.select_rows(ids).select_columns(rankable).dense()
        mi = mutual_information_columns(X, y, n_bins)
        ranked = sorted(zip(rankable, mi.tolist()), key=lambda t: (-t[1], t[0]))
    return SelectionReport(labels.attribute_name, ranked, min(int(k), len(ranked)), bypassed)


# --- linear models --------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    l2: float = 1e-4
    learning_rate: float = 0.1
    epochs: int = 20
    class_weight: Literal["balanced"] | None = "balanced"
    average: bool = True

    def __post_init__(self):
        if self.l2 < 0 or not self.learning_rate > 0 or self.epochs < 1:
            raise ValidationError("invalid training hyperparameters")
        if self.class_weight not in ("balanced", None):
            raise ValidationError("class_weight must be 'balanced' or None")


@dataclass
class LinearModel:
    attribute_name: str
    feature_names: list[str]
    weights: np.ndarray
    bias: float
    loss_kind: str
    mean: np.ndarray
    scale: np.ndarray
    config: dict = field(default_factory=dict)
    seed: int = 0
    epoch_losses: list[float] = field(default_factory=list)

    @property
    def weight_map(self) -> dict[str, float]:
        return dict(zip(self.feature_names, self.weights.tolist()))

    def raw_coefficients(self) -> tuple[np.ndarray, float]:
        """Weights and bias acting on unstandardized features."""
        w = self.weights / self.scale
        return w, float(self.bias - np.dot(w, self.mean))

    def to_dict(self) -> dict:
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "attribute_name": self.attribute_name,
            "loss_kind": self.loss_kind,
            "feature_names": list(self.feature_names),
            "weights": self.weights.tolist(),
            "bias": float(self.bias),
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "config": self.config,
            "seed": self.seed,
            "epoch_losses": list(self.epoch_losses),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LinearModel":
        if d.get("format_version") != MODEL_FORMAT_VERSION:
            raise ValidationError(f"unsupported model format version {d.get('format_version')!r}")
        return cls(
            d["attribute_name"], list(d["feature_names"]), np.array(d["weights"], dtype=np.float64),
            float(d["bias"]), d["loss_kind"], np.array(d["mean"], dtype=np.float64),
            np.array(d["scale"], dtype=np.float64), d.get("config", {}), d.get("seed", 0),
            list(d.get("epoch_losses", [])),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "LinearModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@numba.njit(cache=True, nogil=True)
def _loss_and_slope(margin, logistic):
    if logistic:
        if margin > 0:
            e = math.exp(-margin)
            return math.log1p(e), -e / (1.0 + e)
        e = math.exp(margin)
        return -margin + math.log1p(e), -1.0 / (1.0 + e)
    if margin < 1.0:
        return 1.0 - margin, -1.0
    return 0.0, 0.0


@numba.njit(cache=True, nogil=True)
def _objective(X, y, c, w, b, l2, logistic):
    total = 0.0
    for i in range(X.shape[0]):
        m = y[i] * (np.dot(X[i], w) + b)
        loss, _ = _loss_and_slope(m, logistic)
        total += c[i] * loss
    return total / c.sum() + 0.5 * l2 * np.dot(w, w)


@numba.njit(cache=True, nogil=True)
def _sgd(X, y, c, orders, logistic, l2, lr0, average_from):
    n, d = X.shape
    epochs = orders.shape[0]
    w = np.zeros(d)
    b = 0.0
    w_sum = np.zeros(d)
    b_sum = 0.0
    n_avg = 0
    losses = np.empty(epochs)
    for e in range(epochs):
        # step size decays with the epoch count t = e + 1
        eta = lr0 / math.sqrt(e + 1.0)
        for k in range(n):
            i = orders[e, k]
            m = y[i] * (np.dot(X[i], w) + b)
            _, slope = _loss_and_slope(m, logistic)
            g = c[i] * slope * y[i]
            decay = 1.0 - eta * l2
            for j in range(d):
                w[j] = w[j] * decay - eta * g * X[i, j]
            b -= eta * g
            if e >= average_from:
                w_sum += w
                b_sum += b
                n_avg += 1
        losses[e] = _objective(X, y, c, w, b, l2, logistic)
        if not math.isfinite(losses[e]):
            return w, b, losses[: e + 1], False
    if n_avg > 0:
        w = w_sum / n_avg
        b = b_sum / n_avg
    return w, b, losses, True


def sample_weights(y: np.ndarray, class_weight) -> np.ndarray:
    if class_weight is None:
        return np.ones(len(y))
    n, n_pos = len(y), int(y.sum())
    return np.where(y, n / (2.0 * n_pos), n / (2.0 * (n - n_pos)))


def objective(X, y, w, b, loss_kind: LossKind, l2: float, class_weight="balanced") -> float:
    """Class-weighted mean loss plus ``l2/2 * |w|^2`` on already-standardized X."""
    y = np.asarray(y, dtype=bool)
    ys = np.where(y, 1.0, -1.0)
    return float(_objective(np.ascontiguousarray(X, dtype=np.float64), ys, sample_weights(y, class_weight),
                            np.asarray(w, dtype=np.float64), float(b), float(l2), loss_kind == "logistic"))


def standardize_fit(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return mean, scale


def train(
    matrix: FeatureMatrix,
    labels: LabelTable,
    selection: SelectionReport | Sequence[str] | None = None,
    loss_kind: LossKind = "hinge",
    config: TrainConfig = TrainConfig(),
    seed: int = 0,
    row_ids: Sequence[str] | None = None,
) -> LinearModel:
    """Fit one attribute's linear model on its labeled rows (or ``row_ids``)."""
    if loss_kind not in ("hinge", "logistic"):
        raise ValidationError(f"unknown loss kind {loss_kind!r}")
    if selection is None:
        names = list(matrix.columns)
    elif isinstance(selection, SelectionReport):
        names = selection.selected
    else:
        names = list(selection)
    if not names:
        raise ValidationError("no features selected")
    if row_ids is None:
        ids, y = labeled_rows(matrix, labels)
    else:
        ids = list(row_ids)
        y = np.array([labels.entries[r] for r in ids], dtype=bool)
    if len(ids) == 0 or y.all() or not y.any():
        raise DegenerateLabelsError(f"attribute {labels.attribute_name!r}: training needs both classes")

    X = matrix.select_rows(ids).select_columns(names).dense()
    mean, scale = standardize_fit(X)
    Xs = np.ascontiguousarray((X - mean) / scale)
    ys = np.where(y, 1.0, -1.0)
    c = sample_weights(y, config.class_weight)
    rng = rng_for(seed, "learner", "shuffle", labels.attribute_name)
    orders = np.stack([rng.permutation(len(ids)) for _ in range(config.epochs)])
    average_from = config.epochs // 2 if config.average else config.epochs
    w, b, losses, ok = _sgd(Xs, ys, c, orders, loss_kind == "logistic", config.l2, config.learning_rate, average_from)
    if not ok or not (np.all(np.isfinite(w)) and math.isfinite(b)):
        raise TrainingDivergedError(
            f"training diverged for {labels.attribute_name!r} (non-finite loss); "
            f"reduce the learning rate (learning_rate={config.learning_rate})"
        )
    return LinearModel(
        labels.attribute_name, names, np.asarray(w, dtype=np.float64), float(b), loss_kind, mean, scale,
        config={**asdict(config), "n_train": len(ids)}, seed=seed, epoch_losses=[float(v) for v in losses],
    )


def decision_values(model: LinearModel, X_raw: np.ndarray) -> np.ndarray:
    return ((X_raw - model.mean) / model.scale) @ model.weights + model.bias


def predict_scores(model: LinearModel, matrix: FeatureMatrix, row_ids: Sequence[str] | None = None) -> dict[str, float]:
    """Scores for the matrix rows; model features missing from the matrix read as 0."""
    ids = list(matrix.row_ids if row_ids is None else row_ids)
    present = [n for n in model.feature_names if n in matrix._col_index]
    X = np.zeros((len(ids), len(model.feature_names)))
    if present:
        where = {n: i for i, n in enumerate(model.feature_names)}
        pos = [where[n] for n in present] if len(present) < len(model.feature_names) else slice(None)
        X[:, pos] = matrix.select_rows(ids).select_columns(present).dense()
    return dict(zip(ids, decision_values(model, X).tolist()))


def top_features(model: LinearModel, n: int = 10) -> tuple[list[str], list[str]]:
    """Largest positive and most negative weights, ties broken by name."""
    pairs = list(zip(model.feature_names, model.weights.tolist()))
    pos = sorted((p for p in pairs if p[1] > 0), key=lambda t: (-t[1], t[0]))
    neg = sorted((p for p in pairs if p[1] < 0), key=lambda t: (t[1], t[0]))
    return [name for name, _ in pos[:n]], [name for name, _ in neg[:n]]
