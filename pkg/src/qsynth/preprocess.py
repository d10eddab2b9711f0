"""Bounded low-dimensional representation of the minority class.

Pipeline: ANOVA-F feature selection on the full labeled table, restriction
to label-1 rows, population standardization, PCA by eigendecomposition of
the covariance, then per-component max-abs scaling into [-1, 1].
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import DataError, FitFailure, InvalidArgumentError

ULB_COLUMNS = ["Time"] + [f"V{i}" for i in range(1, 29)] + ["Amount", "Class"]
SCHEMA = "qsynth.preprocess"
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class LabeledTable:
    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple[str, ...] | None = None

    def __post_init__(self):
        x = np.asarray(self.features, dtype=float)
        y = np.asarray(self.labels)
        if x.ndim != 2:
            raise InvalidArgumentError("features must be a 2-D matrix")
        if y.shape != (x.shape[0],):
            raise InvalidArgumentError(
                f"label count {y.shape} does not match {x.shape[0]} feature rows"
            )
        if not np.all(np.isin(y, (0, 1))):
            raise InvalidArgumentError("labels must be 0 or 1")
        if not np.all(np.isfinite(x)):
            raise InvalidArgumentError("features must be finite")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y.astype(int))


@dataclass(frozen=True)
class PreprocessModel:
    """Everything needed to map rows into the bounded space and back."""

    selected_indices: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    projection: np.ndarray
    scales: np.ndarray
    eps: float
    n_features_in: int
    explained_variance: np.ndarray

    @property
    def out_dim(self) -> int:
        return self.projection.shape[1]

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "version": SCHEMA_VERSION,
            "n_features_in": self.n_features_in,
            "selected_indices": self.selected_indices.tolist(),
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "projection_shape": list(self.projection.shape),
            "projection": self.projection.reshape(-1).tolist(),
            "scales": self.scales.tolist(),
            "eps": self.eps,
            "explained_variance": self.explained_variance.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PreprocessModel":
        if doc.get("schema") != SCHEMA or doc.get("version") != SCHEMA_VERSION:
            raise DataError(f"not a {SCHEMA} v{SCHEMA_VERSION} document")
        shape = tuple(doc["projection_shape"])
        return cls(
            selected_indices=np.asarray(doc["selected_indices"], dtype=int),
            mean=np.asarray(doc["mean"], dtype=float),
            std=np.asarray(doc["std"], dtype=float),
            projection=np.asarray(doc["projection"], dtype=float).reshape(shape),
            scales=np.asarray(doc["scales"], dtype=float),
            eps=float(doc["eps"]),
            n_features_in=int(doc["n_features_in"]),
            explained_variance=np.asarray(doc["explained_variance"], dtype=float),
        )


def load_ulb_csv(path) -> LabeledTable:
    """Read a credit-card CSV with header ``Time, V1..V28, Amount, Class``."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"input file not found: {path}")
    try:
        frame = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot parse {path}: {exc}") from exc
    cols = [c.strip().strip('"') for c in frame.columns]
    if cols != ULB_COLUMNS:
        raise DataError(f"{path}: header does not match the expected Time,V1..V28,Amount,Class schema")
    frame.columns = cols
    try:
        labels = pd.to_numeric(frame["Class"].astype(str).str.strip('" ')).to_numpy()
        features = frame[ULB_COLUMNS[:-1]].to_numpy(dtype=float)
    except (ValueError, TypeError) as exc:
        raise DataError(f"{path}: non-numeric values ({exc})") from exc
    try:
        return LabeledTable(features, labels, tuple(ULB_COLUMNS[:-1]))
    except InvalidArgumentError as exc:
        raise DataError(f"{path}: {exc}") from exc


def anova_f(features, labels) -> np.ndarray:
    """One-way ANOVA F statistic of each column against a binary label.

    Columns with zero within- and between-class spread score 0; columns with
    zero within-class spread only score ``inf``.
    """
    x = np.asarray(features, dtype=float)
    y = np.asarray(labels)
    groups = [x[y == c] for c in (0, 1)]
    n = x.shape[0]
    grand = x.mean(axis=0)
    ss_between = sum(g.shape[0] * (g.mean(axis=0) - grand) ** 2 for g in groups)
    ss_within = sum(((g - g.mean(axis=0)) ** 2).sum(axis=0) for g in groups)
    ms_between = ss_between / (len(groups) - 1)
    ms_within = ss_within / (n - len(groups))
    with np.errstate(divide="ignore", invalid="ignore"):
        f = ms_between / ms_within
    f[(ms_within == 0) & (ms_between == 0)] = 0.0
    return f


def select_k_best(table: LabeledTable, k: int) -> np.ndarray:
    n_cols = table.features.shape[1]
    if not 1 <= k <= n_cols:
        raise InvalidArgumentError(f"k={k} must be between 1 and the feature count {n_cols}")
    if np.unique(table.labels).size < 2:
        raise InvalidArgumentError("feature selection needs both classes present")
    scores = anova_f(table.features, table.labels)
    # stable sort keeps lower index first on ties
    return np.argsort(-scores, kind="stable")[:k]


def _fix_signs(vecs):
    lead = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[lead, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def fit(table: LabeledTable, k: int = 10, out_dim: int = 4, eps: float = 1e-8):
    """Fit the preprocessing model; returns ``(model, bounded minority rows)``."""
    idx = select_k_best(table, k)
    minority = table.features[table.labels == 1][:, idx]
    n1 = minority.shape[0]
    if n1 == 0:
        raise InvalidArgumentError("minority class is empty")
    if n1 < out_dim + 1:
        raise FitFailure(f"need at least {out_dim + 1} minority rows, got {n1}")
    if out_dim > k:
        raise InvalidArgumentError(f"out_dim={out_dim} exceeds k={k}")
    mean = minority.mean(axis=0)
    std = minority.std(axis=0)
    for j, s in enumerate(std):
        if not s > 0:
            name = table.feature_names[idx[j]] if table.feature_names else f"column {idx[j]}"
            raise FitFailure(f"selected feature {name} has zero variance in the minority class")
    standardized = (minority - mean) / std
    cov = standardized.T @ standardized / n1
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:out_dim]
    projection = _fix_signs(evecs[:, order])
    projected = standardized @ projection
    scales = np.maximum(np.abs(projected).max(axis=0), eps)
    model = PreprocessModel(
        selected_indices=idx,
        mean=mean,
        std=std,
        projection=projection,
        scales=scales,
        eps=float(eps),
        n_features_in=table.features.shape[1],
        explained_variance=evals[order],
    )
    return model, projected / scales


def transform(model: PreprocessModel, features) -> np.ndarray:
    """Map full-width rows into the bounded space, clipping to [-1, 1]."""
    x = np.atleast_2d(np.asarray(features, dtype=float))
    if x.shape[1] != model.n_features_in:
        raise InvalidArgumentError(
            f"expected {model.n_features_in} feature columns, got {x.shape[1]}"
        )
    return transform_selected(model, x[:, model.selected_indices])


def transform_selected(model: PreprocessModel, selected) -> np.ndarray:
    """Same as :func:`transform` for rows already restricted to the selected features."""
    x = np.atleast_2d(np.asarray(selected, dtype=float))
    if x.shape[1] != model.selected_indices.size:
        raise InvalidArgumentError(
            f"expected {model.selected_indices.size} selected columns, got {x.shape[1]}"
        )
    z = ((x - model.mean) / model.std) @ model.projection / model.scales
    return np.clip(z, -1.0, 1.0)


def inverse_transform(model: PreprocessModel, bounded) -> np.ndarray:
    """Map bounded rows back to the selected-feature space."""
    b = np.atleast_2d(np.asarray(bounded, dtype=float))
    if b.shape[1] != model.out_dim:
        raise InvalidArgumentError(f"expected {model.out_dim} columns, got {b.shape[1]}")
    if not np.all(np.isfinite(b)):
        raise InvalidArgumentError("bounded rows must be finite")
    return ((b * model.scales) @ model.projection.T) * model.std + model.mean
