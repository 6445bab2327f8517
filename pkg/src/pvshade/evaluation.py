"""Regression metrics, residual reports and k-fold cross-validation."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dataset import Dataset, kfold_indices
from .errors import FoldError, PVShadeError, ValidationError
from .models import ModelSpec


def _pair(actual, predicted):
    y = np.asarray(actual, dtype=float).ravel()
    yhat = np.asarray(predicted, dtype=float).ravel()
    if y.shape != yhat.shape:
        raise ValidationError(f"length mismatch: {y.size} actual vs {yhat.size} predicted")
    if y.size == 0:
        raise ValidationError("metrics need at least one value")
    return y, yhat


def mae(actual, predicted) -> float:
    y, yhat = _pair(actual, predicted)
    return float(np.mean(np.abs(y - yhat)))


def mse(actual, predicted) -> float:
    y, yhat = _pair(actual, predicted)
    return float(np.mean((y - yhat) ** 2))


def rmse(actual, predicted) -> float:
    return math.sqrt(mse(actual, predicted))


def r2(actual, predicted) -> float:
    """Coefficient of determination; negative for models worse than the mean."""
    y, yhat = _pair(actual, predicted)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise ValidationError("R^2 is undefined when the actual values have zero variance")
    return 1.0 - float(np.sum((y - yhat) ** 2)) / ss_tot


@dataclass(frozen=True)
class MetricsReport:
    mae: float
    mse: float
    rmse: float
    r2: float
    n: int

    def to_dict(self) -> dict:
        return asdict(self)


def metrics_report(actual, predicted) -> MetricsReport:
    """All four metrics; ``r2`` is NaN when the actual values are constant."""
    y, yhat = _pair(actual, predicted)
    m = mse(y, yhat)
    try:
        score = r2(y, yhat)
    except ValidationError:
        score = float("nan")
    return MetricsReport(mae(y, yhat), m, math.sqrt(m), score, int(y.size))


@dataclass(frozen=True, eq=False)
class ResidualReport:
    actual: np.ndarray
    predicted: np.ndarray
    residuals: np.ndarray

    @classmethod
    def from_predictions(cls, actual, predicted) -> "ResidualReport":
        y, yhat = _pair(actual, predicted)
        return cls(y, yhat, y - yhat)

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["Predicted", "Actual", "Residual"])
            for row in zip(self.predicted, self.actual, self.residuals):
                w.writerow(["%.17g" % v for v in row])


def evaluate(model, dataset: Dataset) -> tuple[MetricsReport, ResidualReport]:
    """Score ``model`` on ``dataset`` from a single prediction pass."""
    names = getattr(model, "feature_names", None)
    X = dataset.features(names)
    y = dataset.target()
    yhat = model.predict(X)
    return metrics_report(y, yhat), ResidualReport.from_predictions(y, yhat)


@dataclass(frozen=True)
class CVResult:
    mean: MetricsReport
    folds: list
    fold_indices: list

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.to_dict(),
            "folds": [f.to_dict() for f in self.folds],
            "validation_sizes": [int(len(v)) for _, v in self.fold_indices],
        }


def average_reports(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Unweighted mean of each metric; ``n`` is the total row count."""
    k = len(reports)
    mean = lambda attr: math.fsum(getattr(r, attr) for r in reports) / k
    return MetricsReport(mean("mae"), mean("mse"), mean("rmse"), mean("r2"),
                         sum(r.n for r in reports))


def cross_validate(spec: ModelSpec, dataset: Dataset, k: int = 5, seed: int = 42) -> CVResult:
    """Fit on k-1 folds, score on the held-out fold, average over folds.

    Linear kinds re-standardise inside every fold from that fold's training
    rows only.
    """
    X = dataset.features()
    y = dataset.target()
    folds = kfold_indices(len(dataset), k, seed)
    reports = []
    for f, (train, val) in enumerate(folds):
        try:
            model = spec.fit(X[train], y[train], dataset.feature_names)
            reports.append(metrics_report(y[val], model.predict(X[val])))
        except PVShadeError as exc:
            raise FoldError(f, exc) from exc
    return CVResult(average_reports(reports), reports, folds)


def format_table(rows: Sequence[tuple[str, MetricsReport]], with_mae: bool = True) -> str:
    """Aligned plain-text comparison table: Model, MSE, RMSE, R2 Score (, MAE)."""
    header = ["Model", "MSE", "RMSE", "R2 Score"] + (["MAE"] if with_mae else [])
    body = []
    for name, r in rows:
        cells = [name, f"{r.mse:.4f}", f"{r.rmse:.2f}", f"{r.r2:.3f}"]
        if with_mae:
            cells.append(f"{r.mae:.4f}")
        body.append(cells)
    widths = [max(len(row[c]) for row in [header, *body]) for c in range(len(header))]
    fmt = lambda row: "  ".join(
        cell.ljust(w) if c == 0 else cell.rjust(w) for c, (cell, w) in enumerate(zip(row, widths))
    ).rstrip()
    rule = "-" * len(fmt(header))
    return "\n".join([fmt(header), rule, *map(fmt, body)]) + "\n"


def parse_table(text: str) -> list[dict]:
    """Inverse of :func:`format_table` (numbers at the precision printed)."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    header = [h for h in ("MSE", "RMSE", "R2 Score", "MAE") if h in lines[0]]
    out = []
    for ln in lines[2:]:
        parts = ln.split()
        nums = parts[-len(header):]
        out.append({"Model": " ".join(parts[:-len(header)]),
                    **{h: float(v) for h, v in zip(header, nums)}})
    return out
