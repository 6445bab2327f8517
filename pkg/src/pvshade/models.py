"""Model kinds, their default hyperparameters, and model JSON files."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dataset import Scaler
from .errors import ValidationError
from .linear import LinearModel, fit_lasso, fit_ols, fit_ridge
from .trees import BoostModel, ForestModel, fit_boost, fit_forest

MODEL_KINDS = ("linear", "ridge", "lasso", "forest", "boost")
LINEAR_KINDS = ("linear", "ridge", "lasso")

DISPLAY_NAMES = {
    "linear": "Linear Regression",
    "ridge": "Ridge Regression",
    "lasso": "Lasso Regression",
    "forest": "Random Forest Regression",
    "boost": "Boosted Trees Regression",
}

DEFAULTS = {
    "linear": {},
    "ridge": {"lambda": 1.0},
    "lasso": {"lambda": 1.0, "tol": 1e-7, "max_iter": 10_000},
    "forest": {"trees": 100, "max_depth": None, "max_features": None,
               "min_samples_leaf": 2, "bootstrap": True},
    "boost": {"rounds": 200, "learning_rate": 0.1, "max_depth": 6, "leaf_l2": 1.0,
              "split_gamma": 0.0, "min_samples_leaf": 1},
}


def check_kind(kind: str) -> str:
    if kind not in MODEL_KINDS:
        raise ValidationError(
            f"unknown model kind {kind!r}; valid kinds: {', '.join(MODEL_KINDS)}"
        )
    return kind


@dataclass(frozen=True)
class ModelSpec:
    """A model kind plus its fully resolved hyperparameters.

    Linear kinds standardise features on the data they are fitted on and
    fold the transform back into the returned coefficients, so the fitted
    model always predicts from raw features.
    """

    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        check_kind(self.kind)
        unknown = set(self.params) - set(DEFAULTS[self.kind])
        if unknown:
            raise ValidationError(
                f"unknown hyperparameter(s) for {self.kind}: {', '.join(sorted(unknown))}"
            )
        object.__setattr__(self, "params", {**DEFAULTS[self.kind], **self.params})

    @property
    def display_name(self) -> str:
        return DISPLAY_NAMES[self.kind]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params), "seed": self.seed}

    def fit(self, X, y, feature_names: Optional[Sequence[str]] = None):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        names = list(feature_names) if feature_names is not None else None
        p = self.params
        if self.kind in LINEAR_KINDS:
            scaler = Scaler.fit(X)
            Z = scaler.transform(X)
            if self.kind == "linear":
                m = fit_ols(Z, y)
            elif self.kind == "ridge":
                m = fit_ridge(Z, y, p["lambda"])
            else:
                m = fit_lasso(Z, y, p["lambda"], p["tol"], p["max_iter"])
            coef = m.coefficients / scaler.scale
            return LinearModel(float(m.intercept - coef @ scaler.mean), coef, m.penalty,
                               m.lam, names, m.iterations)
        if self.kind == "forest":
            return fit_forest(X, y, p["trees"], p["max_depth"], p["max_features"], self.seed,
                              min_samples_leaf=p["min_samples_leaf"], bootstrap=p["bootstrap"],
                              feature_names=names)
        return fit_boost(X, y, p["rounds"], p["learning_rate"], p["max_depth"], p["leaf_l2"],
                         p["split_gamma"], min_samples_leaf=p["min_samples_leaf"],
                         feature_names=names)


def model_from_dict(d: dict):
    kind = d.get("model_type")
    if kind in LINEAR_KINDS:
        return LinearModel.from_dict(d)
    if kind == "forest":
        return ForestModel.from_dict(d)
    if kind == "boost":
        return BoostModel.from_dict(d)
    raise ValidationError(f"unrecognised model_type {kind!r}")


def save_model(model, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict()) + "\n")


def load_model(path):
    try:
        return model_from_dict(json.loads(Path(path).read_text()))
    except (json.JSONDecodeError, KeyError) as exc:
        raise ValidationError(f"{path}: malformed model file ({exc})") from exc
