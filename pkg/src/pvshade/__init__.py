"""Simulated PV shading data and regressors that estimate shaded area from it."""

__version__ = "0.1.0"

from .dataset import Dataset, load_csv, preprocess, save_csv, train_test_split
from .errors import (ConvergenceError, FoldError, NumericalError, PVShadeError,
                     SchemaError, SingularMatrixError, SolverError, ValidationError)
from .evaluation import cross_validate, evaluate, metrics_report
from .models import MODEL_KINDS, ModelSpec, load_model, save_model
from .pvsim import CellParams, PanelScenario, SimulationConfig, generate_dataset

__all__ = [
    "CellParams", "ConvergenceError", "Dataset", "FoldError", "MODEL_KINDS", "ModelSpec",
    "NumericalError", "PVShadeError", "PanelScenario", "SchemaError", "SimulationConfig",
    "SingularMatrixError", "SolverError", "ValidationError", "cross_validate", "evaluate",
    "generate_dataset", "load_csv", "load_model", "metrics_report", "preprocess",
    "save_csv", "save_model", "train_test_split",
]
