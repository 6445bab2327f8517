"""Column-oriented dataset container, CSV I/O, preprocessing and splitting."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Optional, Sequence

import numpy as np

from .errors import SchemaError, ValidationError

log = logging.getLogger(__name__)

SERIAL = "SerialNumber"
FEATURES = ("Voltage", "Current", "Power", "Temperature", "Series", "Parallel")
TARGET = "ShadePercentage"
SCHEMA = (SERIAL, *FEATURES, TARGET)
INTEGER_COLUMNS = frozenset({SERIAL, "Series", "Parallel"})
_CANONICAL = {name.lower(): name for name in SCHEMA}


@dataclass(frozen=True)
class Record:
    voltage: float
    current: float
    power: float
    temperature: float
    series: int
    parallel: int
    shade_percentage: float
    serial: Optional[int] = None

    def __post_init__(self):
        if not 0.0 <= self.shade_percentage <= 100.0:
            raise ValidationError(f"shade_percentage {self.shade_percentage} outside [0, 100]")
        if self.series < 1 or self.parallel < 1:
            raise ValidationError("series and parallel must be >= 1")


_RECORD_FIELDS = {
    "Voltage": "voltage", "Current": "current", "Power": "power",
    "Temperature": "temperature", "Series": "series", "Parallel": "parallel",
    TARGET: "shade_percentage", SERIAL: "serial",
}


class Dataset:
    """Immutable table of named, equal-length numpy columns.

    The six feature columns and the target are required.  ``SerialNumber``
    is optional; any other column is carried along and reported by
    :attr:`unknown_columns`.
    """

    def __init__(self, columns: Mapping[str, Sequence]):
        cols = {}
        for name, values in columns.items():
            arr = np.array(values, copy=True)
            if arr.ndim != 1:
                raise ValidationError(f"column {name!r} must be one-dimensional")
            arr.setflags(write=False)
            cols[name] = arr
        missing = [c for c in (*FEATURES, TARGET) if c not in cols]
        if missing:
            raise SchemaError(f"missing required column(s): {', '.join(missing)}")
        lengths = {len(a) for a in cols.values()}
        if len(lengths) > 1:
            raise ValidationError(f"columns have unequal lengths: {sorted(lengths)}")
        self._columns = cols

    def __len__(self) -> int:
        return len(self._columns[TARGET])

    def __repr__(self) -> str:
        return f"Dataset(rows={len(self)}, columns={list(self._columns)})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset) or list(self._columns) != list(other._columns):
            return False
        return all(np.array_equal(a, other._columns[k]) for k, a in self._columns.items())

    __hash__ = None

    @property
    def column_names(self) -> list[str]:
        return list(self._columns)

    @property
    def has_serial(self) -> bool:
        return SERIAL in self._columns

    @property
    def unknown_columns(self) -> list[str]:
        return [c for c in self._columns if c not in SCHEMA]

    @property
    def feature_names(self) -> list[str]:
        return list(FEATURES)

    target_name = TARGET

    def column(self, name: str) -> np.ndarray:
        try:
            return self._columns[name]
        except KeyError:
            raise SchemaError(f"no column named {name!r}") from None

    def columns(self) -> dict[str, np.ndarray]:
        return dict(self._columns)

    def features(self, names: Optional[Sequence[str]] = None) -> np.ndarray:
        """Feature matrix (rows x features) as float64."""
        names = FEATURES if names is None else names
        return np.column_stack([self.column(n).astype(float) for n in names])

    def target(self) -> np.ndarray:
        return self._columns[TARGET].astype(float)

    def take(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset({k: a[idx] for k, a in self._columns.items()})

    def with_columns(self, updates: Mapping[str, Sequence]) -> "Dataset":
        cols = dict(self._columns)
        cols.update(updates)
        return Dataset(cols)

    def drop(self, names: Iterable[str]) -> "Dataset":
        names = set(names)
        return Dataset({k: a for k, a in self._columns.items() if k not in names})

    def records(self) -> Iterator[Record]:
        present = [c for c in _RECORD_FIELDS if c in self._columns]
        for row in zip(*(self._columns[c] for c in present)):
            kw = {}
            for name, value in zip(present, row):
                kw[_RECORD_FIELDS[name]] = int(value) if name in INTEGER_COLUMNS else float(value)
            yield Record(**kw)

    @classmethod
    def from_records(cls, records: Iterable[Record]) -> "Dataset":
        records = list(records)
        with_serial = bool(records) and all(r.serial is not None for r in records)
        cols = {}
        for name, attr in _RECORD_FIELDS.items():
            if name == SERIAL and not with_serial:
                continue
            dtype = np.int64 if name in INTEGER_COLUMNS else float
            cols[name] = np.array([getattr(r, attr) for r in records], dtype=dtype)
        order = [c for c in SCHEMA if c in cols]
        return cls({c: cols[c] for c in order})

    def check_ranges(self) -> None:
        """Raise if any row violates the Record invariants."""
        shade = self.target()
        bad = np.flatnonzero(~((shade >= 0) & (shade <= 100)))
        if bad.size:
            raise ValidationError(f"row {bad[0]}: {TARGET} {shade[bad[0]]} outside [0, 100]")
        for name in ("Series", "Parallel"):
            col = self._columns[name]
            bad = np.flatnonzero(col < 1)
            if bad.size:
                raise ValidationError(f"row {bad[0]}: {name} must be >= 1")


# --- CSV ------------------------------------------------------------------

def _parse_column(name, raw, line_offset=2):
    out = np.empty(len(raw), dtype=float)
    for r, cell in enumerate(raw):
        try:
            out[r] = float(cell)
        except ValueError:
            raise ValidationError(
                f"line {r + line_offset}, column {name!r}: cannot parse {cell!r} as a number"
            ) from None
    if name in INTEGER_COLUMNS:
        frac = np.flatnonzero(out != np.round(out))
        if frac.size:
            r = frac[0]
            raise ValidationError(
                f"line {r + line_offset}, column {name!r}: expected an integer, got {raw[r]!r}"
            )
        return out.astype(np.int64)
    return out


def load_csv(path) -> Dataset:
    """Read a dataset CSV; header names are matched case-insensitively."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or not any(h.strip() for h in header):
            raise SchemaError(f"{path}: empty file")
        rows = [row for row in reader if row]
    names = [_CANONICAL.get(h.strip().lower(), h.strip()) for h in header]
    missing = [c for c in (*FEATURES, TARGET) if c not in names]
    if missing:
        raise SchemaError(f"{path}: missing required column(s): {', '.join(missing)}")
    for r, row in enumerate(rows):
        if len(row) != len(names):
            raise ValidationError(
                f"{path}: line {r + 2} has {len(row)} fields, expected {len(names)}"
            )
    raw = list(zip(*rows)) if rows else [()] * len(names)
    cols = {}
    for name, values in zip(names, raw):
        if name in SCHEMA:
            cols[name] = _parse_column(name, values)
        else:
            try:
                cols[name] = np.array([float(v) for v in values], dtype=float)
            except ValueError:
                cols[name] = np.array(values, dtype=object)
    ds = Dataset(cols)
    if ds.unknown_columns:
        log.warning("%s: unknown columns kept as-is: %s", path, ", ".join(ds.unknown_columns))
    ds.check_ranges()
    return ds


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.17g" % value
    return str(value)


def save_csv(dataset: Dataset, path) -> None:
    """Write ``dataset`` with 17 significant digits so reloading is lossless."""
    names = [c for c in SCHEMA if c in dataset.column_names] + dataset.unknown_columns
    cols = [dataset.column(n) for n in names]
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names)
        for row in zip(*cols):
            writer.writerow([_fmt(v) for v in row])


# --- preprocessing and splits ---------------------------------------------

def preprocess(dataset: Dataset) -> Dataset:
    """Drop the serial-number (and any unrecognised) column and negative-power rows."""
    cleaned = dataset.drop([SERIAL, *dataset.unknown_columns])
    keep = np.flatnonzero(cleaned.column("Power") >= 0)
    return cleaned.take(keep)


@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float = 0.2
    seed: int = 42

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise ValidationError("test_fraction must lie in (0, 1)")


def split_indices(n: int, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray]:
    """Shuffled (train, test) row indices; the test part has round-half-up(n * fraction) rows."""
    if n < 2:
        raise ValidationError(f"need at least 2 rows to split, got {n}")
    n_test = int(math.floor(n * spec.test_fraction + 0.5))
    n_test = min(max(n_test, 1), n - 1)
    perm = np.random.default_rng(spec.seed).permutation(n)
    return perm[n_test:], perm[:n_test]


def train_test_split(dataset: Dataset, spec: SplitSpec = SplitSpec()) -> tuple[Dataset, Dataset]:
    train, test = split_indices(len(dataset), spec)
    return dataset.take(train), dataset.take(test)


def kfold_indices(n: int, k: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """``k`` (train, validation) index pairs; the validation sets partition ``range(n)``.

    The first ``n % k`` folds get one extra row.
    """
    if k < 2:
        raise ValidationError(f"k must be >= 2, got {k}")
    if k > n:
        raise ValidationError(f"k={k} exceeds the number of rows n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    sizes = np.full(k, n // k)
    sizes[: n % k] += 1
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    folds = []
    for f in range(k):
        val = np.sort(perm[bounds[f]:bounds[f + 1]])
        train = np.sort(np.concatenate([perm[:bounds[f]], perm[bounds[f + 1]:]]))
        folds.append((train, val))
    return folds


@dataclass(frozen=True)
class Scaler:
    """Per-feature affine standardisation fitted on a training matrix."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X) -> "Scaler":
        X = np.asarray(X, dtype=float)
        if X.shape[0] == 0:
            raise ValidationError("cannot standardise an empty matrix")
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        # constant columns: keep std 1 so they map to zeros
        std = np.where(std > 0, std, 1.0)
        return cls(mean, std)

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.scale

    def inverse_transform(self, Z) -> np.ndarray:
        return np.asarray(Z, dtype=float) * self.scale + self.mean


def standardize(train: Dataset, others: Sequence[Dataset] = ()) -> tuple[Dataset, list[Dataset], Scaler]:
    """Standardise feature columns with statistics from ``train`` only; the target is untouched."""
    if len(train) == 0:
        raise ValidationError("training dataset is empty")
    scaler = Scaler.fit(train.features())

    def apply(ds):
        Z = scaler.transform(ds.features())
        return ds.with_columns({name: Z[:, j] for j, name in enumerate(FEATURES)})

    return apply(train), [apply(o) for o in others], scaler


# --- descriptive statistics -----------------------------------------------

@dataclass(frozen=True)
class ColumnSummary:
    column: str
    n: int
    min: float
    q1: float
    median: float
    q3: float
    max: float
    mean: float
    std: float
    hist_counts: np.ndarray
    hist_edges: np.ndarray

    @property
    def iqr(self) -> float:
        return self.q3 - self.q1

    def to_dict(self) -> dict:
        return {
            "column": self.column, "n": self.n, "min": self.min, "q1": self.q1,
            "median": self.median, "q3": self.q3, "max": self.max,
            "mean": self.mean, "std": self.std,
            "hist_counts": [int(c) for c in self.hist_counts],
            "hist_edges": [float(e) for e in self.hist_edges],
        }


def summarize(values, column: str = "", bins: int = 20) -> ColumnSummary:
    """Quartiles by linear interpolation between order statistics; population std."""
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise ValidationError(f"column {column!r} is empty")
    q1, med, q3 = np.percentile(x, [25, 50, 75])
    counts, edges = np.histogram(x, bins=bins, range=(x.min(), x.max()))
    return ColumnSummary(column, int(x.size), float(x.min()), float(q1), float(med),
                         float(q3), float(x.max()), float(x.mean()), float(x.std()),
                         counts, edges)


def summary_stats(dataset: Dataset, column: str, bins: int = 20) -> ColumnSummary:
    return summarize(dataset.column(column), column, bins)


def grouped_summary(dataset: Dataset, column: str, by: str = "Temperature") -> dict[float, ColumnSummary]:
    """Box-plot statistics of ``column`` for each distinct value of ``by``."""
    keys = dataset.column(by)
    values = dataset.column(column)
    return {float(k): summarize(values[keys == k], column) for k in np.unique(keys)}


@dataclass(frozen=True)
class CorrelationMatrix:
    names: list
    values: np.ndarray
    constant_columns: list


def correlation_matrix(dataset: Dataset, columns: Optional[Sequence[str]] = None) -> CorrelationMatrix:
    """Pearson correlations; a constant column correlates 0 with everything but itself."""
    names = list(columns) if columns is not None else [*FEATURES, TARGET]
    if len(dataset) < 2:
        raise ValidationError("correlation needs at least 2 rows")
    X = np.column_stack([dataset.column(n).astype(float) for n in names])
    Z = X - X.mean(axis=0)
    norms = np.sqrt((Z * Z).sum(axis=0))
    constant = [n for n, s in zip(names, norms) if s == 0]
    safe = np.where(norms > 0, norms, 1.0)
    C = (Z.T @ Z) / np.outer(safe, safe)
    C = np.clip(0.5 * (C + C.T), -1.0, 1.0)
    np.fill_diagonal(C, 1.0)
    if constant:
        log.warning("constant columns given zero correlation: %s", ", ".join(constant))
    return CorrelationMatrix(names, C, constant)
