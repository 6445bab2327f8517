"""Single-diode PV cell, string and panel simulation.

A panel is ``parallel_count`` strings of ``series_count`` cells.  Cells in a
string share one current and their voltages add; strings share the panel
voltage and their currents add.  Strings carry no bypass diodes, so the most
shaded cell caps the current of its string.  Reverse current into a string is
blocked, which keeps every simulated point at non-negative power.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.constants import Boltzmann, elementary_charge
from scipy.optimize import minimize_scalar

from .dataset import Dataset
from .errors import SolverError, ValidationError

KELVIN = 273.15
BANDGAP_EV = 1.12
BOLTZMANN_EV = Boltzmann / elementary_charge

SOLVER_TOL = 1e-12
SOLVER_MAX_ITER = 200

TOTAL_CELLS = 10
CONFIGURATIONS = ((1, 10), (2, 5), (5, 2), (10, 1))
TEMPERATURES = (27.0, 30.0, 35.0, 40.0, 45.0, 50.0)
REFERENCE_ROW_COUNT = 101_580


@dataclass(frozen=True)
class CellParams:
    """Electrical parameters of one cell. Currents in A, resistances in ohm,
    temperatures in degrees Celsius."""

    photocurrent_stc: float = 3.0
    saturation_current: float = 1e-9
    ideality_factor: float = 1.3
    series_resistance: float = 0.02
    shunt_resistance: float = 200.0
    temp_coeff_current: float = 0.0015
    reference_temperature: float = 27.0

    def __post_init__(self):
        if not self.photocurrent_stc > 0:
            raise ValidationError("photocurrent_stc must be > 0")
        if not self.saturation_current > 0:
            raise ValidationError("saturation_current must be > 0")
        if not 1.0 <= self.ideality_factor <= 2.0:
            raise ValidationError("ideality_factor must lie in [1, 2]")
        if not self.series_resistance >= 0:
            raise ValidationError("series_resistance must be >= 0")
        if not self.shunt_resistance > self.series_resistance:
            raise ValidationError("shunt_resistance must exceed series_resistance")


@dataclass(frozen=True)
class PanelScenario:
    series_count: int
    parallel_count: int
    temperature: float
    shaded_cells: int = 0
    shading_irradiance_fraction: float = 0.1

    def __post_init__(self):
        if self.series_count < 1 or self.parallel_count < 1:
            raise ValidationError(
                f"series/parallel counts must be >= 1, got "
                f"({self.series_count}, {self.parallel_count})"
            )
        if not 0 <= self.shaded_cells <= self.active_cells:
            raise ValidationError(
                f"shaded_cells={self.shaded_cells} outside [0, {self.active_cells}]"
            )
        if not 0.0 <= self.shading_irradiance_fraction < 1.0:
            raise ValidationError("shading_irradiance_fraction must lie in [0, 1)")

    @property
    def active_cells(self) -> int:
        return self.series_count * self.parallel_count

    @property
    def shade_percentage(self) -> float:
        return shade_percentage(self.shaded_cells, self.active_cells)

    def shaded_per_string(self) -> list[int]:
        """Shaded cells per string, filling one string before the next."""
        left = self.shaded_cells
        out = []
        for _ in range(self.parallel_count):
            k = min(self.series_count, left)
            out.append(k)
            left -= k
        return out


@dataclass(frozen=True)
class IVPoint:
    voltage: float
    current: float
    power: float

    @classmethod
    def from_vi(cls, voltage, current):
        voltage, current = float(voltage), float(current)
        return cls(voltage, current, voltage * current)


@dataclass(frozen=True)
class IVCurve:
    """Array form of a panel IV sweep."""

    voltage: np.ndarray
    current: np.ndarray
    power: np.ndarray

    def points(self) -> list[IVPoint]:
        return [IVPoint(float(v), float(i), float(p))
                for v, i, p in zip(self.voltage, self.current, self.power)]


def thermal_voltage(temperature):
    """kT/q in volts for a temperature in degrees Celsius."""
    return BOLTZMANN_EV * (np.asarray(temperature, dtype=float) + KELVIN)


def cell_constants(params: CellParams, temperature):
    """Full-sun photocurrent, saturation current and n*Vt at ``temperature``."""
    t = np.asarray(temperature, dtype=float) + KELVIN
    t_ref = params.reference_temperature + KELVIN
    n = params.ideality_factor
    iph = params.photocurrent_stc + params.temp_coeff_current * (
        (t - KELVIN) - params.reference_temperature
    )
    i0 = params.saturation_current * (t / t_ref) ** 3 * np.exp(
        BANDGAP_EV / (n * BOLTZMANN_EV) * (1.0 / t_ref - 1.0 / t)
    )
    return iph, i0, n * BOLTZMANN_EV * t


# --- scalar solver --------------------------------------------------------

def cell_current(v_cell, params: CellParams, temperature, irradiance_fraction=1.0,
                 *, tol=SOLVER_TOL, max_iter=SOLVER_MAX_ITER) -> float:
    """Current of one cell at terminal voltage ``v_cell``.

    Solves the implicit single-diode equation by bisection on ``[-Iph, Iph]``.

    Raises:
        ValidationError: negative voltage or irradiance fraction outside [0, 1].
        SolverError: no sign change on the bracket, or ``max_iter`` reached
            before the bracket shrank below ``tol``.
    """
    if v_cell < 0:
        raise ValidationError(f"v_cell must be >= 0, got {v_cell}")
    if not 0.0 <= irradiance_fraction <= 1.0:
        raise ValidationError(f"irradiance_fraction must lie in [0, 1], got {irradiance_fraction}")
    iph_full, i0, a = cell_constants(params, temperature)
    iph = irradiance_fraction * float(iph_full)
    i0, a = float(i0), float(a)
    rs, rsh = params.series_resistance, params.shunt_resistance

    def residual(i):
        u = v_cell + i * rs
        return iph - i0 * math.expm1(u / a) - u / rsh - i

    lo, hi = -iph, iph
    r_lo, r_hi = residual(lo), residual(hi)
    if r_hi == 0.0:
        return hi
    if r_lo == 0.0:
        return lo
    if r_lo < 0 or r_hi > 0:
        raise SolverError(
            f"no root in [-Iph, Iph] for v_cell={v_cell}, temperature={temperature}, "
            f"irradiance_fraction={irradiance_fraction}"
        )
    for _ in range(max_iter):
        if hi - lo <= tol:
            return 0.5 * (lo + hi)
        mid = 0.5 * (lo + hi)
        if residual(mid) > 0:
            lo = mid
        else:
            hi = mid
    if hi - lo <= tol:
        return 0.5 * (lo + hi)
    raise SolverError(
        f"bisection did not converge in {max_iter} iterations for v_cell={v_cell}, "
        f"temperature={temperature}, irradiance_fraction={irradiance_fraction}"
    )


# --- vectorised solvers ---------------------------------------------------

def _newton_decreasing(fun, lo, hi, tol=SOLVER_TOL, max_iter=SOLVER_MAX_ITER):
    """Elementwise bracketed Newton for ``fun`` decreasing on ``[lo, hi]``.

    ``fun`` returns ``(value, derivative)``.  A Newton step that leaves the
    current bracket is replaced by a bisection step, so the iteration keeps
    the convergence guarantee of bisection.
    """
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    x = 0.5 * (lo + hi)
    for _ in range(max_iter):
        f, d = fun(x)
        above = f > 0
        lo = np.where(above, x, lo)
        hi = np.where(above, hi, x)
        with np.errstate(divide="ignore", invalid="ignore"):
            dx = f / d
        step = x - dx
        done = (np.abs(dx) <= tol) | (hi - lo <= tol)
        inside = (step >= lo) & (step <= hi)
        x = np.where(inside, step, 0.5 * (lo + hi))
        if np.all(done):
            return x
    raise SolverError(f"bracketed Newton did not converge in {max_iter} iterations")


def _diode_voltage(i, iph, i0, a, rsh, with_slope=False):
    """Junction voltage u with iph - i0*(exp(u/a) - 1) - u/rsh = i, for 0 <= i <= iph.

    With ``with_slope`` also returns du/di.
    """
    i = np.minimum(i, iph)
    hi = a * np.log1p(iph / i0)

    def fun(u):
        e = np.exp(u / a)
        return iph - i0 * (e - 1.0) - u / rsh - i, -(i0 / a * e + 1.0 / rsh)

    u = _newton_decreasing(fun, np.zeros_like(hi), hi)
    if with_slope:
        return u, 1.0 / fun(u)[1]
    return u


def _cell_voltage(i, iph, i0, a, rs, rsh, with_slope=False):
    if with_slope:
        u, du = _diode_voltage(i, iph, i0, a, rsh, True)
        return u - i * rs, du - rs
    return _diode_voltage(i, iph, i0, a, rsh) - i * rs


def _cell_isc(iph, i0, a, rs, rsh):
    def fun(i):
        e = np.exp(i * rs / a)
        return iph - i0 * (e - 1.0) - i * rs / rsh - i, -(i0 * rs / a * e + rs / rsh + 1.0)

    return _newton_decreasing(fun, np.zeros_like(iph), iph)


def _string_current(v, n_u, n_s, iph_u, iph_s, i0, a, rs, rsh):
    """String current at string voltage ``v``; all array arguments broadcast.

    ``n_u`` full-sun cells and ``n_s`` shaded cells in series.  Below the
    voltage the string reaches at its short-circuit current the current is
    held at that short-circuit value; above open circuit it is zero.
    """
    v, n_u, n_s, iph_u, iph_s, i0, a = np.broadcast_arrays(
        *(np.asarray(x, dtype=float) for x in (v, n_u, n_s, iph_u, iph_s, i0, a))
    )
    isc = np.where(n_s > 0, _cell_isc(iph_s, i0, a, rs, rsh), _cell_isc(iph_u, i0, a, rs, rsh))

    def string_voltage(i):
        vu, du = _cell_voltage(i, iph_u, i0, a, rs, rsh, True)
        vs, ds = _cell_voltage(i, iph_s, i0, a, rs, rsh, True)
        return n_u * vu + n_s * vs, n_u * du + n_s * ds

    v_floor = string_voltage(isc)[0]
    voc = string_voltage(np.zeros_like(isc))[0]

    def fun(i):
        sv, slope = string_voltage(i)
        return sv - v, slope

    i = _newton_decreasing(fun, np.zeros_like(isc), isc)
    return np.where(v <= v_floor, isc, np.where(v >= voc, 0.0, i))


@dataclass(frozen=True)
class _Strings:
    """Per-string electrical constants for a batch of scenarios."""

    scenario: np.ndarray
    multiplicity: np.ndarray
    n_unshaded: np.ndarray
    n_shaded: np.ndarray
    iph_unshaded: np.ndarray
    iph_shaded: np.ndarray
    i0: np.ndarray
    a: np.ndarray

    def voc(self, params):
        rsh = params.shunt_resistance
        zero = np.zeros_like(self.i0)
        return (self.n_unshaded * _diode_voltage(zero, self.iph_unshaded, self.i0, self.a, rsh)
                + self.n_shaded * _diode_voltage(zero, self.iph_shaded, self.i0, self.a, rsh))


def _strings(scenarios: Sequence[PanelScenario], params: CellParams) -> _Strings:
    cols = {k: [] for k in ("scenario", "multiplicity", "n_unshaded", "n_shaded",
                            "iph_unshaded", "iph_shaded", "i0", "a")}
    for idx, sc in enumerate(scenarios):
        iph, i0, a = (float(x) for x in cell_constants(params, sc.temperature))
        per_string = sc.shaded_per_string()
        # identical strings are solved once and weighted by their count
        for k in sorted(set(per_string), reverse=True):
            cols["scenario"].append(idx)
            cols["multiplicity"].append(per_string.count(k))
            cols["n_unshaded"].append(sc.series_count - k)
            cols["n_shaded"].append(k)
            cols["iph_unshaded"].append(iph)
            cols["iph_shaded"].append(sc.shading_irradiance_fraction * iph)
            cols["i0"].append(i0)
            cols["a"].append(a)
    return _Strings(**{k: np.asarray(v, dtype=int if k in ("scenario", "multiplicity") else float)
                       for k, v in cols.items()})


def _string_currents(strings: _Strings, params, voltages):
    """Current of every string at ``voltages`` (shape: strings x points)."""
    col = lambda x: x[:, None]
    return _string_current(
        voltages, col(strings.n_unshaded), col(strings.n_shaded),
        col(strings.iph_unshaded), col(strings.iph_shaded), col(strings.i0),
        col(strings.a), params.series_resistance, params.shunt_resistance,
    )


def _sum_by_scenario(per_string, strings: _Strings, n_scenarios):
    out = np.zeros((n_scenarios, per_string.shape[1]))
    for row, sc, m in zip(per_string, strings.scenario, strings.multiplicity):
        out[sc] += m * row
    return out


def simulate_panels(scenarios: Sequence[PanelScenario], params: CellParams,
                    voltage_steps: int) -> list[IVCurve]:
    """IV sweeps over ``[0, Voc]`` for many scenarios in one vectorised solve."""
    if voltage_steps < 2:
        raise ValidationError("voltage_steps must be >= 2")
    if not scenarios:
        return []
    strings = _strings(scenarios, params)
    voc_panel = np.zeros(len(scenarios))
    np.maximum.at(voc_panel, strings.scenario, strings.voc(params))
    grid = np.linspace(0.0, 1.0, voltage_steps)
    voltages = voc_panel[:, None] * grid[None, :]
    voltages[:, -1] = voc_panel
    per_string = _string_currents(strings, params, voltages[strings.scenario])
    currents = _sum_by_scenario(per_string, strings, len(scenarios))
    return [IVCurve(v, i, v * i) for v, i in zip(voltages, currents)]


def panel_curve(scenario: PanelScenario, params: CellParams, voltage_steps: int) -> IVCurve:
    return simulate_panels([scenario], params, voltage_steps)[0]


def panel_iv(scenario: PanelScenario, params: CellParams, voltage_steps: int) -> list[IVPoint]:
    """``voltage_steps`` points spanning zero volts to the panel open-circuit voltage."""
    return panel_curve(scenario, params, voltage_steps).points()


def panel_current(scenario: PanelScenario, params: CellParams, voltages) -> np.ndarray:
    """Panel current at arbitrary panel voltages."""
    voltages = np.atleast_1d(np.asarray(voltages, dtype=float))
    strings = _strings([scenario], params)
    per_string = _string_currents(strings, params, np.broadcast_to(
        voltages, (len(strings.scenario), voltages.size)))
    return _sum_by_scenario(per_string, strings, 1)[0]


def max_power_point(scenario: PanelScenario, params: CellParams, steps: int = 801) -> IVPoint:
    """Maximum power point: dense sweep, then a bounded refinement around the best sample.

    Shaded panels with unequal strings can show more than one local maximum,
    which is why the coarse sweep comes first.
    """
    curve = panel_curve(scenario, params, steps)
    k = int(np.argmax(curve.power))
    lo = curve.voltage[max(k - 1, 0)]
    hi = curve.voltage[min(k + 1, steps - 1)]
    res = minimize_scalar(
        lambda v: -v * panel_current(scenario, params, v)[0],
        bounds=(lo, hi), method="bounded", options={"xatol": 1e-10},
    )
    best_v = float(res.x)
    best = IVPoint.from_vi(best_v, panel_current(scenario, params, best_v)[0])
    if best.power < curve.power[k]:
        return IVPoint(float(curve.voltage[k]), float(curve.current[k]), float(curve.power[k]))
    return best


def string_short_circuit_current(irradiance_fractions: Sequence[float], temperature,
                                 params: CellParams) -> float:
    iph, i0, a = cell_constants(params, temperature)
    fr = np.asarray(irradiance_fractions, dtype=float)
    iscs = _cell_isc(fr * iph, np.full_like(fr, i0), np.full_like(fr, a),
                     params.series_resistance, params.shunt_resistance)
    return float(iscs.min())


def string_iv(irradiance_fractions: Sequence[float], temperature, current_grid,
              params: CellParams) -> list[IVPoint]:
    """IV points of one series string at the given currents.

    Grid currents above the string short-circuit current are dropped.
    """
    fr = np.asarray(irradiance_fractions, dtype=float)
    grid = np.asarray(current_grid, dtype=float)
    if fr.size == 0:
        raise ValidationError("a string needs at least one cell")
    if np.any((fr < 0) | (fr > 1)):
        raise ValidationError("irradiance fractions must lie in [0, 1]")
    if np.any(grid < 0) or np.any(np.diff(grid) < 0):
        raise ValidationError("current grid must be non-negative and sorted")
    isc = string_short_circuit_current(fr, temperature, params)
    grid = grid[grid <= isc]
    iph, i0, a = cell_constants(params, temperature)
    rs, rsh = params.series_resistance, params.shunt_resistance
    volts = np.zeros_like(grid)
    for f in fr:
        cell_v = _cell_voltage(grid, np.full_like(grid, f * iph), i0, a, rs, rsh)
        volts += np.maximum(cell_v, 0.0)
    return [IVPoint.from_vi(v, i) for v, i in zip(volts, grid)]


def shade_percentage(shaded_cells: int, active_cells: int) -> float:
    if active_cells <= 0:
        raise ValidationError("active_cells must be > 0")
    if not 0 <= shaded_cells <= active_cells:
        raise ValidationError(f"shaded_cells={shaded_cells} outside [0, {active_cells}]")
    return 100.0 * shaded_cells / active_cells


# --- dataset generation ---------------------------------------------------

@dataclass
class SimulationConfig:
    """Everything ``generate_dataset`` needs; loadable from a JSON key-value file.

    With the defaults the grid is 4 configurations x 6 temperatures x 11 shade
    counts x 1 shading fraction = 264 scenarios, times 385 voltage steps.
    """

    params: CellParams = field(default_factory=CellParams)
    configurations: tuple = CONFIGURATIONS
    temperatures: tuple = TEMPERATURES
    shaded_counts: tuple = tuple(range(TOTAL_CELLS + 1))
    shading_fractions: tuple = (0.1,)
    voltage_steps: int = 385
    seed: int = 42

    KEYS = (
        "photocurrent_stc", "saturation_current", "ideality_factor",
        "series_resistance", "shunt_resistance", "temp_coeff_current",
        "reference_temperature", "shading_irradiance_fraction", "voltage_steps",
        "temperatures", "configurations", "shaded_counts", "seed",
    )

    @classmethod
    def from_mapping(cls, mapping) -> "SimulationConfig":
        unknown = set(mapping) - set(cls.KEYS)
        if unknown:
            raise ValidationError(f"unknown simulation config keys: {sorted(unknown)}")
        cell_fields = CellParams.__dataclass_fields__
        params = CellParams(**{k: float(v) for k, v in mapping.items() if k in cell_fields})
        kw = {"params": params}
        if "shading_irradiance_fraction" in mapping:
            sig = mapping["shading_irradiance_fraction"]
            kw["shading_fractions"] = tuple(float(s) for s in (sig if isinstance(sig, list) else [sig]))
        if "configurations" in mapping:
            kw["configurations"] = tuple((int(s), int(p)) for s, p in mapping["configurations"])
        if "temperatures" in mapping:
            kw["temperatures"] = tuple(float(t) for t in mapping["temperatures"])
        if "shaded_counts" in mapping:
            kw["shaded_counts"] = tuple(int(k) for k in mapping["shaded_counts"])
        for key in ("voltage_steps", "seed"):
            if key in mapping:
                kw[key] = int(mapping[key])
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "SimulationConfig":
        try:
            mapping = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: not valid JSON ({exc})") from exc
        if not isinstance(mapping, dict):
            raise ValidationError(f"{path}: expected a JSON object")
        return cls.from_mapping(mapping)

    def scenarios(self) -> list[PanelScenario]:
        out = []
        for s, p in self.configurations:
            for t in self.temperatures:
                for sigma in self.shading_fractions:
                    for k in self.shaded_counts:
                        if k <= s * p:
                            out.append(PanelScenario(s, p, t, k, sigma))
        return out

    def to_dict(self) -> dict:
        d = asdict(self.params)
        d.update(
            shading_irradiance_fraction=list(self.shading_fractions),
            voltage_steps=self.voltage_steps,
            temperatures=list(self.temperatures),
            configurations=[list(c) for c in self.configurations],
            shaded_counts=list(self.shaded_counts),
            seed=self.seed,
        )
        return d


def generate_dataset(params: CellParams, scenarios: Sequence[PanelScenario],
                     voltage_steps: int, seed: int = 42) -> Dataset:
    """Simulate every scenario and flatten the sweeps into dataset rows.

    Rows are ordered by scenario index, then by ascending voltage, and carry
    a 1-based ``SerialNumber``.  The simulator is deterministic; ``seed`` is
    accepted so a generation run is fully described by its arguments and is
    recorded by the CLI manifest.
    """
    if not scenarios:
        raise ValidationError("scenario list is empty")
    del seed
    curves = simulate_panels(scenarios, params, voltage_steps)
    v = np.concatenate([c.voltage for c in curves])
    i = np.concatenate([c.current for c in curves])
    p = np.concatenate([c.power for c in curves])
    rep = lambda f: np.repeat([f(sc) for sc in scenarios], voltage_steps)
    keep = p >= 0  # blocking diode: reverse-power points never reach the dataset
    cols = {
        "Voltage": v[keep],
        "Current": i[keep],
        "Power": p[keep],
        "Temperature": rep(lambda sc: float(sc.temperature)).astype(float)[keep],
        "Series": rep(lambda sc: sc.series_count).astype(np.int64)[keep],
        "Parallel": rep(lambda sc: sc.parallel_count).astype(np.int64)[keep],
        "ShadePercentage": rep(lambda sc: sc.shade_percentage).astype(float)[keep],
    }
    n = int(keep.sum())
    cols = {"SerialNumber": np.arange(1, n + 1, dtype=np.int64), **cols}
    return Dataset(cols)
