"""``pvshade`` command-line entry point.

Every command writes into ``--output-dir``: its outputs, the fully resolved
run configuration (``config.json``) and a log (``run.log``).

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
import zlib
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import (FEATURES, TARGET, SplitSpec, correlation_matrix, grouped_summary,
                      load_csv, preprocess, save_csv, split_indices, summary_stats)
from .errors import NumericalError, PVShadeError, ValidationError
from .evaluation import (ResidualReport, cross_validate, evaluate, format_table,
                         metrics_report)
from .models import DISPLAY_NAMES, MODEL_KINDS, ModelSpec, save_model
from .pvsim import REFERENCE_ROW_COUNT, SimulationConfig, generate_dataset

log = logging.getLogger("pvshade")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
RUN_KEYS = ("models", "test_fraction", "folds", "seed")


def derive_seed(seed: int, component: str) -> int:
    """Stable per-component sub-seed derived from the run seed."""
    ss = np.random.SeedSequence([seed, zlib.crc32(component.encode())])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        mapping = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(mapping, dict):
        raise ValidationError(f"{path}: expected a JSON object")
    unknown = set(mapping) - set(SimulationConfig.KEYS) - set(RUN_KEYS)
    if unknown:
        raise ValidationError(f"{path}: unknown config keys: {sorted(unknown)}")
    return mapping


def _pick(flag, config, key, default):
    if flag is not None:
        return flag
    return config.get(key, default)


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _setup_run(args) -> Path:
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(out / "run.log", mode="w")
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger()
    for h in list(root.handlers):
        if getattr(h, "_pvshade", False):
            root.removeHandler(h)
            h.close()
    handler._pvshade = True
    root.addHandler(handler)
    root.setLevel(logging.INFO)
    return out


def _model_specs(args, config, kinds) -> dict:
    """Resolved ModelSpec per kind: flags override the config's ``models`` section."""
    overrides = config.get("models", {})
    specs = {}
    for kind in kinds:
        params = dict(overrides.get(kind, {}))
        if args.lam is not None and kind in ("ridge", "lasso"):
            params["lambda"] = args.lam
        if args.trees is not None and kind == "forest":
            params["trees"] = args.trees
        if args.rounds is not None and kind == "boost":
            params["rounds"] = args.rounds
        if args.depth is not None and kind in ("forest", "boost"):
            params["max_depth"] = args.depth
        if args.learning_rate is not None and kind == "boost":
            params["learning_rate"] = args.learning_rate
        specs[kind] = ModelSpec(kind, params, derive_seed(args.seed_value, f"model:{kind}"))
    return specs


def _load_clean(path):
    raw = load_csv(path)
    data = preprocess(raw)
    if len(data) != len(raw) or data.column_names != raw.column_names:
        log.info("preprocessing %s: %d -> %d rows, dropped columns %s", path, len(raw),
                 len(data), [c for c in raw.column_names if c not in data.column_names])
    return data


# --- commands -------------------------------------------------------------

def cmd_generate(args, config) -> dict:
    sim_keys = {k: v for k, v in config.items() if k in SimulationConfig.KEYS}
    sim = replace(SimulationConfig.from_mapping(sim_keys), seed=args.seed_value)
    scenarios = sim.scenarios()
    t0 = time.perf_counter()
    data = generate_dataset(sim.params, scenarios, sim.voltage_steps, sim.seed)
    log.info("simulated %d scenarios in %.2f s", len(scenarios), time.perf_counter() - t0)
    out = Path(args.output_dir)
    save_csv(data, out / "dataset.csv")
    manifest = {
        "rows": len(data),
        "reference_rows": REFERENCE_ROW_COUNT,
        "relative_deviation": (len(data) - REFERENCE_ROW_COUNT) / REFERENCE_ROW_COUNT,
        "scenarios": len(scenarios),
        "grid": {
            "configurations": [list(c) for c in sim.configurations],
            "temperatures": list(sim.temperatures),
            "shaded_counts": list(sim.shaded_counts),
            "shading_irradiance_fraction": list(sim.shading_fractions),
            "voltage_steps": sim.voltage_steps,
        },
        "cell_params": asdict(sim.params),
        "seed": sim.seed,
    }
    _write_json(out / "manifest.json", manifest)
    return {"simulation": sim.to_dict()}


def cmd_preprocess(args, config) -> dict:
    raw = load_csv(args.input)
    clean = preprocess(raw)
    out = Path(args.output_dir)
    save_csv(clean, out / "preprocessed.csv")
    summary = {
        "rows_in": len(raw),
        "rows_out": len(clean),
        "rows_dropped": len(raw) - len(clean),
        "columns_dropped": [c for c in raw.column_names if c not in clean.column_names],
    }
    _write_json(out / "summary.json", summary)
    return {}


def _split(args, config, n):
    spec = SplitSpec(float(_pick(args.test_fraction, config, "test_fraction", 0.2)),
                     derive_seed(args.seed_value, "split"))
    train, test = split_indices(n, spec)
    return spec, train, test


def cmd_train(args, config) -> dict:
    data = _load_clean(args.input)
    spec = _model_specs(args, config, [args.model])[args.model]
    split, tr, te = _split(args, config, len(data))
    train, test = data.take(tr), data.take(te)
    model = spec.fit(train.features(), train.target(), data.feature_names)
    train_report, _ = evaluate(model, train)
    test_report, residuals = evaluate(model, test)
    out = Path(args.output_dir)
    save_model(model, out / "model.json")
    residuals.to_csv(out / "predictions.csv")
    _write_json(out / "metrics.json", {
        "model": spec.to_dict(),
        "train": train_report.to_dict(),
        "test": test_report.to_dict(),
    })
    return {"model": spec.to_dict(), "split": vars(split)}


def cmd_cv(args, config) -> dict:
    data = _load_clean(args.input)
    spec = _model_specs(args, config, [args.model])[args.model]
    k = int(_pick(args.folds, config, "folds", 5))
    seed = derive_seed(args.seed_value, "cv")
    result = cross_validate(spec, data, k, seed)
    out = Path(args.output_dir)
    _write_json(out / "cv.json", {"model": spec.to_dict(), "k": k, **result.to_dict()})
    rows = [(f"fold {i}", r) for i, r in enumerate(result.folds)] + [("mean", result.mean)]
    (out / "cv.txt").write_text(format_table(rows))
    return {"model": spec.to_dict(), "folds": k, "cv_seed": seed}


def cmd_compare(args, config) -> dict:
    data = _load_clean(args.input)
    specs = _model_specs(args, config, MODEL_KINDS)
    split, tr, te = _split(args, config, len(data))
    train, test = data.take(tr), data.take(te)
    out = Path(args.output_dir)
    (out / "predictions").mkdir(exist_ok=True)
    rows, results = [], {}
    for kind, spec in specs.items():
        t0 = time.perf_counter()
        model = spec.fit(train.features(), train.target(), data.feature_names)
        report, residuals = evaluate(model, test)
        log.info("%s: fit+evaluate %.2f s, test R2 %.4f", kind, time.perf_counter() - t0, report.r2)
        residuals.to_csv(out / "predictions" / f"{kind}.csv")
        rows.append((DISPLAY_NAMES[kind], report))
        results[kind] = {"display_name": DISPLAY_NAMES[kind], "params": spec.params,
                         "test": report.to_dict()}
    (out / "comparison.txt").write_text(format_table(rows))
    _write_json(out / "comparison.json", {"models": results, "train_rows": len(train),
                                          "test_rows": len(test)})
    with (out / "metric_bars.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["Model", "Metric", "Value"])
        for name, r in rows:
            for metric in ("mae", "mse", "rmse", "r2"):
                w.writerow([name, metric.upper() if metric != "r2" else "R2",
                            "%.17g" % getattr(r, metric)])
    return {"models": {k: s.to_dict() for k, s in specs.items()}, "split": vars(split)}


def cmd_stats(args, config) -> dict:
    data = load_csv(args.input)
    out = Path(args.output_dir)
    columns = [c for c in (*FEATURES, TARGET) if c in data.column_names]
    summaries = {c: summary_stats(data, c, args.bins) for c in columns}
    _write_json(out / "summary.json", {c: s.to_dict() for c, s in summaries.items()})
    with (out / "histograms.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["Column", "BinLeft", "BinRight", "Count"])
        for c, s in summaries.items():
            for lo, hi, n in zip(s.hist_edges[:-1], s.hist_edges[1:], s.hist_counts):
                w.writerow([c, "%.17g" % lo, "%.17g" % hi, int(n)])
    corr = correlation_matrix(data, columns)
    with (out / "correlation.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["", *corr.names])
        for name, row in zip(corr.names, corr.values):
            w.writerow([name, *("%.17g" % v for v in row)])
    with (out / "boxplot_by_temperature.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["Temperature", "Column", "Min", "Q1", "Median", "Q3", "Max"])
        for c in columns:
            for temp, s in grouped_summary(data, c, "Temperature").items():
                w.writerow(["%.17g" % temp, c, *("%.17g" % v for v in
                                                  (s.min, s.q1, s.median, s.q3, s.max))])
    keys = np.column_stack([data.column(k).astype(float)
                            for k in ("Temperature", "Series", "Parallel", TARGET)])
    groups, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).ravel()
    max_power = np.full(len(groups), -np.inf)
    np.maximum.at(max_power, inverse, data.column("Power").astype(float))
    with (out / "max_power_by_group.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["Temperature", "Series", "Parallel", "ShadePercentage", "MaxPower"])
        for g, p in zip(groups, max_power):
            w.writerow(["%.17g" % g[0], int(g[1]), int(g[2]), "%.17g" % g[3], "%.17g" % p])
    return {"bins": args.bins}


COMMANDS = {
    "generate": cmd_generate,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "compare": cmd_compare,
    "cv": cmd_cv,
    "stats": cmd_stats,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pvshade", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_input=True):
        if needs_input:
            p.add_argument("--input", required=True, help="input dataset CSV")
        p.add_argument("--output-dir", required=True, help="run directory for all outputs")
        p.add_argument("--seed", type=int, default=None, help="run seed (default 42)")
        p.add_argument("--config", default=None, help="JSON key-value config file")

    def model_flags(p):
        p.add_argument("--lambda", dest="lam", type=float, default=None,
                       help="ridge/lasso penalty on the unnormalised objective (default 1.0)")
        p.add_argument("--trees", type=int, default=None, help="forest size (default 100)")
        p.add_argument("--rounds", type=int, default=None, help="boosting rounds (default 200)")
        p.add_argument("--depth", type=int, default=None, help="tree depth limit")
        p.add_argument("--learning-rate", type=float, default=None,
                       help="boosting shrinkage (default 0.1)")

    common(sub.add_parser("generate", help="simulate the PV shading dataset"), needs_input=False)
    common(sub.add_parser("preprocess", help="drop serial column and negative-power rows"))
    p = sub.add_parser("train", help="fit one model on the training split")
    common(p)
    p.add_argument("--model", required=True, choices=MODEL_KINDS)
    p.add_argument("--test-fraction", type=float, default=None, help="default 0.2")
    model_flags(p)
    p = sub.add_parser("compare", help="fit and score all five models")
    common(p)
    p.add_argument("--test-fraction", type=float, default=None, help="default 0.2")
    model_flags(p)
    p = sub.add_parser("cv", help="k-fold cross-validation of one model")
    common(p)
    p.add_argument("--model", required=True, choices=MODEL_KINDS)
    p.add_argument("--folds", type=int, default=None, help="default 5")
    model_flags(p)
    p = sub.add_parser("stats", help="summary statistics, histograms and correlations")
    common(p)
    p.add_argument("--bins", type=int, default=20)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config(args.config)
        args.seed_value = int(_pick(args.seed, config, "seed", 42))
        out = _setup_run(args)
        log.info("pvshade %s %s", __version__, args.command)
        resolved = COMMANDS[args.command](args, config)
        flags = {k: v for k, v in vars(args).items() if k != "seed_value"}
        _write_json(out / "config.json", {"command": args.command, "seed": args.seed_value,
                                          "flags": flags, "config_file": config, **resolved})
        return EXIT_OK
    except NumericalError as exc:
        log.error("%s", exc)
        print(f"pvshade: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (PVShadeError, OSError, TypeError, ValueError) as exc:
        log.error("%s", exc)
        print(f"pvshade: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
