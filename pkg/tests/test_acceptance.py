"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

The lines are also collected and repeated in the terminal summary.
"""

import hashlib
import json
import math
import time

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from pvshade.cli import main
from pvshade.dataset import SplitSpec, kfold_indices, split_indices
from pvshade.evaluation import cross_validate, mae, mse, r2, rmse
from pvshade.linear import fit_lasso, fit_ols, fit_ridge
from pvshade.models import ModelSpec
from pvshade.pvsim import (CONFIGURATIONS, TEMPERATURES, CellParams, PanelScenario,
                           SimulationConfig, generate_dataset, max_power_point)
from pvshade.trees import fit_boost, fit_forest, fit_tree, forest_tree_sample

RESULTS = {}
PRIMARY_OUTPUTS = ("dataset.csv", "manifest.json")
COMPARE_OUTPUTS = ("comparison.txt", "comparison.json", "metric_bars.csv",
                   *(f"predictions/{k}.csv" for k in ("linear", "ridge", "lasso", "forest", "boost")))


def report(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    RESULTS[number] = line
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def full_run(tmp_path_factory, monkeypatch_module):
    monkeypatch_module.delenv("PVSHADE_THREADS", raising=False)
    root = tmp_path_factory.mktemp("acceptance")
    t0 = time.perf_counter()
    assert main(["generate", "--output-dir", str(root / "gen"), "--seed", "42"]) == 0
    t1 = time.perf_counter()
    assert main(["compare", "--input", str(root / "gen" / "dataset.csv"), "--seed", "42",
                 "--output-dir", str(root / "cmp")]) == 0
    t2 = time.perf_counter()
    return root, t1 - t0, t2 - t1


@pytest.fixture(scope="module")
def monkeypatch_module():
    mp = pytest.MonkeyPatch()
    yield mp
    mp.undo()


@pytest.mark.slow
def test_criterion_1_table_ordering(full_run):
    root, t_gen, t_cmp = full_run
    rows = json.loads((root / "gen" / "manifest.json").read_text())["rows"]
    res = json.loads((root / "cmp" / "comparison.json").read_text())["models"]
    score = {k: v["test"]["r2"] for k, v in res.items()}
    linear_best = max(score["linear"], score["ridge"], score["lasso"])
    checks = [
        abs(rows - 101_580) / 101_580 <= 0.05,
        score["boost"] >= score["forest"] > linear_best,
        score["boost"] >= 0.85 and score["forest"] >= 0.85,
        linear_best <= 0.60,
        t_cmp <= 600,
    ]
    detail = (f"rows={rows}; R2 boost={score['boost']:.4f} forest={score['forest']:.4f} "
              f"linear={score['linear']:.4f} ridge={score['ridge']:.4f} lasso={score['lasso']:.4f}; "
              f"generate {t_gen:.1f}s, compare {t_cmp:.1f}s")
    report(1, all(checks), detail)


@pytest.mark.slow
def test_criterion_2_linear_family_degenerate(full_run):
    root, _, _ = full_run
    res = json.loads((root / "cmp" / "comparison.json").read_text())["models"]
    ols = res["linear"]["test"]["mse"]
    d_ridge = abs(res["ridge"]["test"]["mse"] - ols) / ols
    d_lasso = abs(res["lasso"]["test"]["mse"] - ols) / ols
    report(2, d_ridge < 0.01 and d_lasso < 0.01,
           f"MSE ols={ols:.4f}; relative gap ridge={d_ridge:.2e} lasso={d_lasso:.2e}")


def test_criterion_3_metric_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst = 0.0
    ok = True
    for _ in range(1000):
        n = int(rng.integers(2, 80))
        y = rng.normal(rng.uniform(-50, 50), rng.uniform(0.1, 100), n)
        yhat = y + rng.normal(0, rng.uniform(0.01, 80), n)
        diffs = [float(a) - float(b) for a, b in zip(y, yhat)]
        o_mae = math.fsum(abs(d) for d in diffs) / n
        o_mse = math.fsum(d * d for d in diffs) / n
        ybar = math.fsum(y) / n
        o_r2 = 1 - math.fsum(d * d for d in diffs) / math.fsum((v - ybar) ** 2 for v in y)
        for got, want in ((mae(y, yhat), o_mae), (mse(y, yhat), o_mse), (r2(y, yhat), o_r2)):
            worst = max(worst, abs(got - want) / max(abs(want), 1e-300))
        m, e = mse(y, yhat), rmse(y, yhat)
        ok &= e == math.sqrt(m) and mae(y, yhat) <= e
    elapsed = time.perf_counter() - t0
    report(3, ok and worst <= 1e-12 and elapsed < 5,
           f"worst relative error {worst:.2e}, identities hold={ok}, {elapsed:.2f}s")


def test_criterion_4_linear_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    ols_err = 0.0
    for _ in range(100):
        X = rng.normal(size=(60, 4)) * rng.uniform(0.5, 3, 4)
        y = rng.normal() + X @ rng.normal(size=4) + rng.normal(size=60)
        A = np.column_stack([np.ones(60), X])
        ref = np.linalg.solve(A.T @ A, A.T @ y)
        m = fit_ols(X, y)
        ols_err = max(ols_err, np.max(np.abs(np.r_[m.intercept, m.coefficients] - ref)))

    M = rng.normal(size=(50, 4))
    Q, _ = np.linalg.qr(M - M.mean(0))
    y = 1.0 + Q @ np.array([2.0, -0.7, 0.15, 1.1]) + 0.05 * rng.normal(size=50)
    b_ols = fit_ols(Q, y).coefficients
    ridge_err = max(np.max(np.abs(fit_ridge(Q, y, lam).coefficients - b_ols / (1 + lam)))
                    for lam in (0.1, 1.0, 5.0))
    soft_err = 0.0
    for lam in (0.1, 0.5, 2.0):
        b = fit_lasso(Q, y, lam, tol=1e-12).coefficients
        grid = [minimize_scalar(lambda t, c=c: (t - c) ** 2 + lam * abs(t), bounds=(-10, 10),
                                method="bounded", options={"xatol": 1e-11}).x for c in b_ols]
        soft_err = max(soft_err, np.max(np.abs(b - grid)))

    tol, kkt = 1e-9, 0.0
    for seed in range(50):
        r = np.random.default_rng(seed)
        p = int(r.integers(1, 5))
        X = r.normal(size=(40, p))
        X -= X.mean(0)
        X /= np.linalg.norm(X, axis=0)
        y = X @ r.normal(size=p) + 0.1 * r.normal(size=40)
        lam = float(r.uniform(0.01, 3))
        m = fit_lasso(X, y, lam, tol=tol, max_iter=100_000)
        grad = -2 * X.T @ (y - m.predict(X))
        for g, b in zip(grad, m.coefficients):
            kkt = max(kkt, abs(g) - lam if b == 0 else abs(g + lam * np.sign(b)))
    elapsed = time.perf_counter() - t0
    ok = ols_err <= 1e-8 and ridge_err <= 1e-10 and soft_err <= 1e-6 and kkt <= 10 * tol and elapsed < 30
    report(4, ok, f"OLS {ols_err:.1e}, ridge {ridge_err:.1e}, lasso closed form {soft_err:.1e}, "
                  f"KKT {kkt:.1e} (limit {10 * tol:.0e}), {elapsed:.2f}s")


def test_criterion_5_tree_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    split_ok = True
    for _ in range(100):
        n = int(rng.integers(2, 40))
        x = rng.integers(0, 12, n).astype(float) if rng.random() < 0.5 else rng.normal(size=n)
        y = rng.normal(size=n)
        best_sse, best_thr = np.sum((y - y.mean()) ** 2), None
        u = np.unique(x)
        for a, b in zip(u[:-1], u[1:]):
            thr = (a + b) / 2
            lo, hi = y[x <= thr], y[x > thr]
            sse = np.sum((lo - lo.mean()) ** 2) + np.sum((hi - hi.mean()) ** 2)
            if sse < best_sse:
                best_sse, best_thr = sse, thr
        tree = fit_tree(x[:, None], y, max_depth=1)
        split_ok &= (tree.node_count == 1) if best_thr is None else tree.threshold[0] == best_thr

    X = rng.uniform(-2, 2, (30, 3))
    y = np.sin(X[:, 0]) + X[:, 2] ** 2
    forest = fit_forest(X, y, 3, seed=9)
    preds = []
    for t in range(3):
        idx, fseed = forest_tree_sample(9, t, 30)
        preds.append(fit_tree(X[idx], y[idx], min_samples_leaf=2,
                              max_features=forest.max_features, rng=fseed).predict(X))
    forest_ok = np.array_equal(forest.predict(X), (preds[0] + preds[1] + preds[2]) / 3)

    mono_ok, leaf_err = True, 0.0
    for seed in range(20):
        r = np.random.default_rng(100 + seed)
        X = r.uniform(-2, 2, (20, 3))
        y = X[:, 0] * 2 - X[:, 1] ** 2 + 0.1 * r.normal(size=20)
        lam = 1.0
        model = fit_boost(X, y, rounds=3, learning_rate=0.5, max_depth=2, leaf_l2=lam, split_gamma=0.0)
        stages = list(model.staged_predict(X))
        losses = [np.mean((y - s) ** 2) for s in stages]
        mono_ok &= all(b <= a for a, b in zip(losses, losses[1:]))
        for tree, pred in zip(model.trees, stages):
            g = pred - y
            G = np.zeros(tree.node_count)
            H = np.zeros(tree.node_count)
            for row, gi in zip(X, g):
                node = 0
                while True:
                    G[node] += gi
                    H[node] += 1
                    f = tree.feature[node]
                    if f < 0:
                        break
                    node = tree.left[node] if row[f] <= tree.threshold[node] else tree.right[node]
            leaf_err = max(leaf_err, np.max(np.abs(tree.value + G / (H + lam))))
    elapsed = time.perf_counter() - t0
    ok = split_ok and forest_ok and mono_ok and leaf_err <= 1e-10 and elapsed < 60
    report(5, ok, f"split oracle={split_ok}, forest bit-exact={forest_ok}, boost loss monotone={mono_ok}, "
                  f"leaf weight error {leaf_err:.1e}, {elapsed:.2f}s")


def test_criterion_6_simulator_physics():
    t0 = time.perf_counter()
    params = CellParams()
    cfg = SimulationConfig(voltage_steps=80)
    scenarios = cfg.scenarios()
    data = generate_dataset(params, scenarios, cfg.voltage_steps)
    v, i, p = data.column("Voltage"), data.column("Current"), data.column("Power")
    curve_ok = (np.all(np.diff(i.reshape(len(scenarios), -1), axis=1) <= 0)
                and np.array_equal(p, v * i) and np.all(p >= 0))
    worst_t = worst_k = -np.inf
    for s, par in CONFIGURATIONS:
        mpp = np.array([[max_power_point(PanelScenario(s, par, t, k), params, 201).power
                         for k in range(11)] for t in TEMPERATURES])
        worst_t = max(worst_t, np.max(np.diff(mpp, axis=0)))
        worst_k = max(worst_k, np.max(np.diff(mpp, axis=1)))
    elapsed = time.perf_counter() - t0
    ok = curve_ok and worst_t <= 0 and worst_k <= 0 and elapsed < 60
    report(6, ok, f"{len(scenarios)} curves physical={curve_ok}; largest MPP rise with temperature "
                  f"{worst_t:.2e} W, with shade {worst_k:.2e} W; {elapsed:.2f}s")


def test_criterion_7_protocol():
    t0 = time.perf_counter()
    ok = True
    for n in (10, 101, 1000, 101_640, 7):
        train, test = split_indices(n, SplitSpec(0.2, 42))
        ok &= len(test) == math.floor(n * 0.2 + 0.5) and len(train) + len(test) == n
        ok &= np.array_equal(np.sort(np.r_[train, test]), np.arange(n))
    for n, k in ((10, 5), (7, 5), (103, 5), (5, 5)):
        folds = kfold_indices(n, k, 1)
        sizes = [len(v) for _, v in folds]
        ok &= max(sizes) - min(sizes) <= 1
        ok &= np.array_equal(np.sort(np.concatenate([v for _, v in folds])), np.arange(n))

    from pvshade.dataset import Dataset
    rng = np.random.default_rng(7)
    n = 53
    data = Dataset({"Voltage": rng.uniform(0, 5, n), "Current": rng.uniform(0, 3, n),
                    "Power": rng.uniform(0, 9, n), "Temperature": rng.uniform(27, 50, n),
                    "Series": rng.integers(1, 11, n), "Parallel": rng.integers(1, 11, n),
                    "ShadePercentage": rng.uniform(0, 100, n)})
    cv = cross_validate(ModelSpec("ridge"), data, 5, 3)
    X, y = data.features(), data.target()
    hand = []
    for train, val in kfold_indices(n, 5, 3):
        Xt = X[train]
        mu, sd = Xt.mean(0), Xt.std(0)
        Z = (Xt - mu) / sd
        A = Z - Z.mean(0)
        beta = np.linalg.solve(A.T @ A + np.eye(6), A.T @ (y[train] - y[train].mean()))
        pred = y[train].mean() + ((X[val] - mu) / sd - Z.mean(0)) @ beta
        hand.append(np.mean(np.abs(y[val] - pred)))
    cv_err = abs(cv.mean.mae - sum(hand) / 5)
    ok &= cv_err <= 1e-9

    y5 = np.array([2.0, 9.0, 4.0, 4.5, 11.0])
    loo_data = data.take(np.arange(5)).with_columns({"ShadePercentage": y5})
    loo = cross_validate(ModelSpec("lasso", {"lambda": 1e300}), loo_data, 5, 0)
    oracle = math.fsum((y5[j] - np.delete(y5, j).mean()) ** 2 for j in range(5)) / 5
    ok &= loo.mean.mse == oracle
    elapsed = time.perf_counter() - t0
    report(7, ok and elapsed < 5, f"splits and folds exact, CV hand gap {cv_err:.1e}, "
                                  f"LOO {loo.mean.mse:.6f} vs {oracle:.6f}, {elapsed:.2f}s")


def _digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.mark.slow
def test_criterion_8_reproducible_outputs(full_run, tmp_path):
    root, _, _ = full_run
    assert main(["generate", "--output-dir", str(tmp_path / "gen"), "--seed", "42"]) == 0
    assert main(["compare", "--input", str(root / "gen" / "dataset.csv"), "--seed", "42",
                 "--output-dir", str(tmp_path / "cmp")]) == 0
    differing = [f"gen/{f}" for f in PRIMARY_OUTPUTS
                 if _digest(root / "gen" / f) != _digest(tmp_path / "gen" / f)]
    differing += [f"cmp/{f}" for f in COMPARE_OUTPUTS
                  if _digest(root / "cmp" / f) != _digest(tmp_path / "cmp" / f)]
    report(8, not differing, f"{len(PRIMARY_OUTPUTS) + len(COMPARE_OUTPUTS)} primary outputs compared, "
                             f"differing: {differing or 'none'}")
