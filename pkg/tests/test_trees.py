import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pvshade.errors import ValidationError
from pvshade.models import load_model, save_model
from pvshade.trees import (BoostModel, DecisionTree, fit_boost, fit_forest, fit_tree,
                           forest_tree_sample, predict_forest, refit_values)


def regression_problem(n, p, seed):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-2, 2, size=(n, p))
    y = np.sin(2 * X[:, 0]) + X[:, -1] ** 2 + 0.1 * rng.normal(size=n)
    return X, y


def route(tree, x):
    """Node ids visited by one row, root first, by walking the arena in Python."""
    path = [0]
    while tree.feature[path[-1]] >= 0:
        node = path[-1]
        path.append(tree.left[node] if x[tree.feature[node]] <= tree.threshold[node]
                    else tree.right[node])
    return path


def best_split_1d(x, y):
    """Exhaustive depth-1 oracle: (sse, threshold) over all midpoint thresholds."""
    values = np.unique(x)
    best = (np.sum((y - y.mean()) ** 2), None)
    for a, b in zip(values[:-1], values[1:]):
        thr = (a + b) / 2
        lm, rm = x <= thr, x > thr
        sse = np.sum((y[lm] - y[lm].mean()) ** 2) + np.sum((y[rm] - y[rm].mean()) ** 2)
        if sse < best[0]:
            best = (sse, thr)
    return best


def test_step_data_split():
    tree = fit_tree(np.array([[1.0], [2.0], [3.0], [4.0]]), np.array([0.0, 0.0, 1.0, 1.0]),
                    max_depth=1)
    assert tree.feature[0] == 0 and tree.threshold[0] == 2.5
    assert tree.value[tree.left[0]] == 0.0 and tree.value[tree.right[0]] == 1.0


def test_depth1_matches_exhaustive_oracle_on_100_problems():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        n = int(rng.integers(2, 40))
        x = rng.integers(0, 15, n).astype(float) if rng.random() < 0.5 else rng.normal(size=n)
        y = rng.normal(size=n)
        tree = fit_tree(x[:, None], y, max_depth=1)
        sse, thr = best_split_1d(x, y)
        if thr is None:
            assert tree.node_count == 1
            continue
        assert tree.node_count == 3
        assert tree.threshold[0] == thr
        left = x <= thr
        assert tree.value[tree.left[0]] == pytest.approx(y[left].mean(), abs=1e-12)
        assert tree.value[tree.right[0]] == pytest.approx(y[~left].mean(), abs=1e-12)


def test_constant_targets_single_leaf():
    X, _ = regression_problem(30, 3, 0)
    tree = fit_tree(X, np.full(30, 4.25))
    assert tree.node_count == 1 and tree.value[0] == 4.25


@given(st.integers(0, 10_000))
def test_memorisation_on_distinct_features(seed):
    X, y = regression_problem(40, 3, seed)
    tree = fit_tree(X, y)
    np.testing.assert_allclose(tree.predict(X), y, atol=1e-12)


@given(st.integers(0, 10_000), st.integers(0, 6), st.integers(1, 6))
def test_tree_structure_invariants(seed, depth, leaf):
    X, y = regression_problem(60, 3, seed)
    tree = fit_tree(X, y, max_depth=depth, min_samples_leaf=leaf)
    assert tree.depth <= depth
    internal = tree.feature >= 0
    assert np.all(tree.left[internal] > 0) and np.all(tree.right[internal] > 0)
    assert np.all(np.isfinite(tree.value))
    assert np.all(tree.n_samples[~internal] >= leaf)
    # piecewise constant: each leaf stores the mean of the training rows it holds
    leaves = tree.apply(X)
    for node in np.unique(leaves):
        assert tree.value[node] == pytest.approx(y[leaves == node].mean(), abs=1e-12)


def test_ties_prefer_lower_feature_index():
    x = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
    X = np.column_stack([x, x, x])
    y = np.array([0.0, 0.0, 0.0, 1.0, 1.0, 1.0])
    tree = fit_tree(X, y, max_depth=1)
    assert tree.feature[0] == 0
    tree = fit_tree(X[:, [2, 1]], y, max_depth=1)
    assert tree.feature[0] == 0


def test_tie_prefers_lower_threshold():
    # splitting at 1.5 or 3.5 reduces the error by the same amount
    x = np.array([1.0, 2.0, 3.0, 4.0])
    y = np.array([1.0, 0.0, 0.0, 1.0])
    assert fit_tree(x[:, None], y, max_depth=1).threshold[0] == 1.5


def test_max_features_validation():
    X, y = regression_problem(20, 3, 0)
    with pytest.raises(ValidationError):
        fit_tree(X, y, max_features=4)
    with pytest.raises(ValidationError):
        fit_tree(X[:0], y[:0])


def test_apply_dimension_mismatch():
    X, y = regression_problem(20, 3, 0)
    with pytest.raises(ValidationError):
        fit_tree(X, y).predict(X[:, :1])


def test_single_tree_forest_is_cart():
    X, y = regression_problem(50, 3, 1)
    forest = fit_forest(X, y, 1, max_features=3, seed=5, bootstrap=False, min_samples_leaf=1)
    np.testing.assert_array_equal(forest.predict(X), fit_tree(X, y).predict(X))


def test_forest_equals_mean_of_reconstructed_trees():
    X, y = regression_problem(30, 3, 2)
    forest = fit_forest(X, y, 3, seed=17)
    Xq = np.random.default_rng(0).uniform(-2, 2, (25, 3))
    preds = []
    for t in range(3):
        idx, fseed = forest_tree_sample(17, t, 30)
        tree = fit_tree(X[idx], y[idx], min_samples_leaf=2, max_features=forest.max_features,
                        rng=fseed)
        preds.append(tree.predict(Xq))
    assert np.array_equal(forest.predict(Xq), (preds[0] + preds[1] + preds[2]) / 3)


@given(st.integers(0, 10_000))
def test_forest_within_tree_range(seed):
    X, y = regression_problem(40, 4, seed)
    forest = fit_forest(X, y, 5, seed=seed)
    per_tree = np.array([t.predict(X) for t in forest.trees])
    pred = forest.predict(X)
    assert np.all(pred >= per_tree.min(0) - 1e-12) and np.all(pred <= per_tree.max(0) + 1e-12)


def test_forest_deterministic_and_thread_independent(monkeypatch):
    X, y = regression_problem(200, 4, 3)
    serial = fit_forest(X, y, 8, seed=3).predict(X)
    assert np.array_equal(serial, fit_forest(X, y, 8, seed=3).predict(X))
    monkeypatch.setenv("PVSHADE_THREADS", "4")
    assert np.array_equal(serial, fit_forest(X, y, 8, seed=3).predict(X))
    assert not np.array_equal(serial, fit_forest(X, y, 8, seed=4).predict(X))


def test_forest_default_max_features():
    X, y = regression_problem(30, 6, 0)
    assert fit_forest(X, y, 2).max_features == 2
    assert fit_forest(X[:, :4], y, 2).max_features == 2
    with pytest.raises(ValidationError):
        fit_forest(X, y, 0)


def test_boost_root_only_predicts_mean():
    X, y = regression_problem(30, 3, 4)
    model = fit_boost(X, y, rounds=1, learning_rate=1.0, max_depth=0, leaf_l2=0.0)
    np.testing.assert_allclose(model.predict(X), y.mean(), atol=1e-12)


def test_boost_single_round_memorises():
    X, y = regression_problem(40, 3, 5)
    model = fit_boost(X, y, rounds=1, learning_rate=1.0, max_depth=None, leaf_l2=0.0)
    np.testing.assert_allclose(model.predict(X), y, atol=1e-12)


def test_boost_loss_and_leaf_weights_on_20_problems():
    for seed in range(20):
        X, y = regression_problem(20, 3, 100 + seed)
        lam = [0.0, 1.0, 2.5][seed % 3]
        model = fit_boost(X, y, rounds=3, learning_rate=0.3, max_depth=2, leaf_l2=lam)
        stages = list(model.staged_predict(X))
        losses = [np.mean((y - s) ** 2) for s in stages]
        assert all(b < a for a, b in zip(losses, losses[1:])), losses
        for tree, pred in zip(model.trees, stages):
            g_sum = np.zeros(tree.node_count)
            h_sum = np.zeros(tree.node_count)
            for x, g in zip(X, pred - y):
                for node in route(tree, x):
                    g_sum[node] += g
                    h_sum[node] += 1.0
            np.testing.assert_allclose(tree.value, -g_sum / (h_sum + lam), rtol=0, atol=1e-10)


@given(st.integers(0, 10_000))
def test_boost_loss_non_increasing(seed):
    X, y = regression_problem(80, 3, seed)
    model = fit_boost(X, y, rounds=15, max_depth=3)
    losses = [np.sum((y - s) ** 2) for s in model.staged_predict(X)]
    assert all(b <= a for a, b in zip(losses, losses[1:]))


def test_split_gamma_prunes():
    X, y = regression_problem(60, 3, 7)
    model = fit_boost(X, y, rounds=2, split_gamma=1e9)
    assert all(t.node_count == 1 for t in model.trees)


def test_leaf_l2_shrinks_weights_on_frozen_structure():
    X, y = regression_problem(80, 3, 8)
    tree = fit_tree(X, y - y.mean(), max_depth=3)
    leaves = tree.feature < 0
    mags = [np.abs(refit_values(tree, X, y - y.mean(), lam).value[leaves])
            for lam in (0.0, 0.5, 2.0, 10.0)]
    assert all(np.all(b <= a) for a, b in zip(mags, mags[1:]))


def test_boost_constant_models():
    empty = BoostModel([], 0.1, 1.0, 0.0, 3.5)
    np.testing.assert_array_equal(empty.predict(np.zeros((4, 2))), np.full(4, 3.5))
    X, y = regression_problem(30, 3, 9)
    fitted = fit_boost(X, y, rounds=5)
    frozen = BoostModel(fitted.trees, 0.0, 1.0, 0.0, fitted.base_score)
    np.testing.assert_array_equal(frozen.predict(X), np.full(30, fitted.base_score))


def test_boost_validation():
    X, y = regression_problem(10, 2, 0)
    for kwargs in ({"rounds": 0}, {"learning_rate": 0.0}, {"learning_rate": 1.5}, {"leaf_l2": -1}):
        with pytest.raises(ValidationError):
            fit_boost(X, y, **kwargs)


@pytest.mark.parametrize("fit", [lambda X, y: fit_forest(X, y, 4, seed=1, feature_names=list("abc")),
                                 lambda X, y: fit_boost(X, y, 6, feature_names=list("abc"))])
def test_serialisation_roundtrip_bit_exact(tmp_path, fit):
    X, y = regression_problem(50, 3, 10)
    model = fit(X, y)
    save_model(model, tmp_path / "m.json")
    doc = json.loads((tmp_path / "m.json").read_text())
    assert {"feature", "threshold", "left", "right", "value"} <= set(doc["trees"][0])
    Xq = np.random.default_rng(1).uniform(-3, 3, (40, 3))
    assert np.array_equal(load_model(tmp_path / "m.json").predict(Xq), model.predict(Xq))
    with pytest.raises(ValidationError):
        model.predict(Xq[:, :2])


@given(st.integers(0, 10_000))
def test_monotone_rescaling_invariance(seed):
    X, y = regression_problem(60, 3, seed)
    Z = X.copy()
    Z[:, 0] = 2 * Z[:, 0] + 1
    for fit in (lambda A: fit_forest(A, y, 3, seed=seed), lambda A: fit_boost(A, y, 5)):
        assert np.array_equal(fit(X).predict(X), fit(Z).predict(Z))


def test_tree_dict_roundtrip():
    X, y = regression_problem(30, 2, 0)
    tree = fit_tree(X, y, max_depth=3)
    again = DecisionTree.from_dict(tree.to_dict())
    assert np.array_equal(again.predict(X), tree.predict(X))
