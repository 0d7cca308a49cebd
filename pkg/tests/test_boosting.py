import math

import numpy as np
import pytest

from conftest import make_matrix
from peakflow.boosting import (
    GbtModel,
    GbtParams,
    fit_gbt,
    kge_eval_hook,
    leaf_weight,
    predict_gbt,
    split_gain,
    staged_predict,
)
from peakflow.verify import kge

EXACT = dict(subsample=1.0, colsample=1.0, l1_penalty=0.0, early_stop_patience=1000)


def test_zero_gradient_root_leaf():
    # identical features: no split possible, G = (2-1) + (2-3) = 0
    fm = make_matrix([[1.0], [1.0]], [1.0, 3.0])
    model = fit_gbt(fm, None, GbtParams(n_rounds=1, l2_penalty=0.0, **EXACT))
    assert model.base_score == 2.0
    tree = model.trees[0]
    assert tree.n_nodes == 1 and tree.value[0] == 0.0


def test_two_point_single_split():
    fm = make_matrix([[0.0], [1.0]], [1.0, 3.0])
    params = GbtParams(n_rounds=1, max_depth=1, l2_penalty=0.0, learning_rate=1.0, min_split_loss=0.0, **EXACT)
    model = fit_gbt(fm, None, params)
    tree = model.trees[0]
    assert tree.feature[0] == 0 and tree.threshold[0] == 0.5
    # g = base - y = [1, -1], h = 1: w = -G/H
    assert tree.value[tree.left[0]] == -1.0 and tree.value[tree.right[0]] == 1.0
    assert predict_gbt(model, fm).tolist() == [1.0, 3.0]


def test_two_point_convergence():
    fm = make_matrix([[0.0], [1.0]], [1.0, 3.0])
    # residual shrinks by (1 - eta) per round: 0.9**200 ~ 7e-10
    model = fit_gbt(fm, None, GbtParams(n_rounds=200, max_depth=1, l2_penalty=0.0, **EXACT))
    assert np.abs(predict_gbt(model, fm) - fm.y).max() < 1e-6


def test_training_mse_non_increasing(linear_rows):
    model = fit_gbt(linear_rows, None, GbtParams(n_rounds=60, **EXACT))
    mse = [float(np.mean((p - linear_rows.y) ** 2)) for p in staged_predict(model, linear_rows)]
    assert all(b <= a for a, b in zip(mse, mse[1:]))
    assert mse[-1] < 0.1 * mse[0]


def test_stored_gains_recompute(linear_rows):
    params = GbtParams(n_rounds=15, l2_penalty=1.0, min_split_loss=0.01)
    model = fit_gbt(linear_rows, None, params)
    checked = 0
    for tree in model.trees:
        assert tree.max_depth <= params.max_depth
        g, h, gain = tree.stats["grad"], tree.stats["hess"], tree.stats["gain"]
        for node in range(tree.n_nodes):
            if tree.is_leaf(node):
                assert h[node] >= params.min_child_weight
                continue
            l, r = tree.left[node], tree.right[node]
            want = split_gain(g[l], h[l], g[r], h[r], params)
            assert gain[node] == pytest.approx(want, rel=1e-9)
            assert gain[node] > 0
            checked += 1
    assert checked > 50


def test_leaf_weights_match_statistics(linear_rows):
    params = GbtParams(n_rounds=3, l1_penalty=0.5, l2_penalty=2.0)
    model = fit_gbt(linear_rows, None, params)
    for tree in model.trees:
        for leaf in tree.leaves():
            assert tree.value[leaf] == leaf_weight(tree.stats["grad"][leaf], tree.stats["hess"][leaf], params)


def test_prediction_is_base_plus_shrunk_leaf_sum(linear_rows):
    model = fit_gbt(linear_rows, None, GbtParams(n_rounds=10))
    X = linear_rows.X[:7]
    manual = [model.base_score + model.learning_rate * math.fsum(t.predict(X[i: i + 1])[0] for t in model.trees)
              for i in range(7)]
    assert predict_gbt(model, X) == pytest.approx(manual, rel=1e-12)


def test_zero_trees_and_identical_rows(linear_rows):
    model = fit_gbt(linear_rows, None, GbtParams(n_rounds=5))
    empty = GbtModel(model.base_score, 0.1, [], model.columns, model.params)
    assert (predict_gbt(empty, linear_rows) == model.base_score).all()
    row = linear_rows.X[:1]
    out = predict_gbt(model, np.vstack([row, row, row]))
    assert out[0] == out[1] == out[2]


def test_determinism_and_round_trip(linear_rows, tmp_path):
    train, valid = linear_rows.take(np.arange(400)), linear_rows.take(np.arange(400, 500))
    a = fit_gbt(train, valid, GbtParams(n_rounds=30, rng_seed=5))
    b = fit_gbt(train, valid, GbtParams(n_rounds=30, rng_seed=5))
    assert a.to_json() == b.to_json()
    a.to_json(tmp_path / "m.json")
    c = GbtModel.from_json(tmp_path / "m.json")
    assert c.to_json() == a.to_json()
    assert predict_gbt(c, valid).tobytes() == predict_gbt(a, valid).tobytes()
    d = fit_gbt(train, valid, GbtParams(n_rounds=30, rng_seed=6))
    assert d.to_json() != a.to_json()


def test_early_stopping_keeps_best_round(linear_rows):
    train, valid = linear_rows.take(np.arange(400)), linear_rows.take(np.arange(400, 500))
    model = fit_gbt(train, valid, GbtParams(n_rounds=300, early_stop_patience=5, learning_rate=0.3))
    meta = model.meta
    assert len(model.trees) == meta["rounds_used"] <= meta["rounds_trained"]
    scores = [kge_eval_hook(p, valid.y) for p in staged_predict(model, valid)]
    assert scores[-1] == pytest.approx(meta["best_valid_kge"], abs=1e-12)
    assert scores[-1] == max(scores[1:])


def test_errors(linear_rows):
    with pytest.raises(ValueError):
        fit_gbt(linear_rows.take(np.arange(0)), None, GbtParams())
    bad = make_matrix([[1.0], [np.nan]], [1.0, 2.0])
    with pytest.raises(ValueError, match="non-finite"):
        fit_gbt(bad, None, GbtParams())
    model = fit_gbt(linear_rows, None, GbtParams(n_rounds=2))
    with pytest.raises(ValueError, match="column mismatch"):
        predict_gbt(model, make_matrix(linear_rows.X, linear_rows.y, ["a", "b", "c", "d"]))


def test_kge_hook():
    y = np.array([1.0, 2.0, 4.0, 3.0])
    assert kge_eval_hook(y, y) == 1.0
    assert kge_eval_hook(np.full(4, 2.5), y) == -math.inf
    p = np.array([1.5, 2.0, 3.0, 3.5])
    assert kge_eval_hook(p, y) == kge(p, y)[0]
