import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fdf.errors import (
    CollinearDesign,
    FdfWarning,
    InsufficientRows,
    LagShorterThanHorizon,
    NonInvertibleTransform,
    Separable,
    SingularSystem,
)
from fdf.flow_data import FlowMatrix, Period, RegionRegistry
from fdf.models import (
    BenchmarkSpec,
    GravityModel,
    ModelSpec,
    benchmark_grid,
    estimator_from_dict,
    fit_forest,
    fit_gbm,
    fit_gravity,
    fit_lasso,
    fit_logistic,
    fit_ridge,
    fit_tree,
    lasso_objective,
    logistic_gradient,
    make_estimator,
    predict_benchmark,
    predict_gravity,
    predict_proba,
    soft_threshold,
)
from fdf.models.rng import check_seed, substream
from fdf.models.serialize import dumps, loads
from fdf.models.zoo import FeatureEstimator
from fdf.panel import ForecastTask, TargetTransform, add_target_lags, assemble_panel

from oracles import central_difference, ewm_direct, exhaustive_split, logistic_loglik

nan = float("nan")


# -- benchmarks ---------------------------------------------------------------------

def test_lag_benchmark_locf():
    assert predict_benchmark([10, 20, 30, 40], BenchmarkSpec("lag", 1), 1) == 40
    assert predict_benchmark([10, 20, 30, 40], BenchmarkSpec("lag", 12), 1) is None
    assert predict_benchmark([10, 20, nan, 40], BenchmarkSpec("lag", 2), 1) is None
    # 12-month lag at h=3 reaches back 9 months before issuance
    hist = list(range(1, 13))
    assert predict_benchmark(hist, BenchmarkSpec("lag", 12), 3) == 3


def test_lag_shorter_than_horizon():
    with pytest.raises(LagShorterThanHorizon):
        predict_benchmark([1, 2, 3], BenchmarkSpec("lag", 1), 3)
    assert not BenchmarkSpec("lag", 1).feasible(3)
    assert BenchmarkSpec("ewm", 1).feasible(3)


def test_ewm_examples():
    assert predict_benchmark([0, 10], BenchmarkSpec("ewm", 3), 1) == pytest.approx(20 / 3, abs=1e-12)
    assert BenchmarkSpec("ewm", 8).alpha == pytest.approx(2 / 9)
    # alpha = 1 puts all weight on the issuance month, like the 1-month lag
    assert predict_benchmark([5, nan, 7], BenchmarkSpec("ewm", 1), 1) == 7
    assert predict_benchmark([5, nan, 7, nan], BenchmarkSpec("ewm", 1), 1) is None
    assert predict_benchmark([nan, nan], BenchmarkSpec("ewm", 5), 1) is None


@settings(max_examples=60, deadline=None)
@given(st.lists(st.one_of(st.none(), st.floats(-1e5, 1e5)), min_size=1, max_size=30), st.integers(1, 30))
def test_ewm_matches_direct_sum(values, n):
    hist = [nan if v is None else v for v in values]
    got = predict_benchmark(hist, BenchmarkSpec("ewm", n), 1)
    want = ewm_direct(hist, 2 / (n + 1))
    if want is None:
        assert got is None
    else:
        assert got == pytest.approx(want, rel=1e-9, abs=1e-9)


def test_expanding_and_rolling():
    assert predict_benchmark([4.0] * 7, BenchmarkSpec("expanding_mean"), 2) == 4.0
    assert predict_benchmark([1, nan, 3], BenchmarkSpec("expanding_mean"), 1) == 2
    assert predict_benchmark([100, 1, nan, 3], BenchmarkSpec("rolling_mean", 3), 1) == 2
    assert predict_benchmark([1, nan, nan], BenchmarkSpec("rolling_mean", 2), 1) is None
    assert predict_benchmark([], BenchmarkSpec("expanding_mean"), 1) is None
    with pytest.raises(ValueError):
        BenchmarkSpec("rolling_mean")
    with pytest.raises(ValueError):
        BenchmarkSpec("median", 3)


def test_benchmark_grid_sees_only_issuance_history():
    rng = np.random.default_rng(0)
    y = rng.normal(size=(2, 15))
    for spec in (BenchmarkSpec("lag", 3), BenchmarkSpec("ewm", 4), BenchmarkSpec("rolling_mean", 5),
                 BenchmarkSpec("expanding_mean")):
        g = benchmark_grid(y, spec, 3)
        assert np.isnan(g[:, :3]).all()
        for t in (3, 8, 14):
            z = y.copy()
            z[:, t - 2:] = 1e9
            np.testing.assert_array_equal(benchmark_grid(z, spec, 3)[:, t], g[:, t])


# -- ridge ---------------------------------------------------------------------------------

def test_ridge_scalar_closed_form():
    for lam in (0, 0.5, 1, 10):
        m = fit_ridge([[1.0], [-1.0]], [1.0, -1.0], lam)
        assert abs(m.coef[0] - 2 / (2 + lam)) <= 1e-10
        assert abs(m.intercept) <= 1e-12


def test_ridge_ols_and_limits():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(40, 3))
    y = 2 + X @ [1.0, -2.0, 0.5] + rng.normal(size=40)
    ols = np.linalg.lstsq(np.column_stack([np.ones(40), X]), y, rcond=None)[0]
    m = fit_ridge(X, y, 0)
    np.testing.assert_allclose(np.r_[m.intercept, m.coef], ols, atol=1e-10)
    big = fit_ridge(X, y, 1e12)
    assert np.linalg.norm(big.coef) < 1e-6
    assert big.intercept == pytest.approx(y.mean(), abs=1e-6)
    norms = [np.linalg.norm(fit_ridge(X, y, lam).coef) for lam in (0, 0.1, 1, 10, 100)]
    assert all(a >= b for a, b in zip(norms, norms[1:]))


def test_ridge_singular():
    X = np.array([[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]])
    with pytest.raises(SingularSystem):
        fit_ridge(X, [1, 2, 3], 0)
    fit_ridge(X, [1, 2, 3], 0.1)
    with pytest.raises(ValueError):
        fit_ridge(X, [1, 2, 3], -1)
    with pytest.raises(ValueError):
        fit_ridge([[nan]], [1.0], 1)


# -- lasso ----------------------------------------------------------------------------------

def test_soft_threshold_and_scalar_lasso():
    assert soft_threshold(1.0, 0.4) == pytest.approx(0.6)
    assert soft_threshold(-1.0, 0.4) == pytest.approx(-0.6)
    assert soft_threshold(0.3, 0.4) == 0.0
    X, y = [[1.0], [-1.0]], [1.0, -1.0]
    assert abs(fit_lasso(X, y, 0.4).coef[0] - 0.6) <= 1e-9
    for lam in (1, 1.5, 10):
        assert fit_lasso(X, y, lam).coef[0] == 0.0
    assert abs(fit_lasso(X, y, 0).coef[0] - 1.0) <= 1e-8


def test_lasso_beats_zero_vector_and_warns_on_raw_scale():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(30, 4))
    X = (X - X.mean(0)) / X.std(0)
    y = X @ [1.0, 0, -0.5, 0] + rng.normal(size=30)
    m = fit_lasso(X, y, 0.1)
    assert lasso_objective(X, y, m.intercept, m.coef, 0.1) <= lasso_objective(X, y, y.mean(), np.zeros(4), 0.1)
    with pytest.warns(FdfWarning):
        fit_lasso(X * 10 + 3, y, 0.1)


def test_lasso_zero_variance_column():
    X = np.column_stack([np.linspace(-1, 1, 10), np.ones(10)])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", FdfWarning)
        m = fit_lasso(X, np.linspace(0, 2, 10), 0.01)
    assert m.coef[1] == 0.0


# -- logistic -------------------------------------------------------------------------------

def test_logistic_gradient_against_finite_differences():
    rng = np.random.default_rng(3)
    for _ in range(5):
        X = rng.normal(size=(25, 3))
        y = (rng.random(25) < 0.5).astype(float)
        params = rng.normal(size=4)
        g = logistic_gradient(params, X, y, 0.3)
        fd = central_difference(lambda q: logistic_loglik(q, X, y, 0.3), params)
        assert np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1e-8)) <= 1e-6


def test_logistic_intercept_only_and_probability_half():
    X = np.zeros((8, 2))
    y = np.array([1, 1, 1, 0, 0, 0, 0, 0], dtype=float)
    m = fit_logistic(X, y)
    assert m.alpha == pytest.approx(math.log(3 / 5), abs=1e-8)
    np.testing.assert_allclose(m.beta, 0, atol=1e-12)
    zero = type(m)(0.0, np.zeros(2))
    assert predict_proba(zero, np.array([3.0, -2.0]))[0] == 0.5


def test_logistic_separable_and_penalised():
    X = np.array([[-2.0], [-1.0], [1.0], [2.0]])
    y = np.array([0, 0, 1, 1], dtype=float)
    with pytest.raises(Separable):
        fit_logistic(X, y)
    m = fit_logistic(X, y, l2=1.0)
    p = m.predict_proba(X)
    assert ((p > 0) & (p < 1)).all() and p[3] > 0.5 > p[0]
    with pytest.raises(Separable):
        fit_logistic(X, np.ones(4))
    with pytest.raises(ValueError):
        fit_logistic(X, [0, 1, 2, 1])


# -- gravity -----------------------------------------------------------------------------------

def test_gravity_plug_in_and_homogeneity():
    m = GravityModel(math.log(2), 1, 1, 2)
    assert predict_gravity(m, 4, 9, 6) == pytest.approx(2.0, abs=1e-12)
    m1 = GravityModel(0.3, 0.7, 1.2, 1.0)
    xi, xj, d = np.array([3.0, 5.0]), np.array([2.0, 8.0]), np.array([10.0, 40.0])
    np.testing.assert_allclose(m1.predict(xi, xj, 2 * d), m1.predict(xi, xj, d) / 2, rtol=1e-14)


def test_gravity_recovers_noiseless_parameters():
    rng = np.random.default_rng(4)
    true = GravityModel(0.5, 0.8, 1.3, 1.7)
    xi, xj, d = rng.uniform(1, 100, 20), rng.uniform(1, 100, 20), rng.uniform(1, 500, 20)
    m = fit_gravity(true.predict(xi, xj, d), xi, xj, d)
    for a, b in zip((m.alpha, m.b1, m.b2, m.b3), (0.5, 0.8, 1.3, 1.7)):
        assert abs(a - b) <= 1e-8


def test_gravity_drops_non_positive_rows_and_errors():
    xi, xj, d = np.arange(1.0, 7), np.arange(2.0, 8) ** 1.5, np.arange(3.0, 9) ** 0.7
    a = GravityModel(0.1, 1, 1, 1).predict(xi, xj, d)
    a[0] = 0
    with pytest.warns(FdfWarning, match="dropped 1"):
        m = fit_gravity(a, xi, xj, d)
    assert m.dropped == 1
    with pytest.raises(InsufficientRows), pytest.warns(FdfWarning):
        fit_gravity(a[:4], xi[:4], xj[:4], d[:4])
    with pytest.raises(CollinearDesign):
        fit_gravity(a[1:], xi[1:], xi[1:], d[1:])


# -- trees ---------------------------------------------------------------------------------------

def test_tree_examples():
    t = fit_tree(np.array([[1.0], [2.0], [3.0], [4.0]]), [0, 0, 10, 10])
    assert t.feature[0] == 0 and t.threshold[0] == 2.5
    assert sorted(t.value[t.feature == -1].tolist()) == [0, 10]
    const = fit_tree(np.arange(6.0)[:, None], [3.0] * 6)
    assert const.n_leaves == 1 and const.predict([[100.0]])[0] == 3.0
    stump = fit_tree(np.arange(6.0)[:, None], np.arange(6.0), max_depth=0)
    assert stump.n_leaves == 1 and stump.predict([[0.0]])[0] == 2.5


def test_tree_root_split_matches_exhaustive_search():
    rng = np.random.default_rng(5)
    for _ in range(20):
        n, p = rng.integers(4, 30), rng.integers(1, 5)
        X = rng.integers(0, 6, size=(n, p)).astype(float)
        y = rng.normal(size=n).round(1)
        leaf = int(rng.integers(1, 3))
        sse, f, thr = exhaustive_split(X, y, leaf)
        t = fit_tree(X, y, max_depth=1, min_samples_leaf=leaf)
        if f == -1:
            assert t.n_leaves == 1
        else:
            assert (t.feature[0], t.threshold[0]) == (f, thr)


def test_tree_tie_break_lowest_feature():
    X = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [4.0, 4.0]])
    t = fit_tree(X, [0, 0, 1, 1])
    assert t.feature[0] == 0


def test_forest_single_tree_reduces_to_tree():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(40, 3))
    y = X[:, 0] ** 2 + rng.normal(size=40)
    f = fit_forest(X, y, n_trees=1, max_features=3, bootstrap=False, seed=9)
    np.testing.assert_array_equal(f.predict(X), fit_tree(X, y).predict(X))


def test_forest_determinism_and_averaging():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(50, 4))
    y = X.sum(axis=1)
    a = fit_forest(X, y, n_trees=2, max_features=2, seed=11, max_depth=4)
    b = fit_forest(X, y, n_trees=2, max_features=2, seed=11, max_depth=4)
    np.testing.assert_array_equal(a.predict(X), b.predict(X))
    v = [t.predict(X) for t in a.trees]
    np.testing.assert_array_equal(a.predict(X), (v[0] + v[1]) / 2)
    c = fit_forest(X, y, n_trees=2, max_features=2, seed=12, max_depth=4)
    assert not np.array_equal(a.predict(X), c.predict(X))


def test_gbm_properties():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(60, 3))
    y = np.sin(X[:, 0]) + X[:, 1]
    g = fit_gbm(X, y, n_rounds=0)
    np.testing.assert_array_equal(g.predict(X), np.full(60, y.mean()))
    g = fit_gbm(X, y, n_rounds=30, learning_rate=0.3, max_depth=2)
    assert all(b <= a + 1e-9 for a, b in zip(g.train_sse, g.train_sse[1:]))
    g1 = fit_gbm(X, y, n_rounds=1, learning_rate=1.0, max_depth=10)
    assert g1.train_sse[1] < g1.train_sse[0]
    with pytest.raises(ValueError):
        fit_gbm(X, y, learning_rate=0)


# -- serialisation and rng -------------------------------------------------------------------------

def test_serialisation_round_trip_bit_exact():
    rng = np.random.default_rng(9)
    X = rng.normal(size=(40, 3)) / 3
    y = X @ [1, 2, 3] + rng.normal(size=40) / 7
    models = [
        fit_ridge(X, y, 0.3),
        fit_logistic(X, (y > 0).astype(float), l2=0.1),
        fit_tree(X, y, 3),
        fit_forest(X, y, 3, 2, seed=1, max_depth=3),
        fit_gbm(X, y, 5, 0.2, 2),
        GravityModel(0.1 / 3, 1 / 7, 2 / 9, 1.1),
    ]
    for m in models:
        back = loads(dumps(m, {"x": 1}, 42))
        if isinstance(m, GravityModel):
            assert back == m
            continue
        pred = m.predict_proba if hasattr(m, "predict_proba") else m.predict
        pred_back = back.predict_proba if hasattr(back, "predict_proba") else back.predict
        np.testing.assert_array_equal(pred(X), pred_back(X))
    with pytest.raises(ValueError):
        loads(json.dumps({"schema_version": 99, "model": {}}))


def test_substreams_are_order_independent():
    a = substream(5, 3).random(4)
    substream(5, 0).random(100)
    np.testing.assert_array_equal(a, substream(5, 3).random(4))
    assert not np.array_equal(a, substream(5, 4).random(4))
    with pytest.raises(ValueError):
        check_seed(-1)
    with pytest.raises(ValueError):
        check_seed(2 ** 64)


# -- zoo wrappers ------------------------------------------------------------------------------------

def _panel(h=1, transform="identity", T=30):
    rng = np.random.default_rng(10)
    R = 3
    mats = []
    for t in range(T):
        m = np.zeros((R, R), dtype=np.int64)
        m[np.diag_indices(R)] = 100 + 20 * np.sin(np.arange(R) + t / 2) + rng.integers(0, 10, R)
        mats.append(FlowMatrix(Period(2015, 1) + t, m))
    task = ForecastTask(h, transform=TargetTransform(transform))
    panel = assemble_panel(mats, [], RegionRegistry(["a", "b", "c"]), task)
    return add_target_lags(panel, [1, 2, 3])


@pytest.mark.parametrize("family,params", [
    ("ridge", {"lam": 1.0}), ("lasso", {"lam": 0.5}), ("tree", {"max_depth": 3}),
    ("forest", {"n_trees": 3, "max_features": "sqrt", "max_depth": 3}),
    ("gbm", {"n_rounds": 5, "max_depth": 2}),
])
def test_feature_estimator_round_trip(family, params):
    panel = _panel()
    train = panel.period_mask(end=Period(2016, 6))
    est = make_estimator(ModelSpec.make(family, **params), seed=3).fit(panel, train)
    pred = est.predict(panel)
    assert pred.shape == panel.shape
    # rows with missing lags get no prediction
    assert np.isnan(pred[:, :3]).all() and not np.isnan(pred[:, 3:]).any()
    back = estimator_from_dict(json.loads(json.dumps(est.to_dict())))
    np.testing.assert_array_equal(back.predict(panel), pred)
    assert est.n_nonzero_params() >= 1


def test_feature_estimator_log1p_predicts_counts():
    panel = _panel(transform="log1p")
    train = panel.period_mask(end=Period(2016, 6))
    pred = make_estimator(ModelSpec.make("ridge", lam=0.1)).fit(panel, train).predict(panel)
    assert 50 < np.nanmean(pred) < 200


def test_feature_estimator_rejects_alert_labels_and_long_pct_change():
    train = np.ones((3, 30), dtype=bool)
    with pytest.raises(NonInvertibleTransform):
        make_estimator(ModelSpec.make("ridge")).fit(_panel(transform="alert_labels"), train)
    with pytest.raises(ValueError):
        make_estimator(ModelSpec.make("ridge")).fit(_panel(h=2, transform="pct_change"), train)


def test_lasso_estimator_drops_reference_dummies():
    panel = _panel()
    est = make_estimator(ModelSpec.make("lasso", lam=0.1)).fit(panel, panel.period_mask())
    assert "region_a" not in est.columns_ and "month_1" not in est.columns_
    assert "region_b" in est.columns_ and "month_2" in est.columns_


def test_model_spec_labels():
    assert ModelSpec.make("lag", n=12).label == "12-month lag"
    assert ModelSpec.make("ewm", n=8).label == "Exp. Wt. Mean (8)"
    assert ModelSpec.make("ridge", lam=10).label == "ridge(lam=10)"
    assert ModelSpec.make("ridge", name="Ridge").label == "Ridge"
    assert ModelSpec.make("ridge", lam=1, b=2) == ModelSpec.make("ridge", b=2, lam=1)
    with pytest.raises(ValueError):
        ModelSpec.make("svm")
    with pytest.raises(ValueError):
        FeatureEstimator(ModelSpec.make("lag", n=1))
