import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fdf.errors import ColumnCollision, EmptyRegistry, MissingAdjacency, NonInvertibleTransform
from fdf.flow_data import FlowMatrix, Period, RegionRegistry
from fdf.panel import (
    AlertLabel,
    ColumnMeta,
    ForecastTask,
    TargetTransform,
    add_feature_lags,
    add_missingness_flags,
    add_neighbor_features,
    add_target_lags,
    apply_standardizer,
    assemble_panel,
    derive_alert_labels,
    fit_standardizer,
    forward_fill,
    impute_forward_fill,
    inverse_transform,
    panel_to_frame,
    read_panel,
    standardize_features,
    transform_target,
    write_panel,
)

START = Period(2019, 1)


def diag_matrices(series_by_region, start=START):
    """Flow matrices whose arrivals equal the given per-region series (internal only)."""
    R = len(series_by_region)
    T = len(series_by_region[0])
    out = []
    for t in range(T):
        m = np.zeros((R, R), dtype=np.int64)
        for i in range(R):
            m[i, i] = series_by_region[i][t]
        out.append(FlowMatrix(start + t, m))
    return out


def make_panel(series_by_region, h=1, tables=(), zero_as_missing=False, adjacency=(), regions=None):
    regions = regions or [f"r{i + 1}" for i in range(len(series_by_region))]
    reg = RegionRegistry(regions, {frozenset(p) for p in adjacency})
    task = ForecastTask(h)
    panel = assemble_panel(diag_matrices(series_by_region), list(tables), reg, task,
                           zero_as_missing=zero_as_missing)
    return panel, reg


def feature_table(rows, name="f"):
    df = pd.DataFrame(rows, columns=["region", "period", name])
    df.attrs["source"] = "test"
    return df


# -- assembly ------------------------------------------------------------------

def test_grid_is_complete_and_unmatched_feature_cells_missing():
    tbl = feature_table([("r1", "2019-01", 1.0), ("r1", "2019-02", 2.0),
                         ("r2", "2019-01", 3.0), ("r2", "2019-02", 4.0)])
    panel, _ = make_panel([[1, 2, 3], [4, 5, 6]], tables=[tbl])
    assert panel.n_rows == 6
    assert len(panel_to_frame(panel)) == 6
    assert int(np.isnan(panel.columns["f"]).sum()) == 2
    assert panel.value("r2", Period(2019, 3), "f") is None
    # raw features hold values at the target period and are not model inputs
    assert "f" not in panel.input_columns()


def test_calendar_columns():
    reg = RegionRegistry(["a"])
    mats = [FlowMatrix(Period(2019, 3), [[1]]), FlowMatrix(Period(2019, 4), [[1]])]
    panel = assemble_panel(mats, [], reg, ForecastTask(1), epoch=Period(2010, 1))
    for m in range(1, 13):
        assert panel.value("a", Period(2019, 3), f"month_{m}") == (1.0 if m == 3 else 0.0)
    assert panel.value("a", Period(2019, 3), "region_a") == 1.0

    mats = [FlowMatrix(Period(2011, 1), [[1]])]
    panel = assemble_panel(mats, [], reg, ForecastTask(1), epoch=Period(2010, 1))
    assert panel.value("a", Period(2011, 1), "months_since_epoch") == 12.0


def test_assembly_errors():
    with pytest.raises(EmptyRegistry):
        assemble_panel([FlowMatrix(START, np.zeros((0, 0)))], [], RegionRegistry([]), ForecastTask(1))
    a = feature_table([("r1", "2019-01", 1.0)], "x")
    b = feature_table([("r1", "2019-01", 2.0)], "x")
    with pytest.raises(ColumnCollision):
        make_panel([[1, 2]], tables=[a, b])
    clash = feature_table([("r1", "2019-01", 1.0)], "month_1")
    with pytest.raises(ColumnCollision):
        make_panel([[1, 2]], tables=[clash])


def test_zero_as_missing_records_proportion():
    panel, _ = make_panel([[0, 100, 0, 50]], zero_as_missing=True)
    assert panel.missing_proportion["r1"] == 0.5
    assert np.isnan(panel.target[0, 0]) and panel.target[0, 1] == 100


# -- lags ------------------------------------------------------------------------

def test_target_lag_indexing():
    y = [10, 20, 30, 40, 50]
    panel, _ = make_panel([y], h=1)
    p = add_target_lags(panel, [1, 2])
    t5 = START + 4
    assert p.value("r1", t5, "target_lag_1") == 40
    assert p.value("r1", t5, "target_lag_2") == 30

    panel3, _ = make_panel([y], h=3)
    p3 = add_target_lags(panel3, [1])
    assert p3.value("r1", t5, "target_lag_1") == 20
    # beyond the start of history
    assert p3.value("r1", START + 2, "target_lag_1") is None


def test_feature_lag_indexing():
    tbl = feature_table([("r1", str(START + k), v) for k, v in enumerate([1.0, 2.0, 3.0])])
    panel, _ = make_panel([[1, 1, 1]], tables=[tbl])
    p = add_feature_lags(panel, ["f"], [1, 5])
    assert p.value("r1", START + 2, "f_lag_1") == 2.0
    assert p.value("r1", START + 2, "f_lag_5") is None
    assert p.meta["f_lag_1"].lag == 1 and p.meta["f_lag_1"].is_input
    with pytest.raises(ValueError):
        add_feature_lags(p, ["f_lag_1"], [1])
    with pytest.raises(ValueError):
        add_target_lags(panel, [0])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(0, 11), st.integers(0, 2 ** 32 - 1))
def test_lags_ignore_values_after_issuance(h, row, seed):
    rng = np.random.default_rng(seed)
    y = rng.integers(1, 100, size=(2, 12))
    f = rng.normal(size=(2, 12))

    def build(y, f):
        rows = [(f"r{i + 1}", str(START + t), f[i, t]) for i in range(2) for t in range(12)]
        panel, reg = make_panel(y.tolist(), h=h, tables=[feature_table(rows)], adjacency=[("r1", "r2")])
        p = add_target_lags(panel, [1, 2, 3])
        p = add_feature_lags(p, ["f"], [1, 2])
        return add_neighbor_features(p, reg, ["f", "target_lag_1"], "adjacent")

    base = build(y, f)
    s = row - h
    y2, f2 = y.copy(), f.copy()
    y2[:, s + 1:] = rng.integers(1, 100, size=y2[:, s + 1:].shape)
    f2[:, s + 1:] = rng.normal(size=f2[:, s + 1:].shape)
    other = build(y2, f2)
    for c in base.input_columns():
        np.testing.assert_array_equal(base.columns[c][:, row], other.columns[c][:, row])


# -- neighbours ---------------------------------------------------------------------

def test_neighbor_features_adjacent_and_all():
    series = [[1, 2, 3], [10, 20, 30], [100, 200, 300]]
    panel, reg = make_panel(series, adjacency=[("r1", "r2")])
    p = add_target_lags(panel, [1])
    adj = add_neighbor_features(p, reg, ["target_lag_1"], "adjacent")
    assert adj.value("r1", START + 2, "target_lag_1_from_r2") == 20
    assert adj.value("r2", START + 2, "target_lag_1_from_r1") == 2
    assert "target_lag_1_from_r3" not in adj.columns
    assert not adj.has_column_for("r3", "target_lag_1_from_r1")
    assert adj.value("r3", START + 2, "target_lag_1_from_r1") is None

    full = add_neighbor_features(p, reg, ["target_lag_1"], "all")
    added = [c for c in full.columns if "_from_" in c]
    assert len(added) == 3
    for r in reg.regions:
        assert sum(full.has_column_for(r, c) for c in added) == 2


def test_neighbor_raw_column_uses_issuance_value():
    rows = [(r, str(START + t), v) for r, vals in (("r1", [1, 2, 3]), ("r2", [7, 8, 9]))
            for t, v in enumerate(vals)]
    panel, reg = make_panel([[1, 1, 1], [1, 1, 1]], tables=[feature_table(rows, "conflict")],
                            adjacency=[("r1", "r2")])
    p = add_neighbor_features(panel, reg, ["conflict"], "adjacent")
    assert p.value("r1", START + 2, "conflict_from_r2") == 8
    assert p.meta["conflict_from_r2"].origin_region == "r2"
    assert p.meta["conflict_from_r2"].lag == 1


def test_neighbor_adjacent_needs_adjacency():
    panel, reg = make_panel([[1, 2], [3, 4]])
    with pytest.raises(MissingAdjacency):
        add_neighbor_features(panel, reg, ["months_since_epoch"], "adjacent")


# -- flags and imputation --------------------------------------------------------------

def test_missingness_flags():
    tbl = feature_table([("r1", str(START), np.nan), ("r1", str(START + 1), 0.0),
                         ("r1", str(START + 2), 4.0)])
    panel, _ = make_panel([[1, 1, 1]], tables=[tbl])
    p = add_missingness_flags(add_feature_lags(panel, ["f"], [1]), ["f", "f_lag_1"])
    np.testing.assert_array_equal(p.columns["f_missing"][0], [1, 0, 0])
    np.testing.assert_array_equal(p.columns["f_lag_1_missing"][0], [1, 1, 0])
    assert p.meta["f_missing"].is_missing_flag
    # originals untouched, flags never missing
    assert np.isnan(p.columns["f"][0, 0])
    assert not np.isnan(p.columns["f_lag_1_missing"]).any()
    assert set(np.unique(p.columns["f_lag_1_missing"])) <= {0.0, 1.0}


def test_forward_fill_fixture():
    nan = np.nan
    out = forward_fill(np.array([[nan, 5, nan, nan, 7]]))
    assert out.tolist() == [[0, 5, 5, 5, 7]]
    assert forward_fill(np.full((1, 4), nan)).tolist() == [[0, 0, 0, 0]]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.one_of(st.none(), st.floats(-1e6, 1e6)), min_size=1, max_size=20), st.data())
def test_forward_fill_idempotent_and_causal(values, data):
    x = np.array([[np.nan if v is None else v for v in values]])
    once = forward_fill(x)
    np.testing.assert_array_equal(forward_fill(once), once)
    p = data.draw(st.integers(0, x.shape[1] - 1))
    y = x.copy()
    y[0, p + 1:] = 123.0
    np.testing.assert_array_equal(forward_fill(y)[0, : p + 1], once[0, : p + 1])


def test_impute_panel_columns():
    tbl = feature_table([("r1", str(START + 1), 5.0)])
    panel, _ = make_panel([[1, 1, 1]], tables=[tbl])
    p = impute_forward_fill(panel, ["f"])
    assert p.columns["f"][0].tolist() == [0, 5, 5]
    assert np.isnan(panel.columns["f"][0, 0])


# -- transforms ------------------------------------------------------------------------

def test_log1p_and_log_scale_identity():
    panel, _ = make_panel([[999, 1]])
    out, state = transform_target(panel, TargetTransform("log1p"))
    assert out.target[0, 0] == pytest.approx(math.log(1000), abs=1e-12)
    # equal multiplicative errors are equal on the log scale
    assert abs(math.log10(1000) - math.log10(100)) == pytest.approx(abs(math.log10(100) - math.log10(10)))
    np.testing.assert_allclose(inverse_transform(out.target, state), panel.target, atol=1e-9)


def test_per_region_zscore():
    panel, _ = make_panel([[50, 150, 150], [1, 2, 3]])
    train = np.zeros(panel.shape, dtype=bool)
    train[:, :2] = True
    out, state = transform_target(panel, TargetTransform("per_region_zscore"), train)
    assert state.mean[0] == 100 and state.sd[0] == 50
    assert out.target[0, 2] == pytest.approx(1.0)
    back = inverse_transform(out.target, state)
    np.testing.assert_allclose(back, panel.target, atol=1e-9)
    # flat vector form
    flat = inverse_transform(np.array([1.0]), state, region_index=np.array([0]))
    assert flat[0] == pytest.approx(150)
    with pytest.raises(ValueError):
        transform_target(panel, TargetTransform("per_region_zscore"))


def test_zscore_ignores_test_rows():
    panel, _ = make_panel([[50, 150, 7]])
    other, _ = make_panel([[50, 150, 9999]])
    train = np.array([[True, True, False]])
    _, s1 = transform_target(panel, TargetTransform("per_region_zscore"), train)
    _, s2 = transform_target(other, TargetTransform("per_region_zscore"), train)
    assert s1.mean[0] == s2.mean[0] and s1.sd[0] == s2.sd[0]


def test_pct_change():
    panel, _ = make_panel([[100, 140, 0, 5]])
    out, state = transform_target(panel, TargetTransform("pct_change"), np.ones(panel.shape, bool))
    assert np.isnan(out.target[0, 0])
    assert out.target[0, 1] == pytest.approx(0.40)
    assert np.isnan(out.target[0, 3])  # zero baseline
    assert inverse_transform(out.target, state)[0, 1] == pytest.approx(140)


def test_alert_labels():
    panel, _ = make_panel([[100, 140], [100, 80], [100, 60], [100, 130], [100, 70]])
    labels = derive_alert_labels(panel, 0.30)[:, 1]
    assert labels.tolist() == [AlertLabel.LARGE_INCREASE, AlertLabel.LITTLE_CHANGE,
                               AlertLabel.LARGE_DECREASE, AlertLabel.LITTLE_CHANGE,
                               AlertLabel.LITTLE_CHANGE]
    assert np.isnan(derive_alert_labels(panel, 0.3)[:, 0]).all()
    out, state = transform_target(panel, TargetTransform("alert_labels", 0.3))
    with pytest.raises(NonInvertibleTransform):
        inverse_transform(out.target, state)
    with pytest.raises(ValueError):
        TargetTransform("alert_labels", 0.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 10 ** 5), min_size=2, max_size=12), st.floats(0.01, 2.0))
def test_alert_labels_partition(values, threshold):
    panel, _ = make_panel([values])
    labels = derive_alert_labels(panel, threshold)[0, 1:]
    assert set(labels.tolist()) <= {-1.0, 0.0, 1.0}


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 10 ** 6), min_size=3, max_size=12))
def test_invertible_round_trips(values):
    panel, _ = make_panel([values])
    train = np.ones(panel.shape, dtype=bool)
    for kind in ("identity", "log1p", "per_region_zscore"):
        out, state = transform_target(panel, TargetTransform(kind), train)
        np.testing.assert_allclose(inverse_transform(out.target, state), panel.target, rtol=0, atol=1e-9 * max(values + [1]))


# -- standardisation ----------------------------------------------------------------------

def test_standardizer_population_sd():
    mean, sd = fit_standardizer(np.array([[0.0], [10.0]]))
    assert mean[0] == 5 and sd[0] == 5
    assert apply_standardizer(np.array([[20.0]]), mean, sd)[0, 0] == 3.0


def test_standardizer_constant_column_and_idempotence():
    X = np.array([[3.0, 1.0], [3.0, 2.0], [3.0, 6.0]])
    mean, sd = fit_standardizer(X)
    Z = apply_standardizer(X, mean, sd)
    assert (Z[:, 0] == 0).all()
    m2, s2 = fit_standardizer(Z[:, 1:])
    assert abs(m2[0]) < 1e-12 and abs(s2[0] - 1) < 1e-12


def test_standardize_features_uses_train_rows_only():
    panel, _ = make_panel([[0, 10, 20]])
    p = add_target_lags(panel, [1])
    p.columns["target_lag_1"] = np.array([[0.0, 10.0, 20.0]])
    train = np.array([[True, True, False]])
    out, stats = standardize_features(p, train, ["target_lag_1"])
    assert stats["target_lag_1"] == (5.0, 5.0)
    assert out.columns["target_lag_1"].tolist() == [[-1.0, 1.0, 3.0]]
    with pytest.raises(ValueError):
        standardize_features(p, np.zeros(p.shape, bool), ["target_lag_1"])


# -- persistence ---------------------------------------------------------------------------

def test_panel_csv_round_trip(tmp_path):
    rows = [(r, str(START + t), v) for r in ("r1", "r2") for t, v in enumerate([0.1, np.nan, 1 / 3])]
    panel, reg = make_panel([[1, 2, 3], [4, 5, 6]], tables=[feature_table(rows)], adjacency=[("r1", "r2")])
    p = add_target_lags(panel, [1])
    p = add_neighbor_features(p, reg, ["target_lag_1"], "adjacent")
    p = add_missingness_flags(p, ["target_lag_1"])
    path = tmp_path / "panel.csv"
    write_panel(p, path)
    back = read_panel(path)
    assert back.regions == p.regions and back.periods == p.periods
    assert back.meta == p.meta
    np.testing.assert_array_equal(back.target, p.target)
    for c in p.columns:
        np.testing.assert_array_equal(back.columns[c], p.columns[c])

    header = path.read_text().splitlines()[0].split(",")
    assert header[:3] == ["region", "period", "target"]
    flags = [h for h in header if h.endswith("_missing")]
    assert header[-len(flags):] == flags
    feats = header[3:-len(flags)]
    assert feats == sorted(feats)


def test_column_meta_round_trip():
    m = ColumnMeta("x", lag=2, origin_region="a", regions=frozenset({"b", "c"}))
    assert ColumnMeta.from_dict(m.to_dict()) == m


def test_task_validation():
    with pytest.raises(ValueError):
        ForecastTask(0)
    with pytest.raises(ValueError):
        ForecastTask(1, "pairwise")
    with pytest.raises(ValueError):
        TargetTransform("min_max")
