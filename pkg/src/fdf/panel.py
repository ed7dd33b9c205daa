"""Region x period panel and leakage-safe feature engineering.

Every column is stored as a ``(n_regions, n_periods)`` float array aligned to
``PanelTable.regions`` and ``PanelTable.periods``; NaN is MISSING. The row for
``(region, t)`` predicts the target at ``t`` from data at or before the
issuance period ``s = t - h``.

Column metadata decides what a model may see. Raw feature columns have
``lag=None``: they hold values *at* the target period and are never model
inputs. Lagged, neighbour and calendar columns carry a lag (calendar columns
use 0, being known in advance) and are inputs.
"""
from __future__ import annotations

import enum
import json
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import (
    ColumnCollision,
    EmptyRegistry,
    MissingAdjacency,
    NonInvertibleTransform,
    UnknownRegion,
)
from .flow_data import FlowMatrix, Period, RegionRegistry, apply_missingness, target_series

TRANSFORM_KINDS = ("identity", "log1p", "per_region_zscore", "pct_change", "alert_labels")
TARGET_KINDS = ("arrivals", "inflow", "outflow", "internal", "pairwise")


@dataclass(frozen=True)
class TargetTransform:
    kind: str = "identity"
    threshold: float = 0.30

    def __post_init__(self):
        if self.kind not in TRANSFORM_KINDS:
            raise ValueError(f"unknown transform {self.kind!r}")
        if not (self.threshold > 0 and np.isfinite(self.threshold)):
            raise ValueError("alert threshold must be positive and finite")


@dataclass(frozen=True)
class ForecastTask:
    horizon: int = 1
    target: str = "arrivals"
    transform: TargetTransform = TargetTransform()
    partner: str | None = None

    def __post_init__(self):
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ValueError(f"horizon must be a positive integer, got {self.horizon}")
        if self.target not in TARGET_KINDS:
            raise ValueError(f"unknown target kind {self.target!r}")
        if self.target == "pairwise" and self.partner is None:
            raise ValueError("pairwise target needs a partner region")


class AlertLabel(enum.IntEnum):
    LARGE_DECREASE = -1
    LITTLE_CHANGE = 0
    LARGE_INCREASE = 1


@dataclass(frozen=True)
class ColumnMeta:
    source: str
    lag: int | None = None
    origin_region: str | None = None
    is_missing_flag: bool = False
    indicator: bool = False
    # regions whose rows carry this column; None means all
    regions: frozenset | None = None

    @property
    def is_input(self) -> bool:
        return self.lag is not None

    def to_dict(self):
        d = asdict(self)
        d["regions"] = sorted(self.regions) if self.regions is not None else None
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("regions") is not None:
            d["regions"] = frozenset(d["regions"])
        return cls(**d)


RESERVED = {"region", "period", "target"}


@dataclass
class PanelTable:
    regions: list[str]
    periods: list[Period]
    target: np.ndarray
    task: ForecastTask
    columns: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict[str, ColumnMeta] = field(default_factory=dict)
    missing_proportion: dict[str, float] = field(default_factory=dict)

    @property
    def shape(self):
        return len(self.regions), len(self.periods)

    @property
    def n_rows(self) -> int:
        return len(self.regions) * len(self.periods)

    def copy(self) -> "PanelTable":
        return PanelTable(
            list(self.regions), list(self.periods), self.target.copy(), self.task,
            {k: v.copy() for k, v in self.columns.items()}, dict(self.meta),
            dict(self.missing_proportion),
        )

    def with_columns(self, new: Mapping[str, np.ndarray], meta: Mapping[str, ColumnMeta]) -> "PanelTable":
        out = self.copy()
        for name, values in new.items():
            if name in out.columns or name in RESERVED:
                raise ColumnCollision(f"column {name!r} already exists")
            values = np.asarray(values, dtype=float)
            if values.shape != self.shape:
                raise ValueError(f"column {name!r} has shape {values.shape}, expected {self.shape}")
            out.columns[name] = values
            out.meta[name] = meta[name]
        return out

    def region_index(self, region: str) -> int:
        try:
            return self.regions.index(region)
        except ValueError:
            raise UnknownRegion(region) from None

    def period_index(self, period: Period) -> int:
        k = period - self.periods[0]
        if not 0 <= k < len(self.periods):
            raise KeyError(f"period {period} outside panel")
        return k

    def has_column_for(self, region: str, column: str) -> bool:
        meta = self.meta[column]
        return meta.regions is None or region in meta.regions

    def value(self, region: str, period: Period, column: str = "target") -> float | None:
        if column != "target" and not self.has_column_for(region, column):
            return None
        arr = self.target if column == "target" else self.columns[column]
        v = arr[self.region_index(region), self.period_index(period)]
        return None if np.isnan(v) else float(v)

    def input_columns(self) -> list[str]:
        return sorted(c for c, m in self.meta.items() if m.is_input)

    def period_mask(self, start: Period | None = None, end: Period | None = None) -> np.ndarray:
        """Rows whose target period lies in ``[start, end]``."""
        lo = self.periods[0] if start is None else start
        hi = self.periods[-1] if end is None else end
        col = np.array([lo <= p <= hi for p in self.periods])
        return np.broadcast_to(col, self.shape).copy()

    def design(self, columns: Sequence[str], mask: np.ndarray) -> np.ndarray:
        """Stack ``columns`` for masked rows (region-major) into ``(n, p)``."""
        if not columns:
            return np.zeros((int(mask.sum()), 0))
        return np.column_stack([self.columns[c][mask] for c in columns])

    def row_labels(self):
        """(region, period) for each row in region-major order."""
        return [(r, p) for r in self.regions for p in self.periods]


# -- assembly ----------------------------------------------------------------

def _check_contiguous(periods):
    for a, b in zip(periods, periods[1:]):
        if b - a != 1:
            raise ValueError(f"periods must be contiguous months, gap between {a} and {b}")


def assemble_panel(flow_matrices: Sequence[FlowMatrix], feature_tables, registry: RegionRegistry,
                   task: ForecastTask, *, zero_as_missing: bool = True,
                   epoch: Period = Period(2010, 1)) -> PanelTable:
    """Build the full grid: target, raw feature columns and calendar features."""
    if len(registry) == 0:
        raise EmptyRegistry("registry has no regions")
    periods = [m.period for m in flow_matrices]
    if not periods:
        raise ValueError("no flow matrices")
    _check_contiguous(periods)
    R, T = len(registry), len(periods)

    partner = registry.index(task.partner) if task.target == "pairwise" else None
    target = np.empty((R, T))
    missing_prop = {}
    for i, region in enumerate(registry.regions):
        raw = target_series(flow_matrices, i, task.target, partner)
        target[i], missing_prop[region] = apply_missingness(raw, zero_as_missing)

    panel = PanelTable(list(registry.regions), periods, target, task,
                       missing_proportion=missing_prop)

    if isinstance(feature_tables, Mapping):
        tables = list(feature_tables.items())
    else:
        tables = [(df.attrs.get("source", f"table{k}"), df) for k, df in enumerate(feature_tables or [])]
    slot = {str(p): k for k, p in enumerate(periods)}
    new, meta = {}, {}
    for source, df in tables:
        unknown = sorted(set(df["region"]) - set(registry.regions))
        if unknown:
            raise UnknownRegion(unknown[0])
        rows = [registry.index(r) for r in df["region"]]
        cols = [slot.get(str(p)) for p in df["period"]]
        keep = [c is not None for c in cols]
        ri = np.array(rows, dtype=int)[keep]
        ci = np.array([c for c in cols if c is not None], dtype=int)
        for name in df.columns[2:]:
            if name in new or name in RESERVED:
                raise ColumnCollision(f"feature {name!r} appears in more than one table")
            arr = np.full((R, T), np.nan)
            arr[ri, ci] = df[name].to_numpy(dtype=float)[keep]
            new[name] = arr
            meta[name] = ColumnMeta(source=source)
    new_cal, meta_cal = _calendar_columns(registry.regions, periods, epoch)
    for name in new_cal:
        if name in new:
            raise ColumnCollision(f"feature {name!r} clashes with a calendar column")
    new.update(new_cal)
    meta.update(meta_cal)
    return panel.with_columns(new, meta)


def _calendar_columns(regions, periods, epoch):
    R, T = len(regions), len(periods)
    cols, meta = {}, {}
    for i, region in enumerate(regions):
        arr = np.zeros((R, T))
        arr[i] = 1.0
        cols[f"region_{region}"] = arr
        meta[f"region_{region}"] = ColumnMeta("calendar", lag=0, indicator=True)
    months = np.array([p.month for p in periods])
    for m in range(1, 13):
        cols[f"month_{m}"] = np.broadcast_to((months == m).astype(float), (R, T)).copy()
        meta[f"month_{m}"] = ColumnMeta("calendar", lag=0, indicator=True)
    since = np.array([p - epoch for p in periods], dtype=float)
    cols["months_since_epoch"] = np.broadcast_to(since, (R, T)).copy()
    meta["months_since_epoch"] = ColumnMeta("calendar", lag=0)
    return cols, meta


# -- lags, neighbours, flags, imputation -------------------------------------

def _shift(arr: np.ndarray, k: int) -> np.ndarray:
    """out[:, t] = arr[:, t - k], NaN before the start."""
    out = np.full(arr.shape, np.nan)
    if k < arr.shape[1]:
        out[:, k:] = arr[:, : arr.shape[1] - k]
    return out


def _lag_offset(task: ForecastTask, k: int) -> int:
    # lag 1 is the issuance-period value itself
    if int(k) != k or k < 1:
        raise ValueError(f"lags must be positive integers, got {k}")
    return task.horizon + k - 1


def add_target_lags(panel: PanelTable, lags: Iterable[int], task: ForecastTask | None = None) -> PanelTable:
    task = task or panel.task
    new, meta = {}, {}
    for k in lags:
        name = f"target_lag_{k}"
        new[name] = _shift(panel.target, _lag_offset(task, k))
        meta[name] = ColumnMeta("target", lag=int(k))
    return panel.with_columns(new, meta)


def add_feature_lags(panel: PanelTable, columns: Iterable[str], lags: Iterable[int],
                     task: ForecastTask | None = None) -> PanelTable:
    task = task or panel.task
    lags = list(lags)
    new, meta = {}, {}
    for c in columns:
        m = panel.meta[c]
        if m.lag is not None:
            raise ValueError(f"column {c!r} is already lagged or calendar-derived")
        for k in lags:
            name = f"{c}_lag_{k}"
            new[name] = _shift(panel.columns[c], _lag_offset(task, k))
            meta[name] = replace(m, lag=int(k))
    return panel.with_columns(new, meta)


def add_neighbor_features(panel: PanelTable, registry: RegionRegistry, columns: Iterable[str],
                          mode: str = "adjacent") -> PanelTable:
    """Copy other regions' values of ``columns`` onto each region's rows.

    A raw column contributes the neighbour's issuance-period value; an already
    lagged column is copied at the same row period. ``c_from_r`` is carried
    only by rows of regions that treat ``r`` as a neighbour.
    """
    if mode not in ("adjacent", "all"):
        raise ValueError(f"unknown neighbour mode {mode!r}")
    if mode == "adjacent" and not registry.adjacency:
        raise MissingAdjacency("adjacent neighbour features need an adjacency table")
    new, meta = {}, {}
    for c in columns:
        m = panel.meta[c]
        src = panel.columns[c] if m.lag is not None else _shift(panel.columns[c], _lag_offset(panel.task, 1))
        lag = m.lag if m.lag is not None else 1
        for j, origin in enumerate(panel.regions):
            receivers = [
                i for i, r in enumerate(panel.regions)
                if r != origin and (mode == "all" or registry.adjacent(r, origin))
            ]
            if not receivers:
                continue
            arr = np.zeros(panel.shape)
            arr[receivers] = src[j]
            name = f"{c}_from_{origin}"
            new[name] = arr
            meta[name] = replace(m, lag=lag, origin_region=origin,
                                 regions=frozenset(panel.regions[i] for i in receivers))
    return panel.with_columns(new, meta)


def _applicable(panel: PanelTable, column: str) -> np.ndarray:
    regions = panel.meta[column].regions
    rows = np.ones(len(panel.regions), dtype=bool) if regions is None else \
        np.array([r in regions for r in panel.regions])
    return np.broadcast_to(rows[:, None], panel.shape)


def add_missingness_flags(panel: PanelTable, columns: Iterable[str]) -> PanelTable:
    new, meta = {}, {}
    for c in columns:
        flag = (np.isnan(panel.columns[c]) & _applicable(panel, c)).astype(float)
        new[f"{c}_missing"] = flag
        meta[f"{c}_missing"] = replace(panel.meta[c], is_missing_flag=True, indicator=True)
    return panel.with_columns(new, meta)


def forward_fill(values: np.ndarray) -> np.ndarray:
    """Carry the last observed value forward along axis 1; leading gaps become 0."""
    filled = pd.DataFrame(values).ffill(axis=1).to_numpy()
    return np.nan_to_num(filled, nan=0.0)


def impute_forward_fill(panel: PanelTable, columns: Iterable[str]) -> PanelTable:
    out = panel.copy()
    for c in columns:
        out.columns[c] = forward_fill(out.columns[c])
    return out


# -- target transforms --------------------------------------------------------

@dataclass
class TransformState:
    kind: str
    mean: np.ndarray | None = None
    sd: np.ndarray | None = None
    base: np.ndarray | None = None


def _region_stats(target, train_mask):
    R = target.shape[0]
    mean, sd = np.zeros(R), np.ones(R)
    for i in range(R):
        vals = target[i][train_mask[i] & ~np.isnan(target[i])]
        if vals.size:
            mean[i] = vals.mean()
            s = vals.std()
            # a flat training series cannot be scaled; keep it centred only
            sd[i] = s if s > 0 else 1.0
    return mean, sd


def pct_change(target: np.ndarray) -> np.ndarray:
    prev = _shift(target, 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (target - prev) / prev
    out[(prev == 0) | np.isnan(prev)] = np.nan
    return out


def transform_target(panel: PanelTable, transform: TargetTransform,
                     train_mask: np.ndarray | None = None) -> tuple[PanelTable, TransformState]:
    kind = transform.kind
    y = panel.target
    state = TransformState(kind)
    if kind == "identity":
        new = y.copy()
    elif kind == "log1p":
        new = np.log1p(y)
    elif kind == "per_region_zscore":
        if train_mask is None:
            raise ValueError("per_region_zscore needs a training range")
        state.mean, state.sd = _region_stats(y, train_mask)
        new = (y - state.mean[:, None]) / state.sd[:, None]
    elif kind == "pct_change":
        if train_mask is None:
            raise ValueError("pct_change needs a training range")
        state.base = _shift(y, 1)
        new = pct_change(y)
    else:
        new = derive_alert_labels(panel, transform.threshold)
    out = panel.copy()
    out.target = new
    return out, state


def inverse_transform(predictions: np.ndarray, state: TransformState,
                      region_index: np.ndarray | None = None,
                      period_index: np.ndarray | None = None) -> np.ndarray:
    """Map predictions back to counts.

    ``predictions`` is either a full ``(R, T)`` grid or a flat vector whose rows
    are located by ``region_index`` (and ``period_index`` for pct_change).
    """
    p = np.asarray(predictions, dtype=float)
    if state.kind == "identity":
        return p.copy()
    if state.kind == "log1p":
        return np.expm1(p)
    if state.kind == "per_region_zscore":
        if region_index is None:
            return p * state.sd[:, None] + state.mean[:, None]
        return p * state.sd[region_index] + state.mean[region_index]
    if state.kind == "pct_change":
        base = state.base if region_index is None else state.base[region_index, period_index]
        return base * (1.0 + p)
    raise NonInvertibleTransform("alert labels cannot be mapped back to counts")


def derive_alert_labels(panel: PanelTable, threshold: float = 0.30) -> np.ndarray:
    """Codes of :class:`AlertLabel` per row; NaN when undefined.

    Changes of exactly ``+-threshold`` count as little change.
    """
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    pct = pct_change(panel.target)
    labels = np.full(pct.shape, np.nan)
    ok = ~np.isnan(pct)
    labels[ok] = AlertLabel.LITTLE_CHANGE
    labels[ok & (pct > threshold)] = AlertLabel.LARGE_INCREASE
    labels[ok & (pct < -threshold)] = AlertLabel.LARGE_DECREASE
    return labels


# -- standardisation ------------------------------------------------------------

def fit_standardizer(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Column means and population sds, ignoring NaN."""
    X = np.asarray(X, dtype=float)
    if X.shape[0] == 0:
        raise ValueError("empty training range")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        mean = np.nanmean(X, axis=0)
        sd = np.nanstd(X, axis=0)
    mean = np.nan_to_num(mean)
    sd = np.nan_to_num(sd)
    return mean, sd


def apply_standardizer(X: np.ndarray, mean: np.ndarray, sd: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    safe = np.where(sd > 0, sd, 1.0)
    Z = (X - mean) / safe
    Z[:, sd == 0] = np.where(np.isnan(X[:, sd == 0]), np.nan, 0.0)
    return Z


def standardize_features(panel: PanelTable, train_mask: np.ndarray,
                         columns: Sequence[str] | None = None):
    """z-score ``columns`` with statistics from ``train_mask`` rows only.

    Defaults to every non-indicator input column. Returns the new panel and a
    ``{column: (mean, sd)}`` map.
    """
    if columns is None:
        columns = [c for c in panel.input_columns() if not panel.meta[c].indicator]
    train_mask = np.asarray(train_mask, dtype=bool)
    if not train_mask.any():
        raise ValueError("empty training range")
    out = panel.copy()
    stats = {}
    for c in columns:
        mean, sd = fit_standardizer(panel.columns[c][train_mask][:, None])
        out.columns[c] = apply_standardizer(panel.columns[c].reshape(-1, 1), mean, sd).reshape(panel.shape)
        stats[c] = (float(mean[0]), float(sd[0]))
    return out, stats


# -- persistence ------------------------------------------------------------------

def _ordered_columns(panel: PanelTable) -> list[str]:
    feats = sorted(c for c in panel.columns if not panel.meta[c].is_missing_flag)
    flags = sorted(c for c in panel.columns if panel.meta[c].is_missing_flag)
    return feats + flags


def panel_to_frame(panel: PanelTable) -> pd.DataFrame:
    cols = _ordered_columns(panel)
    data = {
        "region": np.repeat(panel.regions, len(panel.periods)),
        "period": [str(p) for p in panel.periods] * len(panel.regions),
        "target": panel.target.ravel(),
    }
    for c in cols:
        data[c] = panel.columns[c].ravel()
    return pd.DataFrame(data)


def _repr_float(v) -> str:
    return repr(float(v))


def write_panel(panel: PanelTable, path) -> None:
    """CSV plus a ``.meta.json`` sidecar holding column metadata and the task."""
    path = Path(path)
    panel_to_frame(panel).to_csv(path, index=False, float_format=_repr_float, lineterminator="\n")
    side = {
        "schema_version": 1,
        "regions": panel.regions,
        "periods": [str(p) for p in panel.periods],
        "task": {
            "horizon": panel.task.horizon,
            "target": panel.task.target,
            "partner": panel.task.partner,
            "transform": asdict(panel.task.transform),
        },
        "missing_proportion": panel.missing_proportion,
        "columns": {c: panel.meta[c].to_dict() for c in _ordered_columns(panel)},
    }
    path.with_suffix(".meta.json").write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")


def read_panel(path) -> PanelTable:
    path = Path(path)
    side = json.loads(path.with_suffix(".meta.json").read_text())
    df = pd.read_csv(path, dtype={"region": str, "period": str})
    regions, periods = side["regions"], [Period.parse(p) for p in side["periods"]]
    shape = (len(regions), len(periods))
    t = side["task"]
    task = ForecastTask(t["horizon"], t["target"], TargetTransform(**t["transform"]), t["partner"])
    cols = {c: df[c].to_numpy(dtype=float).reshape(shape) for c in side["columns"]}
    meta = {c: ColumnMeta.from_dict(m) for c, m in side["columns"].items()}
    return PanelTable(regions, periods, df["target"].to_numpy(dtype=float).reshape(shape), task,
                      cols, meta, side["missing_proportion"])
