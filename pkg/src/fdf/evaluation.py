"""Rolling-origin splits, error metrics, common-support scoring and model selection."""
from __future__ import annotations

import csv
import io
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import (
    AllSpecsFailed,
    EmptyInput,
    EmptyTestPartition,
    FdfError,
    FdfWarning,
    LengthMismatch,
    NoCommonSupport,
    ReportError,
    TooFewPeriods,
    ZeroActualInMAPE,
)
from .flow_data import Period
from .models.zoo import ModelSpec, make_estimator
from .panel import ForecastTask, PanelTable

ALL = "ALL"
REPORT_SCHEMA_VERSION = 1


# -- splits ------------------------------------------------------------------------

@dataclass(frozen=True)
class Fold:
    train: tuple
    val: tuple


@dataclass(frozen=True)
class SplitPlan:
    folds: tuple

    def __iter__(self):
        return iter(self.folds)

    def __len__(self):
        return len(self.folds)


def _blocks(n_periods: int, k: int, first: int):
    """Contiguous validation blocks over ``[first, n_periods)``; earlier blocks absorb the remainder."""
    size, extra = divmod(n_periods - first, k)
    start = first
    for i in range(k):
        length = size + (1 if i < extra else 0)
        yield start, start + length
        start += length


def expanding_splits(periods: Sequence, k: int, min_train: int) -> SplitPlan:
    periods = list(periods)
    if k < 1 or min_train < 1:
        raise ValueError("k and min_train must be >= 1")
    if len(periods) < min_train + k:
        raise TooFewPeriods(f"{len(periods)} periods cannot hold min_train={min_train} and k={k} folds")
    return SplitPlan(tuple(
        Fold(tuple(periods[:a]), tuple(periods[a:b])) for a, b in _blocks(len(periods), k, min_train)
    ))


def sliding_splits(periods: Sequence, k: int, train_len: int) -> SplitPlan:
    periods = list(periods)
    if k < 1 or train_len < 1:
        raise ValueError("k and train_len must be >= 1")
    if len(periods) < train_len + k:
        raise TooFewPeriods(f"{len(periods)} periods cannot hold train_len={train_len} and k={k} folds")
    return SplitPlan(tuple(
        Fold(tuple(periods[a - train_len:a]), tuple(periods[a:b]))
        for a, b in _blocks(len(periods), k, train_len)
    ))


# -- metrics -------------------------------------------------------------------------

METRIC_KINDS = ("mse", "rmse", "mae", "mape", "asymmetric_se")


@dataclass(frozen=True)
class Metric:
    kind: str = "rmse"
    lambda_over: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", self.kind.lower())
        if self.kind not in METRIC_KINDS:
            raise ValueError(f"unknown metric {self.kind!r}")
        if not (self.lambda_over > 0 and math.isfinite(self.lambda_over)):
            raise ValueError("lambda_over must be positive and finite")

    @classmethod
    def coerce(cls, m) -> "Metric":
        return m if isinstance(m, Metric) else cls(m)


def evaluate_metric(preds, actuals, kind="rmse") -> float:
    """Score ``preds`` against ``actuals``; errors are ``pred - actual``."""
    metric = Metric.coerce(kind)
    p = np.asarray(preds, dtype=float).ravel()
    a = np.asarray(actuals, dtype=float).ravel()
    if p.size != a.size:
        raise LengthMismatch(f"{p.size} predictions vs {a.size} actuals")
    if p.size == 0:
        raise EmptyInput("no observations to score")
    e = p - a
    if metric.kind == "mse":
        return float(np.mean(e * e))
    if metric.kind == "rmse":
        return math.sqrt(float(np.mean(e * e)))
    if metric.kind == "mae":
        return float(np.mean(np.abs(e)))
    if metric.kind == "mape":
        if np.any(a == 0):
            raise ZeroActualInMAPE("MAPE is undefined for zero actuals")
        return float(np.mean(np.abs(e) / np.abs(a)) * 100)
    w = np.where(e > 0, metric.lambda_over, 1.0)
    return float(np.mean(w * e * e))


# -- common support and reports --------------------------------------------------------

def common_support(predictions: Mapping[str, np.ndarray], actuals, rows=None) -> np.ndarray:
    """Mask of observations where every model predicts and the actual is known."""
    a = np.asarray(actuals, dtype=float)
    mask = ~np.isnan(a)
    if rows is not None:
        mask &= np.asarray(rows, dtype=bool)
    for name in sorted(predictions):
        mask &= ~np.isnan(np.asarray(predictions[name], dtype=float))
    if not mask.any():
        raise NoCommonSupport("no observation is predicted by every model")
    return mask


@dataclass
class ScoreCell:
    model: str
    horizon: int
    region: str
    partition: str
    score: float
    support_n: int
    rank: float | None = None


@dataclass
class ScoreReport:
    metric: Metric
    cells: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    series: dict = field(default_factory=dict)
    importances: dict = field(default_factory=dict)

    @property
    def models(self) -> list[str]:
        return list(dict.fromkeys(c.model for c in self.cells))

    @property
    def horizons(self) -> list[int]:
        return sorted({c.horizon for c in self.cells})

    @property
    def regions(self) -> list[str]:
        return list(dict.fromkeys(c.region for c in self.cells if c.region != ALL))

    def get(self, model, horizon, partition="test", region=ALL) -> ScoreCell | None:
        for c in self.cells:
            if (c.model, c.horizon, c.partition, c.region) == (model, horizon, partition, region):
                return c
        return None

    def merge(self, other: "ScoreReport") -> "ScoreReport":
        meta = dict(self.metadata)
        for k, v in other.metadata.items():
            if isinstance(v, dict) and isinstance(meta.get(k), dict):
                meta[k] = {**meta[k], **v}
            else:
                meta.setdefault(k, v)
        return ScoreReport(self.metric, self.cells + other.cells, meta,
                           {**self.series, **other.series}, {**self.importances, **other.importances})

    # -- persistence

    def to_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "metric": asdict(self.metric),
            "models": self.models,
            "horizons": self.horizons,
            "regions": self.regions,
            "cells": [asdict(c) for c in self.cells],
            "metadata": self.metadata,
            "series": self.series,
            "importances": self.importances,
        }

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), indent=1, sort_keys=True, allow_nan=False) + "\n"

    @classmethod
    def from_dict(cls, d) -> "ScoreReport":
        try:
            if d.get("schema_version") != REPORT_SCHEMA_VERSION:
                raise ReportError(f"unsupported report schema {d.get('schema_version')!r}")
            cells = [ScoreCell(**c) for c in d["cells"]]
            return cls(Metric(**d["metric"]), cells, d.get("metadata", {}), d.get("series", {}),
                       d.get("importances", {}))
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise ReportError(f"malformed report: {exc}") from None

    @classmethod
    def from_json(cls, text: str) -> "ScoreReport":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ReportError(f"report is not valid JSON: {exc}") from None
        if not isinstance(d, dict):
            raise ReportError("report must be a JSON object")
        return cls.from_dict(d)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "horizon", "region", "metric", "partition", "score", "support_n", "rank"])
        for c in self.cells:
            w.writerow([c.model, c.horizon, c.region, self.metric.kind, c.partition, repr(c.score),
                        c.support_n, "" if c.rank is None else repr(c.rank)])
        return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return None if math.isnan(obj) else float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, Period):
        return str(obj)
    return obj


def _score_masked(pred, actual, mask, metric):
    p, a = pred[mask], actual[mask]
    if metric.kind == "mape":
        nz = a != 0
        dropped = int((~nz).sum())
        if dropped:
            warnings.warn(f"MAPE excluded {dropped} zero-actual observations", FdfWarning, stacklevel=3)
        p, a = p[nz], a[nz]
    return evaluate_metric(p, a, metric), int(p.size)


def score_models(predictions: Mapping[str, np.ndarray], actuals, kind="rmse", *, regions=None,
                 rows=None, horizon: int = 1, partition: str = "test") -> ScoreReport:
    """Score every model on the same support, overall and per region.

    ``regions`` labels each observation; it may be omitted for a single
    anonymous region.
    """
    metric = Metric.coerce(kind)
    a = np.asarray(actuals, dtype=float)
    preds = {m: np.asarray(v, dtype=float) for m, v in predictions.items()}
    for m, v in preds.items():
        if v.shape != a.shape:
            raise LengthMismatch(f"model {m!r}: {v.shape} predictions vs {a.shape} actuals")
    support = common_support(preds, a, rows)
    labels = None if regions is None else np.asarray(regions)
    cells = []
    for m in preds:
        score, n = _score_masked(preds[m], a, support, metric)
        cells.append(ScoreCell(m, horizon, ALL, partition, score, n))
    if labels is not None:
        for region in dict.fromkeys(labels.ravel().tolist()):
            sub = support & (labels == region)
            if not sub.any():
                continue
            for m in preds:
                score, n = _score_masked(preds[m], a, sub, metric)
                cells.append(ScoreCell(m, horizon, region, partition, score, n))
    report = ScoreReport(metric, cells)
    rank_by_region(report)
    return report


def rank_by_region(report: ScoreReport) -> dict:
    """Average ranks (1 = best) within each (region, horizon, partition).

    Ranks are also written onto the report's cells.
    """
    groups: dict = {}
    for c in report.cells:
        groups.setdefault((c.region, c.horizon, c.partition), []).append(c)
    table = {}
    for key, cells in groups.items():
        ranks = rankdata([c.score for c in cells], method="average")
        for c, r in zip(cells, ranks):
            c.rank = float(r)
        table[key] = {c.model: c.rank for c in cells}
    return table


# -- selection --------------------------------------------------------------------------

def _fold_masks(panel: PanelTable, fold: Fold):
    train = np.isin(panel.periods, fold.train)
    val = np.isin(panel.periods, fold.val)
    return np.broadcast_to(train, panel.shape).copy(), np.broadcast_to(val, panel.shape).copy()


def _fit_predict(factory, panel, train_mask):
    est = factory()
    est.fit(panel, train_mask)
    return est.predict(panel), est.n_nonzero_params()


def _cv_scores(factories, panel, plan, metric, threads=1):
    """Per-fold common-support validation scores for each candidate factory.

    Returns ``(scores[i] list or None when a fit failed, n_nonzero[i])``.
    """
    jobs = [(i, f) for f in range(len(plan)) for i in range(len(factories))]
    masks = [_fold_masks(panel, fold) for fold in plan]

    def run(job):
        i, f = job
        try:
            return _fit_predict(factories[i], panel, masks[f][0])
        except FdfError:
            return None
        except (ValueError, np.linalg.LinAlgError):
            return None

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]

    out = {job: res for job, res in zip(jobs, results)}
    n = len(factories)
    failed = {i for (i, f), res in out.items() if res is None}
    scores = [None if i in failed else [] for i in range(n)]
    nnz = [0] * n
    alive = [i for i in range(n) if i not in failed]
    for f in range(len(plan)):
        val_mask = masks[f][1]
        preds = {i: out[(i, f)][0] for i in alive}
        try:
            support = common_support(preds, panel.target, val_mask)
        except NoCommonSupport:
            support = None
        for i in alive:
            nnz[i] += out[(i, f)][1]
            if support is None:
                scores[i].append(math.nan)
            else:
                scores[i].append(_score_masked(preds[i], panel.target, support, metric)[0])
    return scores, nnz


@dataclass
class CVResult:
    best: ModelSpec
    fold_scores: dict
    mean_scores: dict
    n_nonzero: dict


def _check_task(panel: PanelTable, task: ForecastTask | None) -> PanelTable:
    if task is None or task == panel.task:
        return panel
    if task.horizon != panel.task.horizon:
        raise ValueError("task horizon differs from the horizon the panel features were built for")
    out = panel.copy()
    out.task = task
    return out


def cross_validate(grid: Sequence[ModelSpec], panel: PanelTable, task: ForecastTask | None,
                   plan: SplitPlan, kind="rmse", *, seed: int = 42, threads: int = 1) -> CVResult:
    """Pick the spec with the lowest mean validation score.

    Ties go to the spec with fewer nonzero fitted parameters, then to the
    lexicographically smaller spec key.
    """
    if not grid:
        raise ValueError("empty estimator grid")
    metric = Metric.coerce(kind)
    panel = _check_task(panel, task)
    factories = [lambda s=s: make_estimator(s, seed) for s in grid]
    scores, nnz = _cv_scores(factories, panel, plan, metric, threads)
    fold_scores, means, nonzero = {}, {}, {}
    ranked = []
    for spec, sc, nz in zip(grid, scores, nnz):
        key = spec.key()
        if sc is None or any(math.isnan(v) for v in sc):
            continue
        fold_scores[key], means[key], nonzero[key] = sc, float(np.mean(sc)), nz
        ranked.append((means[key], nz, key, spec))
    if not ranked:
        raise AllSpecsFailed("every candidate spec failed to fit or score")
    ranked.sort(key=lambda r: r[:3])
    return CVResult(ranked[0][3], fold_scores, means, nonzero)


def forward_select(candidates: Sequence[str], spec: ModelSpec, panel: PanelTable,
                   task: ForecastTask | None, plan: SplitPlan, kind="rmse", max_features: int | None = None,
                   *, seed: int = 42, threads: int = 1) -> list[str]:
    """Greedy forward selection on mean validation score."""
    metric = Metric.coerce(kind)
    panel = _check_task(panel, task)
    pool = sorted(dict.fromkeys(candidates))
    limit = len(pool) if max_features is None else max_features
    selected: list[str] = []
    current = None
    while len(selected) < limit and pool:
        sets = [list(selected)] + [selected + [c] for c in pool]
        factories = [lambda cols=cols: make_estimator(spec, seed, cols) for cols in sets]
        scores, _ = _cv_scores(factories, panel, plan, metric, threads)
        means = [math.inf if s is None or any(math.isnan(v) for v in s) else float(np.mean(s)) for s in scores]
        current = means[0]
        best_i = min(range(1, len(sets)), key=lambda i: (means[i], pool[i - 1]))
        if not means[best_i] < current:
            break
        selected.append(pool.pop(best_i - 1))
    return selected


def holdout_evaluate(panel: PanelTable, task: ForecastTask | None, train_end: Period,
                     models: Sequence[ModelSpec], kind="rmse", *, seed: int = 42,
                     threads: int = 1, fitted: dict | None = None) -> ScoreReport:
    """Fit on target periods <= ``train_end``; score train and test partitions.

    Lag benchmarks shorter than the horizon are skipped and listed under
    ``metadata["omitted"]``. When ``fitted`` is a dict it receives the fitted
    estimators keyed by model label.
    """
    metric = Metric.coerce(kind)
    panel = _check_task(panel, task)
    h = panel.task.horizon
    if not panel.periods[0] <= train_end <= panel.periods[-1]:
        raise ValueError(f"train_end {train_end} outside panel range")
    train_mask = panel.period_mask(end=train_end)
    test_mask = ~train_mask
    if not (test_mask & ~np.isnan(panel.target)).any():
        raise EmptyTestPartition(f"no observed targets after {train_end}")

    labels = [m.label for m in models]
    if len(set(labels)) != len(labels):
        raise ValueError("model labels must be unique")
    feasible, omitted = [], []
    for spec in models:
        est = make_estimator(spec, seed)
        (feasible if est.feasible(h) else omitted).append((spec, est))

    def run(item):
        spec, est = item
        est.fit(panel, train_mask)
        return est.predict(panel)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            grids = list(pool.map(run, feasible))
    else:
        grids = [run(item) for item in feasible]
    preds = {spec.label: g for (spec, _), g in zip(feasible, grids)}
    if fitted is not None:
        fitted.update({spec.label: est for spec, est in feasible})

    region_labels = np.broadcast_to(np.array(panel.regions, dtype=object)[:, None], panel.shape)
    report = None
    for partition, mask in (("train", train_mask), ("test", test_mask)):
        part = score_models(preds, panel.target, metric, regions=region_labels, rows=mask,
                            horizon=h, partition=partition)
        report = part if report is None else report.merge(part)

    report.metadata = {
        "train_end": str(train_end),
        "periods": [str(panel.periods[0]), str(panel.periods[-1])],
        "seed": seed,
        "omitted": {str(h): [spec.label for spec, _ in omitted]},
        "specs": {str(h): {spec.label: spec.to_dict() for spec, _ in feasible}},
    }
    report.series = {str(h): {
        "periods": [str(p) for p in panel.periods],
        "actual": {r: panel.target[i].tolist() for i, r in enumerate(panel.regions)},
        "predictions": {m: {r: g[i].tolist() for i, r in enumerate(panel.regions)} for m, g in preds.items()},
    }}
    imps = {}
    for spec, est in feasible:
        imp = est.importances()
        if imp:
            top = sorted(imp.items(), key=lambda kv: (-kv[1], kv[0]))[:10]
            imps[spec.label] = dict(top)
    if imps:
        report.importances = {str(h): imps}
    return report
