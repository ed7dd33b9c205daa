"""Synthetic displacement datasets with known structure.

Scenarios:

``seasonal``
    arrivals follow a per-region 12-month sinusoid with multiplicative noise.
``feature_driven``
    arrivals are a linear function of the previous month's conflict incident
    count plus Gaussian noise; incidents follow a log-AR(1) Poisson process.
``bursty``
    Poisson arrivals with rare multiplicative spikes.

Arrivals are split into internal displacement and inflows from other regions
(adjacent origins weighted up), so the arrivals aggregate of the written flows
reproduces the generated series exactly. A small fraction of region-months is
recorded as zero to mimic enumerator gaps.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .flow_data import Period
from .models.rng import substream

SCENARIOS = ("seasonal", "feature_driven", "bursty")
EVENT_KINDS = ("battle", "explosion", "riot", "violence_against_civilians")


@dataclass
class SynthParams:
    seasonal_amp: tuple = (0.4, 0.8)
    seasonal_noise: float = 0.08
    conflict_mean: float = 8.0
    conflict_ar: float = 0.8
    conflict_sigma: float = 0.5
    conflict_coef: float = 40.0
    conflict_base: tuple = (100.0, 400.0)
    driven_noise: float = 60.0
    burst_prob: float = 0.03
    burst_mult: tuple = (4.0, 10.0)
    internal_share: tuple = (0.4, 0.85)
    adjacent_weight: float = 1.0
    distant_weight: float = 0.1
    dropout: float = 0.03
    background_incidents: float = 4.0
    feature_missing: float = 0.05
    duplicate_share: float = 0.1


@dataclass
class SynthData:
    regions: list
    adjacency: list
    distances: dict
    periods: list
    arrivals: np.ndarray
    flows: list
    events: list
    rainfall: np.ndarray
    truth: dict = field(default_factory=dict)


def _layout(rng, n):
    names = [f"R{i + 1:02d}" for i in range(n)]
    adjacency = {tuple(sorted((i, (i + 1) % n))) for i in range(n) if n > 1}
    for i in range(0, n - 2, 3):
        adjacency.add((i, i + 2))
    angle = 2 * np.pi * np.arange(n) / n + rng.uniform(-0.1, 0.1, n)
    radius = rng.uniform(250, 400, n)
    xy = np.column_stack([radius * np.cos(angle), radius * np.sin(angle)])
    distances = {}
    for i in range(n):
        for j in range(n):
            if i != j:
                d = float(np.hypot(*(xy[i] - xy[j])))
                distances[(names[i], names[j])] = round(d * rng.uniform(1.0, 1.15), 1)
    return names, sorted(adjacency), distances


def generate(seed: int, n_regions: int, n_periods: int, scenario: str,
             start: Period = Period(2010, 1), params: SynthParams | None = None) -> SynthData:
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}; choose from {', '.join(SCENARIOS)}")
    if n_regions < 2:
        raise ValueError("need at least 2 regions")
    if n_periods < 24:
        raise ValueError("need at least 24 periods")
    prm = params or SynthParams()
    rng = substream(seed, SCENARIOS.index(scenario))
    R, T = n_regions, n_periods
    names, adjacency, distances = _layout(rng, R)
    periods = [start + k for k in range(T)]
    months = np.array([p.month for p in periods])
    truth = {"scenario": scenario, "seed": seed, "n_regions": R, "n_periods": T, "start": str(start),
             "params": {k: v for k, v in vars(prm).items()}}

    if scenario == "feature_driven":
        mu = np.log(prm.conflict_mean)
        log_lam = np.empty((R, T + 1))
        log_lam[:, 0] = mu + rng.normal(0, prm.conflict_sigma / np.sqrt(1 - prm.conflict_ar ** 2), R)
        for t in range(1, T + 1):
            log_lam[:, t] = mu + prm.conflict_ar * (log_lam[:, t - 1] - mu) + rng.normal(0, prm.conflict_sigma, R)
        # column 0 is the month before the first period
        incidents_ext = rng.poisson(np.exp(log_lam))
        incidents = incidents_ext[:, 1:]
        base = rng.uniform(*prm.conflict_base, R)
        level = base[:, None] + prm.conflict_coef * incidents_ext[:, :-1] + rng.normal(0, prm.driven_noise, (R, T))
        truth["generator"] = {
            "formula": "arrivals[t] = base[r] + coef * incidents[t-1] + N(0, noise^2)",
            "coef": prm.conflict_coef, "noise_sd": prm.driven_noise,
            "base": dict(zip(names, base.tolist())),
            "incidents_before_start": dict(zip(names, incidents_ext[:, 0].tolist())),
        }
    else:
        incidents = rng.poisson(prm.background_incidents, (R, T))
        base = np.exp(rng.uniform(np.log(300), np.log(3000), R))
        if scenario == "seasonal":
            amp = rng.uniform(*prm.seasonal_amp, R)
            phase = rng.integers(0, 12, R)
            cycle = np.sin(2 * np.pi * (months[None, :] + phase[:, None]) / 12)
            level = base[:, None] * (1 + amp[:, None] * cycle) * (1 + prm.seasonal_noise * rng.normal(size=(R, T)))
            truth["generator"] = {
                "formula": "arrivals[t] = base[r] * (1 + amp[r] sin(2 pi (month + phase[r]) / 12)) * (1 + noise N(0,1))",
                "noise": prm.seasonal_noise,
                "base": dict(zip(names, base.tolist())), "amp": dict(zip(names, amp.tolist())),
                "phase": dict(zip(names, phase.tolist())),
            }
        else:
            spikes = rng.random((R, T)) < prm.burst_prob
            mult = np.where(spikes, rng.uniform(*prm.burst_mult, (R, T)), 1.0)
            level = rng.poisson(base[:, None] * mult).astype(float)
            truth["generator"] = {
                "formula": "arrivals[t] = Poisson(base[r] * (spike ? U(lo, hi) : 1))",
                "base": dict(zip(names, base.tolist())),
                "spikes": [[names[i], str(periods[t])] for i, t in zip(*np.nonzero(spikes))],
            }

    arrivals = np.maximum(np.rint(level), 1).astype(np.int64)
    gaps = rng.random((R, T)) < prm.dropout
    arrivals[gaps] = 0
    truth["recorded_zero"] = [[names[i], str(periods[t])] for i, t in zip(*np.nonzero(gaps))]

    share = rng.uniform(*prm.internal_share, R)
    truth["internal_share"] = dict(zip(names, share.tolist()))
    adj_set = {frozenset(p) for p in adjacency}
    weights = np.array([[0.0 if i == j else (prm.adjacent_weight if frozenset((i, j)) in adj_set
                                             else prm.distant_weight) for i in range(R)] for j in range(R)])
    weights /= weights.sum(axis=1, keepdims=True)

    flows = []
    for t, p in enumerate(periods):
        for j in range(R):
            total = int(arrivals[j, t])
            if total == 0:
                continue
            internal = int(rng.binomial(total, share[j]))
            counts = rng.multinomial(total - internal, weights[j])
            counts[j] = internal
            for i in np.flatnonzero(counts):
                c = int(counts[i])
                if c > 1 and rng.random() < prm.duplicate_share:
                    part = int(rng.integers(1, c))
                    flows.append((str(p), names[i], names[j], part))
                    flows.append((str(p), names[i], names[j], c - part))
                else:
                    flows.append((str(p), names[i], names[j], c))

    events = []
    for i in range(R):
        for t, p in enumerate(periods):
            for _ in range(int(incidents[i, t])):
                day = int(rng.integers(1, 29))
                kind = EVENT_KINDS[int(rng.integers(len(EVENT_KINDS)))]
                events.append((f"{p}-{day:02d}", names[i], kind, int(rng.poisson(1.0))))
    events.sort()

    rain_phase = rng.integers(0, 12, R)
    rainfall = 50 + 40 * np.sin(2 * np.pi * (months[None, :] + rain_phase[:, None]) / 12) + rng.normal(0, 10, (R, T))
    rainfall = np.round(np.maximum(rainfall, 0), 1)
    rainfall[rng.random((R, T)) < prm.feature_missing] = np.nan

    return SynthData(names, [(names[a], names[b]) for a, b in adjacency], distances, periods,
                     arrivals, flows, events, rainfall, truth)


def default_config(data: SynthData, horizons=(1, 3)) -> dict:
    """Pipeline config for a generated dataset: last 24 months held out."""
    T = len(data.periods)
    test_len = min(24, T // 4)
    train_end = data.periods[T - test_len - 1]
    n_train = T - test_len
    min_train = max(12, n_train // 2)
    k = max(1, min(5, n_train - min_train))
    return {
        "schema_version": 1,
        "paths": {
            "flows": "flows.csv", "regions": "regions.csv", "adjacency": "adjacency.csv",
            "distances": "distances.csv", "events": "events.csv", "features": ["rainfall.csv"],
        },
        "task": {"target": "arrivals", "horizons": list(horizons), "transform": "identity",
                 "alert_threshold": 0.3},
        "panel": {"zero_as_missing": True, "target_lags": [1, 2, 3, 6, 12], "feature_lags": [1, 2],
                  "lag_columns": None, "neighbor_mode": "adjacent", "neighbor_columns": ["incidents"],
                  "impute": True, "epoch": "2010-01"},
        "models": {
            "seed": 42,
            "benchmarks": [
                {"kind": "lag", "n": 1}, {"kind": "lag", "n": 12}, {"kind": "expanding_mean"},
                {"kind": "ewm", "n": 8}, {"kind": "ewm", "n": 23}, {"kind": "rolling_mean", "n": 12},
            ],
            "grid": {
                "ridge": [{"lam": v} for v in (0.1, 10.0, 1000.0)],
                "lasso": [{"lam": v} for v in (1.0, 10.0, 100.0)],
                "tree": [{"max_depth": d, "min_samples_leaf": 10} for d in (3, 5)],
                "forest": [{"n_trees": 20, "max_features": "sqrt", "max_depth": 8, "min_samples_leaf": 5}],
                "gbm": [{"n_rounds": 50, "learning_rate": 0.1, "max_depth": 2}],
            },
        },
        "evaluation": {"cv": "expanding", "k": k, "min_train": min_train, "train_len": min_train,
                       "metric": "rmse", "lambda_over": 1.0, "train_end": str(train_end)},
    }


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_dataset(out_dir, seed: int, n_regions: int, n_periods: int, scenario: str,
                  params: SynthParams | None = None) -> dict:
    """Write all input CSVs, ``ground_truth.json`` and a ready-to-run ``config.json``."""
    data = generate(seed, n_regions, n_periods, scenario, params=params)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "regions.csv", ["region"], [[r] for r in data.regions])
    _write_csv(out / "adjacency.csv", ["region_a", "region_b"], data.adjacency)
    _write_csv(out / "distances.csv", ["origin", "destination", "km"],
               [[a, b, repr(km)] for (a, b), km in sorted(data.distances.items())])
    _write_csv(out / "flows.csv", ["period", "origin", "destination", "count"], data.flows)
    _write_csv(out / "events.csv", ["date", "region", "kind", "fatalities"], data.events)
    _write_csv(out / "rainfall.csv", ["period", "region", "rainfall"], [
        [str(p), r, "" if np.isnan(data.rainfall[i, t]) else repr(float(data.rainfall[i, t]))]
        for t, p in enumerate(data.periods) for i, r in enumerate(data.regions)
    ])
    (out / "ground_truth.json").write_text(json.dumps(data.truth, indent=1, sort_keys=True) + "\n")
    (out / "config.json").write_text(json.dumps(default_config(data), indent=1) + "\n")
    return {"dir": str(out), "data": data}
