"""End-to-end runs driven by a :class:`PipelineConfig`.

ingest
    read and validate inputs, build one engineered panel per horizon.
train
    per horizon and model family, pick the grid spec with the best
    rolling-origin CV score on the training periods, then fit it on the full
    training partition.
evaluate
    train, then score benchmarks and selected models on train and test.

Every stage writes a ``manifest.json`` next to its outputs.
"""
from __future__ import annotations

import hashlib
import json
import os
import time
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .config import PipelineConfig, check_paths
from .errors import ConfigError
from .evaluation import Metric, ScoreReport, cross_validate, expanding_splits, holdout_evaluate, sliding_splits
from .flow_data import (
    Period,
    RegionRegistry,
    aggregate_events,
    build_flow_matrices,
    ingest_events,
    ingest_flows,
    period_range,
    read_feature_table,
    read_registry,
)
from .models.zoo import DISPLAY, ModelSpec, make_estimator
from .panel import (
    PanelTable,
    add_feature_lags,
    add_missingness_flags,
    add_neighbor_features,
    add_target_lags,
    assemble_panel,
    impute_forward_fill,
    read_panel,
    write_panel,
)

MANIFEST_SCHEMA_VERSION = 1


def resolve_threads(env=None) -> int:
    """Worker count from ``FDF_THREADS`` (unset or 0 means one per CPU)."""
    env = os.environ if env is None else env
    raw = env.get("FDF_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"FDF_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise ConfigError("FDF_THREADS must be >= 0")
    return n or (os.cpu_count() or 1)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class Inputs:
    registry: RegionRegistry
    periods: list
    matrices: list
    tables: list


def load_inputs(cfg: PipelineConfig) -> Inputs:
    check_paths(cfg)
    registry = read_registry(cfg.path("regions"), cfg.path("adjacency"), cfg.path("distances"))
    records = ingest_flows(cfg.path("flows"), registry)
    if cfg.panel.start and cfg.panel.end:
        periods = period_range(Period.parse(cfg.panel.start), Period.parse(cfg.panel.end))
    else:
        if not records:
            raise ConfigError("flows file has no records and no panel.start/end is configured")
        seen = [r.period for r in records]
        start = Period.parse(cfg.panel.start) if cfg.panel.start else min(seen)
        end = Period.parse(cfg.panel.end) if cfg.panel.end else max(seen)
        periods = period_range(start, end)
    matrices = build_flow_matrices(records, registry, periods)
    tables = []
    if cfg.path("events") is not None:
        events = aggregate_events(ingest_events(cfg.path("events"), registry), registry, periods)
        events.attrs["source"] = "events"
        tables.append(events)
    tables.extend(read_feature_table(p) for p in cfg.feature_paths())
    return Inputs(registry, periods, matrices, tables)


def build_panel(cfg: PipelineConfig, inputs: Inputs, horizon: int) -> PanelTable:
    """Assemble and engineer the panel: lags, neighbour features, flags, imputation."""
    pc = cfg.panel
    panel = assemble_panel(inputs.matrices, inputs.tables, inputs.registry, cfg.forecast_task(horizon),
                           zero_as_missing=pc.zero_as_missing, epoch=Period.parse(pc.epoch))
    raw = [c for c, m in panel.meta.items() if m.lag is None]
    for name, cols in (("lag_columns", pc.lag_columns or []), ("neighbor_columns", pc.neighbor_columns)):
        unknown = sorted(set(cols) - set(raw))
        if unknown:
            raise ConfigError(f"panel.{name} names unknown feature(s): {', '.join(unknown)}")
    panel = add_target_lags(panel, pc.target_lags)
    panel = add_feature_lags(panel, raw if pc.lag_columns is None else pc.lag_columns, pc.feature_lags)
    if pc.neighbor_mode and pc.neighbor_columns:
        panel = add_neighbor_features(panel, inputs.registry, pc.neighbor_columns, pc.neighbor_mode)
    engineered = [c for c in panel.input_columns() if panel.meta[c].source != "calendar"]
    if pc.missing_flags:
        panel = add_missingness_flags(panel, engineered)
    if pc.impute:
        panel = impute_forward_fill(panel, engineered)
    return panel


def split_plan(cfg: PipelineConfig, panel: PanelTable):
    train_periods = [p for p in panel.periods if p <= cfg.train_end]
    e = cfg.evaluation
    if e.cv == "expanding":
        return expanding_splits(train_periods, e.k, e.min_train)
    return sliding_splits(train_periods, e.k, e.train_len)


class Run:
    """Shared state of one CLI invocation: timings, captured warnings, output paths."""

    def __init__(self, cfg: PipelineConfig, out_dir, threads: int | None = None, command: str = "run"):
        self.cfg = cfg
        self.out = Path(out_dir)
        self.threads = resolve_threads() if threads is None else threads
        self.command = command
        self.timings: dict = {}
        self.warnings: list = []
        self.outputs: list = []
        self._inputs = None
        self._panels = None

    def _timed(self, name, fn, *args):
        t0 = time.perf_counter()
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            result = fn(*args)
        self.timings[name] = round(time.perf_counter() - t0, 4)
        for w in caught:
            msg = f"{w.category.__name__}: {w.message}"
            if msg not in self.warnings:
                self.warnings.append(msg)
        return result

    def _write(self, rel, text):
        path = self.out / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
        self.outputs.append(rel)
        return path

    @property
    def inputs(self) -> Inputs:
        if self._inputs is None:
            self._inputs = self._timed("load_inputs", load_inputs, self.cfg)
        return self._inputs

    def input_digests(self) -> dict:
        return {name: sha256_file(p) for name, p in sorted(self.cfg.input_paths().items())}

    # -- stages

    def panels(self, reuse: bool = True) -> dict[int, PanelTable]:
        """Engineered panel per horizon; reuses artifacts from a matching earlier ingest."""
        if self._panels is not None:
            return self._panels
        self.out.mkdir(parents=True, exist_ok=True)
        stamp_path = self.out / "panel_stamp.json"
        stamp = {"config": self.cfg.digest(), "inputs": self.input_digests(), "version": __version__}
        fresh = reuse and stamp_path.is_file() and json.loads(stamp_path.read_text()) == stamp
        panels = {}
        for h in self.cfg.task.horizons:
            rel = f"panel_h{h}.csv"
            if fresh and (self.out / rel).is_file():
                panels[h] = self._timed(f"read_panel_h{h}", read_panel, self.out / rel)
            else:
                panels[h] = self._timed(f"build_panel_h{h}", build_panel, self.cfg, self.inputs, h)
                write_panel(panels[h], self.out / rel)
            self.outputs += [rel, f"panel_h{h}.meta.json"]
        stamp_path.write_text(json.dumps(stamp, indent=1, sort_keys=True) + "\n")
        self._panels = panels
        return panels

    def select(self, panel: PanelTable) -> tuple[list[ModelSpec], dict]:
        cfg = self.cfg
        plan = split_plan(cfg, panel)
        metric = _metric(cfg)
        chosen, summary = [], {}
        for family, grid in cfg.grids().items():
            res = self._timed(f"cv_{family}_h{panel.task.horizon}", lambda g=grid: cross_validate(
                g, panel, None, plan, metric, seed=cfg.models.seed, threads=self.threads))
            best = ModelSpec(res.best.family, res.best.params, DISPLAY[family])
            chosen.append(best)
            summary[family] = {"selected": best.to_dict(), "mean_scores": res.mean_scores,
                               "fold_scores": res.fold_scores, "n_nonzero": res.n_nonzero}
        return chosen, summary

    def evaluate(self, write_report: bool = True) -> ScoreReport:
        cfg = self.cfg
        report, selection = None, {}
        for h, panel in self.panels().items():
            chosen, selection[str(h)] = self.select(panel)
            fitted = {}
            part = self._timed(f"holdout_h{h}", lambda p=panel, c=chosen, f=fitted: holdout_evaluate(
                p, None, cfg.train_end, cfg.benchmark_specs() + c, _metric(cfg),
                seed=cfg.models.seed, threads=self.threads, fitted=f))
            for label, est in fitted.items():
                if not est.spec.is_benchmark:
                    self._write(f"models/h{h}/{_slug(label)}.json", json.dumps(est.to_dict(), sort_keys=True) + "\n")
            report = part if report is None else report.merge(part)
        report.metadata["config_digest"] = cfg.digest()
        report.metadata["metric"] = {"kind": cfg.evaluation.metric, "lambda_over": cfg.evaluation.lambda_over}
        self._write("selection.json", _dumps(selection))
        if write_report:
            self._write("report.json", report.to_json())
            self._write("report.csv", report.to_csv())
        return report

    def train(self) -> dict:
        """Selection plus fits on the training partition, without scoring."""
        cfg = self.cfg
        selection = {}
        for h, panel in self.panels().items():
            chosen, selection[str(h)] = self.select(panel)
            train_mask = panel.period_mask(end=cfg.train_end)
            for spec in chosen:
                est = self._timed(f"fit_{spec.family}_h{h}",
                                  lambda s=spec: make_estimator(s, cfg.models.seed).fit(panel, train_mask))
                self._write(f"models/h{h}/{_slug(spec.label)}.json", json.dumps(est.to_dict(), sort_keys=True) + "\n")
        self._write("selection.json", _dumps(selection))
        return selection

    def write_manifest(self) -> Path:
        manifest = {
            "schema_version": MANIFEST_SCHEMA_VERSION,
            "command": self.command,
            "toolkit_version": __version__,
            "config_digest": self.cfg.digest(),
            "seed": self.cfg.models.seed,
            "threads": self.threads,
            "inputs": self.input_digests(),
            "outputs": {rel: sha256_file(self.out / rel) for rel in sorted(set(self.outputs))},
            "timings_s": self.timings,
            "warnings": self.warnings,
        }
        path = self.out / "manifest.json"
        path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
        return path


def _metric(cfg: PipelineConfig) -> Metric:
    return Metric(cfg.evaluation.metric, float(cfg.evaluation.lambda_over))


def _slug(label: str) -> str:
    return "".join(ch if ch.isalnum() else "_" for ch in label.lower()).strip("_")


def _dumps(obj) -> str:
    def clean(o):
        if isinstance(o, dict):
            return {str(k): clean(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [clean(v) for v in o]
        if isinstance(o, float) and not np.isfinite(o):
            return None
        return o

    return json.dumps(clean(obj), indent=1, sort_keys=True) + "\n"
