"""Uniform fit/predict wrappers that run any model family on a :class:`PanelTable`.

``fit(panel, train_mask)`` learns from the masked rows; ``predict(panel)``
returns a ``(n_regions, n_periods)`` grid with NaN where the model makes no
prediction.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ..errors import NonInvertibleTransform
from ..panel import (
    PanelTable,
    TransformState,
    apply_standardizer,
    fit_standardizer,
    inverse_transform,
    transform_target,
)
from .benchmarks import BENCHMARK_KINDS, BenchmarkSpec, benchmark_grid
from .linear import fit_lasso, fit_ridge
from .serialize import SCHEMA_VERSION, model_from_dict, model_to_dict
from .trees import fit_forest, fit_gbm, fit_tree

FEATURE_FAMILIES = ("ridge", "lasso", "tree", "forest", "gbm")
FAMILIES = BENCHMARK_KINDS + FEATURE_FAMILIES

DISPLAY = {
    "lag": "{n}-month lag",
    "expanding_mean": "Expand. Mean",
    "ewm": "Exp. Wt. Mean ({n})",
    "rolling_mean": "Hist. Mean ({n})",
    "ridge": "Ridge Regression",
    "lasso": "Lasso Regression",
    "tree": "Decision Tree",
    "forest": "Random Forest",
    "gbm": "Gradient Boosting",
}


@dataclass(frozen=True)
class ModelSpec:
    family: str
    params: tuple = ()
    name: str | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown model family {self.family!r}")
        object.__setattr__(self, "params", tuple(sorted(dict(self.params).items())))
        if self.family in BENCHMARK_KINDS:
            BenchmarkSpec(self.family, self.p.get("n"))

    @classmethod
    def make(cls, family, name=None, **params):
        return cls(family, tuple(params.items()), name)

    @property
    def p(self) -> dict:
        return dict(self.params)

    @property
    def is_benchmark(self) -> bool:
        return self.family in BENCHMARK_KINDS

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if self.is_benchmark:
            return DISPLAY[self.family].format(**self.p)
        args = ",".join(f"{k}={v}" for k, v in self.params)
        return f"{self.family}({args})"

    def key(self) -> str:
        return json.dumps({"family": self.family, "params": self.p}, sort_keys=True)

    def to_dict(self):
        return {"family": self.family, "params": self.p, "name": self.name}

    @classmethod
    def from_dict(cls, d):
        return cls(d["family"], tuple(d.get("params", {}).items()), d.get("name"))


class BenchmarkEstimator:
    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self.bench = BenchmarkSpec(spec.family, spec.p.get("n"))

    def feasible(self, h: int) -> bool:
        return self.bench.feasible(h)

    def fit(self, panel: PanelTable, train_mask=None):
        return self

    def predict(self, panel: PanelTable) -> np.ndarray:
        return benchmark_grid(panel.target, self.bench, panel.task.horizon)

    def n_nonzero_params(self) -> int:
        return 0 if self.bench.kind == "lag" else 1

    def importances(self):
        return None

    def to_dict(self):
        return {"schema_version": SCHEMA_VERSION, "spec": self.spec.to_dict()}


def _resolve_max_features(value, p: int) -> int:
    if value is None:
        return max(p, 1)
    if value == "sqrt":
        return max(1, int(np.sqrt(p)))
    if isinstance(value, float) and value <= 1:
        return max(1, int(round(value * p)))
    return min(int(value), max(p, 1))


def _drop_reference_levels(panel: PanelTable, cols: list[str]) -> list[str]:
    """Remove the first region and month dummy.

    A full one-hot group sums to one, so after centring it is exactly
    collinear; coordinate descent crawls along that direction.
    """
    drop = set()
    for prefix in ("region_", "month_"):
        group = [c for c in cols if c.startswith(prefix) and panel.meta[c].source == "calendar"
                 and panel.meta[c].indicator]
        if prefix == "month_":
            group.sort(key=lambda c: int(c.split("_")[1]))
        if group:
            drop.add(group[0])
    return [c for c in cols if c not in drop]


class FeatureEstimator:
    """Regression on the panel's input columns (or an explicit subset)."""

    def __init__(self, spec: ModelSpec, seed: int = 42, columns=None):
        if spec.is_benchmark:
            raise ValueError("use BenchmarkEstimator for benchmark specs")
        self.spec = spec
        self.seed = int(seed)
        self.columns = None if columns is None else list(columns)
        self.model = None

    def feasible(self, h: int) -> bool:
        return True

    def _check_transform(self, panel):
        kind = panel.task.transform.kind
        if kind == "alert_labels":
            raise NonInvertibleTransform("regression estimators cannot target alert labels")
        if kind == "pct_change" and panel.task.horizon != 1:
            # inverting needs y(t-1), which is only observable at issuance when h == 1
            raise ValueError("pct_change target is only supported at horizon 1")

    def fit(self, panel: PanelTable, train_mask: np.ndarray):
        self._check_transform(panel)
        if self.columns is not None:
            cols = list(self.columns)
        else:
            cols = panel.input_columns()
            if self.spec.family == "lasso":
                cols = _drop_reference_levels(panel, cols)
        self.columns_ = cols
        tpanel, self.state = transform_target(panel, panel.task.transform, train_mask)
        X_all = panel.design(self.columns_, np.ones(panel.shape, dtype=bool))
        y_all = tpanel.target.ravel()
        rows = np.asarray(train_mask, dtype=bool).ravel() & ~np.isnan(y_all) & ~np.isnan(X_all).any(axis=1)
        if not rows.any():
            raise ValueError("no complete training rows")
        X, y = X_all[rows], y_all[rows]
        self.n_train_ = int(rows.sum())

        fam, p = self.spec.family, self.spec.p
        if fam in ("ridge", "lasso"):
            self.x_mean, self.x_sd = fit_standardizer(X)
            Z = apply_standardizer(X, self.x_mean, self.x_sd)
            if fam == "ridge":
                self.model = fit_ridge(Z, y, float(p.get("lam", 1.0)))
            else:
                self.model = fit_lasso(Z, y, float(p.get("lam", 0.1)), float(p.get("tol", 1e-8)),
                                       int(p.get("max_iter", 10_000)))
        else:
            self.x_mean = self.x_sd = None
            if fam == "tree":
                self.model = fit_tree(X, y, p.get("max_depth"), int(p.get("min_samples_leaf", 1)))
            elif fam == "forest":
                self.model = fit_forest(
                    X, y, int(p.get("n_trees", 100)), _resolve_max_features(p.get("max_features"), X.shape[1]),
                    bool(p.get("bootstrap", True)), self.seed, p.get("max_depth"),
                    int(p.get("min_samples_leaf", 1)),
                )
            else:
                self.model = fit_gbm(X, y, int(p.get("n_rounds", 100)), float(p.get("learning_rate", 0.1)),
                                     int(p.get("max_depth", 3)), self.seed, int(p.get("min_samples_leaf", 1)))
        return self

    def predict(self, panel: PanelTable) -> np.ndarray:
        X = panel.design(self.columns_, np.ones(panel.shape, dtype=bool))
        ok = ~np.isnan(X).any(axis=1)
        flat = np.full(X.shape[0], np.nan)
        if ok.any():
            Xo = X[ok]
            if self.x_mean is not None:
                Xo = apply_standardizer(Xo, self.x_mean, self.x_sd)
            flat[ok] = self.model.predict(Xo)
        return inverse_transform(flat.reshape(panel.shape), self.state)

    def n_nonzero_params(self) -> int:
        if hasattr(self.model, "n_nonzero"):
            return self.model.n_nonzero() + 1
        return self.model.n_leaves

    def importances(self) -> dict | None:
        if not hasattr(self.model, "importances"):
            return None
        imp = self.model.importances()
        if imp.size == 0:
            return {}
        return {c: float(v) for c, v in zip(self.columns_, imp)}

    def to_dict(self) -> dict:
        st = self.state
        return {
            "schema_version": SCHEMA_VERSION,
            "spec": self.spec.to_dict(),
            "seed": self.seed,
            "columns": self.columns_,
            "x_mean": None if self.x_mean is None else self.x_mean.tolist(),
            "x_sd": None if self.x_sd is None else self.x_sd.tolist(),
            "transform": {
                "kind": st.kind,
                "mean": None if st.mean is None else st.mean.tolist(),
                "sd": None if st.sd is None else st.sd.tolist(),
                "base": None if st.base is None else st.base.tolist(),
            },
            "model": model_to_dict(self.model),
        }

    @classmethod
    def from_dict(cls, d) -> "FeatureEstimator":
        est = cls(ModelSpec.from_dict(d["spec"]), d["seed"], d["columns"])
        est.columns_ = list(d["columns"])
        est.x_mean = None if d["x_mean"] is None else np.array(d["x_mean"], dtype=float)
        est.x_sd = None if d["x_sd"] is None else np.array(d["x_sd"], dtype=float)
        t = d["transform"]
        est.state = TransformState(t["kind"], *(None if t[k] is None else np.array(t[k], dtype=float)
                                                for k in ("mean", "sd", "base")))
        est.model = model_from_dict(d["model"])
        return est


def make_estimator(spec: ModelSpec, seed: int = 42, columns=None):
    if spec.is_benchmark:
        return BenchmarkEstimator(spec)
    return FeatureEstimator(spec, seed, columns)


def estimator_from_dict(d):
    spec = ModelSpec.from_dict(d["spec"])
    if spec.is_benchmark:
        return BenchmarkEstimator(spec)
    return FeatureEstimator.from_dict(d)
