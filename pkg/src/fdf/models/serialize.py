"""Versioned JSON documents for fitted models.

Floats are written with ``repr`` precision, so a load reproduces predictions
bit for bit.
"""
from __future__ import annotations

import json

import numpy as np

from .linear import GravityModel, LinearModel, LogisticModel
from .trees import ForestModel, GbmModel, TreeModel

SCHEMA_VERSION = 1


def _tree_to_dict(t: TreeModel):
    return {
        "feature": t.feature.tolist(),
        "threshold": t.threshold.tolist(),
        "left": t.left.tolist(),
        "right": t.right.tolist(),
        "value": t.value.tolist(),
        "gain": t.gain.tolist(),
        "n_features": t.n_features,
    }


def _tree_from_dict(d) -> TreeModel:
    return TreeModel(
        np.array(d["feature"], dtype=np.int64), np.array(d["threshold"], dtype=float),
        np.array(d["left"], dtype=np.int64), np.array(d["right"], dtype=np.int64),
        np.array(d["value"], dtype=float), np.array(d["gain"], dtype=float), d["n_features"],
    )


def model_to_dict(model) -> dict:
    if isinstance(model, LinearModel):
        return {"family": "linear", "intercept": model.intercept, "coef": model.coef.tolist(),
                "penalty": model.penalty, "lam": model.lam, "n_iter": model.n_iter}
    if isinstance(model, LogisticModel):
        return {"family": "logistic", "alpha": model.alpha, "beta": model.beta.tolist(),
                "l2": model.l2, "n_iter": model.n_iter}
    if isinstance(model, GravityModel):
        return {"family": "gravity", "alpha": model.alpha, "b1": model.b1, "b2": model.b2,
                "b3": model.b3, "dropped": model.dropped}
    if isinstance(model, TreeModel):
        return {"family": "tree", **_tree_to_dict(model)}
    if isinstance(model, ForestModel):
        return {"family": "forest", "bootstrap": model.bootstrap, "max_features": model.max_features,
                "seed": model.seed, "trees": [_tree_to_dict(t) for t in model.trees]}
    if isinstance(model, GbmModel):
        return {"family": "gbm", "init": model.init, "learning_rate": model.learning_rate,
                "seed": model.seed, "train_sse": list(model.train_sse),
                "trees": [_tree_to_dict(t) for t in model.trees]}
    raise TypeError(f"cannot serialise {type(model).__name__}")


def model_from_dict(d: dict):
    family = d["family"]
    if family == "linear":
        return LinearModel(d["intercept"], np.array(d["coef"], dtype=float), d["penalty"], d["lam"],
                           d["n_iter"])
    if family == "logistic":
        return LogisticModel(d["alpha"], np.array(d["beta"], dtype=float), d["l2"], d["n_iter"])
    if family == "gravity":
        return GravityModel(d["alpha"], d["b1"], d["b2"], d["b3"], d["dropped"])
    if family == "tree":
        return _tree_from_dict(d)
    if family == "forest":
        return ForestModel(tuple(_tree_from_dict(t) for t in d["trees"]), d["bootstrap"],
                           d["max_features"], d["seed"])
    if family == "gbm":
        return GbmModel(d["init"], d["learning_rate"], tuple(_tree_from_dict(t) for t in d["trees"]),
                        d["seed"], tuple(d["train_sse"]))
    raise ValueError(f"unknown model family {family!r}")


def dumps(model, spec: dict | None = None, seed: int | None = None) -> str:
    doc = {"schema_version": SCHEMA_VERSION, "spec": spec, "seed": seed, "model": model_to_dict(model)}
    return json.dumps(doc, sort_keys=True)


def loads(text: str):
    doc = json.loads(text)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported model schema version {doc.get('schema_version')!r}")
    return model_from_dict(doc["model"])
