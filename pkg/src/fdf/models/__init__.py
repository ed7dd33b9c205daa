from .benchmarks import BenchmarkSpec, benchmark_grid, predict_benchmark
from .linear import (
    GravityModel,
    LinearModel,
    LogisticModel,
    fit_gravity,
    fit_lasso,
    fit_logistic,
    fit_ridge,
    lasso_objective,
    logistic_gradient,
    logistic_objective,
    predict_gravity,
    predict_proba,
    soft_threshold,
)
from .trees import ForestModel, GbmModel, TreeModel, fit_forest, fit_gbm, fit_tree
from .zoo import BenchmarkEstimator, FeatureEstimator, ModelSpec, estimator_from_dict, make_estimator

__all__ = [
    "BenchmarkEstimator", "BenchmarkSpec", "FeatureEstimator", "ForestModel", "GbmModel", "GravityModel",
    "LinearModel", "LogisticModel", "ModelSpec", "TreeModel", "benchmark_grid", "estimator_from_dict",
    "fit_forest", "fit_gbm", "fit_gravity", "fit_lasso", "fit_logistic", "fit_ridge", "fit_tree",
    "lasso_objective", "logistic_gradient", "logistic_objective", "make_estimator", "predict_benchmark",
    "predict_gravity", "predict_proba", "soft_threshold",
]
