"""Naive series benchmarks: lagged value, expanding, rolling and exponentially weighted means."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import LagShorterThanHorizon

BENCHMARK_KINDS = ("lag", "expanding_mean", "ewm", "rolling_mean")


@dataclass(frozen=True)
class BenchmarkSpec:
    kind: str
    n: int | None = None

    def __post_init__(self):
        if self.kind not in BENCHMARK_KINDS:
            raise ValueError(f"unknown benchmark kind {self.kind!r}")
        if self.kind != "expanding_mean":
            if self.n is None or int(self.n) != self.n or self.n < 1:
                raise ValueError(f"{self.kind} needs a positive integer n")

    def feasible(self, h: int) -> bool:
        return self.kind != "lag" or self.n >= h

    @property
    def alpha(self) -> float:
        return 2.0 / (self.n + 1)


def predict_benchmark(history, spec: BenchmarkSpec, h: int) -> float | None:
    """Forecast ``h`` periods past the end of ``history``.

    ``history`` holds the target up to and including the issuance period, NaN
    for missing months. Returns ``None`` when the benchmark has nothing to
    average.
    """
    if spec.kind == "lag" and spec.n < h:
        raise LagShorterThanHorizon(spec.n, h)
    y = np.asarray(history, dtype=float)
    if y.size == 0:
        return None

    if spec.kind == "lag":
        k = y.size - 1 + h - spec.n
        if k < 0 or np.isnan(y[k]):
            return None
        return float(y[k])

    if spec.kind == "rolling_mean":
        y = y[-spec.n:]
    if spec.kind in ("expanding_mean", "rolling_mean"):
        obs = y[~np.isnan(y)]
        return float(obs.mean()) if obs.size else None

    # ewm, weights (1 - alpha)**k on y[s - k], renormalised over observed months
    rev = y[::-1]
    w = (1.0 - spec.alpha) ** np.arange(rev.size)
    ok = ~np.isnan(rev)
    denom = w[ok].sum()
    if denom == 0:
        return None
    return float((w[ok] * rev[ok]).sum() / denom)


def benchmark_grid(target: np.ndarray, spec: BenchmarkSpec, h: int) -> np.ndarray:
    """Benchmark prediction for every (region, t) cell; NaN where none.

    Cell ``t`` only sees ``target[:, :t - h + 1]``.
    """
    if spec.kind == "lag" and spec.n < h:
        raise LagShorterThanHorizon(spec.n, h)
    R, T = target.shape
    out = np.full((R, T), np.nan)
    for i in range(R):
        for t in range(h, T):
            v = predict_benchmark(target[i, : t - h + 1], spec, h)
            if v is not None:
                out[i, t] = v
    return out
