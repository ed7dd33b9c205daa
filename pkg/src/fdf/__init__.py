"""Forecasting toolkit for regional displacement flows.

Subpackages: :mod:`fdf.flow_data` (ingestion and flow aggregates),
:mod:`fdf.panel` (feature panels), :mod:`fdf.models` (benchmarks, linear and
tree models), :mod:`fdf.evaluation` (splits, metrics, selection) and
:mod:`fdf.cli`.
"""

__version__ = "0.1.0"
