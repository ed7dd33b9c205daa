"""Flow records, region metadata and per-period origin-destination matrices.

A flow matrix ``A`` for one month holds ``A[i, j]``, the number of people who
moved from region ``i`` to region ``j``. The four region-level aggregations
(internal displacement, outflow, inflow, pairwise) and the arrivals target are
computed from it.
"""
from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .errors import (
    EmptyPeriodRange,
    IndexOutOfRange,
    MalformedRow,
    NegativeCount,
    NoFlows,
    UnknownRegion,
    UnparseableDate,
)

FLOW_HEADER = ["period", "origin", "destination", "count"]
EVENT_HEADER = ["date", "region", "kind", "fatalities"]


@dataclass(frozen=True, order=True)
class Period:
    """A calendar month. Ordered; ``p + 1`` is the next month."""

    year: int
    month: int

    def __post_init__(self):
        if not 1 <= self.month <= 12:
            raise ValueError(f"month out of range: {self.month}")

    @classmethod
    def parse(cls, text: str) -> "Period":
        text = text.strip()
        try:
            year_s, month_s = text.split("-")
            if len(year_s) != 4 or len(month_s) != 2:
                raise ValueError
            return cls(int(year_s), int(month_s))
        except ValueError:
            raise ValueError(f"expected YYYY-MM, got {text!r}") from None

    @classmethod
    def from_ordinal(cls, n: int) -> "Period":
        year, m0 = divmod(n, 12)
        return cls(year, m0 + 1)

    @property
    def ordinal(self) -> int:
        return self.year * 12 + self.month - 1

    def __add__(self, months: int) -> "Period":
        return Period.from_ordinal(self.ordinal + int(months))

    def __sub__(self, other):
        if isinstance(other, Period):
            return self.ordinal - other.ordinal
        return Period.from_ordinal(self.ordinal - int(other))

    def __str__(self):
        return f"{self.year:04d}-{self.month:02d}"


def period_range(start: Period, end: Period) -> list[Period]:
    """Inclusive list of months from ``start`` to ``end``."""
    if end < start:
        raise EmptyPeriodRange(f"empty period range {start}..{end}")
    return [Period.from_ordinal(k) for k in range(start.ordinal, end.ordinal + 1)]


@dataclass
class RegionRegistry:
    regions: list[str]
    adjacency: set[frozenset] = field(default_factory=set)
    distances: dict[tuple[str, str], float] = field(default_factory=dict)

    def __post_init__(self):
        if len(set(self.regions)) != len(self.regions):
            raise ValueError("duplicate region ids in registry")
        for r in self.regions:
            if not isinstance(r, str) or not r:
                raise ValueError(f"invalid region id {r!r}")
        self._index = {r: i for i, r in enumerate(self.regions)}
        for pair in self.adjacency:
            for r in pair:
                self.require(r)
        for (a, b), km in self.distances.items():
            self.require(a)
            self.require(b)
            if not km >= 0:
                raise ValueError(f"negative or NaN distance for {a}->{b}")

    def __len__(self):
        return len(self.regions)

    def __contains__(self, region):
        return region in self._index

    def index(self, region: str) -> int:
        try:
            return self._index[region]
        except KeyError:
            raise UnknownRegion(region) from None

    def require(self, region: str) -> None:
        if region not in self._index:
            raise UnknownRegion(region)

    def adjacent(self, a: str, b: str) -> bool:
        return frozenset((a, b)) in self.adjacency

    def neighbors(self, region: str) -> list[str]:
        """Adjacent regions in registry order."""
        return [r for r in self.regions if r != region and self.adjacent(region, r)]

    def distance(self, origin: str, destination: str) -> float | None:
        return self.distances.get((origin, destination))


@dataclass(frozen=True)
class FlowRecord:
    period: Period
    origin: str
    destination: str
    count: int


@dataclass(frozen=True)
class EventRecord:
    date: dt.date
    region: str
    kind: str
    fatalities: int


@dataclass
class FlowMatrix:
    """Pairwise flows for one period; ``missing`` marks unobserved cells."""

    period: Period
    entries: np.ndarray
    missing: np.ndarray | None = None

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.int64)
        n = self.entries.shape[0]
        if self.entries.shape != (n, n):
            raise ValueError("flow matrix must be square")
        if self.missing is None:
            self.missing = np.zeros((n, n), dtype=bool)
        else:
            self.missing = np.asarray(self.missing, dtype=bool)
        if np.any(self.entries[~self.missing] < 0):
            raise ValueError("flow matrix has negative entries")

    @property
    def size(self) -> int:
        return self.entries.shape[0]


# -- ingestion --------------------------------------------------------------

def _check_header(header, expected, path):
    if header is None or [h.strip() for h in header] != expected:
        raise MalformedRow(0, f"header must be {','.join(expected)}, got {header}", path)


def _parse_count(text, row, path):
    text = text.strip()
    try:
        value = int(text)
    except ValueError:
        raise MalformedRow(row, f"count {text!r} is not an integer", path) from None
    if value < 0:
        raise NegativeCount(value, row, path)
    return value


def ingest_flows(path, registry: RegionRegistry | None = None) -> list[FlowRecord]:
    """Read ``period,origin,destination,count`` rows.

    Row numbers in errors count the header as row 0. Duplicate keys are kept;
    they are summed by :func:`build_flow_matrices`.
    """
    path = Path(path)
    records = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        _check_header(next(reader, None), FLOW_HEADER, path)
        for row_no, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != 4:
                raise MalformedRow(row_no, f"expected 4 fields, got {len(row)}", path)
            period_s, origin, destination, count_s = (c.strip() for c in row)
            try:
                period = Period.parse(period_s)
            except ValueError as exc:
                raise MalformedRow(row_no, str(exc), path) from None
            if not origin or not destination:
                raise MalformedRow(row_no, "empty region id", path)
            count = _parse_count(count_s, row_no, path)
            if registry is not None:
                for r in (origin, destination):
                    if r not in registry:
                        raise UnknownRegion(r, row_no, path)
            records.append(FlowRecord(period, origin, destination, count))
    return records


def ingest_events(path, registry: RegionRegistry | None = None) -> list[EventRecord]:
    path = Path(path)
    events = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        _check_header(next(reader, None), EVENT_HEADER, path)
        for row_no, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != 4:
                raise MalformedRow(row_no, f"expected 4 fields, got {len(row)}", path)
            date_s, region, kind, fat_s = (c.strip() for c in row)
            try:
                date = dt.date.fromisoformat(date_s)
            except ValueError:
                raise UnparseableDate(f"{path}: row {row_no}: unparseable date {date_s!r}") from None
            if registry is not None and region not in registry:
                raise UnknownRegion(region, row_no, path)
            events.append(EventRecord(date, region, kind, _parse_count(fat_s, row_no, path)))
    return events


def read_registry(regions_path, adjacency_path=None, distances_path=None) -> RegionRegistry:
    regions = pd.read_csv(regions_path, dtype=str, keep_default_na=False)
    if list(regions.columns) != ["region"]:
        raise MalformedRow(0, "regions file header must be 'region'", regions_path)
    names = [r.strip() for r in regions["region"]]
    known = set(names)

    adjacency = set()
    if adjacency_path is not None:
        adj = pd.read_csv(adjacency_path, dtype=str, keep_default_na=False)
        if list(adj.columns) != ["region_a", "region_b"]:
            raise MalformedRow(0, "adjacency header must be region_a,region_b", adjacency_path)
        for i, (a, b) in enumerate(zip(adj["region_a"], adj["region_b"]), start=1):
            for r in (a, b):
                if r not in known:
                    raise UnknownRegion(r, i, adjacency_path)
            adjacency.add(frozenset((a, b)))

    distances = {}
    if distances_path is not None:
        dist = pd.read_csv(distances_path, dtype={"origin": str, "destination": str},
                           keep_default_na=False)
        if list(dist.columns) != ["origin", "destination", "km"]:
            raise MalformedRow(0, "distances header must be origin,destination,km", distances_path)
        for i, (a, b, km) in enumerate(zip(dist["origin"], dist["destination"], dist["km"]), start=1):
            for r in (a, b):
                if r not in known:
                    raise UnknownRegion(r, i, distances_path)
            try:
                km = float(km)
            except ValueError:
                raise MalformedRow(i, f"distance {km!r} is not a number", distances_path) from None
            if not km >= 0:
                raise MalformedRow(i, "distance must be non-negative", distances_path)
            distances[(a, b)] = km

    return RegionRegistry(names, adjacency, distances)


# -- matrices and aggregates --------------------------------------------------

def build_flow_matrices(records: Iterable[FlowRecord], registry: RegionRegistry,
                        periods: Sequence[Period]) -> list[FlowMatrix]:
    """One summed matrix per period; cells without records are 0."""
    periods = list(periods)
    if not periods:
        raise EmptyPeriodRange("no periods requested")
    slot = {p: k for k, p in enumerate(periods)}
    n = len(registry)
    cube = np.zeros((len(periods), n, n), dtype=np.int64)
    for rec in records:
        i = registry.index(rec.origin)
        j = registry.index(rec.destination)
        k = slot.get(rec.period)
        if k is not None:
            cube[k, i, j] += rec.count
    return [FlowMatrix(p, cube[k]) for k, p in enumerate(periods)]


def _check_index(matrix: FlowMatrix, *idx):
    for i in idx:
        if not 0 <= i < matrix.size:
            raise IndexOutOfRange(f"region index {i} outside 0..{matrix.size - 1}")


def _sum_cells(matrix: FlowMatrix, rows, cols):
    if matrix.missing[rows, cols].any():
        return None
    return int(matrix.entries[rows, cols].sum())


def internal_displacement(matrix: FlowMatrix, i: int) -> int | None:
    _check_index(matrix, i)
    return None if matrix.missing[i, i] else int(matrix.entries[i, i])


def total_outflow(matrix: FlowMatrix, i: int) -> int | None:
    _check_index(matrix, i)
    others = np.arange(matrix.size) != i
    return _sum_cells(matrix, i, others)


def total_inflow(matrix: FlowMatrix, i: int) -> int | None:
    _check_index(matrix, i)
    others = np.arange(matrix.size) != i
    return _sum_cells(matrix, others, i)


def pairwise_flow(matrix: FlowMatrix, i: int, j: int) -> int | None:
    _check_index(matrix, i, j)
    return None if matrix.missing[i, j] else int(matrix.entries[i, j])


def arrivals(matrix: FlowMatrix, i: int) -> int | None:
    """Inflow from other regions plus displacement within ``i``."""
    inflow = total_inflow(matrix, i)
    internal = internal_displacement(matrix, i)
    if inflow is None or internal is None:
        return None
    return inflow + internal


def flow_proportions(matrices: Sequence[FlowMatrix], i: int) -> tuple[float, float, float]:
    """(inflow, internal, outflow) shares of region ``i`` over all periods.

    Periods where an aggregate is missing contribute nothing to that aggregate.
    """
    totals = [0, 0, 0]
    for m in matrices:
        for k, fn in enumerate((total_inflow, internal_displacement, total_outflow)):
            v = fn(m, i)
            if v is not None:
                totals[k] += v
    denom = sum(totals)
    if denom == 0:
        raise NoFlows(f"region index {i} has no observed flows")
    return totals[0] / denom, totals[1] / denom, totals[2] / denom


def apply_missingness(series, zero_as_missing: bool = True) -> tuple[np.ndarray, float]:
    """Mask zeros (and ``None``) as NaN when ``zero_as_missing`` is set.

    Returns the masked float series and the fraction of missing periods.
    """
    values = np.array([np.nan if v is None else v for v in series], dtype=float)
    if zero_as_missing:
        values[values == 0] = np.nan
    if values.size == 0:
        return values, 0.0
    return values, float(np.isnan(values).sum() / values.size)


def aggregate_events(events: Iterable[EventRecord], registry: RegionRegistry,
                     periods: Sequence[Period]) -> pd.DataFrame:
    """Monthly incident counts and fatality sums on the full region x period grid."""
    periods = list(periods)
    if not periods:
        raise EmptyPeriodRange("no periods requested")
    slot = {p: k for k, p in enumerate(periods)}
    n = len(registry)
    counts = np.zeros((n, len(periods)), dtype=np.int64)
    fatalities = np.zeros_like(counts)
    for ev in events:
        r = registry.index(ev.region)
        k = slot.get(Period(ev.date.year, ev.date.month))
        if k is None:
            continue
        counts[r, k] += 1
        fatalities[r, k] += ev.fatalities
    rows = [
        (str(p), region, counts[r, k], fatalities[r, k])
        for r, region in enumerate(registry.regions)
        for k, p in enumerate(periods)
    ]
    return pd.DataFrame(rows, columns=["period", "region", "incidents", "fatalities"])


AGGREGATIONS = {
    "arrivals": arrivals,
    "inflow": total_inflow,
    "outflow": total_outflow,
    "internal": internal_displacement,
}


def target_series(matrices: Sequence[FlowMatrix], i: int, kind: str = "arrivals",
                  partner: int | None = None) -> list[int | None]:
    """Per-period aggregate of region ``i`` (MISSING as ``None``)."""
    if kind == "pairwise":
        if partner is None:
            raise ValueError("pairwise target needs a partner region")
        return [pairwise_flow(m, i, partner) for m in matrices]
    try:
        fn = AGGREGATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown target kind {kind!r}") from None
    return [fn(m, i) for m in matrices]


def read_feature_table(path) -> pd.DataFrame:
    """Read ``period,region,<features...>``; empty cells become NaN."""
    path = Path(path)
    df = pd.read_csv(path, dtype={"period": str, "region": str})
    if list(df.columns[:2]) != ["period", "region"] or df.shape[1] < 3:
        raise MalformedRow(0, "feature table header must start with period,region", path)
    for row_no, p in enumerate(df["period"], start=1):
        try:
            Period.parse(p)
        except (ValueError, AttributeError):
            raise MalformedRow(row_no, f"bad period {p!r}", path) from None
    for col in df.columns[2:]:
        if not pd.api.types.is_numeric_dtype(df[col]):
            raise MalformedRow(0, f"feature column {col!r} is not numeric", path)
        df[col] = df[col].astype(float)
    df.attrs["source"] = path.stem
    return df
