"""Turn per-slot speed clusters into contiguous time ranges of the day.

Consecutive slots of one speed cluster form a candidate time range. Ranges
shorter than ``delta`` slots are dissolved and their slots handed to the
neighbouring ranges by speed distance, which keeps every range contiguous.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .clustering import SpeedClusterSet
from .errors import ParameterError, ShapeError, SlotLookupError


@dataclass(frozen=True)
class TimeRange:
    """Slots ``start..end`` (inclusive) of one speed cluster."""

    cluster_id: int
    start: int
    end: int
    mean_speed: float

    def __post_init__(self):
        if self.end < self.start:
            raise ParameterError("empty time range")

    def __len__(self) -> int:
        return self.end - self.start + 1

    def __contains__(self, slot) -> bool:
        return self.start <= slot <= self.end


@dataclass(frozen=True)
class DayPartition:
    """Time ranges tiling ``0..n_slots-1`` in order, each ``slot_seconds`` wide."""

    periods: Tuple[TimeRange, ...]
    slot_seconds: float = 900.0

    def __post_init__(self):
        object.__setattr__(self, "periods", tuple(self.periods))
        if not self.periods:
            raise ParameterError("a partition needs at least one range")
        expect = 0
        for i, r in enumerate(self.periods):
            if r.start != expect:
                raise ShapeError(f"range {i} starts at {r.start}, expected {expect}")
            if i and self.periods[i - 1].cluster_id == r.cluster_id:
                raise ShapeError(f"ranges {i - 1} and {i} share cluster {r.cluster_id}")
            expect = r.end + 1

    def __len__(self) -> int:
        return len(self.periods)

    def __iter__(self):
        return iter(self.periods)

    def __getitem__(self, i) -> TimeRange:
        return self.periods[i]

    @property
    def n_slots(self) -> int:
        return self.periods[-1].end + 1

    def labels(self) -> np.ndarray:
        return np.concatenate([np.full(len(r), r.cluster_id) for r in self.periods])

    def range_index(self, slot: int) -> int:
        if not 0 <= slot < self.n_slots:
            raise SlotLookupError(f"slot {slot} outside the partitioned day [0, {self.n_slots})")
        ends = [r.end for r in self.periods]
        return int(np.searchsorted(ends, slot, side="left"))

    def range_index_at(self, seconds: float) -> int:
        """Range active at a time of day given in seconds."""
        return self.range_index(int(np.floor(seconds / self.slot_seconds + 1e-9)))

    def label(self, i: int) -> str:
        """Range name ``T<cluster>^<k>`` with 1-based cluster and occurrence."""
        r = self.periods[i]
        k = sum(1 for p in self.periods[: i + 1] if p.cluster_id == r.cluster_id)
        return f"T{r.cluster_id + 1}^{k}"

    def ranges_of(self, cluster_id: int) -> List[TimeRange]:
        return [r for r in self.periods if r.cluster_id == cluster_id]


def range_distance(slot: int, rng: TimeRange, speeds) -> float:
    """Absolute gap between the slot's speed and the range's mean speed."""
    speeds = np.asarray(speeds, dtype=float)
    return float(abs(speeds[slot] - speeds[rng.start : rng.end + 1].mean()))


def locate(partition: DayPartition, slot: int) -> TimeRange:
    return partition.periods[partition.range_index(slot)]


def _runs(labels: Sequence[int]) -> List[Tuple[int, int, int]]:
    """Maximal runs as ``(label, start, end)`` with ``end`` inclusive."""
    out = []
    start = 0
    for t in range(1, len(labels) + 1):
        if t == len(labels) or labels[t] != labels[start]:
            out.append((int(labels[start]), start, t - 1))
            start = t
    return out


def _best_cut(v: np.ndarray, prev_mean: float, next_mean: float) -> int:
    """Number of leading slots handed to the previous range.

    Slots ``[0, cut)`` join the earlier range and ``[cut, m)`` the later one;
    the cut minimises the summed speed distance. Ties favour the earlier range.
    """
    to_prev = np.abs(v - prev_mean)
    to_next = np.abs(v - next_mean)
    m = v.size
    cost = np.array([to_prev[:c].sum() + to_next[c:].sum() for c in range(m + 1)])
    best = cost.min()
    return int(np.flatnonzero(cost <= best + 1e-12 * max(1.0, abs(best)))[-1])


def smooth_labels(labels: Sequence[int], speeds, delta: int) -> np.ndarray:
    """Relabel slots until every maximal run has at least ``delta`` slots.

    The shortest offending run (earliest on ties) is dissolved into its
    temporal neighbours; with two neighbours its slots are split at the cut
    that minimises the summed speed distance to the neighbours' mean speeds.
    """
    labels = np.array(labels, dtype=int)
    speeds = np.asarray(speeds, dtype=float)
    while True:
        runs = _runs(labels)
        if len(runs) == 1:
            return labels
        lengths = [e - s + 1 for _, s, e in runs]
        short = [i for i, n in enumerate(lengths) if n < delta]
        if not short:
            return labels
        i = min(short, key=lambda j: (lengths[j], j))
        _, s, e = runs[i]
        if i == 0:
            labels[s : e + 1] = runs[1][0]
            continue
        if i == len(runs) - 1:
            labels[s : e + 1] = runs[i - 1][0]
            continue
        (pl, ps, pe), (nl, ns, ne) = runs[i - 1], runs[i + 1]
        cut = _best_cut(speeds[s : e + 1], speeds[ps : pe + 1].mean(), speeds[ns : ne + 1].mean())
        labels[s : s + cut] = pl
        labels[s + cut : e + 1] = nl


def partition_from_labels(labels, speeds, slot_seconds: float = 900.0) -> DayPartition:
    speeds = np.asarray(speeds, dtype=float)
    periods = [
        TimeRange(lab, s, e, float(speeds[s : e + 1].mean())) for lab, s, e in _runs(labels)
    ]
    return DayPartition(tuple(periods), slot_seconds)


def classify_periods(
    clusters: SpeedClusterSet, speeds, delta: int = 8, slot_seconds: float = 900.0
) -> DayPartition:
    """Group clustered slots into contiguous ranges of at least ``delta`` slots."""
    speeds = np.asarray(speeds, dtype=float)
    n = speeds.size
    if delta < 1:
        raise ParameterError("delta must be at least 1")
    if delta > n:
        raise ParameterError(f"delta={delta} exceeds the day length {n}")
    covered = sum(len(c.members) for c in clusters)
    if covered != n:
        raise ShapeError(f"clusters cover {covered} slots but {n} speeds were given")
    labels = smooth_labels(clusters.labels(n), speeds, delta)
    return partition_from_labels(labels, speeds, slot_seconds)
