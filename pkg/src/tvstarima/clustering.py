"""One-dimensional ISODATA clustering of per-slot speeds."""

from __future__ import annotations

from dataclasses import dataclass
from typing import FrozenSet, List, Sequence, Tuple

import numpy as np

from .errors import DataError, ParameterError


@dataclass(frozen=True)
class IsodataParams:
    """Thresholds of the ISODATA loop.

    Defaults are the published settings for smoothed freeway speeds:
    at most 3 clusters, at least 5 members, variance ceiling 15 (ft/s)^2,
    merge distance 30 ft/s and 10 iterations.
    """

    k_max: int = 3
    n_min: int = 5
    sigma2_max: float = 15.0
    d_min: float = 30.0
    max_iter: int = 10
    k_init: int = 2
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.k_init <= self.k_max:
            raise ParameterError("need 1 <= k_init <= k_max")
        if self.n_min < 1 or self.max_iter < 1:
            raise ParameterError("n_min and max_iter must be positive")
        if not (self.sigma2_max > 0 and self.d_min > 0):
            raise ParameterError("sigma2_max and d_min must be positive")


@dataclass(frozen=True)
class SpeedCluster:
    center: float
    members: FrozenSet[int]


@dataclass(frozen=True)
class SpeedClusterSet:
    """Clusters ordered by decreasing center, so cluster 0 is the fastest."""

    clusters: Tuple[SpeedCluster, ...]

    def __len__(self) -> int:
        return len(self.clusters)

    def __getitem__(self, i) -> SpeedCluster:
        return self.clusters[i]

    @property
    def centers(self) -> np.ndarray:
        return np.array([c.center for c in self.clusters])

    def labels(self, n: int = None) -> np.ndarray:
        """Cluster index of every slot."""
        if n is None:
            n = sum(len(c.members) for c in self.clusters)
        out = np.full(n, -1, dtype=int)
        for i, c in enumerate(self.clusters):
            out[sorted(c.members)] = i
        if np.any(out < 0):
            raise DataError("clusters do not cover every slot")
        return out

    @classmethod
    def from_labels(cls, speeds, labels) -> "SpeedClusterSet":
        speeds = np.asarray(speeds, dtype=float)
        labels = np.asarray(labels)
        out = []
        for lab in np.unique(labels):
            idx = np.flatnonzero(labels == lab)
            out.append(SpeedCluster(float(speeds[idx].mean()), frozenset(int(i) for i in idx)))
        out.sort(key=lambda c: -c.center)
        return cls(tuple(out))


def assign_nearest(value: float, centers) -> int:
    """Index of the closest center; ties resolve to the lower index."""
    if isinstance(centers, SpeedClusterSet):
        centers = centers.centers
    centers = np.asarray(centers, dtype=float)
    if centers.size == 0:
        raise ParameterError("no clusters to assign to")
    return int(np.argmin(np.abs(centers - value)))


def _assign(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # argmin returns the first minimum, which is the lower-index tie rule
    return np.argmin(np.abs(x[:, None] - centers[None, :]), axis=1)


def _initial_centers(x: np.ndarray, params: IsodataParams) -> np.ndarray:
    q = (np.arange(params.k_init) + 0.5) / params.k_init
    centers = np.quantile(x, q)
    uniq = np.unique(centers)
    if uniq.size < centers.size:
        # coincident quantiles: top up with distinct data values drawn from the seed
        rng = np.random.default_rng(params.seed)
        pool = np.setdiff1d(np.unique(x), uniq)
        extra = rng.permutation(pool)[: centers.size - uniq.size]
        uniq = np.concatenate([uniq, extra])
    return np.sort(uniq)


def _discard_small(x: np.ndarray, centers: np.ndarray, n_min: int):
    """Drop clusters below ``n_min`` one at a time, smallest first."""
    labels = _assign(x, centers)
    while centers.size > 1:
        counts = np.bincount(labels, minlength=centers.size)
        small = np.flatnonzero(counts < n_min)
        if small.size == 0:
            break
        drop = small[np.argmin(counts[small])]
        keep = np.delete(np.arange(centers.size), drop)
        centers = centers[keep]
        moved = labels == drop
        labels = np.searchsorted(keep, labels)
        if np.any(moved):
            labels[moved] = _assign(x[moved], centers)
    return centers, labels


def _means(x: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    return np.array([x[labels == j].mean() for j in range(k)])


def isodata_1d(speeds: Sequence[float], params: IsodataParams = IsodataParams()) -> SpeedClusterSet:
    """Cluster scalar speeds with split-and-merge ISODATA.

    Each iteration assigns points to the nearest center, discards clusters
    smaller than ``n_min`` (their points move to the nearest survivor),
    recomputes centers as member means, splits the highest-variance cluster
    exceeding ``sigma2_max`` at ``center +/- sd`` while fewer than ``k_max``
    clusters exist, and merges the closest pair of centers when they are
    nearer than ``d_min``. The loop stops when an iteration leaves the
    clustering unchanged or after ``max_iter`` iterations.
    """
    x = np.asarray(speeds, dtype=float)
    if x.ndim != 1:
        raise DataError("speeds must be 1-d")
    if not np.all(np.isfinite(x)):
        raise DataError("non-finite speed")
    if x.size < params.n_min:
        raise DataError(f"{x.size} speeds, fewer than n_min={params.n_min}")

    centers = _initial_centers(x, params)
    labels = None
    for _ in range(params.max_iter):
        previous = (centers.copy(), None if labels is None else labels.copy())

        centers, labels = _discard_small(x, centers, params.n_min)
        centers = _means(x, labels, centers.size)

        # members travel with their centers so split/merge keep exact means
        groups: List[np.ndarray] = [x[labels == j] for j in range(centers.size)]
        variances = np.array([g.var() for g in groups])
        for j in np.argsort(-variances, kind="stable"):
            if len(groups) >= params.k_max:
                break
            if variances[j] <= params.sigma2_max:
                break
            g = groups[j]
            sd = np.sqrt(variances[j])
            lo = g[np.abs(g - (g.mean() - sd)) <= np.abs(g - (g.mean() + sd))]
            hi = g[np.abs(g - (g.mean() - sd)) > np.abs(g - (g.mean() + sd))]
            if lo.size == 0 or hi.size == 0:
                continue
            groups[j] = lo
            groups.append(hi)

        if len(groups) > 1:
            gc = np.array([g.mean() for g in groups])
            order = np.argsort(gc, kind="stable")
            gaps = np.diff(gc[order])
            i = int(np.argmin(gaps))
            if gaps[i] < params.d_min:
                a, b = order[i], order[i + 1]
                merged = np.concatenate([groups[a], groups[b]])
                groups = [g for j, g in enumerate(groups) if j not in (a, b)] + [merged]

        centers = np.sort(np.array([g.mean() for g in groups]))
        new_labels = _assign(x, centers)
        same_k = previous[0].size == centers.size
        if same_k and np.allclose(previous[0], centers, rtol=0, atol=1e-12):
            if previous[1] is not None and np.array_equal(previous[1], new_labels):
                break
        labels = new_labels

    # final pass: enforce n_min and make every center its members' mean
    centers, labels = _discard_small(x, centers, params.n_min)
    return SpeedClusterSet.from_labels(x, labels)
