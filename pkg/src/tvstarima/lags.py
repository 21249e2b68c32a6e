"""Temporal lags between stations derived from distance and regime speed.

A platoon covering ``L`` feet at ``v`` ft/s needs ``L / v`` seconds, so the
upstream reading that best explains a downstream one sits
``round((L / v) / tau)`` slots earlier.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .ccf import best_lag, ccf_profile
from .core_data import StationNetwork
from .errors import ParameterError
from .partition import TimeRange

UNDEFINED = -1


@dataclass(frozen=True, eq=False)
class LagMatrix:
    """Lags of spatial order ``order``: ``entries[m, n]`` delays station ``m``'s
    reading into station ``n``'s equation. Pairs that are not ``order`` hops
    apart, upstream to downstream, hold :data:`UNDEFINED`.
    """

    order: int
    entries: np.ndarray
    regime: Optional[TimeRange] = None
    source: str = "speed"

    def __post_init__(self):
        e = np.array(self.entries, dtype=int)
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)

    def pairs(self):
        """Yield ``(m, n, lag)`` for every defined entry."""
        for m, n in zip(*np.nonzero(self.entries != UNDEFINED)):
            yield int(m), int(n), int(self.entries[m, n])

    def max_lag(self) -> int:
        defined = self.entries[self.entries != UNDEFINED]
        return int(defined.max()) if defined.size else 0


def travel_lag(distance_feet: float, speed: float, tau_seconds: float) -> int:
    """Travel time in slots, rounded half-up and never below one slot."""
    if not distance_feet > 0:
        raise ParameterError(f"distance must be positive, got {distance_feet}")
    if not speed > 0:
        raise ParameterError(f"speed must be positive, got {speed} (stalled regime)")
    if not tau_seconds > 0:
        raise ParameterError(f"slot width must be positive, got {tau_seconds}")
    return max(1, int(math.floor(distance_feet / speed / tau_seconds + 0.5)))


def _check_order(network: StationNetwork, lam: int):
    if lam < 0 or lam >= len(network):
        raise ParameterError(f"spatial order bound {lam} must be below the station count {len(network)}")


def lag_matrices_for_speed(
    network: StationNetwork, speed: float, lam: int, tau: float, regime: Optional[TimeRange] = None
) -> List[LagMatrix]:
    _check_order(network, lam)
    n_st = len(network)
    out = []
    for order in range(1, lam + 1):
        e = np.full((n_st, n_st), UNDEFINED, dtype=int)
        for n in range(n_st):
            m = network.upstream_neighbor(n, order)
            if m is not None:
                e[m, n] = travel_lag(network.distance(m, n), speed, tau)
        out.append(LagMatrix(order, e, regime, "speed"))
    return out


def build_lag_matrices(network: StationNetwork, regime: TimeRange, lam: int, tau: float) -> List[LagMatrix]:
    """Lag matrices for orders ``1..lam`` at the regime's mean speed."""
    return lag_matrices_for_speed(network, regime.mean_speed, lam, tau, regime)


def constant_lag_matrices(network: StationNetwork, lam: int, lag: int = 1) -> List[LagMatrix]:
    """Every defined pair delayed by the same ``lag`` slots (classic STARIMA)."""
    _check_order(network, lam)
    n_st = len(network)
    out = []
    for order in range(1, lam + 1):
        e = np.full((n_st, n_st), UNDEFINED, dtype=int)
        for n in range(n_st):
            m = network.upstream_neighbor(n, order)
            if m is not None:
                e[m, n] = lag
        out.append(LagMatrix(order, e, None, "constant"))
    return out


def lag_from_ccf(u, y, k_max: int) -> int:
    """Lag in ``1..k_max`` at which ``y`` correlates best with earlier ``u``."""
    return best_lag(ccf_profile(u, y, k_max), min_lag=1)


def ccf_lag_matrices(network: StationNetwork, flows: np.ndarray, lam: int, k_max: int) -> List[LagMatrix]:
    """One CCF-derived lag per station pair, estimated on the columns of ``flows``."""
    _check_order(network, lam)
    flows = np.asarray(flows, dtype=float)
    n_st = len(network)
    out = []
    for order in range(1, lam + 1):
        e = np.full((n_st, n_st), UNDEFINED, dtype=int)
        for n in range(n_st):
            m = network.upstream_neighbor(n, order)
            if m is not None:
                e[m, n] = lag_from_ccf(flows[:, m], flows[:, n], k_max)
        out.append(LagMatrix(order, e, None, "ccf"))
    return out
