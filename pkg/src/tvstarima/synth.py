"""Synthetic corridor with planted speed regimes and travel-time lags.

Random numbers come from ``numpy.random.default_rng(seed)`` (PCG64 bit
generator, ziggurat normals), drawn in a fixed order: demand innovations,
then per-station flow noise, then per-station speed jitter. Other
implementations can match the distributions, not the bit streams.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from .core_data import FlowPanel, StationNetwork
from .errors import ParameterError
from .lags import travel_lag


@dataclass(frozen=True)
class Regime:
    """Slots ``start <= t < stop`` run at ``speed`` ft/s (plus Gaussian jitter)."""

    start: int
    stop: int
    speed: float
    jitter_sd: float = 1.0


def default_regimes(n_slots: int = 2880, fast: float = 82.0, slow: float = 34.0,
                       jitter_sd: float = 2.0) -> Tuple[Regime, ...]:
    """Fast/slow alternation at 0-2, 2-4, 4-6:30, 6:30-10, 10-15, 15-18:30, 18:30-24 h."""
    hours = [0, 2, 4, 6.5, 10, 15, 18.5, 24]
    edges = [int(round(h / 24 * n_slots)) for h in hours]
    speeds = [fast, slow, fast, slow, fast, slow, fast]
    return tuple(Regime(a, b, v, jitter_sd) for a, b, v in zip(edges[:-1], edges[1:], speeds))


@dataclass(frozen=True)
class SynthConfig:
    """Corridor layout, regimes and signal parameters.

    The upstream station sees ``profile + demand + noise`` where ``demand`` is
    a stationary AR(1) fluctuation (standard deviation ``source_sd``,
    coefficient ``source_ar``). Station ``n > 1`` sees
    ``blend * flow[n-1](t - lag) + (1 - blend) * profile(t) + noise`` with the
    lag planted from the regime speed active at ``t``.
    """

    n_stations: int = 4
    spacing_feet: float = 4000.0
    regimes: Tuple[Regime, ...] = field(default_factory=lambda: default_regimes())
    n_slots: int = 2880
    profile: str = "two_peak"
    base_flow: float = 15.0
    amplitude: float = 8.0
    source_sd: float = 3.0
    source_ar: float = 0.5
    noise_sd: float = 0.3
    blend: float = 0.9
    tau_seconds: float = 30.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "regimes", tuple(self.regimes))
        if self.n_stations < 1 or self.n_slots < 1:
            raise ParameterError("need at least one station and one slot")
        if not 0.0 <= self.blend <= 1.0:
            raise ParameterError("blend must lie in [0, 1]")
        if self.profile not in ("flat", "two_peak"):
            raise ParameterError(f"unknown profile {self.profile!r}")
        if not self.tau_seconds > 0 or self.noise_sd < 0 or self.source_sd < 0:
            raise ParameterError("tau must be positive and standard deviations non-negative")
        if not -1.0 < self.source_ar < 1.0:
            raise ParameterError("source_ar must lie in (-1, 1)")
        if np.any(np.asarray(self.spacing_feet) <= 0):
            raise ParameterError("station spacing must be positive")
        expect = 0
        for r in self.regimes:
            if r.start != expect or r.stop <= r.start:
                raise ParameterError("regimes must tile the day in order")
            if not r.speed > 0 or r.jitter_sd < 0:
                raise ParameterError("regime speeds must be positive")
            expect = r.stop
        if expect != self.n_slots:
            raise ParameterError(f"regimes cover {expect} slots, the day has {self.n_slots}")


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """What the generator planted.

    ``adjacent_lags[n]`` (``n >= 1``) holds, per regime, the lag from station
    ``n-1`` to ``n``; ``regime_of_slot`` maps every slot to its regime.
    """

    regimes: Tuple[Regime, ...]
    regime_of_slot: np.ndarray
    adjacent_lags: Dict[int, Tuple[int, ...]]

    def lag(self, m: int, n: int, regime: int) -> int:
        """Planted lag from station ``m`` to downstream station ``n`` (sum along the chain)."""
        if not m < n:
            raise ParameterError("m must be upstream of n")
        return sum(self.adjacent_lags[j][regime] for j in range(m + 1, n + 1))

    def slot_lags(self, n: int) -> np.ndarray:
        """Lag into station ``n`` from its neighbour at every slot."""
        return np.asarray(self.adjacent_lags[n])[self.regime_of_slot]


def _profile(cfg: SynthConfig, t: np.ndarray) -> np.ndarray:
    if cfg.profile == "flat":
        return np.full(t.shape, cfg.base_flow, dtype=float)
    return cfg.base_flow + cfg.amplitude * 0.5 * (1.0 - np.cos(4.0 * np.pi * t / cfg.n_slots))


def generate(config: SynthConfig):
    """Simulate one day.

    Returns
    -------
    network : StationNetwork
    flows : FlowPanel
    speeds : FlowPanel
    truth : GroundTruth
    """
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    network = StationNetwork.chain(cfg.n_stations, cfg.spacing_feet)
    n_st, n_t = cfg.n_stations, cfg.n_slots

    regime_of_slot = np.empty(n_t, dtype=int)
    for i, r in enumerate(cfg.regimes):
        regime_of_slot[r.start : r.stop] = i
    adjacent = {
        n: tuple(travel_lag(network.distance(n - 1, n), r.speed, cfg.tau_seconds) for r in cfg.regimes)
        for n in range(1, n_st)
    }
    burn = sum(max(v) for v in adjacent.values()) + 1

    t = np.arange(-burn, n_t)
    regime_ext = np.concatenate([np.full(burn, regime_of_slot[0]), regime_of_slot])
    profile = _profile(cfg, t)

    xi = rng.standard_normal(t.size)
    demand = np.empty(t.size)
    demand[0] = cfg.source_sd * xi[0]
    scale = cfg.source_sd * np.sqrt(1.0 - cfg.source_ar ** 2)
    for i in range(1, t.size):
        demand[i] = cfg.source_ar * demand[i - 1] + scale * xi[i]
    noise = cfg.noise_sd * rng.standard_normal((n_st, t.size))

    flows = np.empty((n_st, t.size))
    flows[0] = profile + demand + noise[0]
    for n in range(1, n_st):
        lag = np.asarray(adjacent[n])[regime_ext]
        src = np.arange(t.size) - lag
        upstream = np.where(src >= 0, flows[n - 1][np.clip(src, 0, None)], flows[n - 1][0])
        flows[n] = cfg.blend * upstream + (1.0 - cfg.blend) * profile + noise[n]
    flows = np.clip(flows[:, burn:], 0.0, None)

    jitter = rng.standard_normal((n_st, n_t))
    mean_speed = np.array([cfg.regimes[i].speed for i in regime_of_slot])
    jitter_sd = np.array([cfg.regimes[i].jitter_sd for i in regime_of_slot])
    speeds = np.clip(mean_speed[None, :] + jitter_sd[None, :] * jitter, 0.0, None)

    flow_panel = FlowPanel(network.stations, cfg.tau_seconds, flows.T)
    speed_panel = FlowPanel(network.stations, cfg.tau_seconds, speeds.T)
    truth = GroundTruth(cfg.regimes, regime_of_slot, adjacent)
    return network, flow_panel, speed_panel, truth
