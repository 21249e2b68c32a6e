"""Stage functions that chain the modules into a full day's analysis.

Flow and speed are smoothed to different slot widths; the partition lives on
the speed grid and every flow slot is mapped to its range by time of day.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from . import starima as st
from .clustering import IsodataParams, SpeedClusterSet, isodata_1d
from .core_data import FlowPanel, Kind, SlotSeries, StationNetwork
from .errors import EstimationError, ParameterError
from .lags import LagMatrix, build_lag_matrices, ccf_lag_matrices, constant_lag_matrices
from .metrics import EvalReport, evaluate
from .partition import DayPartition, classify_periods

logger = logging.getLogger(__name__)

MODEL_NAMES = ("speed_varying", "fixed_ccf", "fixed_constant", "arima")
DAY = "day"


def speed_profile(speeds: FlowPanel, source: str = "mean") -> np.ndarray:
    """Corridor speed per slot: the station mean, or one station's column."""
    if source == "mean":
        return speeds.matrix.mean(axis=1)
    if source not in speeds.stations:
        raise ParameterError(f"speed source {source!r} is neither 'mean' nor a station id")
    return speeds.column(source).copy()


def classify_day(speed: np.ndarray, params: IsodataParams, delta: int,
                 slot_seconds: float) -> Tuple[SpeedClusterSet, DayPartition]:
    clusters = isodata_1d(speed, params)
    return clusters, classify_periods(clusters, speed, delta, slot_seconds)


def range_of_slots(panel: FlowPanel, partition: DayPartition) -> np.ndarray:
    """Range index of every slot of ``panel``."""
    return np.array([partition.range_index_at(s * panel.slot_seconds) for s in panel.slots], dtype=int)


def lag_schedule(mode: st.LagMode, network: StationNetwork, partition: DayPartition,
                 flows: FlowPanel, lam: int, k_max: int = 10) -> List[List[LagMatrix]]:
    """Lag matrices per range (speed_varying) or a single set (fixed modes)."""
    mode = st.LagMode(mode)
    if lam == 0:
        return []
    if mode is st.LagMode.SPEED_VARYING:
        return [build_lag_matrices(network, r, lam, flows.slot_seconds) for r in partition]
    if mode is st.LagMode.FIXED_CCF:
        return [ccf_lag_matrices(network, flows.matrix, lam, k_max)]
    return [constant_lag_matrices(network, lam)]


def holdout_mask(panel: FlowPanel, partition: DayPartition, horizon: int) -> np.ndarray:
    """True on the last ``horizon`` slots of every range."""
    if horizon < 1:
        raise ParameterError("horizon must be positive")
    ranges = range_of_slots(panel, partition)
    mask = np.zeros(panel.n_slots, dtype=bool)
    for r in range(len(partition)):
        idx = np.flatnonzero(ranges == r)
        mask[idx[-horizon:]] = True
    return mask


def fit_mode(panel: FlowPanel, network: StationNetwork, partition: DayPartition, spec: st.StarimaSpec,
             train: np.ndarray, per_range: bool = True, k_max: int = 10) -> st.AnyModel:
    """Fit one lag mode; per-range refits fall back to the shared fit for short ranges."""
    weights = st.build_weights(network, spec.lam)
    lags = lag_schedule(spec.lag_mode, network, partition, panel, spec.lam, k_max)
    shared = st.fit(panel, spec, weights, lags, partition, rows=train)
    if not per_range:
        return shared
    return st.fit_per_range(panel, spec, weights, lags, partition, train, fallback=shared)


def arima_predictions(panel: FlowPanel, partition: DayPartition, train: np.ndarray,
                      order=(2, 1, 2), per_range: bool = True) -> FlowPanel:
    """One-step predictions from an independent ARIMA per station (and range)."""
    p, d, q = order
    ranges = range_of_slots(panel, partition)
    out = np.full(panel.matrix.shape, np.nan)
    for j, sid in enumerate(panel.stations):
        series = SlotSeries(sid, Kind.FLOW, panel.slot_seconds, panel.start_slot, panel.matrix[:, j])
        single = st.as_panel(series)
        shared = st.fit_arima(series, p, d, q, rows=train)
        for r in range(len(partition) if per_range else 1):
            model = shared
            if per_range:
                try:
                    model = st.fit_arima(series, p, d, q, rows=train & (ranges == r))
                except EstimationError as exc:
                    logger.info("ARIMA %s range %s uses the shared fit: %s", sid, partition.label(r), exc)
            pred = st.one_step_predictions(model, single).matrix[:, 0]
            sel = ranges == r if per_range else slice(None)
            out[sel, j] = pred[sel]
    return FlowPanel(panel.stations, panel.slot_seconds, out, panel.start_slot)


def score(panel: FlowPanel, predicted: FlowPanel, partition: DayPartition,
          test: np.ndarray) -> List[EvalReport]:
    """Per-station reports for every range's test slots plus a whole-day row."""
    ranges = range_of_slots(panel, partition)
    reports = []
    for j, sid in enumerate(panel.stations):
        a, p = panel.matrix[:, j], predicted.matrix[:, j]
        for r in range(len(partition)):
            sel = test & (ranges == r)
            if np.any(sel):
                reports.append(evaluate(sid, partition.label(r), a[sel], p[sel]))
        reports.append(evaluate(sid, DAY, a[test], p[test]))
    return reports


@dataclass(frozen=True)
class Comparison:
    """Evaluation of every model on one day's held-out slots."""

    reports: Dict[str, List[EvalReport]]
    predictions: Dict[str, FlowPanel]
    test: np.ndarray

    def day_mape(self, model: str) -> Dict[str, float]:
        return {r.station_id: r.mape for r in self.reports[model] if r.range_label == DAY}


def compare_models(panel: FlowPanel, network: StationNetwork, partition: DayPartition,
                   spec: st.StarimaSpec, horizon: int = 30, per_range: bool = True, k_max: int = 10,
                   arima_order=(2, 1, 2), models: Sequence[str] = MODEL_NAMES) -> Comparison:
    """Score each lag mode and the ARIMA baseline by rolling one-step predictions.

    The last ``horizon`` slots of every range are withheld from estimation and
    each of them is predicted from the observations before it.
    """
    test = holdout_mask(panel, partition, horizon)
    train = ~test
    reports, preds = {}, {}
    for name in models:
        if name == "arima":
            pred = arima_predictions(panel, partition, train, arima_order, per_range)
        else:
            mode_spec = st.StarimaSpec(spec.lam, spec.d, spec.q, spec.m, st.LagMode(name), spec.ar_order_l0)
            model = fit_mode(panel, network, partition, mode_spec, train, per_range, k_max)
            pred = st.one_step_predictions(model, panel, partition)
        if np.any(np.isnan(pred.matrix[test])):
            raise EstimationError(f"{name}: held-out slots lack the history needed to predict them")
        preds[name] = pred
        reports[name] = score(panel, pred, partition, test)
    return Comparison(reports, preds, test)
