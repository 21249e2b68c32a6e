"""Space-time ARIMA with regime-dependent spatial lags.

For station ``n`` at slot ``t`` the differenced reading ``z_n(t)`` is
regressed on

* its own past ``z_n(t - j)``, ``j = 1..p0`` (the order-0 neighbour),
* ``sum_m W_l[n, m] z_m(t - P_l[m, n])`` for spatial orders ``l = 1..lambda``,
  where the lag matrix ``P_l`` belongs to the speed regime active at ``t``,
* ``sum_m W_l[n, m] e_m(t - k)`` for ``k = 1..q`` and ``l = 0..m_k``.

One coefficient per term is shared by all stations. Estimation is two-stage
conditional least squares (Hannan-Rissanen): a long autoregression supplies
residual estimates that stand in for the unobserved innovations in the final
regression.
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .core_data import FlowPanel, SlotSeries, StationNetwork, difference, undifference
from .errors import EstimationError, ParameterError, ShapeError
from .lags import UNDEFINED, LagMatrix
from .partition import DayPartition

logger = logging.getLogger(__name__)

RIDGE = 1e-8


class LagMode(str, enum.Enum):
    SPEED_VARYING = "speed_varying"
    FIXED_CCF = "fixed_ccf"
    FIXED_CONSTANT = "fixed_constant"


@dataclass(frozen=True)
class StarimaSpec:
    """Model orders.

    ``lam`` is the largest spatial order, ``d`` the differencing order, ``q``
    the MA order and ``m[k-1]`` the largest spatial order of MA lag ``k``
    (defaults to ``lam`` for every ``k``). ``ar_order_l0`` gives the number of
    own lags, either one value for all stations or one per station.
    """

    lam: int = 1
    d: int = 1
    q: int = 1
    m: Optional[Tuple[int, ...]] = None
    lag_mode: LagMode = LagMode.SPEED_VARYING
    ar_order_l0: Union[int, Tuple[int, ...]] = 2

    def __post_init__(self):
        object.__setattr__(self, "lag_mode", LagMode(self.lag_mode))
        if self.lam < 0 or self.d < 0 or self.q < 0:
            raise ParameterError("lambda, d and q must be non-negative")
        m = (self.lam,) * self.q if self.m is None else tuple(int(v) for v in self.m)
        if len(m) != self.q:
            raise ParameterError(f"need one spatial MA order per MA lag, got {len(m)} for q={self.q}")
        if any(not 0 <= v <= self.lam for v in m):
            raise ParameterError("each m_k must lie in [0, lambda]")
        object.__setattr__(self, "m", m)
        ar = self.ar_order_l0
        ar = int(ar) if np.isscalar(ar) else tuple(int(v) for v in ar)
        if np.any(np.asarray(ar) < 0):
            raise ParameterError("own-lag orders must be non-negative")
        object.__setattr__(self, "ar_order_l0", ar)

    def ar_orders(self, n_stations: int) -> np.ndarray:
        if isinstance(self.ar_order_l0, tuple):
            if len(self.ar_order_l0) != n_stations:
                raise ShapeError(f"{len(self.ar_order_l0)} own-lag orders for {n_stations} stations")
            return np.array(self.ar_order_l0, dtype=int)
        return np.full(n_stations, self.ar_order_l0, dtype=int)

    @property
    def p0(self) -> int:
        return int(np.max(self.ar_order_l0)) if np.size(self.ar_order_l0) else 0

    @property
    def n_coefficients(self) -> int:
        return self.p0 + self.lam + sum(v + 1 for v in self.m)

    def coefficient_names(self) -> List[str]:
        names = [f"phi0.L{j}" for j in range(1, self.p0 + 1)]
        names += [f"phi{l}" for l in range(1, self.lam + 1)]
        names += [f"theta{k}.{l}" for k in range(1, self.q + 1) for l in range(self.m[k - 1] + 1)]
        return names

    def to_dict(self) -> dict:
        ar = list(self.ar_order_l0) if isinstance(self.ar_order_l0, tuple) else self.ar_order_l0
        return {"lambda": self.lam, "d": self.d, "q": self.q, "m": list(self.m),
                "lag_mode": self.lag_mode.value, "ar_order_l0": ar}

    @classmethod
    def from_dict(cls, doc: dict) -> "StarimaSpec":
        ar = doc["ar_order_l0"]
        return cls(doc["lambda"], doc["d"], doc["q"], tuple(doc["m"]), doc["lag_mode"],
                   tuple(ar) if isinstance(ar, list) else ar)


@dataclass(frozen=True, eq=False)
class WeightMatrices:
    """``W[0]`` is the identity; ``W[l][n, m] > 0`` iff ``m`` is ``l`` hops upstream of ``n``."""

    W: Tuple[np.ndarray, ...]

    def __post_init__(self):
        mats = []
        for w in self.W:
            w = np.array(w, dtype=float)
            w.setflags(write=False)
            mats.append(w)
        object.__setattr__(self, "W", tuple(mats))

    def __len__(self) -> int:
        return len(self.W)

    def __getitem__(self, l) -> np.ndarray:
        return self.W[l]


def build_weights(network: StationNetwork, lam: int) -> WeightMatrices:
    n = len(network)
    if lam < 0 or lam >= n:
        raise ParameterError(f"spatial order bound {lam} must be below the station count {n}")
    mats = [np.eye(n)]
    for l in range(1, lam + 1):
        w = np.zeros((n, n))
        for i in range(n):
            m = network.upstream_neighbor(i, l)
            if m is not None:
                w[i, m] = 1.0
        rows = w.sum(axis=1, keepdims=True)
        mats.append(np.divide(w, rows, out=np.zeros_like(w), where=rows > 0))
    return WeightMatrices(tuple(mats))


# ---------------------------------------------------------------------------
# regressor construction shared by estimation and prediction


@dataclass(frozen=True, eq=False)
class _Layout:
    """Everything needed to build regressor rows for a panel."""

    spec: StarimaSpec
    weights: WeightMatrices
    ar_orders: np.ndarray
    lag_table: np.ndarray  # (n_regimes, lam, N, N) with UNDEFINED holes

    @property
    def n_stations(self) -> int:
        return self.ar_orders.size

    def max_spatial_lag(self) -> int:
        defined = self.lag_table[self.lag_table != UNDEFINED]
        return int(defined.max()) if defined.size else 0

    def first_row(self, long_order: int = 0) -> int:
        """Earliest differenced index whose regressors (innovations included) are all defined."""
        t0 = max(self.spec.p0, self.max_spatial_lag())
        if self.spec.q:
            t0 = max(t0, first_long_row(self, long_order) + self.spec.q)
        return t0

    def rows(self, ts: np.ndarray, z: np.ndarray, e: np.ndarray, regimes: np.ndarray) -> np.ndarray:
        """Regressor matrix with rows ordered (t, station), columns as :meth:`StarimaSpec.coefficient_names`."""
        spec = self.spec
        ts = np.asarray(ts, dtype=int)
        n_st = self.n_stations
        cols = []
        for j in range(1, spec.p0 + 1):
            block = z[ts - j, :]
            cols.append(np.where(self.ar_orders[None, :] >= j, block, 0.0))
        for l in range(1, spec.lam + 1):
            w = self.weights[l]
            block = np.zeros((ts.size, n_st))
            lags = self.lag_table[regimes[ts], l - 1]  # (len(ts), N, N)
            for n in range(n_st):
                for m in np.flatnonzero(w[n]):
                    block[:, n] += w[n, m] * z[ts - lags[:, m, n], m]
            cols.append(block)
        for k in range(1, spec.q + 1):
            lagged = e[ts - k, :]
            for l in range(spec.m[k - 1] + 1):
                cols.append(lagged @ self.weights[l].T)
        if not cols:
            return np.zeros((ts.size * n_st, 0))
        return np.stack(cols, axis=-1).reshape(ts.size * n_st, len(cols))


def _spatial_span(layout: _Layout, l: int, order: int) -> int:
    """Number of weighted lags of spatial order ``l`` in the long autoregression."""
    table = layout.lag_table[:, l - 1]
    defined = table[table != UNDEFINED]
    return order + (int(defined.max()) if defined.size else 1) - 1


def long_rows(layout: _Layout, ts: np.ndarray, z: np.ndarray, order: int) -> np.ndarray:
    """Regressors of the long autoregression with rows ordered (t, station).

    Own lags ``1..order`` and, per spatial order, weighted lags covering every
    regime's spatial lag plus ``order - 1`` further slots. The span absorbs the
    spatial terms produced when the MA part is inverted.
    """
    ts = np.asarray(ts, dtype=int)
    cols = [z[ts - j, :] for j in range(1, order + 1)]
    for l in range(1, layout.spec.lam + 1):
        w = layout.weights[l]
        cols += [z[ts - k, :] @ w.T for k in range(1, _spatial_span(layout, l, order) + 1)]
    if not cols:
        return np.zeros((ts.size * layout.n_stations, 0))
    return np.stack(cols, axis=-1).reshape(ts.size * layout.n_stations, len(cols))


def long_names(layout: _Layout, order: int) -> List[str]:
    names = [f"long.L{j}" for j in range(1, order + 1)]
    for l in range(1, layout.spec.lam + 1):
        names += [f"long.W{l}.L{k}" for k in range(1, _spatial_span(layout, l, order) + 1)]
    return names


def long_order(layout: _Layout, n_obs: int) -> int:
    spec = layout.spec
    return max(2 * max(spec.p0, spec.q, 1), int(np.ceil(np.log(max(n_obs, 2)))))


def first_long_row(layout: _Layout, order: int) -> int:
    return max([order] + [_spatial_span(layout, l, order) for l in range(1, layout.spec.lam + 1)])


def _lag_table(lag_matrices: Sequence[Sequence[LagMatrix]], lam: int, n_st: int) -> np.ndarray:
    if lam == 0:
        return np.full((max(len(lag_matrices), 1), 0, n_st, n_st), UNDEFINED, dtype=int)
    if not lag_matrices:
        raise ParameterError("spatial terms need lag matrices")
    table = np.full((len(lag_matrices), lam, n_st, n_st), UNDEFINED, dtype=int)
    for r, mats in enumerate(lag_matrices):
        if len(mats) < lam:
            raise ShapeError(f"regime {r} has {len(mats)} lag matrices, need {lam}")
        for l in range(lam):
            table[r, l] = mats[l].entries
    return table


def _check_lags_cover_weights(layout: _Layout):
    for l in range(1, layout.spec.lam + 1):
        w = layout.weights[l]
        need = w.T > 0  # need[m, n]
        holes = (layout.lag_table[:, l - 1] == UNDEFINED) & need[None]
        if np.any(holes):
            r, m, n = (int(v[0]) for v in np.nonzero(holes))
            raise ShapeError(f"regime {r}: no order-{l} lag for pair ({m}, {n})")


def regimes_for_slots(slots: np.ndarray, slot_seconds: float, partition: Optional[DayPartition],
                      n_regimes: int) -> np.ndarray:
    """Regime (range) index of each absolute slot; all zero without a partition."""
    slots = np.asarray(slots)
    if n_regimes == 1:
        return np.zeros(slots.size, dtype=int)
    if partition is None:
        raise ParameterError(f"{n_regimes} lag sets need a partition to choose between them")
    if len(partition) != n_regimes:
        raise ShapeError(f"{n_regimes} lag sets for a partition of {len(partition)} ranges")
    return np.array([partition.range_index_at(s * slot_seconds) for s in slots], dtype=int)


def _solve(x: np.ndarray, y: np.ndarray, names: Sequence[str]):
    k = x.shape[1]
    if k == 0:
        return np.zeros(0), np.zeros((0, 0))
    gram = x.T @ x
    # exactly dependent columns make the ridge the only thing holding the solve together
    r = np.linalg.qr(x, mode="r")
    diag = np.abs(np.diag(r))
    tol = max(x.shape) * np.finfo(float).eps * (diag.max() if diag.size else 0.0)
    weak = np.flatnonzero(diag <= max(tol, 1e-10 * (diag.max() if diag.size else 0)))
    if weak.size:
        raise EstimationError(
            "design matrix is singular; collinear column(s): " + ", ".join(names[i] for i in weak)
        )
    # relative to the mean column energy so that rescaling the data rescales nothing else
    a = gram + RIDGE * max(float(np.mean(np.diag(gram))), np.finfo(float).tiny) * np.eye(k)
    try:
        beta = np.linalg.solve(a, x.T @ y)
        inv = np.linalg.inv(a)
    except np.linalg.LinAlgError as exc:
        raise EstimationError(f"normal equations could not be solved: {exc}") from exc
    return beta, inv


# ---------------------------------------------------------------------------
# model


@dataclass(frozen=True, eq=False)
class StarimaModel:
    """A fitted model.

    ``theta[k-1][l]`` is the MA coefficient of lag ``k`` and spatial order
    ``l``. ``long_coefficients`` belong to the stage-one autoregression (columns as
    :func:`long_names`); prediction reuses them to reconstruct past
    innovations exactly as estimation did.
    """

    spec: StarimaSpec
    weights: WeightMatrices
    stations: Tuple[str, ...]
    slot_seconds: float
    ar_orders: Tuple[int, ...]
    phi_own: np.ndarray
    phi_spatial: np.ndarray
    theta: Tuple[np.ndarray, ...]
    lag_matrices: Tuple[Tuple[LagMatrix, ...], ...]
    residual_variance: float
    residuals: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    stderr: np.ndarray = field(default_factory=lambda: np.zeros(0))
    n_obs: int = 0
    long_order: int = 0
    long_coefficients: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def coefficients(self) -> np.ndarray:
        """Regression coefficients in column order (MA columns carry ``-theta``)."""
        parts = [self.phi_own, self.phi_spatial] + [-t for t in self.theta]
        return np.concatenate([np.asarray(p, dtype=float) for p in parts])

    def layout(self) -> _Layout:
        table = _lag_table(self.lag_matrices, self.spec.lam, len(self.stations))
        return _Layout(self.spec, self.weights, np.asarray(self.ar_orders), table)

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "stations": list(self.stations),
            "slot_seconds": self.slot_seconds,
            "ar_orders": list(self.ar_orders),
            "weights": [w.tolist() for w in self.weights.W],
            "phi_own": self.phi_own.tolist(),
            "phi_spatial": self.phi_spatial.tolist(),
            "theta": [t.tolist() for t in self.theta],
            "lag_matrices": [
                [{"order": lm.order, "entries": lm.entries.tolist(), "source": lm.source} for lm in mats]
                for mats in self.lag_matrices
            ],
            "residual_variance": self.residual_variance,
            "residuals": self.residuals.tolist(),
            "stderr": self.stderr.tolist(),
            "n_obs": self.n_obs,
            "long_order": self.long_order,
            "long_coefficients": self.long_coefficients.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "StarimaModel":
        n_st = len(doc["stations"])
        return cls(
            spec=StarimaSpec.from_dict(doc["spec"]),
            weights=WeightMatrices(tuple(np.array(w, dtype=float) for w in doc["weights"])),
            stations=tuple(doc["stations"]),
            slot_seconds=float(doc["slot_seconds"]),
            ar_orders=tuple(int(v) for v in doc["ar_orders"]),
            phi_own=np.array(doc["phi_own"], dtype=float),
            phi_spatial=np.array(doc["phi_spatial"], dtype=float),
            theta=tuple(np.array(t, dtype=float) for t in doc["theta"]),
            lag_matrices=tuple(
                tuple(LagMatrix(d["order"], np.array(d["entries"], dtype=int), None, d["source"]) for d in mats)
                for mats in doc["lag_matrices"]
            ),
            residual_variance=float(doc["residual_variance"]),
            residuals=np.array(doc["residuals"], dtype=float).reshape(-1, n_st),
            stderr=np.array(doc["stderr"], dtype=float),
            n_obs=int(doc["n_obs"]),
            long_order=int(doc["long_order"]),
            long_coefficients=np.array(doc["long_coefficients"], dtype=float),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "StarimaModel":
        return cls.from_dict(json.loads(text))


def _unpack(spec: StarimaSpec, beta: np.ndarray):
    p0, lam = spec.p0, spec.lam
    theta = []
    pos = p0 + lam
    for k in range(spec.q):
        width = spec.m[k] + 1
        # the MA polynomial carries a minus sign: column coefficient = -theta
        theta.append(-beta[pos : pos + width].copy())
        pos += width
    return beta[:p0].copy(), beta[p0 : p0 + lam].copy(), tuple(theta)


def _row_indices(n_z: int, d: int, start_slot: int, rows, t0: int) -> np.ndarray:
    """Differenced indices used as regression rows."""
    ts = np.arange(t0, n_z)
    if rows is None:
        return ts
    rows = np.asarray(rows)
    if rows.dtype == bool:
        if rows.size != n_z + d:
            raise ShapeError("row mask must cover every panel slot")
        return ts[rows[ts + d]]
    wanted = np.asarray(rows, dtype=int) - start_slot - d
    return np.intersect1d(ts, wanted)


def _innovations(layout: _Layout, z: np.ndarray, order: int, coefs: np.ndarray) -> np.ndarray:
    """Stage-one residuals; zero where the long autoregression is not yet defined."""
    e = np.zeros_like(z)
    if layout.spec.q == 0:
        return e
    t1 = first_long_row(layout, order)
    ts = np.arange(t1, z.shape[0])
    if ts.size:
        e[ts] = z[ts] - (long_rows(layout, ts, z, order) @ coefs).reshape(ts.size, -1)
    return e


def fit(
    panel: FlowPanel,
    spec: StarimaSpec,
    weights: WeightMatrices,
    lag_matrices: Sequence[Sequence[LagMatrix]] = (),
    partition: Optional[DayPartition] = None,
    rows=None,
) -> StarimaModel:
    """Estimate a model by two-stage conditional least squares.

    Parameters
    ----------
    panel : FlowPanel
        Levels, one column per station in network order.
    spec : StarimaSpec
    weights : WeightMatrices
        From :func:`build_weights`.
    lag_matrices : sequence of lag-matrix lists
        One list (orders ``1..lambda``) per range of ``partition``, or a single
        list applied at every slot.
    partition : DayPartition, optional
        Decides which list of lag matrices is active at each slot.
    rows : bool mask over panel slots or iterable of absolute slots, optional
        Restricts the regression rows (the lagged regressors may still reach
        back before them). Defaults to every usable slot.
    """
    n_st = panel.n_stations
    if len(weights) != spec.lam + 1 or weights[0].shape != (n_st, n_st):
        raise ShapeError("weight matrices do not match the spec and panel")
    layout = _Layout(spec, weights, spec.ar_orders(n_st), _lag_table(lag_matrices, spec.lam, n_st))
    _check_lags_cover_weights(layout)

    z, _ = difference(panel.matrix, spec.d)
    n_z = z.shape[0]
    regimes = regimes_for_slots(panel.slots[spec.d:], panel.slot_seconds, partition, layout.lag_table.shape[0])
    names = spec.coefficient_names()

    h = long_order(layout, n_z) if spec.q else 0
    ts = _row_indices(n_z, spec.d, panel.start_slot, rows, layout.first_row(h))
    n_coef = spec.n_coefficients
    if ts.size * n_st < 10 * max(n_coef, 1):
        raise EstimationError(
            f"{ts.size} usable slots x {n_st} stations is too little data for {n_coef} coefficients"
        )

    b1 = np.zeros(0)
    if spec.q:
        long_ts = _row_indices(n_z, spec.d, panel.start_slot, rows, first_long_row(layout, h))
        x1 = long_rows(layout, long_ts, z, h)
        b1, _ = _solve(x1, z[long_ts].reshape(-1), long_names(layout, h))
    e_hat = _innovations(layout, z, h, b1)

    x = layout.rows(ts, z, e_hat, regimes)
    y = z[ts].reshape(-1)
    beta, inv = _solve(x, y, names)
    resid = y - x @ beta
    dof = max(y.size - n_coef, 1)
    stderr = np.sqrt(np.maximum(np.diag(inv), 0.0) * float(resid @ resid) / dof)

    phi_own, phi_sp, theta = _unpack(spec, beta)
    return StarimaModel(
        spec=spec,
        weights=weights,
        stations=panel.stations,
        slot_seconds=panel.slot_seconds,
        ar_orders=tuple(int(v) for v in layout.ar_orders),
        phi_own=phi_own,
        phi_spatial=phi_sp,
        theta=theta,
        lag_matrices=tuple(tuple(m) for m in lag_matrices) if spec.lam else (),
        residual_variance=float(np.mean(resid ** 2)),
        residuals=resid.reshape(ts.size, n_st)[-max(spec.q, 1):].copy(),
        stderr=stderr,
        n_obs=int(y.size),
        long_order=h,
        long_coefficients=b1,
    )


def fit_arima(series: Union[SlotSeries, np.ndarray], p: int, d: int, q: int,
              slot_seconds: float = 1.0, rows=None) -> StarimaModel:
    """ARIMA(p, d, q) for a single station: the model without spatial terms."""
    spec = StarimaSpec(lam=0, d=d, q=q, m=(0,) * q, lag_mode=LagMode.FIXED_CONSTANT, ar_order_l0=p)
    return fit(as_panel(series, slot_seconds), spec, WeightMatrices((np.eye(1),)), rows=rows)


def as_panel(series: Union[SlotSeries, np.ndarray], slot_seconds: float = 1.0, name: str = "y") -> FlowPanel:
    if isinstance(series, SlotSeries):
        return FlowPanel((series.station_id,), series.slot_seconds, series.values[:, None], series.start_slot)
    return FlowPanel((name,), slot_seconds, np.asarray(series, dtype=float)[:, None])


# ---------------------------------------------------------------------------
# prediction


class RegimeModels:
    """Per-range refits sharing one spec, station set and lag schedule.

    ``models[r]`` serves every target slot inside range ``r``.
    """

    def __init__(self, models: Dict[int, StarimaModel], n_ranges: int):
        missing = [r for r in range(n_ranges) if r not in models]
        if not models or missing:
            raise ParameterError(f"no model for range(s) {missing or list(range(n_ranges))}")
        self.models = dict(models)
        self.n_ranges = n_ranges
        first = models[0]
        for m in models.values():
            if m.spec != first.spec or m.stations != first.stations:
                raise ParameterError("per-range models must share spec and stations")
        self.spec = first.spec
        self.stations = first.stations
        self.slot_seconds = first.slot_seconds

    def __getitem__(self, r: int) -> StarimaModel:
        return self.models[r]

    def to_dict(self) -> dict:
        return {"kind": "per_range", "n_ranges": self.n_ranges,
                "models": {str(r): m.to_dict() for r, m in sorted(self.models.items())}}

    @classmethod
    def from_dict(cls, doc: dict) -> "RegimeModels":
        return cls({int(r): StarimaModel.from_dict(m) for r, m in doc["models"].items()}, doc["n_ranges"])


AnyModel = Union[StarimaModel, RegimeModels]


class _Predictor:
    """Model recursion over a grid of differenced slots (history then future)."""

    def __init__(self, model: AnyModel, start_slot: int, n_total: int, partition: Optional[DayPartition]):
        if isinstance(model, RegimeModels):
            self.members = [model[r] for r in range(model.n_ranges)]
        else:
            self.members = [model]
        base = self.members[0]
        self.spec = base.spec
        self.layouts = [m.layout() for m in self.members]
        n_lag_regimes = self.layouts[0].lag_table.shape[0]
        switching = n_lag_regimes > 1 or len(self.members) > 1
        slots = np.arange(start_slot + self.spec.d, start_slot + n_total)
        if switching:
            if partition is None:
                raise ParameterError("this model switches by range; a partition is required")
            ranges = np.array([partition.range_index_at(s * base.slot_seconds) for s in slots], dtype=int)
        else:
            ranges = np.zeros(slots.size, dtype=int)
        self.lag_regimes = ranges if n_lag_regimes > 1 else np.zeros_like(ranges)
        self.member_of = ranges if len(self.members) > 1 else np.zeros_like(ranges)
        self.t0 = max(l.first_row(m.long_order) for l, m in zip(self.layouts, self.members))

    def innovations(self, z: np.ndarray) -> np.ndarray:
        """Stage-one innovations per member model, shape ``(members, T, N)``."""
        return np.stack([
            _innovations(l, z, m.long_order, m.long_coefficients)
            for l, m in zip(self.layouts, self.members)
        ])

    def predict(self, ts: np.ndarray, z: np.ndarray, e: np.ndarray) -> np.ndarray:
        """Predicted differenced values at indices ``ts``, shape ``(len(ts), N)``."""
        ts = np.asarray(ts, dtype=int)
        out = np.empty((ts.size, z.shape[1]))
        for r, (layout, member) in enumerate(zip(self.layouts, self.members)):
            sel = self.member_of[ts] == r
            if np.any(sel):
                x = layout.rows(ts[sel], z, e[r], self.lag_regimes)
                out[sel] = (x @ member.coefficients).reshape(int(sel.sum()), -1)
        return out


def _check_history(model: AnyModel, history: FlowPanel):
    if tuple(history.stations) != tuple(model.stations):
        raise ShapeError("history stations differ from the model's")
    if history.slot_seconds != model.slot_seconds:
        raise ShapeError("history slot width differs from the model's")


def forecast(model: AnyModel, history: FlowPanel, horizon: int,
             partition: Optional[DayPartition] = None, trace: Optional[list] = None) -> FlowPanel:
    """Recursive multi-step forecast of the levels following ``history``.

    Forecast values feed later steps and future innovations are set to zero.
    Spatial lags (and, for per-range refits, coefficients) follow the range of
    the slot being forecast. Pass a list as ``trace`` to record
    ``(slot, range, lag_table)`` for every step.
    """
    if horizon < 1:
        raise ParameterError("horizon must be positive")
    _check_history(model, history)
    d = model.spec.d
    n_hist = history.n_slots
    pred = _Predictor(model, history.start_slot, n_hist + horizon, partition)
    z_hist, initials = difference(history.matrix, d)
    n_z = z_hist.shape[0]
    if n_z < pred.t0:
        raise ShapeError(f"history of {n_hist} slots cannot supply lags reaching back {pred.t0 + d}")
    e_hist = pred.innovations(z_hist)
    z = np.vstack([z_hist, np.zeros((horizon, history.n_stations))])
    e = np.concatenate([e_hist, np.zeros((e_hist.shape[0], horizon, history.n_stations))], axis=1)
    for t in range(n_z, n_z + horizon):
        z[t] = pred.predict(np.array([t]), z, e)[0]
        if trace is not None:
            r = int(pred.lag_regimes[t])
            trace.append((history.start_slot + d + t, r, pred.layouts[0].lag_table[r].copy()))
    levels = undifference(z, initials, d)[n_hist:]
    return FlowPanel(history.stations, history.slot_seconds, levels, history.start_slot + n_hist)


def one_step_predictions(model: AnyModel, panel: FlowPanel,
                         partition: Optional[DayPartition] = None) -> FlowPanel:
    """One-step-ahead level predictions at every slot from the observations before it.

    Equal to :func:`forecast` with ``horizon=1`` on each prefix of ``panel``,
    computed in one pass. Slots lacking a full set of lagged regressors are NaN.
    """
    _check_history(model, panel)
    d = model.spec.d
    pred = _Predictor(model, panel.start_slot, panel.n_slots, partition)
    z, _ = difference(panel.matrix, d)
    e = pred.innovations(z)
    ts = np.arange(pred.t0, z.shape[0])
    out = np.full(panel.matrix.shape, np.nan)
    # level = observed level - observed difference + predicted difference
    out[ts + d] = panel.matrix[ts + d] - z[ts] + pred.predict(ts, z, e)
    return FlowPanel(panel.stations, panel.slot_seconds, out, panel.start_slot)


def in_sample_residuals(model: AnyModel, panel: FlowPanel, partition: Optional[DayPartition] = None) -> np.ndarray:
    """One-step prediction errors on the differenced scale from the first full row on."""
    pred = one_step_predictions(model, panel, partition).matrix
    keep = ~np.isnan(pred[:, 0])
    return panel.matrix[keep] - pred[keep]


def fit_per_range(
    panel: FlowPanel,
    spec: StarimaSpec,
    weights: WeightMatrices,
    lag_matrices: Sequence[Sequence[LagMatrix]],
    partition: DayPartition,
    train_mask: Optional[np.ndarray] = None,
    fallback: Optional[StarimaModel] = None,
) -> RegimeModels:
    """Fit one model per range of ``partition`` on that range's training slots.

    ``train_mask`` (over panel slots) removes held-out slots. A range too short
    to estimate falls back to ``fallback`` when one is given.
    """
    ranges = np.array([partition.range_index_at(s * panel.slot_seconds) for s in panel.slots], dtype=int)
    mask = np.ones(panel.n_slots, dtype=bool) if train_mask is None else np.asarray(train_mask, dtype=bool)
    models = {}
    for r in range(len(partition)):
        try:
            models[r] = fit(panel, spec, weights, lag_matrices, partition, rows=mask & (ranges == r))
        except EstimationError as exc:
            if fallback is None:
                raise EstimationError(f"range {partition.label(r)}: {exc}") from exc
            logger.info("range %s uses the shared fit: %s", partition.label(r), exc)
            models[r] = fallback
    return RegimeModels(models, len(partition))


def model_from_dict(doc: dict) -> AnyModel:
    if doc.get("kind") == "per_range":
        return RegimeModels.from_dict(doc)
    return StarimaModel.from_dict(doc)
