"""Domain types, CSV ingestion, slot-mean smoothing and differencing.

Every other module consumes the containers defined here:

* :class:`SlotSeries` -- one station's flow or speed readings at a fixed slot width.
* :class:`FlowPanel` -- a T x N matrix of readings, one column per station.
* :class:`StationNetwork` -- stations ordered upstream to downstream with
  cumulative positions in feet.

All containers are immutable; their arrays are flagged read-only.
"""

from __future__ import annotations

import csv
import enum
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    GapError,
    OrderingError,
    ParameterError,
    ParseError,
    SchemaError,
    ShapeError,
)

logger = logging.getLogger(__name__)

DATA_HEADER = ("slot", "station", "flow", "speed")
NETWORK_HEADER = ("station", "position_feet")


class Kind(str, enum.Enum):
    FLOW = "flow"
    SPEED = "speed"


def _frozen(values, ndim: int) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != ndim:
        raise ShapeError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SlotSeries:
    """Readings of one station at a fixed slot width.

    ``values`` holds vehicles per slot for flow and feet/second for speed.
    Slot ``start_slot + j`` covers seconds
    ``[(start_slot + j) * slot_seconds, (start_slot + j + 1) * slot_seconds)``.
    """

    station_id: str
    kind: Kind
    slot_seconds: float
    start_slot: int
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "values", _frozen(self.values, 1))
        if not self.slot_seconds > 0:
            raise ParameterError("slot_seconds must be positive")
        if self.values.size < 1:
            raise ShapeError(f"series for station {self.station_id!r} is empty")
        if not np.all(np.isfinite(self.values)):
            raise ParameterError(f"non-finite value in series {self.station_id!r}")
        if self.kind is Kind.SPEED and np.any(self.values < 0):
            raise ParameterError(f"negative speed in series {self.station_id!r}")

    def __len__(self) -> int:
        return self.values.size

    def with_values(self, values, slot_seconds=None, start_slot=None) -> "SlotSeries":
        return SlotSeries(
            self.station_id,
            self.kind,
            self.slot_seconds if slot_seconds is None else slot_seconds,
            self.start_slot if start_slot is None else start_slot,
            values,
        )


@dataclass(frozen=True, eq=False)
class FlowPanel:
    """Row ``t`` is the reading vector Y(t); column ``n`` is station ``n``.

    Despite the name, the panel also carries speeds (the pipeline keeps one
    panel per quantity).
    """

    stations: Tuple[str, ...]
    slot_seconds: float
    matrix: np.ndarray
    start_slot: int = 0

    def __post_init__(self):
        object.__setattr__(self, "stations", tuple(str(s) for s in self.stations))
        object.__setattr__(self, "matrix", _frozen(self.matrix, 2))
        if not self.slot_seconds > 0:
            raise ParameterError("slot_seconds must be positive")
        if self.matrix.shape[1] != len(self.stations):
            raise ShapeError(
                f"panel has {self.matrix.shape[1]} columns for {len(self.stations)} stations"
            )
        if len(set(self.stations)) != len(self.stations):
            raise SchemaError("duplicate station identifiers in panel")

    @property
    def n_slots(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_stations(self) -> int:
        return self.matrix.shape[1]

    @property
    def slots(self) -> np.ndarray:
        return np.arange(self.start_slot, self.start_slot + self.n_slots)

    def column(self, station) -> np.ndarray:
        return self.matrix[:, self.stations.index(str(station))]

    def window(self, start: int, stop: int) -> "FlowPanel":
        """Rows for absolute slots ``start <= slot < stop``."""
        lo = max(start - self.start_slot, 0)
        hi = min(stop - self.start_slot, self.n_slots)
        if hi <= lo:
            raise ShapeError(f"window [{start}, {stop}) does not overlap the panel")
        return FlowPanel(self.stations, self.slot_seconds, self.matrix[lo:hi], self.start_slot + lo)

    def to_series(self, kind: Kind) -> Dict[str, SlotSeries]:
        return {
            s: SlotSeries(s, kind, self.slot_seconds, self.start_slot, self.matrix[:, j])
            for j, s in enumerate(self.stations)
        }

    @classmethod
    def from_series(cls, series: Sequence[SlotSeries]) -> "FlowPanel":
        if not series:
            raise ShapeError("no series supplied")
        first = series[0]
        for s in series[1:]:
            if len(s) != len(first) or s.start_slot != first.start_slot:
                raise ShapeError("series must share length and start slot")
            if s.slot_seconds != first.slot_seconds:
                raise ShapeError("series must share slot width")
        matrix = np.column_stack([s.values for s in series])
        return cls(tuple(s.station_id for s in series), first.slot_seconds, matrix, first.start_slot)


@dataclass(frozen=True, eq=False)
class StationNetwork:
    """Stations along a corridor, ordered in the direction of travel."""

    stations: Tuple[str, ...]
    positions: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "stations", tuple(str(s) for s in self.stations))
        object.__setattr__(self, "positions", _frozen(self.positions, 1))
        if len(self.stations) == 0:
            raise SchemaError("network has no stations")
        if len(self.stations) != self.positions.size:
            raise ShapeError("one position per station required")
        if len(set(self.stations)) != len(self.stations):
            raise SchemaError("duplicate station identifiers in network")
        if np.any(np.diff(self.positions) <= 0):
            raise SchemaError("station positions must be strictly increasing")

    def __len__(self) -> int:
        return len(self.stations)

    def index(self, station) -> int:
        if isinstance(station, (int, np.integer)):
            return int(station)
        return self.stations.index(str(station))

    def distance(self, m, n) -> float:
        return float(abs(self.positions[self.index(n)] - self.positions[self.index(m)]))

    def spatial_order(self, m, n) -> int:
        """Hop count between two stations along the chain (adjacent = 1)."""
        return abs(self.index(n) - self.index(m))

    def upstream_neighbor(self, n, order: int) -> Optional[int]:
        """Index of the station ``order`` hops upstream of ``n``, if any."""
        i = self.index(n) - order
        return i if order >= 1 and i >= 0 else None

    @classmethod
    def chain(cls, n_stations: int, spacing_feet, prefix: str = "s") -> "StationNetwork":
        spacing = np.broadcast_to(np.asarray(spacing_feet, dtype=float), (max(n_stations - 1, 0),))
        positions = np.concatenate([[0.0], np.cumsum(spacing)])
        return cls(tuple(f"{prefix}{i + 1}" for i in range(n_stations)), positions)


# ---------------------------------------------------------------------------
# CSV ingestion


def _read_rows(path: Path, header: Tuple[str, ...]):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        if tuple(c.strip() for c in first) != header:
            raise SchemaError(f"{path}: expected header {','.join(header)}, got {','.join(first)}")
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            yield reader.line_num, row


def _parse_float(text: str, what: str, line: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"cannot parse {what} {text!r}", line) from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite {what} {text!r}", line)
    if value < 0:
        raise ParseError(f"negative {what} {text!r}", line)
    return value


def load_network(path) -> StationNetwork:
    """Read a ``station,position_feet`` file listed upstream to downstream."""
    path = Path(path)
    stations, positions = [], []
    for line, row in _read_rows(path, NETWORK_HEADER):
        if len(row) != 2:
            raise ParseError(f"expected 2 fields, got {len(row)}", line)
        try:
            pos = float(row[1])
        except ValueError:
            raise ParseError(f"cannot parse position {row[1]!r}", line) from None
        stations.append(row[0].strip())
        positions.append(pos)
    if not stations:
        raise SchemaError(f"{path}: no stations")
    return StationNetwork(tuple(stations), np.array(positions))


def load_csv(path, network=None, slot_seconds: float = 30.0):
    """Load a ``slot,station,flow,speed`` file.

    Parameters
    ----------
    path : path-like
        Detector readings, one row per (slot, station).
    network : StationNetwork or path-like, optional
        Corridor geometry. Stations present in the data but absent from the
        network are ignored (ramp-affected stations are typically dropped this
        way). Without a network the stations keep their order of first
        appearance and are placed one foot apart, which is only useful when no
        distance-derived lag is needed.
    slot_seconds : float
        Width of one input slot.

    Returns
    -------
    network : StationNetwork
    series : dict
        ``series[station]["flow"]`` and ``series[station]["speed"]`` are
        :class:`SlotSeries` of equal length.
    """
    path = Path(path)
    if network is not None and not isinstance(network, StationNetwork):
        network = load_network(network)

    rows: "OrderedDict[str, list]" = OrderedDict()
    for line, row in _read_rows(path, DATA_HEADER):
        if len(row) != 4:
            raise ParseError(f"expected 4 fields, got {len(row)}", line)
        try:
            slot = int(row[0])
        except ValueError:
            raise ParseError(f"cannot parse slot {row[0]!r}", line) from None
        station = row[1].strip()
        if not station:
            raise ParseError("empty station identifier", line)
        flow = _parse_float(row[2], "flow", line)
        speed = _parse_float(row[3], "speed", line)
        rows.setdefault(station, []).append((line, slot, flow, speed))

    if not rows:
        raise SchemaError(f"{path}: no data rows")

    if network is None:
        network = StationNetwork(tuple(rows), np.arange(len(rows), dtype=float))
    missing = [s for s in network.stations if s not in rows]
    if missing:
        raise SchemaError(f"{path}: no readings for network station(s) {', '.join(missing)}")
    extra = [s for s in rows if s not in network.stations]
    if extra:
        logger.info("ignoring stations not in the network: %s", ", ".join(extra))

    out = {}
    span = None
    for station in network.stations:
        recs = rows[station]
        slots = np.array([r[1] for r in recs])
        steps = np.diff(slots)
        bad = np.flatnonzero(steps <= 0)
        if bad.size:
            raise OrderingError(
                f"station {station}: slot {slots[bad[0] + 1]} at line {recs[bad[0] + 1][0]} "
                f"does not follow slot {slots[bad[0]]}"
            )
        gap = np.flatnonzero(steps > 1)
        if gap.size:
            raise GapError(
                f"station {station}: missing slots between {slots[gap[0]]} and {slots[gap[0] + 1]}"
            )
        this_span = (int(slots[0]), int(slots[-1]))
        if span is None:
            span = this_span
        elif this_span != span:
            raise SchemaError(
                f"station {station} covers slots {this_span}, expected {span} like the others"
            )
        out[station] = {
            Kind.FLOW.value: SlotSeries(station, Kind.FLOW, slot_seconds, span[0], [r[2] for r in recs]),
            Kind.SPEED.value: SlotSeries(station, Kind.SPEED, slot_seconds, span[0], [r[3] for r in recs]),
        }
    return network, out


def _fmt(x: float) -> str:
    return repr(float(x))


def write_csv(path, series: Mapping[str, Mapping[str, SlotSeries]], network: StationNetwork) -> None:
    """Write readings in canonical form: rows sorted by slot, then network order."""
    stations = [s for s in network.stations if s in series]
    flows = [series[s][Kind.FLOW.value] for s in stations]
    speeds = [series[s][Kind.SPEED.value] for s in stations]
    start = flows[0].start_slot
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DATA_HEADER)
        for t in range(len(flows[0])):
            for s, f, v in zip(stations, flows, speeds):
                w.writerow((start + t, s, _fmt(f.values[t]), _fmt(v.values[t])))


def write_panels_csv(path, flow: FlowPanel, speed: FlowPanel) -> None:
    if flow.stations != speed.stations or flow.matrix.shape != speed.matrix.shape:
        raise ShapeError("flow and speed panels must align")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DATA_HEADER)
        for t in range(flow.n_slots):
            for j, s in enumerate(flow.stations):
                w.writerow((flow.start_slot + t, s, _fmt(flow.matrix[t, j]), _fmt(speed.matrix[t, j])))


def write_network(path, network: StationNetwork) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(NETWORK_HEADER)
        for s, p in zip(network.stations, network.positions):
            w.writerow((s, _fmt(p)))


def panels_from_series(series: Mapping[str, Mapping[str, SlotSeries]], network: StationNetwork):
    """Stack loaded series into a (flow, speed) pair of panels in network order."""
    flow = FlowPanel.from_series([series[s][Kind.FLOW.value] for s in network.stations])
    speed = FlowPanel.from_series([series[s][Kind.SPEED.value] for s in network.stations])
    return flow, speed


# ---------------------------------------------------------------------------
# smoothing and differencing


def _check_window(x) -> int:
    if not isinstance(x, (int, np.integer)) or isinstance(x, bool) or x < 1:
        raise ParameterError(f"smoothing window must be a positive integer, got {x!r}")
    return int(x)


def _block_means(values: np.ndarray, x: int) -> np.ndarray:
    n = values.shape[0] // x
    if n == 0:
        raise ShapeError(f"series of length {values.shape[0]} is shorter than the window {x}")
    trimmed = values[: n * x]
    return trimmed.reshape((n, x) + values.shape[1:]).mean(axis=1)


def smooth(series: SlotSeries, x: int) -> SlotSeries:
    """Average every ``x`` consecutive readings into one slot.

    A trailing partial window is dropped. The slot width grows by ``x``.
    """
    if _check_window(x) == 1:
        return series
    return series.with_values(
        _block_means(series.values, x),
        slot_seconds=series.slot_seconds * x,
        start_slot=series.start_slot // x,
    )


def smooth_panel(panel: FlowPanel, x: int) -> FlowPanel:
    if _check_window(x) == 1:
        return panel
    return FlowPanel(panel.stations, panel.slot_seconds * x, _block_means(panel.matrix, x), panel.start_slot // x)


def difference(values, d: int):
    """Apply ``d``-fold first differencing along axis 0.

    Returns the differenced array and the retained initial values: entry ``j``
    of the second result is the first row of the ``j``-times differenced input,
    which is what :func:`undifference` needs to rebuild the levels.
    """
    if d < 0:
        raise ParameterError("differencing order must be non-negative")
    x = np.asarray(values, dtype=float)
    if x.shape[0] < d + 1:
        raise ShapeError(f"series of length {x.shape[0]} cannot be differenced {d} times")
    initials = []
    for _ in range(d):
        initials.append(x[0].copy())
        x = np.diff(x, axis=0)
    return x, initials


def undifference(diffs, initials: Sequence, d: int) -> np.ndarray:
    """Left inverse of :func:`difference`."""
    if d < 0:
        raise ParameterError("differencing order must be non-negative")
    if len(initials) != d:
        raise ShapeError(f"expected {d} initial values, got {len(initials)}")
    x = np.asarray(diffs, dtype=float)
    for j in reversed(range(d)):
        first = np.asarray(initials[j], dtype=float)
        if first.shape != x.shape[1:]:
            raise ShapeError(f"initial value shape {first.shape} does not match {x.shape[1:]}")
        x = np.concatenate([first[None, ...], first + np.cumsum(x, axis=0)], axis=0)
    return x
