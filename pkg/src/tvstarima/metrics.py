"""Forecast accuracy measures and report rows."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Tuple

import numpy as np

from .errors import DataError, ShapeError

REPORT_HEADER = ("station", "range", "mape_pct", "mse", "n", "skipped")


def _pair(actual, predicted):
    a = np.asarray(actual, dtype=float).ravel()
    p = np.asarray(predicted, dtype=float).ravel()
    if a.shape != p.shape:
        raise ShapeError(f"length mismatch: {a.size} actual vs {p.size} predicted")
    if a.size == 0:
        raise ShapeError("no points to score")
    return a, p


def mse(actual, predicted) -> float:
    a, p = _pair(actual, predicted)
    return float(np.mean((a - p) ** 2))


def mape(actual, predicted) -> Tuple[float, int]:
    """Mean absolute percentage error as a fraction, and the number of zero actuals skipped."""
    a, p = _pair(actual, predicted)
    keep = a != 0
    if not np.any(keep):
        raise DataError("MAPE is undefined when every actual value is zero")
    return float(np.mean(np.abs(a[keep] - p[keep]) / np.abs(a[keep]))), int(np.sum(~keep))


@dataclass(frozen=True)
class EvalReport:
    station_id: str
    range_label: str
    mse: float
    mape: float
    n_points: int
    n_skipped_zero_actuals: int

    def row(self):
        return (self.station_id, self.range_label, f"{100 * self.mape:.4f}", f"{self.mse:.6g}",
                self.n_points, self.n_skipped_zero_actuals)


def evaluate(station_id: str, range_label: str, actual, predicted) -> EvalReport:
    m, skipped = mape(actual, predicted)
    return EvalReport(station_id, range_label, mse(actual, predicted), m, np.asarray(actual).size, skipped)


def write_reports(path, reports: Iterable[EvalReport]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for r in reports:
            w.writerow(r.row())
