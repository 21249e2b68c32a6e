"""Space-time ARIMA traffic-flow forecasting with speed-dependent spatial lags."""

from .ccf import CcfProfile, best_lag, ccf_profile, cross_correlation, pacf, select_ar_order
from .clustering import IsodataParams, SpeedCluster, SpeedClusterSet, isodata_1d
from .core_data import (
    FlowPanel,
    Kind,
    SlotSeries,
    StationNetwork,
    difference,
    load_csv,
    load_network,
    smooth,
    smooth_panel,
    undifference,
)
from .errors import TvStarimaError
from .lags import LagMatrix, build_lag_matrices, ccf_lag_matrices, constant_lag_matrices, lag_from_ccf, travel_lag
from .metrics import EvalReport, mape, mse
from .partition import DayPartition, TimeRange, classify_periods
from .starima import (
    LagMode,
    RegimeModels,
    StarimaModel,
    StarimaSpec,
    build_weights,
    fit,
    fit_arima,
    fit_per_range,
    forecast,
    one_step_predictions,
)
from .synth import SynthConfig, generate

__version__ = "0.1.0"

__all__ = [
    "CcfProfile",
    "best_lag",
    "ccf_profile",
    "cross_correlation",
    "pacf",
    "select_ar_order",
    "IsodataParams",
    "SpeedCluster",
    "SpeedClusterSet",
    "isodata_1d",
    "FlowPanel",
    "Kind",
    "SlotSeries",
    "StationNetwork",
    "difference",
    "load_csv",
    "load_network",
    "smooth",
    "smooth_panel",
    "undifference",
    "TvStarimaError",
    "LagMatrix",
    "build_lag_matrices",
    "ccf_lag_matrices",
    "constant_lag_matrices",
    "lag_from_ccf",
    "travel_lag",
    "EvalReport",
    "mape",
    "mse",
    "DayPartition",
    "TimeRange",
    "classify_periods",
    "LagMode",
    "RegimeModels",
    "StarimaModel",
    "StarimaSpec",
    "build_weights",
    "fit",
    "fit_arima",
    "fit_per_range",
    "forecast",
    "one_step_predictions",
    "SynthConfig",
    "generate",
]
