"""Koopman-operator neural forecasting for non-stationary time series."""

from .errors import DimensionError, FormatError, KnfError, NumericError, ParseError
from .measurements import MeasurementSpec, default_dictionary, dictionary_from_counts
from .model import KnfConfig, OperatorSet, forecast, init_params
from .training import LossBreakdown, TrainConfig, ensemble_forecast, loss, train

__version__ = "0.1.0"

__all__ = [
    "DimensionError",
    "FormatError",
    "KnfError",
    "NumericError",
    "ParseError",
    "MeasurementSpec",
    "default_dictionary",
    "dictionary_from_counts",
    "KnfConfig",
    "OperatorSet",
    "forecast",
    "init_params",
    "LossBreakdown",
    "TrainConfig",
    "ensemble_forecast",
    "loss",
    "train",
]
