"""Recurrent Cn2 forecaster trained from scratch."""

from .checkpoint import load_checkpoint, save_checkpoint
from .gru import GruForecaster, GruLayer, gru_cell_forward, mse_loss
from .mlp import MlpForecaster, build_mlp_baseline
from .optim import AdamState, PlateauSchedule, adam_step
from .training import (
    EvalReport,
    TrainConfig,
    evaluate,
    persistence_forecast,
    predict_cascade,
    rmse_report,
    train,
)

__all__ = [
    "AdamState", "EvalReport", "GruForecaster", "GruLayer", "MlpForecaster", "PlateauSchedule",
    "TrainConfig", "adam_step", "build_mlp_baseline", "evaluate", "gru_cell_forward", "load_checkpoint",
    "mse_loss", "persistence_forecast", "predict_cascade", "rmse_report", "save_checkpoint", "train",
]
