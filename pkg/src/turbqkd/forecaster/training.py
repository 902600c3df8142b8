"""Training loop, evaluation metrics and cascaded forecasts."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

import numpy as np

from ..timeseries import (
    TARGET,
    AlignedSeries,
    DatasetSplit,
    NormalizationStats,
    TimeseriesError,
    WindowedDataset,
    denormalize,
    feature_matrix,
    format_timestamp,
    normalize,
)
from .optim import AdamState, PlateauSchedule, adam_step

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 32
    initial_lr: float = 1e-4
    patience: int = 15
    reduction_factor: float = 0.1
    plateau_threshold: float = 1e-5
    min_lr: float = 0.0
    max_epochs: int = 300
    seed: int = 0
    micro_batch: int = 8
    workers: int = 1

    def __post_init__(self):
        for name in ("batch_size", "initial_lr", "patience", "max_epochs", "micro_batch", "workers"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.reduction_factor < 1:
            raise ValueError("reduction_factor must lie in (0, 1)")


@dataclass
class EpochRecord:
    epoch: int
    train_mse: float
    val_mse: float
    lr: float
    lr_reduced: bool = False


@dataclass
class TrainResult:
    history: list[EpochRecord]
    best_epoch: int
    best_val: float
    adam: AdamState
    schedule: PlateauSchedule
    epochs_done: int

    def write_history(self, path: str | Path) -> None:
        write_history(self.history, path)


def write_history(history, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_mse", "val_mse", "lr"])
        for r in history:
            w.writerow([r.epoch, repr(r.train_mse), repr(r.val_mse), repr(r.lr)])


def dataset_mse(model, ds: WindowedDataset, batch_size: int = 256) -> float:
    if len(ds) == 0:
        return math.nan
    total = 0.0
    for i in range(0, len(ds), batch_size):
        idx = np.arange(i, min(i + batch_size, len(ds)))
        pred = model.predict(ds.inputs(idx))
        total += float(np.sum((pred - ds.targets(idx)) ** 2))
    return total / len(ds)


def _batch_grads(model, x, y, micro: int, pool):
    """Loss and gradient of a batch, accumulated over fixed-size chunks in order.

    Chunking is independent of the worker count, so results are identical
    whether chunks run serially or on a thread pool.
    """
    B = len(x)
    chunks = [(s, min(s + micro, B)) for s in range(0, B, micro)]
    run = lambda c: model.loss_and_grads(x[c[0]:c[1]], y[c[0]:c[1]])
    results = list(pool.map(run, chunks)) if pool else [run(c) for c in chunks]
    loss = 0.0
    grads = None
    for (s, e), (l, g) in zip(chunks, results):
        w = (e - s) / B
        loss += w * l
        if grads is None:
            grads = {k: w * v for k, v in g.items()}
        else:
            for k, v in g.items():
                grads[k] += w * v
    return loss, grads


def train(model, splits, config: TrainConfig | None = None, resume: dict | None = None,
          callback=None) -> TrainResult:
    """Mini-batch Adam with a plateau schedule; keeps the best-validation weights.

    ``splits`` is a :class:`DatasetSplit` or a ``(train, validation)`` pair of
    normalised datasets.  ``resume`` carries optimizer/schedule state and the
    epoch counter from a checkpoint.
    """
    config = config or TrainConfig()
    if isinstance(splits, DatasetSplit):
        tr, va = splits.train, splits.validation
    else:
        tr, va = splits
    if len(tr) == 0:
        raise TimeseriesError("training split is empty")
    if len(va) == 0:
        logger.warning("validation split is empty; the schedule and model selection use the training loss")
    rng = np.random.default_rng(config.seed)
    params = model.params()
    schedule = PlateauSchedule(config.initial_lr, config.reduction_factor, config.patience,
                               config.plateau_threshold, config.min_lr)
    adam = AdamState()
    start_epoch = 0
    best_val, best_epoch = np.inf, -1
    if resume:
        adam = resume["adam"]
        schedule.load_state_dict(resume["schedule"])
        start_epoch = int(resume["epochs_done"])
        best_val = float(resume.get("best_val", np.inf))
        best_epoch = int(resume.get("best_epoch", -1))
        # advance the shuffling stream past the epochs already run
        for _ in range(start_epoch):
            rng.permutation(len(tr))
    best = {k: v.copy() for k, v in params.items()}
    history: list[EpochRecord] = []
    pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
    try:
        for epoch in range(start_epoch, start_epoch + config.max_epochs):
            order = rng.permutation(len(tr))
            total = 0.0
            for s in range(0, len(order), config.batch_size):
                idx = np.sort(order[s:s + config.batch_size])
                x, y = tr.inputs(idx), tr.targets(idx)
                loss, grads = _batch_grads(model, x, y, config.micro_batch, pool)
                adam_step(params, grads, adam, schedule.lr)
                total += loss * len(idx)
            train_mse = total / len(tr)
            val_mse = dataset_mse(model, va) if len(va) else train_mse
            lr_used = schedule.lr
            reduced = schedule.step(val_mse)
            history.append(EpochRecord(epoch, train_mse, val_mse, lr_used, reduced))
            if val_mse < best_val:
                best_val, best_epoch = val_mse, epoch
                best = {k: v.copy() for k, v in params.items()}
            logger.info("epoch %d train %.3e val %.3e lr %.1e%s", epoch, train_mse, val_mse, lr_used,
                        " (reduced)" if reduced else "")
            if callback:
                callback(history[-1])
    finally:
        if pool:
            pool.shutdown()
    model.set_params(best)
    return TrainResult(history, best_epoch, float(best_val), adam, schedule, start_epoch + config.max_epochs)


@dataclass
class EvalReport:
    per_example_rmse: np.ndarray
    mean_rmse: float
    delta: float
    per_step_rmse: np.ndarray

    def summary(self) -> dict:
        return {"mean_rmse": self.mean_rmse, "delta": self.delta, "n_examples": len(self.per_example_rmse),
                "per_step_rmse": self.per_step_rmse.tolist()}


def rmse_report(pred: np.ndarray, true: np.ndarray) -> EvalReport:
    """Per-example RMSE over the forecast vector, averaged; ``delta = 1 - RMSE``."""
    err = np.asarray(pred, float) - np.asarray(true, float)
    if err.ndim != 2 or not len(err):
        raise ValueError("need a non-empty (N, n_out) error matrix")
    per_ex = np.sqrt(np.mean(err**2, axis=1))
    mean = float(per_ex.mean())
    return EvalReport(per_ex, mean, 1.0 - mean, np.sqrt(np.mean(err**2, axis=0)))


def evaluate(model, ds: WindowedDataset) -> EvalReport:
    return rmse_report(model.predict(ds.inputs()), ds.targets())


def persistence_forecast(ds: WindowedDataset) -> np.ndarray:
    """Repeat the last observed (normalised) log10 Cn2 over the horizon."""
    col = ds.features.index(ds.target_feature)
    last = ds.values[ds.starts + ds.in_len - 1, col]
    return np.repeat(last[:, None], ds.n_out, axis=1)


@dataclass
class ForecastRow:
    timestamp: datetime
    log10_cn2_pred: float
    log10_cn2_true: float
    rmse_window: float


def predict_cascade(model, series: AlignedSeries, start: datetime, horizon_hours: float,
                    autoregressive: bool = False) -> list[ForecastRow]:
    """Chain single-shot forecasts issued every ``out_len`` minutes from ``start``.

    ``start`` is the last observed minute of the first input window.  Each
    block reads measured inputs unless ``autoregressive`` is set, in which
    case log10 Cn2 after ``start`` is replaced by the forecasts already made.
    Blocks whose input window hits a gap are skipped (the first one raises).
    """
    stats, features = model.stats, tuple(model.features)
    in_len, out_len, out_res = model.window
    n_out = out_len // out_res
    if stats is None:
        raise ValueError("model carries no normalization statistics")
    values = feature_matrix(series, features)
    bad = series.gap | np.isnan(values).any(axis=1)
    norm = normalize(np.where(np.isnan(values), 0.0, values), stats_for(stats, features))
    tcol = features.index(TARGET)
    truth = series.columns[TARGET]
    true_ok = ~series.gap & ~np.isnan(truth)
    e0 = series.index_of(start)
    n_blocks = int(math.ceil(horizon_hours * 60 / out_len))
    rows: list[ForecastRow] = []
    pred_minutes, pred_values = [], []
    for b in range(n_blocks):
        e = e0 + b * out_len
        lo = e - in_len + 1
        if lo < 0 or e >= len(series):
            if b == 0:
                raise TimeseriesError("not enough history before the forecast start")
            break
        x = norm[lo:e + 1].copy()
        if bad[lo:e + 1].any():
            if b == 0:
                raise TimeseriesError(f"input window ending {format_timestamp(start)} contains a gap")
            logger.info("skipping block %d: gap in input window", b)
            continue
        if autoregressive and pred_minutes:
            rows_after = np.arange(max(lo, e0 + 1), e + 1)
            if len(rows_after):
                x[rows_after - lo, tcol] = np.interp(rows_after, pred_minutes, pred_values)
        pred_n = model.forward(x)
        idx = e + out_res * np.arange(1, n_out + 1)
        inside = idx < len(series)
        true_n = np.full(n_out, np.nan)
        ok = inside.copy()
        ok[inside] &= true_ok[idx[inside]]
        true_n[ok] = normalize(truth[idx[ok]], stats, TARGET)
        rmse = float(np.sqrt(np.nanmean((pred_n - true_n) ** 2))) if ok.any() else math.nan
        pred = denormalize(pred_n, stats, TARGET)
        true = denormalize(true_n, stats, TARGET)
        for k in range(n_out):
            rows.append(ForecastRow(series.timestamp(int(idx[k])), float(pred[k]), float(true[k]), rmse))
        pred_minutes.extend(idx.tolist())
        pred_values.extend(pred_n.tolist())
    return rows


def stats_for(stats, features):
    """Restrict/reorder stats to ``features``."""
    idx = [stats.index(f) for f in features]
    return NormalizationStats(tuple(features), stats.minimum[idx], stats.maximum[idx])


def write_forecast_csv(rows: list[ForecastRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp_utc", "log10_cn2_pred", "log10_cn2_true", "rmse_window"])
        for r in rows:
            w.writerow([format_timestamp(r.timestamp), repr(r.log10_cn2_pred),
                        "" if math.isnan(r.log10_cn2_true) else repr(r.log10_cn2_true),
                        "" if math.isnan(r.rmse_window) else repr(r.rmse_window)])
