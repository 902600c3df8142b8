"""Command-line entry point: ``turbqkd <command> [options]``.

Commands share ``--config``, ``--seed``, ``--out-dir`` and ``--workers``.
Every command writes a ``<command>_manifest.json`` next to its outputs with
the effective configuration and its hash.

Exit codes: 0 success, 2 configuration or usage error, 3 file or I/O
error, 4 numerical failure, 5 invalid or insufficient data.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config, parse_groups
from .forecaster import (
    GruForecaster,
    MlpForecaster,
    TrainConfig,
    evaluate,
    load_checkpoint,
    persistence_forecast,
    predict_cascade,
    rmse_report,
    save_checkpoint,
    train,
)
from .forecaster.checkpoint import CheckpointError
from .forecaster.gru import NumericError
from .forecaster.optim import AdamState
from .forecaster.training import EpochRecord, write_forecast_csv, write_history
from .importance import feature_importance
from .optics import BeamParams, ComplexField, GridSpec, ResolutionError, dump_field
from .qkd import Channel, ChannelConfig, run_table, security_threshold, worst_realization
from .synth import SynthConfig, write_dataset
from .timeseries import (
    AlignedSeries,
    TimeseriesError,
    add_time_features,
    compute_stats,
    make_windows,
    parse_timestamp,
    prepare_series,
    split_dataset,
)
from .turbulence import PhaseScreen, draw_coefficients

logger = logging.getLogger("turbqkd")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4
EXIT_DATA = 5


class UsageError(ConfigError):
    pass


def _plain(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_plain) + "\n")


def _manifest(out: Path, command: str, cfg: RunConfig, outputs: list[str], extra: dict | None = None) -> None:
    body = {"command": command, "version": __version__, "config": cfg.hashed_dict(),
            "config_hash": cfg.hash, "outputs": sorted(outputs)}
    if extra:
        body.update(extra)
    _write_json(out / f"{command}_manifest.json", body)


# ---------------------------------------------------------------- helpers

def _load_series(path) -> AlignedSeries:
    return add_time_features(AlignedSeries.read_csv(path))


def _split_windows(cfg: RunConfig, series: AlignedSeries, features, window):
    in_len, out_len, out_res = window
    ds = make_windows(series, in_len, out_len, out_res, cfg.windows.stride, features)
    if len(ds) == 0:
        raise TimeseriesError("no gap-free windows in the dataset")
    return split_dataset(ds, cfg.windows.split_mode, cfg.windows.split_month)


def _normalized(splits, stats):
    return type(splits)(splits.train.normalized(stats), splits.validation.normalized(stats),
                        splits.test.normalized(stats), splits.descriptor)


def _model_from_config(cfg: RunConfig, n_features: int, n_out: int):
    kind = cfg.model.kind.lower()
    seed = cfg.run.seed
    if kind == "gru":
        return GruForecaster(n_features, cfg.model.hidden_sizes, n_out, seed)
    if kind == "mlp":
        return MlpForecaster(n_features, cfg.windows.in_len, cfg.model.hidden_sizes, n_out, seed)
    raise ConfigError(f"unknown model kind {cfg.model.kind!r} (expected gru or mlp)")


def _load_model(path):
    model, header, adam = load_checkpoint(path)
    if model.stats is None or not model.features or not model.window:
        raise CheckpointError(f"{path}: checkpoint lacks normalization statistics or window geometry")
    return model, header, adam


def _pick_split(splits, name: str):
    if name not in ("train", "validation", "test"):
        raise UsageError(f"unknown split {name!r}")
    ds = getattr(splits, name)
    if len(ds) == 0:
        raise TimeseriesError(f"the {name} split is empty")
    return ds


# ---------------------------------------------------------------- commands

def cmd_ingest(args, cfg: RunConfig, out: Path) -> int:
    weather = args.weather or cfg.data.weather
    scint = args.scint or cfg.data.scint
    if not weather or not scint:
        raise UsageError("ingest needs --weather and --scint (or [data] weather/scint)")
    series = prepare_series(weather, scint, cfg.data.fill_horizon, cfg.data.average_window,
                            cfg.data.max_gap_fraction, cfg.data.average_alignment == "centered",
                            cfg.data.average_domain)
    name = args.output or "aligned.csv"
    series.write_csv(out / name)
    summary = {**series.gap_summary(), **series.meta, "start": series.timestamp(0).isoformat(),
               "end": series.timestamp(len(series) - 1).isoformat()}
    _write_json(out / "gap_summary.json", summary)
    _manifest(out, "ingest", cfg, [name, "gap_summary.json"])
    print(f"aligned {summary['minutes']} minutes, {summary['gap_minutes']} gap minutes -> {out / name}")
    return EXIT_OK


def cmd_synth(args, cfg: RunConfig, out: Path) -> int:
    s = cfg.synth
    sc = SynthConfig(s.start, s.days, s.log10_min, s.log10_max, s.noise_std, s.noise_corr_minutes,
                     s.gap_fraction, s.weather_cadence, cfg.run.seed)
    data = write_dataset(sc, out / "weather.csv", out / "scint.csv")
    ext = data.daily_extremes()
    _manifest(out, "synth", cfg, ["weather.csv", "scint.csv"],
              {"daily_min": float(ext[:, 0].min()), "daily_max": float(ext[:, 1].max()),
               "outage_fraction": float(np.isnan(data.log10_cn2).mean())})
    print(f"wrote {s.days} days of synthetic data to {out}")
    return EXIT_OK


def cmd_train(args, cfg: RunConfig, out: Path) -> int:
    series = _load_series(args.dataset)
    w = cfg.windows
    tc = TrainConfig(cfg.train.batch_size, cfg.train.initial_lr, cfg.train.patience, cfg.train.reduction_factor,
                     cfg.train.plateau_threshold, cfg.train.min_lr, cfg.train.max_epochs, cfg.run.seed,
                     cfg.train.micro_batch, cfg.run.workers)
    history: list[EpochRecord] = []
    resume = None
    if args.resume:
        model, header, adam = _load_model(args.resume)
        features, window = model.features, model.window
        splits = _split_windows(cfg, series, features, window)
        tr = header["training"]
        history = [EpochRecord(*row) for row in tr.get("history", [])]
        resume = {"adam": adam or AdamState(), "schedule": tr["schedule"], "epochs_done": tr["epochs_done"],
                  "best_val": tr.get("best_val", float("inf")), "best_epoch": tr.get("best_epoch", -1)}
    else:
        features, window = tuple(w.features), (w.in_len, w.out_len, w.out_res)
        splits = _split_windows(cfg, series, features, window)
        model = _model_from_config(cfg, len(features), splits.train.n_out)
        model.stats = compute_stats(splits.train)
        model.features, model.window = features, window
    norm = _normalized(splits, model.stats)
    result = train(model, norm, tc, resume=resume)
    history += result.history
    training = {
        "epochs_done": result.epochs_done,
        "best_epoch": result.best_epoch,
        "best_val": result.best_val,
        "schedule": result.schedule.state_dict(),
        "history": [[r.epoch, r.train_mse, r.val_mse, r.lr, r.lr_reduced] for r in history],
        "split": splits.descriptor,
    }
    name = args.output or "model.ckpt"
    save_checkpoint(model, out / name, cfg.hashed_dict(), training, result.adam)
    write_history(history, out / "history.csv")
    _manifest(out, "train", cfg, [name, "history.csv"],
              {"split": splits.descriptor, "best_epoch": result.best_epoch, "best_val_mse": result.best_val,
               "resumed_from": str(args.resume) if args.resume else None})
    print(f"trained {len(result.history)} epochs (total {result.epochs_done}); "
          f"best validation MSE {result.best_val:.4e} at epoch {result.best_epoch}")
    return EXIT_OK


def cmd_predict(args, cfg: RunConfig, out: Path) -> int:
    model, header, _ = _load_model(args.model)
    series = _load_series(args.dataset)
    start = parse_timestamp(args.start)
    rows = predict_cascade(model, series, start, args.horizon, autoregressive=args.autoregressive)
    name = args.output or "forecast.csv"
    write_forecast_csv(rows, out / name)
    _manifest(out, "predict", cfg, [name], {"model_config_hash": header["config_hash"], "start": args.start,
                                            "horizon_hours": args.horizon, "rows": len(rows),
                                            "autoregressive": bool(args.autoregressive)})
    print(f"wrote {len(rows)} forecast rows to {out / name}")
    return EXIT_OK


def cmd_evaluate(args, cfg: RunConfig, out: Path) -> int:
    model, header, _ = _load_model(args.model)
    splits = _split_windows(cfg, _load_series(args.dataset), model.features, model.window)
    ds = _pick_split(splits, args.split).normalized(model.stats)
    report = evaluate(model, ds)
    base = rmse_report(persistence_forecast(ds), ds.targets())
    body = {"split": args.split, "model": report.summary(), "persistence": base.summary(),
            "improvement_over_persistence": 1.0 - report.mean_rmse / base.mean_rmse,
            "model_config_hash": header["config_hash"]}
    _write_json(out / "evaluation.json", body)
    _manifest(out, "evaluate", cfg, ["evaluation.json"])
    print(f"{args.split}: RMSE {report.mean_rmse:.4f} (delta {report.delta:.4f}); "
          f"persistence RMSE {base.mean_rmse:.4f}")
    return EXIT_OK


def cmd_pfi(args, cfg: RunConfig, out: Path) -> int:
    model, header, _ = _load_model(args.model)
    splits = _split_windows(cfg, _load_series(args.dataset), model.features, model.window)
    ds = _pick_split(splits, args.split or cfg.pfi.split).normalized(model.stats)
    groups = {}
    for name, members in parse_groups(cfg.pfi.groups).items():
        present = tuple(m for m in members if m in model.features)
        if len(present) < len(members):
            logger.warning("group %s: features %s not in the model, permuting %s", name,
                           sorted(set(members) - set(present)), list(present))
        if present:
            groups[name] = present
    report = feature_importance(model, ds, None, groups, cfg.pfi.repeats, cfg.pfi.subset, cfg.run.seed)
    report.write_csv(out / "importance.csv")
    _manifest(out, "pfi", cfg, ["importance.csv"],
              {"baseline_rmse": report.baseline_rmse, "subset_size": report.subset_size,
               "groups": {k: list(v) for k, v in groups.items()}, "model_config_hash": header["config_hash"]})
    for e in sorted(report.entries, key=lambda e: -e.mean):
        print(f"{e.name:>20s}  {e.mean:.4f} +- {e.std:.4f}")
    return EXIT_OK


def channel_config(cfg: RunConfig) -> ChannelConfig:
    q = cfg.qkd
    return ChannelConfig(
        beam=BeamParams(q.w0, q.wavelength, q.length, q.aperture),
        grid=GridSpec(q.grid_side, q.grid_n),
        d=q.d,
        j_max=q.j_max,
        d_eff=q.d_eff or None,
        n_realizations=q.n_realizations,
        seed=cfg.run.seed,
        independent_modes=q.independent_modes,
        workers=cfg.run.workers,
    )


def cmd_qkd(args, cfg: RunConfig, out: Path) -> int:
    levels = tuple(args.levels) if args.levels else cfg.qkd.levels
    bases = tuple(b.upper() for b in (args.bases or cfg.qkd.bases))
    if args.realizations:
        cfg = cfg.override("qkd", n_realizations=args.realizations)
    cfg = cfg.override("qkd", levels=levels, bases=bases)
    cc = channel_config(cfg)
    channel = Channel(cc)
    report = run_table(levels, bases, cc, channel)
    outputs = ["qkd_table.csv"]
    report.write_csv(out / "qkd_table.csv")
    mdir = out / "matrices"
    mdir.mkdir(exist_ok=True)
    meta = {"config_hash": cfg.hash, "seed": cc.seed, "zernike_diameter_m": cc.zernike_diameter,
            "j_max": cc.j_max}
    for (cn2, basis), m in report.matrices.items():
        name = f"{basis.lower()}_cn2_{cn2:.0e}.csv"
        m.write_csv(mdir / name, meta)
        outputs += [f"matrices/{name}", f"matrices/{Path(name).with_suffix('.json')}"]
    dump_levels = [c for c in cfg.qkd.dump_worst_levels if c in levels]
    if dump_levels:
        wdir = out / "worst"
        wdir.mkdir(exist_ok=True)
        for cn2 in dump_levels:
            for basis in bases:
                idx, diag, fields = worst_realization(basis, cn2, cc, channel, report.matrices[(cn2, basis)])
                tag = f"{basis.lower()}_cn2_{cn2:.0e}"
                a = draw_coefficients(channel.covariance(cn2), channel.realization_seed(idx), cc.independent_modes)
                screen = PhaseScreen(a, channel.zernike.assemble(a), cc.grid, cc.zernike_diameter / 2,
                                     channel.realization_seed(idx))
                screen.write_coefficients(wdir / f"{tag}_screen.csv")
                dump_field(ComplexField(np.exp(1j * screen.phase), cc.grid, 0.0,
                                        {"kind": "phase_screen", "realization": idx, "cn2": cn2}),
                           wdir / f"{tag}_screen_phase", cc.beam, crop=cc.zernike_diameter)
                outputs += [f"worst/{tag}_screen.csv"]
                for s, data in enumerate(fields):
                    f = ComplexField(data, cc.grid, cc.beam.length,
                                     {"basis": basis, "sent_index": s, "realization": idx, "cn2": cn2,
                                      "diag_mean": diag, "config_hash": cfg.hash})
                    dump_field(f, wdir / f"{tag}_mode{s}", cc.beam, crop=cc.beam.aperture)
                    outputs.append(f"worst/{tag}_mode{s}.json")
    thr = security_threshold(cc.d)
    _manifest(out, "qkd", cfg, outputs, {"security_threshold": thr, "rows": [
        {"cn2": r.cn2, "basis": r.basis, "qder": r.qder, "bits_per_photon": r.bits_per_photon, "secure": r.secure}
        for r in report.rows]})
    for r in report.rows:
        print(f"cn2={r.cn2:.1e} {r.basis:>5s}  QDER {100 * r.qder:6.2f}%  {r.bits_per_photon:.3f} b/p"
              f"  {'secure' if r.secure else 'insecure'}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--seed", type=int, help="override [run] seed")
    common.add_argument("--out-dir", default=".", help="directory for outputs (created if missing)")
    common.add_argument("--workers", type=int, help="override [run] workers")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="turbqkd", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", parents=[common], help="align and smooth weather + scintillometer CSVs")
    s.add_argument("--weather")
    s.add_argument("--scint")
    s.add_argument("--output", help="file name inside --out-dir (default aligned.csv)")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("synth", parents=[common], help="write synthetic weather and scintillometer CSVs")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", parents=[common], help="train a forecaster on an aligned dataset")
    s.add_argument("--dataset", required=True)
    s.add_argument("--resume", help="checkpoint to continue from")
    s.add_argument("--output", help="checkpoint file name (default model.ckpt)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", parents=[common], help="cascaded forecast from a start time")
    s.add_argument("--model", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--start", required=True, help="last observed minute, ISO-8601 UTC")
    s.add_argument("--horizon", type=float, default=6.0, help="hours (default 6)")
    s.add_argument("--autoregressive", action="store_true", help="feed forecasts back as Cn2 inputs")
    s.add_argument("--output")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("evaluate", parents=[common], help="RMSE and persistence baseline on a split")
    s.add_argument("--model", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--split", default="test")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("pfi", parents=[common], help="permutation feature importance")
    s.add_argument("--model", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--split")
    s.set_defaults(func=cmd_pfi)

    s = sub.add_parser("qkd", parents=[common], help="turbulent QKD link simulation")
    s.add_argument("--levels", type=float, nargs="+", help="Cn2 levels (m^-2/3)")
    s.add_argument("--bases", nargs="+", help="OAM and/or ANGLE")
    s.add_argument("--realizations", type=int)
    s.set_defaults(func=cmd_qkd)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.override("run", seed=args.seed)
        if args.workers is not None:
            if args.workers < 1:
                raise UsageError("--workers must be at least 1")
            cfg = cfg.override("run", workers=args.workers)
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        return args.func(args, cfg, out)
    except (ConfigError, ResolutionError) as exc:
        code, msg = EXIT_CONFIG, f"configuration error: {exc}"
    except (OSError, CheckpointError) as exc:
        code, msg = EXIT_IO, f"I/O error: {exc}"
    except (NumericError, FloatingPointError, np.linalg.LinAlgError) as exc:
        code, msg = EXIT_NUMERIC, f"numerical error: {exc}"
    except (TimeseriesError, ValueError, KeyError) as exc:
        code, msg = EXIT_DATA, f"data error: {exc}"
    print(f"turbqkd {args.command}: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
