"""`knf` command line: synth, train, forecast, eval, spectral."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import spectral as spectral_mod
from .config import apply_overrides, load_config, make_knf_config, make_train_config
from .errors import KnfError, NumericError, ParseError
from .evaluation import persistence_forecast, score_forecasts
from .model import forward_call, forecast
from .nets import wrap
from .training import ensemble_forecast, load_checkpoint, save_checkpoint, train

logger = logging.getLogger(__name__)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="knf",
        description="Koopman-operator neural forecaster for non-stationary series",
    )
    parser.add_argument(
        "command", choices=["synth", "train", "forecast", "eval", "spectral"]
    )
    parser.add_argument("--config", required=True, help="key = value config file")
    parser.add_argument("--seed", type=int, default=None, help="override the seed key")
    parser.add_argument("--jobs", type=int, default=1, help="parallel series workers")
    parser.add_argument(
        "--override",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config key (repeatable)",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def _out_dir(rc: dict) -> Path:
    out = Path(os.environ.get("KNF_OUT", rc["out_dir"]))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_members(rc: dict) -> list:
    paths = [p.strip() for p in rc["checkpoint"].split(",") if p.strip()]
    if not paths:
        raise ParseError("config key 'checkpoint' is required for this command")
    return [load_checkpoint(p) for p in paths]


def _series_or_fail(rc: dict, key: str):
    if not rc[key]:
        raise ParseError(f"config key {key!r} is required for this command")
    return data_mod.load_manifest(rc[key])


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(value) -> str:
    return repr(float(value)) if isinstance(value, (float, np.floating)) else str(value)


# ----------------------------------------------------------------- commands


def cmd_synth(rc: dict) -> int:
    out = _out_dir(rc)
    data_dir = out / "data"
    data_dir.mkdir(exist_ok=True)
    params = data_mod.OscillatorParams(
        mu=rc["synth_mu"],
        lam=rc["synth_lambda"],
        dt=rc["synth_dt"],
        steps=rc["synth_steps"],
        count=rc["synth_train_count"] + rc["synth_test_count"],
        init_low=rc["synth_init_low"],
        init_high=rc["synth_init_high"],
    )
    series = data_mod.oscillator_generate(params, seed=rc["seed"])
    split_at = rc["synth_train_count"]
    for name, chunk in (("manifest.txt", series[:split_at]), ("manifest_test.txt", series[split_at:])):
        entries = []
        for s in chunk:
            data_mod.save_csv(s, data_dir / f"{s.id}.csv")
            entries.append((f"data/{s.id}.csv", s.weight))
        data_mod.write_manifest(out / name, entries)
    logger.info("wrote %d series under %s", len(series), data_dir)
    return 0


def cmd_train(rc: dict) -> int:
    out = _out_dir(rc)
    config = make_knf_config(rc)
    tcfg = make_train_config(rc)
    series = _series_or_fail(rc, "train_manifest")
    min_len = config.q + config.h
    if rc["split_mode"] == "temporal":
        train_series, val_series, _ = data_mod.split(series, min_length=min_len)
    elif rc["split_mode"] == "none":
        train_series, val_series = series, []
    else:
        raise ParseError(f"unknown split_mode {rc['split_mode']!r}")
    windows = [
        w
        for s in train_series
        for w in data_mod.sliding_windows(s, config.q, config.h, rc["stride"])
    ]
    val_windows = [
        w
        for s in val_series
        for w in data_mod.sliding_windows(s, config.q, config.h, rc["stride"])
    ]
    if not windows:
        raise ParseError("no training windows (series shorter than q + h?)")
    logger.info("training on %d windows (%d validation)", len(windows), len(val_windows))
    params, history = train(config, tcfg, windows, val_windows or None)
    save_checkpoint(params, out / "model.knf")
    _write_csv(
        out / "history.csv",
        ["epoch", "rec", "back", "forw", "total", "val"],
        [[r["epoch"], r["rec"], r["back"], r["forw"], r["total"], r["val"]] for r in history],
    )
    logger.info("checkpoint written to %s", out / "model.knf")
    return 0


def cmd_forecast(rc: dict, jobs: int) -> int:
    out = _out_dir(rc)
    config = make_knf_config(rc)
    members = _load_members(rc)
    series = _series_or_fail(rc, "test_manifest" if rc["test_manifest"] else "train_manifest")

    def run_one(s):
        lookback = s.values.T[:, -config.q :]
        if lookback.shape[1] < config.q:
            raise ParseError(f"series {s.id!r} shorter than the lookback window")
        pred = ensemble_forecast(members, config, lookback)
        _write_csv(
            out / f"forecast_{s.id}.csv",
            [f"x{j}" for j in range(config.d)],
            pred.T,
        )

    _map_jobs(run_one, series, jobs)
    logger.info("wrote %d forecast files to %s", len(series), out)
    return 0


def cmd_eval(rc: dict, jobs: int) -> int:
    out = _out_dir(rc)
    config = make_knf_config(rc)
    members = _load_members(rc) if rc["eval_model"] == "knf" else None
    series = _series_or_fail(rc, "test_manifest" if rc["test_manifest"] else "train_manifest")
    stride = rc["eval_stride"] or config.h

    def run_one(s):
        forecasts, targets = [], []
        for w in data_mod.sliding_windows(s, config.q, config.h, stride):
            if members is None:
                pred = persistence_forecast(w.lookback, config.h)
            else:
                pred = ensemble_forecast(members, config, w.lookback)
            forecasts.append(pred)
            targets.append(w.target)
        return s.id, s.weight, forecasts, targets

    results = [r for r in _map_jobs(run_one, series, jobs) if r[2]]
    if not results:
        raise ParseError("no evaluation windows (series shorter than q + h?)")
    ids = [sid for sid, _, f, t in results for _ in f]
    weights = [w for _, w, f, t in results for _ in f]
    forecasts = [p for _, _, f, _ in results for p in f]
    targets = [t for _, _, _, ts in results for t in ts]
    report = score_forecasts(rc["eval_metric"], forecasts, targets, ids, weights)
    _write_csv(out / "report.csv", ["series_id", "metric", "bucket", "value"], report.rows())
    logger.info("%s = %.6g (%s)", report.metric, report.overall, out / "report.csv")
    print(f"{report.metric}: {report.overall:.6g}")
    return 0


def cmd_spectral(rc: dict) -> int:
    out = _out_dir(rc)
    config = make_knf_config(rc)
    members = _load_members(rc)
    series = _series_or_fail(rc, "test_manifest" if rc["test_manifest"] else "train_manifest")
    idx = rc["spectral_series"]
    if not (0 <= idx < len(series)):
        raise ParseError(f"spectral_series {idx} out of range ({len(series)} series)")
    s = series[idx]
    start = rc["spectral_start"]
    window = s.values.T[:, start : start + config.q]
    if window.shape[1] < config.q:
        raise ParseError("spectral window runs past the end of the series")
    params = members[0]
    result = forward_call(config, wrap(params), window)
    spectrum = spectral_mod.eigendecompose(result["k_back"].data[0])
    _write_csv(
        out / "spectrum.csv",
        ["index", "re", "im", "modulus", "residual"],
        spectrum.rows(),
    )
    n_comp = min(rc["spectral_components"], len(spectrum))
    for j in range(n_comp):
        trace, _ = spectral_mod.eigenfunction_reconstruction(config, params, window, j)
        _write_csv(
            out / f"eigenfunction_{j}.csv",
            [f"x{i}" for i in range(config.d)],
            trace.T,
        )
    logger.info("spectrum and %d eigenfunction traces written to %s", n_comp, out)
    return 0


def _map_jobs(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# --------------------------------------------------------------- entrypoint


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        rc = load_config(args.config)
        apply_overrides(rc, args.override)
        if args.seed is not None:
            rc["seed"] = args.seed
        if args.command == "synth":
            return cmd_synth(rc)
        if args.command == "train":
            return cmd_train(rc)
        if args.command == "forecast":
            return cmd_forecast(rc, args.jobs)
        if args.command == "eval":
            return cmd_eval(rc, args.jobs)
        return cmd_spectral(rc)
    except NumericError as exc:
        print(f"knf: numeric failure: {exc}", file=sys.stderr)
        return 3
    except (KnfError, OSError, ValueError) as exc:
        print(f"knf: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
