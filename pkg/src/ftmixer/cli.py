"""Command line interface: train / eval / predict / spectrum / sweep.

Settings come from built-in defaults, overridden by an INI-style
``key = value`` config file (sections [model], [train], [io]), overridden
by command-line flags.  Every artifact embeds the effective settings and
seed.  Exit codes: 0 ok, 1 configuration error, 2 data error, 3 numeric
abort.
"""

from __future__ import annotations

import os

# Honor the worker cap before numpy binds its thread pools (the import
# chain below pulls numpy in).
_threads = os.environ.get("FTMIX_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import spectral
from .errors import ConfigError, DataError, FtMixerError, NumericError
from .model import (
    ABLATIONS,
    ModelConfig,
    default_patch_scales,
    ftmixer_forward,
    load_checkpoint,
)
from .train import TrainConfig, evaluate, run_length_sweep, train

log = logging.getLogger(__name__)

_DEFAULTS = {
    "model": {
        "lookback": 336,
        "horizon": 96,
        "fcc_embed_dim": 128,
        "patch_embed_dim": 64,
        "patch_scales": None,  # None -> derived from lookback
        "fcc_kernel_size": None,
        "wfc_kernel_size": 3,
        "ds_dw_kernel_size": 3,
        "revin_epsilon": 1e-5,
    },
    "train": {
        "epochs": 30,
        "batch_size": 32,
        "lr": 1e-3,
        "patience": 5,
        "ablation": "full",
        "seed": 0,
    },
    "io": {
        "data": None,
        "output": "ftmixer_out",
        "checkpoint": None,
        "ratios": (0.6, 0.2, 0.2),
    },
}

_PARSERS = {
    ("model", "lookback"): int,
    ("model", "horizon"): int,
    ("model", "fcc_embed_dim"): int,
    ("model", "patch_embed_dim"): int,
    ("model", "patch_scales"): lambda s: _int_list(s, "patch_scales"),
    ("model", "fcc_kernel_size"): int,
    ("model", "wfc_kernel_size"): int,
    ("model", "ds_dw_kernel_size"): int,
    ("model", "revin_epsilon"): float,
    ("train", "epochs"): int,
    ("train", "batch_size"): int,
    ("train", "lr"): float,
    ("train", "patience"): int,
    ("train", "ablation"): str,
    ("train", "seed"): int,
    ("io", "data"): str,
    ("io", "output"): str,
    ("io", "checkpoint"): str,
    ("io", "ratios"): lambda s: _float_list(s, "ratios"),
}


def _int_list(text: str, name: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in str(text).split(",") if part.strip())
    except ValueError:
        raise ConfigError(f"{name}: expected comma-separated integers, got {text!r}") from None


def _float_list(text, name: str) -> tuple[float, ...]:
    if isinstance(text, tuple):
        return text
    try:
        return tuple(float(part) for part in str(text).split(",") if part.strip())
    except ValueError:
        raise ConfigError(f"{name}: expected comma-separated numbers, got {text!r}") from None


class _Parser(argparse.ArgumentParser):
    """argparse variant whose usage errors map to our config exit code."""

    def error(self, message):
        raise ConfigError(message)


def _read_config_file(path) -> dict:
    import configparser

    parser = configparser.ConfigParser()
    try:
        with open(path, "r", encoding="utf-8") as f:
            parser.read_file(f)
    except OSError as exc:
        raise DataError(f"cannot read config file {path}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file {path}: {exc}") from None
    merged: dict = {}
    for section in parser.sections():
        if section not in _DEFAULTS:
            raise ConfigError(f"unknown config section [{section}]")
        merged[section] = {}
        for key, value in parser.items(section):
            if key not in _DEFAULTS[section]:
                raise ConfigError(f"unknown config key {key!r} in section [{section}]")
            merged[section][key] = _PARSERS[(section, key)](value)
    return merged


def _effective_settings(args) -> dict:
    """defaults <- config file <- flags."""
    effective = {section: dict(values) for section, values in _DEFAULTS.items()}
    if args.config:
        for section, values in _read_config_file(args.config).items():
            effective[section].update(values)
    flag_map = [
        ("model", "lookback", "lookback"),
        ("model", "horizon", "horizon"),
        ("model", "patch_scales", "patch_scales"),
        ("train", "epochs", "epochs"),
        ("train", "batch_size", "batch_size"),
        ("train", "lr", "lr"),
        ("train", "patience", "patience"),
        ("train", "ablation", "ablation"),
        ("train", "seed", "seed"),
        ("io", "data", "data"),
        ("io", "output", "output"),
        ("io", "checkpoint", "checkpoint"),
        ("io", "ratios", "ratios"),
    ]
    for section, key, attr in flag_map:
        value = getattr(args, attr, None)
        if value is not None:
            effective[section][key] = value
    return effective


def _model_config(settings: dict, channels: int) -> ModelConfig:
    m = settings["model"]
    scales = m["patch_scales"]
    if scales is None:
        scales = default_patch_scales(m["lookback"])
    return ModelConfig(
        lookback=m["lookback"],
        horizon=m["horizon"],
        channels=channels,
        fcc_embed_dim=m["fcc_embed_dim"],
        patch_scales=tuple(scales),
        patch_embed_dim=m["patch_embed_dim"],
        fcc_kernel_size=m["fcc_kernel_size"],
        wfc_kernel_size=m["wfc_kernel_size"],
        ds_dw_kernel_size=m["ds_dw_kernel_size"],
        revin_epsilon=m["revin_epsilon"],
        seed=settings["train"]["seed"],
    )


def _train_config(settings: dict) -> TrainConfig:
    t = settings["train"]
    return TrainConfig(
        epochs=t["epochs"],
        batch_size=t["batch_size"],
        learning_rate=t["lr"],
        patience=t["patience"],
        seed=t["seed"],
        ablation=t["ablation"],
    )


def _require_data(settings: dict) -> data_mod.SeriesDataset:
    path = settings["io"]["data"]
    if not path:
        raise ConfigError("no dataset given; pass --data or set io.data in the config file")
    return data_mod.load_csv(path)


def _ratios(settings: dict) -> tuple[float, float, float]:
    ratios = tuple(settings["io"]["ratios"])
    if len(ratios) != 3:
        raise ConfigError(f"ratios needs three values, got {ratios}")
    return ratios  # type: ignore[return-value]


def _out_dir(settings: dict) -> Path:
    out = Path(settings["io"]["output"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config_header(settings: dict) -> str:
    return "# config: " + json.dumps(settings, sort_keys=True, default=str)


def _write_csv(path: Path, settings: dict, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(_config_header(settings) + "\n")
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> int:
    settings = _effective_settings(args)
    raw = _require_data(settings)
    model_config = _model_config(settings, raw.channels)
    train_config = _train_config(settings)
    prepared = data_mod.prepare(
        raw, _ratios(settings), model_config.lookback, model_config.horizon
    )
    out = _out_dir(settings)
    checkpoint = out / "checkpoint.ftm"
    report, _ = train(model_config, train_config, prepared, checkpoint_path=checkpoint)
    _write_json(out / "report.json", {"config": settings, "report": report.to_dict()})
    _write_csv(
        out / "losses.csv",
        settings,
        ["epoch", "time_loss", "freq_loss", "total", "val_mse"],
        [
            [e["epoch"], e["time_loss"], e["freq_loss"], e["total"], e["val_mse"]]
            for e in report.epochs
        ],
    )
    print(
        f"trained {raw.name}: best epoch {report.best_epoch}, "
        f"test mse {report.test_mse:.6f}, mae {report.test_mae:.6f} "
        f"({report.wall_seconds:.1f}s); artifacts in {out}"
    )
    return 0


def _load_for_eval(args, settings):
    path = settings["io"]["checkpoint"]
    if not path:
        raise ConfigError("no checkpoint given; pass --checkpoint")
    params, meta = load_checkpoint(path)
    raw = _require_data(settings)
    prepared = data_mod.prepare(
        raw, _ratios(settings), params.config.lookback, params.config.horizon
    )
    return params, prepared


def cmd_eval(args) -> int:
    settings = _effective_settings(args)
    params, prepared = _load_for_eval(args, settings)
    metrics = evaluate(params, params.config, prepared, args.split)
    payload = dict(metrics)
    payload["config"] = settings
    out = _out_dir(settings)
    _write_json(out / "metrics.json", payload)
    print(json.dumps(metrics, sort_keys=True))
    return 0


def cmd_predict(args) -> int:
    settings = _effective_settings(args)
    params, prepared = _load_for_eval(args, settings)
    config = params.config
    span = config.lookback + config.horizon
    start = args.start if args.start is not None else prepared.val_end
    if start is None or start < 0 or start + span > prepared.length:
        raise ConfigError(
            f"window start {start} out of range; need 0 <= start <= "
            f"{prepared.length - span}"
        )
    window = prepared.values[:, start : start + span]
    pred_std = ftmixer_forward(window[None, :, : config.lookback], params, config).values[0]
    stats = prepared.norm_stats
    predicted = data_mod.destandardize(pred_std, stats)
    actual = data_mod.destandardize(window[:, config.lookback :], stats)
    rows = []
    for c, name in enumerate(prepared.channel_names):
        for step in range(config.horizon):
            rows.append(
                [name, step, repr(float(predicted[c, step])), repr(float(actual[c, step]))]
            )
    out = _out_dir(settings)
    _write_csv(out / "forecast.csv", settings, ["channel", "step", "predicted", "actual"], rows)
    print(f"wrote {len(rows)} forecast rows to {out / 'forecast.csv'}")
    return 0


def cmd_spectrum(args) -> int:
    settings = _effective_settings(args)
    raw = _require_data(settings)
    if not 0 <= args.channel < raw.channels:
        raise ConfigError(f"channel {args.channel} out of range (dataset has {raw.channels})")
    if args.len < 1 or args.start < 0 or args.start + args.len > raw.length:
        raise ConfigError(
            f"window [{args.start}, {args.start + args.len}) out of range for "
            f"length {raw.length}"
        )
    segment = raw.values[args.channel, args.start : args.start + args.len]
    coefficients = spectral.dct(segment)
    out = _out_dir(settings)
    _write_csv(
        out / "spectrum.csv",
        settings,
        ["k", "coefficient"],
        [[k, repr(float(c))] for k, c in enumerate(coefficients)],
    )
    print(f"wrote {len(coefficients)} coefficients to {out / 'spectrum.csv'}")
    return 0


def cmd_sweep(args) -> int:
    settings = _effective_settings(args)
    raw = _require_data(settings)
    lengths = _int_list(args.lengths, "lengths") if args.lengths else (96, 192, 336, 720)
    train_config = _train_config(settings)
    rows = run_length_sweep(
        raw, _ratios(settings), lengths, settings["model"]["horizon"], train_config
    )
    out = _out_dir(settings)
    _write_csv(
        out / "sweep.csv",
        settings,
        ["lookback", "mse", "mae"],
        [[r["lookback"], r["mse"], r["mae"]] for r in rows],
    )
    for r in rows:
        print(f"lookback {r['lookback']}: mse {r['mse']:.6f}, mae {r['mae']:.6f}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ftmixer", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def shared(p):
        p.add_argument("--config", help="INI config file ([model]/[train]/[io] sections)")
        p.add_argument("--data", help="dataset CSV (first column 'date')")
        p.add_argument("--output", help="artifact directory")
        p.add_argument("--seed", type=int, help="seed for init and shuffling")
        p.add_argument("--ratios", type=lambda s: _float_list(s, "ratios"),
                       help="train,val,test fractions (default 0.6,0.2,0.2)")

    def model_flags(p):
        p.add_argument("--lookback", type=int)
        p.add_argument("--horizon", type=int)
        p.add_argument("--patch-scales", dest="patch_scales",
                       type=lambda s: _int_list(s, "patch-scales"))

    def train_flags(p):
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--patience", type=int)
        p.add_argument("--ablation", choices=ABLATIONS)

    p_train = sub.add_parser("train", help="train a model and write checkpoint + report")
    shared(p_train)
    model_flags(p_train)
    train_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    shared(p_eval)
    p_eval.add_argument("--checkpoint")
    p_eval.add_argument("--split", default="test", choices=data_mod.SPLITS)
    p_eval.set_defaults(func=cmd_eval)

    p_pred = sub.add_parser("predict", help="forecast one window to CSV")
    shared(p_pred)
    p_pred.add_argument("--checkpoint")
    p_pred.add_argument("--start", type=int, help="input-window start index (default: first test window)")
    p_pred.set_defaults(func=cmd_predict)

    p_spec = sub.add_parser("spectrum", help="emit transform coefficients of a raw window")
    shared(p_spec)
    p_spec.add_argument("--channel", type=int, default=0)
    p_spec.add_argument("--start", type=int, default=0)
    p_spec.add_argument("--len", type=int, required=True)
    p_spec.set_defaults(func=cmd_spectrum)

    p_sweep = sub.add_parser("sweep", help="train across lookback lengths")
    shared(p_sweep)
    train_flags(p_sweep)
    p_sweep.add_argument("--lengths", help="comma-separated lookbacks (default 96,192,336,720)")
    p_sweep.add_argument("--horizon", type=int)
    p_sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"ftmixer: error: config: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"ftmixer: error: data: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"ftmixer: error: numeric: {exc}", file=sys.stderr)
        return 3
    except FtMixerError as exc:
        print(f"ftmixer: error: config: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
