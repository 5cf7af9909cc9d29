"""Command-line interface: single runs, policy comparisons, parameter sweeps, cache statistics."""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from .config import ExperimentConfig, from_dict, to_dict, validate
from .errors import InvalidConfigError
from .metrics import CSV_HEADER, format_row, write_csv, write_json
from .protocol import run, run_cache_stats, speedup_config

SEED_ENV_VAR = "CACHED_DFL_SEED"

# flag name (without --) -> config field
FLAG_FIELDS = {
    "agents": "agents",
    "epochs": "epochs",
    "local-steps": "local_steps",
    "lr": "lr",
    "rho": "rho",
    "batch-size": "batch_size",
    "cache-size": "cache_size",
    "tau-max": "tau_max",
    "policy": "policy",
    "gb-quotas": "gb_quotas",
    "partition": "partition",
    "dirichlet-pi": "dirichlet_pi",
    "model": "model",
    "hidden": "hidden",
    "dataset": "dataset",
    "speed": "speed",
    "epoch-seconds": "epoch_seconds",
    "dt": "dt",
    "range": "comm_range",
    "grid-rows": "grid_rows",
    "grid-cols": "grid_cols",
    "block-length": "block_length",
    "seed": "seed",
    "patience": "patience",
    "target-acc": "target_acc",
}

MOBILITY_FIELDS = {
    "speed",
    "epoch_seconds",
    "dt",
    "comm_range",
    "grid_rows",
    "grid_cols",
    "block_length",
}

_INT_FIELDS = {
    "agents", "epochs", "local_steps", "patience", "seed", "batch_size", "lr_patience",
    "cache_size", "tau_max", "train_samples", "test_samples", "input_dim", "classes",
    "hidden", "grid_rows", "grid_cols", "num_areas", "restricted_per_area", "eval_subsample",
}
_FLOAT_FIELDS = {
    "lr", "rho", "lr_factor", "min_lr", "dirichlet_pi", "class_sep", "noise", "speed",
    "epoch_seconds", "dt", "comm_range", "block_length", "target_acc",
}
_BOOL_FIELDS = {"force_full_mesh"}


def _parse_value(field: str, text: str):
    """Convert a config-file or flag string to the field's value type."""
    text = text.strip()
    if field == "gb_quotas":
        try:
            return tuple(int(part) for part in text.split(","))
        except ValueError as exc:
            raise InvalidConfigError(
                f"gb_quotas must be comma-separated integers, got {text!r}"
            ) from exc
    if field in ("eval_subsample", "target_acc") and text.lower() in ("none", ""):
        return None
    try:
        if field in _INT_FIELDS:
            return int(text)
        if field in _FLOAT_FIELDS:
            return float(text)
    except ValueError as exc:
        raise InvalidConfigError(f"{field} expects a number, got {text!r}") from exc
    if field in _BOOL_FIELDS:
        lowered = text.lower()
        if lowered in ("true", "1", "yes"):
            return True
        if lowered in ("false", "0", "no"):
            return False
        raise InvalidConfigError(f"{field} expects a boolean, got {text!r}")
    return text


def parse_config_file(path: str | Path) -> dict:
    """Read `key = value` lines ('#' comments); keys may use dashes or underscores."""
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    values: dict = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InvalidConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        field = key.strip().replace("-", "_")
        if field == "range":
            field = "comm_range"
        if field not in known:
            raise InvalidConfigError(f"{path}:{lineno}: unknown configuration key {key.strip()!r}")
        values[field] = _parse_value(field, value)
    return values


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="FILE", help="key = value config file")
    parser.add_argument("--out", metavar="DIR", default="results", help="output directory")
    for flag, field in FLAG_FIELDS.items():
        if field in _INT_FIELDS:
            parser.add_argument(f"--{flag}", type=int, default=argparse.SUPPRESS)
        elif field in _FLOAT_FIELDS:
            parser.add_argument(f"--{flag}", type=float, default=argparse.SUPPRESS)
        else:
            parser.add_argument(f"--{flag}", default=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cached-dfl",
        description="Simulate cache-enabled decentralized federated learning on mobile agents.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment")
    _add_common_flags(p_run)

    p_cmp = sub.add_parser("compare", help="run lru / none / cfl with a shared setup")
    _add_common_flags(p_cmp)

    p_sweep = sub.add_parser("sweep", help="repeat a run across one parameter's values")
    _add_common_flags(p_sweep)
    p_sweep.add_argument("--param", required=True, choices=("tau-max", "cache-size", "speedup"))
    p_sweep.add_argument("--values", required=True, help="comma-separated values")

    p_stats = sub.add_parser("stats", help="training-free cache occupancy/age table")
    _add_common_flags(p_stats)
    p_stats.add_argument("--tau-grid", default="1,2,3,4,5,10,20", help="tau_max values")
    p_stats.add_argument("--epoch-grid", default="30,60,120", help="epoch lengths in seconds")

    return parser


def resolve_config(
    args: argparse.Namespace, overrides: dict | None = None
) -> tuple[ExperimentConfig, set[str]]:
    """Defaults < CACHED_DFL_SEED < config file < explicit flags."""
    values: dict = {}
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        try:
            values["seed"] = int(env_seed)
        except ValueError as exc:
            raise InvalidConfigError(f"{SEED_ENV_VAR} must be an integer, got {env_seed!r}") from exc
    config_path = getattr(args, "config", None)
    if config_path:
        values.update(parse_config_file(config_path))
    provided: set[str] = set()
    for flag, field in FLAG_FIELDS.items():
        attr = flag.replace("-", "_")
        if hasattr(args, attr):
            raw = getattr(args, attr)
            values[field] = _parse_value(field, raw) if isinstance(raw, str) else raw
            provided.add(field)
    if overrides:
        values.update(overrides)
    cfg = from_dict(values)
    validate(cfg)
    return cfg, provided


def _print_resolved(cfg: ExperimentConfig) -> None:
    print("config: " + json.dumps(to_dict(cfg), sort_keys=True))


def _epochs_to_target(series, target: float | None) -> int | None:
    if target is None:
        return None
    for m in series:
        if m.mean_acc >= target:
            return m.epoch
    return None


def _summarise(series) -> dict:
    best = max(series, key=lambda m: m.mean_acc) if series else None
    return {
        "epochs_run": len(series),
        "final_acc": series[-1].mean_acc if series else None,
        "best_acc": best.mean_acc if best else None,
        "best_epoch": best.epoch if best else None,
    }


def cmd_run(args: argparse.Namespace) -> int:
    cfg, provided = resolve_config(args)
    if cfg.policy == "cfl" and provided & MOBILITY_FIELDS:
        ignored = ", ".join(sorted(provided & MOBILITY_FIELDS))
        print(f"warning: policy cfl ignores mobility settings ({ignored})", file=sys.stderr)
    _print_resolved(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    series = run(cfg)
    write_csv(series, out / "results.csv")
    write_json(to_dict(cfg), series, out / "results.json")
    summary = _summarise(series)
    print(
        f"final mean_acc={summary['final_acc']:.6g} "
        f"best={summary['best_acc']:.6g} at epoch {summary['best_epoch']}"
        if series
        else "no epochs run"
    )
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    cfg, _ = resolve_config(args)
    _print_resolved(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary: dict = {}
    for policy in ("cfl", "lru", "none"):
        policy_cfg = dataclasses.replace(cfg, policy=policy, gb_quotas=None)
        series = run(policy_cfg)
        write_csv(series, out / f"{policy}.csv")
        entry = _summarise(series)
        entry["epochs_to_target"] = _epochs_to_target(series, cfg.target_acc)
        summary[policy] = entry
        line = f"{policy}: final={entry['final_acc']:.6g} best={entry['best_acc']:.6g}"
        if cfg.target_acc is not None:
            line += f" epochs_to_{cfg.target_acc:g}={entry['epochs_to_target']}"
        print(line)
    try:
        (out / "summary.json").write_text(
            json.dumps({"config": to_dict(cfg), "policies": summary}, indent=2) + "\n",
            encoding="utf-8",
        )
    except OSError as exc:
        raise OSError(f"cannot write summary JSON {out / 'summary.json'}: {exc}") from exc
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg, _ = resolve_config(args)
    _print_resolved(cfg)
    try:
        values = [int(v) for v in args.values.split(",") if v.strip()]
    except ValueError as exc:
        raise InvalidConfigError(f"sweep values must be integers, got {args.values!r}") from exc
    if not values:
        raise InvalidConfigError("sweep needs at least one value")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    column = args.param.replace("-", "_")
    lines = [f"{column},{CSV_HEADER}"]
    for value in values:
        if args.param == "tau-max":
            cell = dataclasses.replace(cfg, tau_max=value)
        elif args.param == "cache-size":
            quotas = cfg.gb_quotas
            if cfg.policy == "gb":
                raise InvalidConfigError("sweep cache-size does not rescale gb quotas; use lru")
            cell = dataclasses.replace(cfg, cache_size=value, gb_quotas=quotas)
        else:
            cell = speedup_config(cfg, value)
        validate(cell)
        series = run(cell)
        lines.extend(f"{value},{format_row(m)}" for m in series)
        print(f"{column}={value}: epochs={len(series)} final={series[-1].mean_acc:.6g}")
    path = out / f"sweep_{column}.csv"
    try:
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write sweep CSV {path}: {exc}") from exc
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    # training-free: data settings are unused, so pin partition to a neutral value
    cfg, _ = resolve_config(args, overrides={"partition": "iid"})
    _print_resolved(cfg)
    taus = [int(v) for v in args.tau_grid.split(",") if v.strip()]
    intervals = [float(v) for v in args.epoch_grid.split(",") if v.strip()]
    if not taus or not intervals:
        raise InvalidConfigError("stats needs at least one tau and one epoch length")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["epoch_seconds,tau_max,count_mean,count_var,age_mean,age_var"]
    print(f"{'epoch_s':>8} {'tau_max':>8} {'count':>10} {'age':>10}")
    for interval in intervals:
        for tau in sorted(taus):
            _, summary = run_cache_stats(cfg, tau_max=tau, epoch_seconds=interval)
            lines.append(
                f"{interval:g},{tau}," + ",".join(f"{v:.6g}" for v in summary)
            )
            print(f"{interval:8g} {tau:8d} {summary[0]:10.4f} {summary[2]:10.4f}")
    path = out / "stats.csv"
    try:
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write stats CSV {path}: {exc}") from exc
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "run": cmd_run,
        "compare": cmd_compare,
        "sweep": cmd_sweep,
        "stats": cmd_stats,
    }
    try:
        return handlers[args.command](args)
    except InvalidConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
