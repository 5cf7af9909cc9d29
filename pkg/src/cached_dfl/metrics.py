"""Per-epoch measurement and CSV/JSON result serialization."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .cache import ModelCache, cache_stats
from .learning import ModelParams, evaluate

CSV_HEADER = (
    "epoch,mean_acc,var_acc,cache_count_mean,cache_count_var,"
    "cache_age_mean,cache_age_var,lr,contacts"
)


@dataclass(frozen=True)
class EpochMetrics:
    """One epoch's outcome: accuracy spread over agents plus cache statistics."""

    epoch: int
    mean_acc: float
    var_acc: float
    cache_count_mean: float
    cache_count_var: float
    cache_age_mean: float
    cache_age_var: float
    lr: float
    contacts: int


def measure(
    models: Sequence[ModelParams],
    testsets: Sequence[tuple[np.ndarray, np.ndarray]],
    caches: Iterable[ModelCache] | None,
    epoch: int,
    lr: float,
    contacts: int,
) -> EpochMetrics:
    """Evaluate every agent on its test set and append cache statistics.

    Accuracy variance is the population variance over agents; cache fields are
    zero when `caches` is None (no-cache baselines).
    """
    accs = np.array([evaluate(m, x, y) for m, (x, y) in zip(models, testsets)])
    if caches is None:
        stats = (0.0, 0.0, 0.0, 0.0)
    else:
        stats = cache_stats(caches, epoch)
    identical = bool(np.all(accs == accs[0]))
    return EpochMetrics(
        epoch=epoch,
        mean_acc=float(accs[0] if identical else accs.mean()),
        var_acc=0.0 if identical else float(accs.var()),
        cache_count_mean=stats[0],
        cache_count_var=stats[1],
        cache_age_mean=stats[2],
        cache_age_var=stats[3],
        lr=lr,
        contacts=contacts,
    )


def _fmt(value: float) -> str:
    # 6 significant digits
    return f"{value:.6g}"


def format_row(m: EpochMetrics) -> str:
    return ",".join(
        [
            str(m.epoch),
            _fmt(m.mean_acc),
            _fmt(m.var_acc),
            _fmt(m.cache_count_mean),
            _fmt(m.cache_count_var),
            _fmt(m.cache_age_mean),
            _fmt(m.cache_age_var),
            _fmt(m.lr),
            str(m.contacts),
        ]
    )


def write_csv(series: Sequence[EpochMetrics], path: str | Path) -> None:
    """Write one row per epoch under the fixed header; floats at 6 significant digits."""
    lines = [CSV_HEADER] + [format_row(m) for m in series]
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write metrics CSV {path}: {exc}") from exc


def read_csv(path: str | Path) -> list[EpochMetrics]:
    """Parse a file produced by :func:`write_csv`."""
    text = Path(path).read_text(encoding="utf-8").strip().splitlines()
    if not text or text[0] != CSV_HEADER:
        raise ValueError(f"{path} does not start with the expected metrics header")
    out = []
    for line in text[1:]:
        f = line.split(",")
        out.append(
            EpochMetrics(
                epoch=int(f[0]),
                mean_acc=float(f[1]),
                var_acc=float(f[2]),
                cache_count_mean=float(f[3]),
                cache_count_var=float(f[4]),
                cache_age_mean=float(f[5]),
                cache_age_var=float(f[6]),
                lr=float(f[7]),
                contacts=int(f[8]),
            )
        )
    return out


def write_json(config: dict, series: Sequence[EpochMetrics], path: str | Path) -> None:
    """Dump the fully resolved config together with the metric series."""
    payload = {
        "config": config,
        "metrics": [dataclasses.asdict(m) for m in series],
    }
    try:
        Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write results JSON {path}: {exc}") from exc
