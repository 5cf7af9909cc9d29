"""Experiment configuration: defaults, validation, and serialization."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .errors import InvalidConfigError

POLICIES = ("lru", "gb", "none", "cfl")
PARTITIONS = ("shards", "iid", "dirichlet", "overlap-0", "overlap-1", "overlap-2", "overlap-3")
MODELS = ("softmax", "mlp")


@dataclass(frozen=True)
class ExperimentConfig:
    """Full description of one run; every field has a materialised default."""

    # population and schedule
    agents: int = 100
    epochs: int = 1000
    local_steps: int = 10
    patience: int = 20
    seed: int = 0
    # optimisation
    lr: float = 0.1
    rho: float = 0.01
    batch_size: int = 64
    lr_factor: float = 0.1
    lr_patience: int = 10
    min_lr: float = 1e-4
    # caching
    policy: str = "lru"
    cache_size: int = 10
    tau_max: int = 10
    gb_quotas: tuple[int, ...] | None = None
    # data
    partition: str = "shards"
    dirichlet_pi: float = 0.5
    dataset: str = "synthetic"
    train_samples: int = 20000
    test_samples: int = 4000
    input_dim: int = 32
    classes: int = 10
    class_sep: float = 3.0
    noise: float = 1.0
    eval_subsample: int | None = None
    # model
    model: str = "softmax"
    hidden: int = 64
    # mobility
    speed: float = 13.89
    epoch_seconds: float = 120.0
    dt: float = 1.0
    comm_range: float = 100.0
    grid_rows: int = 10
    grid_cols: int = 10
    block_length: float = 200.0
    num_areas: int = 3
    restricted_per_area: int = 0
    force_full_mesh: bool = False
    # reporting
    target_acc: float | None = None


def _positive(name: str, value: float) -> None:
    if value <= 0:
        raise InvalidConfigError(f"{name} must be positive, got {value}")


def validate(cfg: ExperimentConfig) -> None:
    """Raise InvalidConfigError on the first unusable value or combination."""
    if cfg.agents < 1:
        raise InvalidConfigError(f"agents must be >= 1, got {cfg.agents}")
    if cfg.epochs < 0:
        raise InvalidConfigError(f"epochs must be >= 0, got {cfg.epochs}")
    if cfg.local_steps < 0:
        raise InvalidConfigError(f"local_steps must be >= 0, got {cfg.local_steps}")
    if cfg.patience < 1:
        raise InvalidConfigError(f"patience must be >= 1, got {cfg.patience}")
    if cfg.seed < 0:
        raise InvalidConfigError(f"seed must be >= 0, got {cfg.seed}")
    _positive("lr", cfg.lr)
    if cfg.rho < 0:
        raise InvalidConfigError(f"rho must be >= 0, got {cfg.rho}")
    if cfg.batch_size < 1:
        raise InvalidConfigError(f"batch_size must be >= 1, got {cfg.batch_size}")
    if not 0 < cfg.lr_factor <= 1:
        raise InvalidConfigError(f"lr_factor must be in (0, 1], got {cfg.lr_factor}")
    if cfg.lr_patience < 1:
        raise InvalidConfigError(f"lr_patience must be >= 1, got {cfg.lr_patience}")
    _positive("min_lr", cfg.min_lr)

    if cfg.policy not in POLICIES:
        raise InvalidConfigError(f"policy must be one of {POLICIES}, got {cfg.policy!r}")
    if cfg.tau_max < 1:
        raise InvalidConfigError(f"tau_max must be >= 1, got {cfg.tau_max}")
    if cfg.policy in ("lru", "gb") and cfg.cache_size < 1:
        raise InvalidConfigError(f"cache_size must be >= 1, got {cfg.cache_size}")
    if cfg.policy == "gb":
        if cfg.gb_quotas is None:
            raise InvalidConfigError("policy gb requires gb_quotas")
        if len(cfg.gb_quotas) != cfg.num_areas:
            raise InvalidConfigError(
                f"gb_quotas has {len(cfg.gb_quotas)} entries, expected one per area "
                f"({cfg.num_areas})"
            )
        if any(q < 0 for q in cfg.gb_quotas):
            raise InvalidConfigError(f"gb_quotas must be >= 0, got {cfg.gb_quotas}")
        if sum(cfg.gb_quotas) != cfg.cache_size:
            raise InvalidConfigError(
                f"gb_quotas sum to {sum(cfg.gb_quotas)}, expected cache_size={cfg.cache_size}"
            )

    if cfg.partition not in PARTITIONS:
        raise InvalidConfigError(
            f"partition must be one of {PARTITIONS}, got {cfg.partition!r}"
        )
    _positive("dirichlet_pi", cfg.dirichlet_pi)
    if cfg.partition == "shards":
        for fraction in (0.1, 0.2, 0.3, 0.4):
            if abs(fraction * cfg.agents - round(fraction * cfg.agents)) > 1e-9:
                raise InvalidConfigError(
                    f"shards partition needs agent counts divisible by 10, got {cfg.agents}"
                )
    if cfg.partition.startswith("overlap-"):
        if cfg.classes != 10:
            raise InvalidConfigError("overlap partitions require a 10-class dataset")
        if cfg.num_areas != 3:
            raise InvalidConfigError("overlap partitions use exactly 3 areas")

    if cfg.dataset != "synthetic":
        if not cfg.dataset.startswith("idx:"):
            raise InvalidConfigError(
                f"dataset must be 'synthetic' or 'idx:<img>,<lbl>,<timg>,<tlbl>', got {cfg.dataset!r}"
            )
        if len(cfg.dataset[4:].split(",")) != 4:
            raise InvalidConfigError("idx dataset needs exactly 4 comma-separated paths")
    else:
        if cfg.train_samples < 1 or cfg.test_samples < 1:
            raise InvalidConfigError("synthetic dataset needs positive train/test sizes")
        if cfg.classes < 2 or cfg.input_dim < cfg.classes:
            raise InvalidConfigError(
                f"synthetic dataset needs input_dim >= classes >= 2, "
                f"got {cfg.input_dim}/{cfg.classes}"
            )
        _positive("class_sep", cfg.class_sep)
        if cfg.noise < 0:
            raise InvalidConfigError(f"noise must be >= 0, got {cfg.noise}")
    if cfg.eval_subsample is not None and cfg.eval_subsample < 1:
        raise InvalidConfigError(f"eval_subsample must be >= 1, got {cfg.eval_subsample}")

    if cfg.model not in MODELS:
        raise InvalidConfigError(f"model must be one of {MODELS}, got {cfg.model!r}")
    if cfg.model == "mlp" and cfg.hidden < 1:
        raise InvalidConfigError(f"hidden must be >= 1, got {cfg.hidden}")

    _positive("speed", cfg.speed)
    _positive("dt", cfg.dt)
    _positive("epoch_seconds", cfg.epoch_seconds)
    if int(round(cfg.epoch_seconds / cfg.dt)) < 1:
        raise InvalidConfigError(
            f"epoch_seconds={cfg.epoch_seconds} with dt={cfg.dt} yields no mobility ticks"
        )
    _positive("comm_range", cfg.comm_range)
    if cfg.grid_rows < 2 or cfg.grid_cols < 2:
        raise InvalidConfigError(
            f"grid needs at least 2x2 streets, got {cfg.grid_rows}x{cfg.grid_cols}"
        )
    _positive("block_length", cfg.block_length)
    if cfg.num_areas < 1:
        raise InvalidConfigError(f"num_areas must be >= 1, got {cfg.num_areas}")
    if cfg.restricted_per_area < 0:
        raise InvalidConfigError(
            f"restricted_per_area must be >= 0, got {cfg.restricted_per_area}"
        )
    if cfg.restricted_per_area:
        free = cfg.agents - cfg.num_areas * cfg.restricted_per_area
        if free < 0:
            raise InvalidConfigError(
                f"{cfg.num_areas} areas x {cfg.restricted_per_area} restricted vehicles "
                f"exceed {cfg.agents} agents"
            )
        if cfg.grid_rows // cfg.num_areas < 1:
            raise InvalidConfigError(
                f"cannot band {cfg.grid_rows} rows into {cfg.num_areas} areas"
            )
    if cfg.target_acc is not None and not 0 < cfg.target_acc <= 1:
        raise InvalidConfigError(f"target_acc must be in (0, 1], got {cfg.target_acc}")


def to_dict(cfg: ExperimentConfig) -> dict:
    """JSON-friendly dict of every resolved field."""
    out = dataclasses.asdict(cfg)
    if out["gb_quotas"] is not None:
        out["gb_quotas"] = list(out["gb_quotas"])
    return out


def from_dict(values: dict) -> ExperimentConfig:
    """Build a config from field-name keys, rejecting unknown ones."""
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise InvalidConfigError(f"unknown configuration key {unknown[0]!r}")
    if isinstance(values.get("gb_quotas"), list):
        values = dict(values, gb_quotas=tuple(values["gb_quotas"]))
    return ExperimentConfig(**values)
