"""Epoch orchestration: local training, mobility-driven exchange, weighted aggregation.

One epoch runs three phases. Every agent first trains its own model for K
proximal SGD steps. The vehicles then move for the epoch's wall-clock
interval; whenever a pair enters communication range (edge-triggered per
epoch) the two agents swap their fresh models plus their cached snapshots,
so models picked up early in an epoch can be relayed further within the same
epoch. Finally each agent evicts stale entries and replaces its model with
the sample-count-weighted mean of its own fresh model and everything in its
cache.

Also provided: a centralized FedAvg baseline (one shared model, no
mobility), a cache-free baseline in which meeting agents adopt their pairwise
mean, and a training-free mode that measures cache occupancy and age with the
models replaced by zero-size tokens.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .cache import CachedModel, ModelCache, cache_stats, evict_stale, gb_update, lru_update
from .config import ExperimentConfig, to_dict, validate
from .datasets import (
    AgentDataset,
    load_idx_images,
    load_idx_labels,
    make_synthetic,
    partition_dirichlet,
    partition_iid,
    partition_overlap,
    partition_shards,
)
from .errors import InvalidConfigError
from .learning import (
    Arch,
    LocalLearnerConfig,
    ModelParams,
    PlateauScheduler,
    init_params,
    local_update,
)
from .metrics import EpochMetrics, measure
from .mobility import (
    AreaSpec,
    ContactEvent,
    GridMap,
    VehicleState,
    build_grid,
    detect_contacts,
    init_vehicles,
    step,
)
from .rng import substream


@dataclass
class AgentRuntime:
    """Mutable per-agent state threaded through the epochs."""

    id: int
    params: ModelParams
    cache: ModelCache
    features: np.ndarray
    labels: np.ndarray
    group: int = 0
    vehicle: VehicleState | None = None
    trained: ModelParams | None = None

    @property
    def n_samples(self) -> int:
        return len(self.labels)


@dataclass
class World:
    """Everything a run needs that is derived from the config once."""

    arch: Arch
    init: ModelParams
    train_sets: list[AgentDataset]
    testsets: list[tuple[np.ndarray, np.ndarray]]
    grid: GridMap | None
    vehicles: list[VehicleState] | None
    data_areas: np.ndarray | None


def data_area_assignment(cfg: ExperimentConfig) -> np.ndarray:
    """Area affiliation of every agent's dataset.

    Restricted vehicles belong to the band they roam; the remaining free
    vehicles are affiliated round-robin so each area gets its share of them.
    """
    areas = np.empty(cfg.agents, dtype=np.int64)
    restricted = cfg.num_areas * cfg.restricted_per_area
    for agent in range(cfg.agents):
        if agent < restricted:
            areas[agent] = agent // cfg.restricted_per_area
        else:
            areas[agent] = (agent - restricted) % cfg.num_areas
    return areas


def _load_data(cfg: ExperimentConfig):
    if cfg.dataset == "synthetic":
        rng = substream(cfg.seed, "data")
        x, y = make_synthetic(
            cfg.train_samples, cfg.input_dim, cfg.classes, cfg.class_sep, cfg.noise, rng
        )
        xt, yt = make_synthetic(
            cfg.test_samples, cfg.input_dim, cfg.classes, cfg.class_sep, cfg.noise, rng
        )
        return x, y, xt, yt
    img, lbl, timg, tlbl = cfg.dataset[4:].split(",")
    x, y = load_idx_images(img), load_idx_labels(lbl)
    xt, yt = load_idx_images(timg), load_idx_labels(tlbl)
    if len(x) != len(y) or len(xt) != len(yt):
        raise InvalidConfigError("idx image and label counts disagree")
    return x, y, xt, yt


def _partition(cfg: ExperimentConfig, x, y, data_areas) -> list[AgentDataset]:
    rng = substream(cfg.seed, "partition")
    if cfg.partition == "shards":
        return partition_shards(x, y, cfg.agents, rng=rng)
    if cfg.partition == "iid":
        return partition_iid(x, y, cfg.agents, rng)
    if cfg.partition == "dirichlet":
        return partition_dirichlet(x, y, cfg.agents, cfg.dirichlet_pi, rng)
    n_overlap = int(cfg.partition.split("-")[1])
    return partition_overlap(x, y, data_areas, n_overlap, rng)


def build_world(
    cfg: ExperimentConfig,
    partitions: list[AgentDataset] | None = None,
) -> World:
    """Materialise data, partitions, test sets, model init, and (if needed) vehicles.

    `partitions` overrides the config-driven partitioner, for callers that
    assemble their own agent datasets.
    """
    x, y, xt, yt = _load_data(cfg)
    input_dim = x.shape[1]
    classes = int(max(y.max(), yt.max())) + 1 if cfg.dataset != "synthetic" else cfg.classes
    arch = (
        Arch("softmax", input_dim, classes)
        if cfg.model == "softmax"
        else Arch("mlp", input_dim, classes, cfg.hidden)
    )
    data_areas = data_area_assignment(cfg)
    if partitions is None:
        partitions = _partition(cfg, x, y, data_areas)
    if len(partitions) != cfg.agents:
        raise InvalidConfigError(f"{len(partitions)} partitions for {cfg.agents} agents")
    if any(p.sample_count < 1 for p in partitions):
        raise InvalidConfigError("every agent needs at least one training sample")

    if cfg.eval_subsample is None:
        testsets = [(xt, yt)] * cfg.agents
    else:
        size = min(cfg.eval_subsample, len(yt))
        testsets = []
        for agent in range(cfg.agents):
            idx = substream(cfg.seed, "eval", agent).choice(len(yt), size=size, replace=False)
            testsets.append((xt[idx], yt[idx]))

    grid = vehicles = None
    if cfg.policy != "cfl" and not cfg.force_full_mesh:
        grid = build_grid(cfg.grid_rows, cfg.grid_cols, cfg.block_length)
        area_spec = None
        if cfg.restricted_per_area:
            area_spec = AreaSpec(
                cfg.num_areas,
                cfg.restricted_per_area,
                cfg.agents - cfg.num_areas * cfg.restricted_per_area,
            )
        vehicles = init_vehicles(grid, cfg.agents, cfg.speed, area_spec, substream(cfg.seed, "placement"))

    return World(
        arch=arch,
        init=init_params(arch, substream(cfg.seed, "init")),
        train_sets=partitions,
        testsets=testsets,
        grid=grid,
        vehicles=vehicles,
        data_areas=data_areas,
    )


def weighted_mean(entries: list[CachedModel]) -> ModelParams:
    """Sample-count-weighted average, accumulated in ascending owner order."""
    entries = sorted(entries, key=lambda e: e.owner)
    total = sum(e.sample_count for e in entries)
    out = np.zeros_like(entries[0].params.weights)
    for e in entries:
        out += (e.sample_count / total) * e.params.weights
    return ModelParams(entries[0].params.arch, out)


def aggregate(own: CachedModel, cache: ModelCache) -> ModelParams:
    """Weighted mean over the agent's own fresh model plus every cached snapshot."""
    return weighted_mean([own, *cache.entries])


def pairwise_average(a: AgentRuntime, b: AgentRuntime) -> None:
    """Cache-free baseline contact: both agents adopt the mean of their current models."""
    avg = ModelParams(a.trained.arch, (a.trained.weights + b.trained.weights) / 2.0)
    a.trained = avg
    b.trained = avg


def exchange(
    a: AgentRuntime,
    b: AgentRuntime,
    t: int,
    policy: str,
    group_map: np.ndarray | None = None,
    quotas: tuple[int, ...] | None = None,
) -> None:
    """Mutual cache update between two met agents.

    Both sides read pre-exchange snapshots, so the operation is symmetric in
    argument order and idempotent when repeated.
    """
    cache_a, cache_b = a.cache, b.cache
    inc_a = CachedModel(a.id, a.trained, t, a.n_samples, a.group)
    inc_b = CachedModel(b.id, b.trained, t, b.n_samples, b.group)
    if policy == "lru":
        a.cache = lru_update(cache_a, inc_b, cache_b, t)
        b.cache = lru_update(cache_b, inc_a, cache_a, t)
    elif policy == "gb":
        a.cache = gb_update(cache_a, inc_b, cache_b, t, group_map, quotas)
        b.cache = gb_update(cache_b, inc_a, cache_a, t, group_map, quotas)
    else:
        raise InvalidConfigError(f"no exchange rule for policy {policy!r}")


class DflSimulation:
    """Decentralized run (policies lru, gb, none) over one built world."""

    def __init__(self, cfg: ExperimentConfig, world: World):
        if cfg.policy == "cfl":
            raise InvalidConfigError("use CflSimulation for the centralized baseline")
        self.cfg = cfg
        self.world = world
        capacity = None if cfg.policy == "none" else cfg.cache_size
        self.agents = [
            AgentRuntime(
                id=i,
                params=world.init,
                cache=ModelCache(owner=i, capacity=capacity, tau_max=cfg.tau_max),
                features=ds.features,
                labels=ds.labels,
                group=int(world.data_areas[i]) if world.data_areas is not None else 0,
                vehicle=world.vehicles[i] if world.vehicles else None,
            )
            for i, ds in enumerate(world.train_sets)
        ]
        self._veh_rngs = [substream(cfg.seed, "mobility", i) for i in range(cfg.agents)]
        self._ticks = int(round(cfg.epoch_seconds / cfg.dt))

    def models(self) -> list[ModelParams]:
        return [a.params for a in self.agents]

    def caches(self) -> list[ModelCache]:
        return [a.cache for a in self.agents]

    def _meet(self, a: AgentRuntime, b: AgentRuntime, t: int) -> None:
        if self.cfg.policy == "none":
            pairwise_average(a, b)
        else:
            exchange(a, b, t, self.cfg.policy, self.world.data_areas, self.cfg.gb_quotas)

    def run_epoch(self, t: int, lr: float) -> list[ContactEvent]:
        cfg = self.cfg
        learner = LocalLearnerConfig(cfg.local_steps, lr, cfg.rho, cfg.batch_size)
        for a in self.agents:
            a.trained = local_update(
                a.params, a.features, a.labels, learner, substream(cfg.seed, "train", a.id, t)
            )

        events: list[ContactEvent] = []
        if cfg.force_full_mesh:
            for i in range(len(self.agents)):
                for j in range(i + 1, len(self.agents)):
                    self._meet(self.agents[i], self.agents[j], t)
                    events.append(ContactEvent(t, 0.0, i, j))
        else:
            grid = self.world.grid
            vehicles = [a.vehicle for a in self.agents]
            in_range: set[tuple[int, int]] = set()
            for k in range(1, self._ticks + 1):
                for i, v in enumerate(vehicles):
                    step(v, grid, cfg.dt, self._veh_rngs[i])
                current = detect_contacts(vehicles, grid, cfg.comm_range)
                for pair in current:
                    if pair not in in_range:
                        self._meet(self.agents[pair[0]], self.agents[pair[1]], t)
                        events.append(ContactEvent(t, k * cfg.dt, *pair))
                in_range = set(current)

        for a in self.agents:
            if cfg.policy == "none":
                a.params = a.trained
            else:
                a.cache = evict_stale(a.cache, t)
                assert all(t - e.train_epoch < cfg.tau_max for e in a.cache.entries)
                own = CachedModel(a.id, a.trained, t, a.n_samples, a.group)
                a.params = aggregate(own, a.cache)
        return events


class CflSimulation:
    """Centralized FedAvg baseline: one global model, no mobility."""

    def __init__(self, cfg: ExperimentConfig, world: World):
        self.cfg = cfg
        self.world = world
        self.global_params = world.init
        self._counts = [ds.sample_count for ds in world.train_sets]

    def models(self) -> list[ModelParams]:
        return [self.global_params] * self.cfg.agents

    def caches(self) -> None:
        return None

    def run_epoch(self, t: int, lr: float) -> list[ContactEvent]:
        cfg = self.cfg
        learner = LocalLearnerConfig(cfg.local_steps, lr, cfg.rho, cfg.batch_size)
        entries = []
        for i, ds in enumerate(self.world.train_sets):
            trained = local_update(
                self.global_params,
                ds.features,
                ds.labels,
                learner,
                substream(cfg.seed, "train", i, t),
            )
            entries.append(CachedModel(i, trained, t, self._counts[i]))
        self.global_params = weighted_mean(entries)
        return []


def _drive(sim, cfg: ExperimentConfig, world: World) -> list[EpochMetrics]:
    """Epoch loop with plateau LR scheduling and best-accuracy early stopping."""
    sched = PlateauScheduler(
        lr=cfg.lr, factor=cfg.lr_factor, patience=cfg.lr_patience, min_lr=cfg.min_lr
    )
    series: list[EpochMetrics] = []
    best, best_epoch = float("-inf"), 0
    lr = cfg.lr
    for t in range(cfg.epochs):
        events = sim.run_epoch(t, lr)
        m = measure(sim.models(), world.testsets, sim.caches(), t, lr, len(events))
        series.append(m)
        if m.mean_acc > best:
            best, best_epoch = m.mean_acc, t
        if t - best_epoch >= cfg.patience:
            break
        lr = sched.step(m.mean_acc)
    return series


def run(cfg: ExperimentConfig, world: World | None = None) -> list[EpochMetrics]:
    """Execute a full experiment and return one metrics record per epoch."""
    validate(cfg)
    if world is None:
        world = build_world(cfg)
    sim = CflSimulation(cfg, world) if cfg.policy == "cfl" else DflSimulation(cfg, world)
    return _drive(sim, cfg, world)


def baseline_cfl(cfg: ExperimentConfig, world: World | None = None) -> list[EpochMetrics]:
    """Run the centralized FedAvg baseline for `cfg` regardless of its policy field."""
    return run(dataclasses.replace(cfg, policy="cfl"), world)


def speedup_config(base: ExperimentConfig, factor: int) -> ExperimentConfig:
    """Trade local updates for speed at fixed wall clock: v *= factor, K /= factor."""
    if factor < 1:
        raise InvalidConfigError(f"speedup factor must be >= 1, got {factor}")
    if base.local_steps % factor != 0:
        raise InvalidConfigError(
            f"local_steps={base.local_steps} not divisible by speedup factor {factor}"
        )
    return dataclasses.replace(
        base, speed=base.speed * factor, local_steps=base.local_steps // factor
    )


def run_cache_stats(
    cfg: ExperimentConfig,
    tau_max: int,
    epoch_seconds: float,
    epochs: int | None = None,
    warmup: int | None = None,
    capacity: int | None = None,
) -> tuple[list[tuple[float, float, float, float]], tuple[float, float, float, float]]:
    """Mobility plus cache exchange only, with models replaced by zero-size tokens.

    Returns the per-epoch (count mean/var, age mean/var) rows and their
    averages over the epochs after the warm-up window (2 * tau_max by
    default). Trajectories depend only on the seed and dt, so cells with
    different tau_max see identical contacts.
    """
    if warmup is None:
        warmup = 2 * tau_max
    if epochs is None:
        epochs = warmup + 30
    if epochs <= warmup:
        raise InvalidConfigError(f"epochs={epochs} leaves no rows after warmup={warmup}")
    grid = build_grid(cfg.grid_rows, cfg.grid_cols, cfg.block_length)
    area_spec = None
    if cfg.restricted_per_area:
        area_spec = AreaSpec(
            cfg.num_areas,
            cfg.restricted_per_area,
            cfg.agents - cfg.num_areas * cfg.restricted_per_area,
        )
    vehicles = init_vehicles(grid, cfg.agents, cfg.speed, area_spec, substream(cfg.seed, "placement"))
    veh_rngs = [substream(cfg.seed, "mobility", i) for i in range(cfg.agents)]
    caches = [ModelCache(owner=i, capacity=capacity, tau_max=tau_max) for i in range(cfg.agents)]
    ticks = int(round(epoch_seconds / cfg.dt))
    rows = []
    for t in range(epochs):
        tokens = [CachedModel(i, None, t) for i in range(cfg.agents)]
        in_range: set[tuple[int, int]] = set()
        for _ in range(ticks):
            for i, v in enumerate(vehicles):
                step(v, grid, cfg.dt, veh_rngs[i])
            current = detect_contacts(vehicles, grid, cfg.comm_range)
            for a, b in current:
                if (a, b) not in in_range:
                    cache_a, cache_b = caches[a], caches[b]
                    caches[a] = lru_update(cache_a, tokens[b], cache_b, t)
                    caches[b] = lru_update(cache_b, tokens[a], cache_a, t)
            in_range = set(current)
        caches = [evict_stale(c, t) for c in caches]
        rows.append(cache_stats(caches, t))
    tail = rows[warmup:]
    summary = tuple(float(np.mean([r[i] for r in tail])) for i in range(4))
    return rows, summary


def resolved_config(cfg: ExperimentConfig) -> dict:
    """Fully materialised config dict, as echoed into results JSON."""
    return to_dict(cfg)
