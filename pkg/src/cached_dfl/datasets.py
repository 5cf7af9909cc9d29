"""Synthetic class-mixture data, IDX file loading, and the four agent partitioning schemes."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataFormatError, InvalidConfigError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

# fraction of agents -> shards handed to each of them; the default mirrors the
# uneven 2-shards-per-agent average split (10% get 4, 20% get 3, ...).
DEFAULT_SHARD_ALLOCATION: tuple[tuple[float, int], ...] = (
    (0.1, 4),
    (0.2, 3),
    (0.3, 2),
    (0.4, 1),
)


@dataclass(frozen=True)
class AgentDataset:
    """One agent's private training samples."""

    features: np.ndarray
    labels: np.ndarray

    @property
    def sample_count(self) -> int:
        return len(self.labels)


def make_synthetic(
    n_samples: int,
    input_dim: int = 32,
    classes: int = 10,
    class_sep: float = 3.0,
    noise: float = 1.0,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Isotropic Gaussian mixture with class means on a scaled coordinate simplex.

    Class k is centred at class_sep * e_k; lowering class_sep or raising noise
    makes the classes harder to separate. Label counts are balanced to within
    one sample and the order is shuffled.
    """
    if rng is None:
        raise InvalidConfigError("make_synthetic requires a seeded generator")
    if classes > input_dim:
        raise InvalidConfigError(
            f"need input_dim >= classes for simplex means, got {input_dim} < {classes}"
        )
    if n_samples < classes:
        raise InvalidConfigError(f"need at least {classes} samples, got {n_samples}")
    base, extra = divmod(n_samples, classes)
    counts = [base + (1 if k < extra else 0) for k in range(classes)]
    y = rng.permutation(np.repeat(np.arange(classes, dtype=np.int64), counts))
    means = np.zeros((classes, input_dim))
    means[np.arange(classes), np.arange(classes)] = class_sep
    x = means[y] + noise * rng.standard_normal((n_samples, input_dim))
    return x, y


def load_idx_images(path: str | Path) -> np.ndarray:
    """Big-endian IDX image file -> (count, rows*cols) float64 matrix scaled to [0, 1]."""
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise DataFormatError(f"{path}: truncated IDX image header")
    magic, count, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise DataFormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}")
    expected = 16 + count * rows * cols
    if len(raw) != expected:
        raise DataFormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    pixels = np.frombuffer(raw, dtype=np.uint8, offset=16)
    return pixels.reshape(count, rows * cols).astype(np.float64) / 255.0


def load_idx_labels(path: str | Path) -> np.ndarray:
    """Big-endian IDX label file -> int64 label vector."""
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise DataFormatError(f"{path}: truncated IDX label header")
    magic, count = struct.unpack(">II", raw[:8])
    if magic != IDX_LABELS_MAGIC:
        raise DataFormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}")
    if len(raw) != 8 + count:
        raise DataFormatError(f"{path}: expected {8 + count} bytes, found {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8, offset=8).astype(np.int64)


def _gather(x: np.ndarray, y: np.ndarray, idx: np.ndarray) -> AgentDataset:
    return AgentDataset(np.ascontiguousarray(x[idx]), np.ascontiguousarray(y[idx]))


def _deal_shards(
    x: np.ndarray,
    y: np.ndarray,
    sample_idx: np.ndarray,
    shards_per_agent: Sequence[int],
    rng: np.random.Generator,
) -> list[AgentDataset]:
    """Sort `sample_idx` by label, cut into near-equal shards, deal them out shuffled."""
    n_shards = int(sum(shards_per_agent))
    order = sample_idx[np.argsort(y[sample_idx], kind="stable")]
    shards = np.array_split(order, n_shards)
    shard_order = rng.permutation(n_shards)
    out = []
    pos = 0
    for count in shards_per_agent:
        take = [shards[shard_order[pos + k]] for k in range(count)]
        pos += count
        out.append(_gather(x, y, np.concatenate(take)))
    return out


def partition_shards(
    x: np.ndarray,
    y: np.ndarray,
    n_agents: int,
    n_shards: int | None = None,
    allocation: Sequence[tuple[float, int]] = DEFAULT_SHARD_ALLOCATION,
    rng: np.random.Generator | None = None,
) -> list[AgentDataset]:
    """Label-sorted shard partition: shards carry 1-2 labels and are dealt unevenly.

    `allocation` lists (fraction of agents, shards each); fractions must sum
    to 1 and each fraction * n_agents must be integral. Which agent falls in
    which allocation bucket is shuffled by `rng`.
    """
    counts: list[int] = []
    for fraction, shards_each in allocation:
        agents_here = fraction * n_agents
        if abs(agents_here - round(agents_here)) > 1e-9:
            raise InvalidConfigError(
                f"allocation fraction {fraction} of {n_agents} agents is not integral"
            )
        if shards_each < 1:
            raise InvalidConfigError("every agent must receive at least one shard")
        counts.extend([shards_each] * int(round(agents_here)))
    if len(counts) != n_agents:
        raise InvalidConfigError(
            f"allocation fractions cover {len(counts)} agents, expected {n_agents}"
        )
    total_shards = sum(counts)
    if n_shards is not None and n_shards != total_shards:
        raise InvalidConfigError(
            f"allocation hands out {total_shards} shards but n_shards={n_shards}"
        )
    if total_shards > len(y):
        raise InvalidConfigError(f"{total_shards} shards need at least that many samples")
    shards_per_agent = [counts[i] for i in rng.permutation(n_agents)]
    return _deal_shards(x, y, np.arange(len(y)), shards_per_agent, rng)


def partition_iid(
    x: np.ndarray, y: np.ndarray, n_agents: int, rng: np.random.Generator
) -> list[AgentDataset]:
    """Uniform random split into near-equal parts (sizes differ by at most one)."""
    if n_agents < 1:
        raise InvalidConfigError("need at least one agent")
    if len(y) < n_agents:
        raise InvalidConfigError(f"{len(y)} samples cannot cover {n_agents} agents")
    perm = rng.permutation(len(y))
    return [_gather(x, y, part) for part in np.array_split(perm, n_agents)]


def partition_dirichlet(
    x: np.ndarray,
    y: np.ndarray,
    n_agents: int,
    pi: float = 0.5,
    rng: np.random.Generator | None = None,
) -> list[AgentDataset]:
    """Per-class Dirichlet(pi) split across agents; every sample assigned exactly once.

    An agent left with no samples at all is given one from the currently
    largest agent, so every agent can participate in training.
    """
    if pi <= 0:
        raise InvalidConfigError(f"Dirichlet concentration must be positive, got {pi}")
    if len(y) < n_agents:
        raise InvalidConfigError(f"{len(y)} samples cannot cover {n_agents} agents")
    per_agent: list[list[np.ndarray]] = [[] for _ in range(n_agents)]
    for cls in np.unique(y):
        members = rng.permutation(np.flatnonzero(y == cls))
        proportions = rng.dirichlet(np.full(n_agents, pi))
        cuts = np.round(np.cumsum(proportions) * len(members)).astype(int)[:-1]
        for agent, part in enumerate(np.split(members, cuts)):
            if len(part):
                per_agent[agent].append(part)
    sizes = [sum(len(p) for p in parts) for parts in per_agent]
    for agent in range(n_agents):
        while sizes[agent] == 0:
            donor = int(np.argmax(sizes))
            moved = per_agent[donor][-1][-1:]
            per_agent[donor][-1] = per_agent[donor][-1][:-1]
            if len(per_agent[donor][-1]) == 0:
                per_agent[donor].pop()
            per_agent[agent].append(moved)
            sizes[donor] -= 1
            sizes[agent] += 1
    return [
        _gather(x, y, np.concatenate(parts))
        for parts in per_agent
    ]


def overlap_label_sets(n_overlap: int) -> tuple[tuple[int, ...], ...]:
    """Label sets of the three areas when adjacent areas share `n_overlap` labels."""
    if n_overlap not in (0, 1, 2, 3):
        raise InvalidConfigError(f"n_overlap must be in 0..3, got {n_overlap}")
    starts_ends = ((0, 3), (4, 6), (7, 9))
    sets = []
    for lo, hi in starts_ends:
        labels = [(label % 10) for label in range(lo - n_overlap, hi + 1)]
        sets.append(tuple(labels))
    return tuple(sets)


def partition_overlap(
    x: np.ndarray,
    y: np.ndarray,
    agent_areas: Sequence[int],
    n_overlap: int,
    rng: np.random.Generator,
) -> list[AgentDataset]:
    """Three-area grouped partition for 10-class data.

    Each area owns a label set (adjacent areas share `n_overlap` labels);
    samples of a shared label are split evenly between the sharing areas.
    Within an area, samples are dealt to that area's agents label-sorted in
    two shards per agent.
    """
    if np.any(y < 0) or np.any(y > 9):
        raise InvalidConfigError("overlap partition requires labels in 0..9")
    areas = np.asarray(agent_areas, dtype=np.int64)
    if areas.min() < 0 or areas.max() > 2:
        raise InvalidConfigError("agent areas must be in {0, 1, 2}")
    label_sets = overlap_label_sets(n_overlap)
    area_samples: list[list[np.ndarray]] = [[] for _ in range(3)]
    for label in range(10):
        sharing = [a for a in range(3) if label in label_sets[a]]
        if not sharing:
            continue
        members = rng.permutation(np.flatnonzero(y == label))
        for a, chunk in zip(sharing, np.array_split(members, len(sharing))):
            if len(chunk):
                area_samples[a].append(chunk)
    out: list[AgentDataset | None] = [None] * len(areas)
    for a in range(3):
        agents_here = np.flatnonzero(areas == a)
        if len(agents_here) == 0:
            raise InvalidConfigError(f"area {a} has no agents")
        pool = np.concatenate(area_samples[a]) if area_samples[a] else np.array([], dtype=int)
        if len(pool) < 2 * len(agents_here):
            raise InvalidConfigError(f"area {a} has too few samples for its agents")
        dealt = _deal_shards(x, y, pool, [2] * len(agents_here), rng)
        for agent, ds in zip(agents_here, dealt):
            out[agent] = ds
    return out  # type: ignore[return-value]
