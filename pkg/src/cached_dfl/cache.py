"""Bounded per-agent stores of foreign model snapshots.

The retention metric is the snapshot's training epoch: updates keep, per
owner, the copy with the newest training epoch, evict anything whose
staleness reaches the bound, and prune to capacity freshest-first (ties by
smaller owner id). The group-quota variant prunes each owner group to its
own slot budget instead of using one global capacity.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Iterable, Mapping, Sequence

from .errors import InvalidConfigError

if TYPE_CHECKING:
    from .learning import ModelParams


@dataclass(frozen=True)
class CachedModel:
    """Snapshot of another agent's model: who trained it, when, and on how much data."""

    owner: int
    params: "ModelParams | None"
    train_epoch: int
    sample_count: int = 1
    group: int = 0


def _rank(entry: CachedModel) -> tuple[int, int]:
    # freshest first, then smaller owner id
    return (-entry.train_epoch, entry.owner)


@dataclass(frozen=True)
class ModelCache:
    """Immutable cache value: at most one entry per foreign owner, freshest-first order.

    `capacity` of None means unbounded. The cache owner's own model is never
    stored here and does not consume capacity.
    """

    owner: int
    capacity: int | None
    tau_max: int
    entries: tuple[CachedModel, ...] = ()

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, owner: int) -> CachedModel | None:
        for e in self.entries:
            if e.owner == owner:
                return e
        return None

    def owners(self) -> tuple[int, ...]:
        return tuple(e.owner for e in self.entries)


def evict_stale(cache: ModelCache, t: int, tau_max: int | None = None) -> ModelCache:
    """Drop every entry whose staleness t - train_epoch has reached tau_max."""
    bound = cache.tau_max if tau_max is None else tau_max
    if bound < 1:
        raise InvalidConfigError(f"staleness bound must be >= 1, got {bound}")
    kept = tuple(e for e in cache.entries if t - e.train_epoch < bound)
    if len(kept) == len(cache.entries):
        return cache
    return replace(cache, entries=kept)


def _merge(
    cache: ModelCache,
    incoming_model: CachedModel,
    incoming_cache: ModelCache,
    t: int,
) -> dict[int, CachedModel]:
    """Stale-evict both sides, then merge keeping the newest copy per owner.

    The peer's own model is inserted unconditionally; relayed entries replace a
    resident copy only when strictly newer. Entries describing the cache owner
    itself are never stored.
    """
    if incoming_model.owner == cache.owner:
        raise ValueError(f"agent {cache.owner} cannot cache its own model")
    merged = {e.owner: e for e in evict_stale(cache, t).entries}
    merged[incoming_model.owner] = incoming_model
    for e in evict_stale(incoming_cache, t, cache.tau_max).entries:
        if e.owner == cache.owner:
            continue
        cur = merged.get(e.owner)
        if cur is None or e.train_epoch > cur.train_epoch:
            merged[e.owner] = e
    return merged


def lru_update(
    cache: ModelCache,
    incoming_model: CachedModel,
    incoming_cache: ModelCache,
    t: int,
) -> ModelCache:
    """Merge a peer's model and cache into `cache`, keeping the freshest entries.

    The result holds the candidates with the largest (train_epoch, -owner_id)
    keys, truncated to capacity.
    """
    candidates = sorted(_merge(cache, incoming_model, incoming_cache, t).values(), key=_rank)
    if cache.capacity is not None:
        candidates = candidates[: cache.capacity]
    return replace(cache, entries=tuple(candidates))


def gb_update(
    cache: ModelCache,
    incoming_model: CachedModel,
    incoming_cache: ModelCache,
    t: int,
    group_map: Mapping[int, int] | Sequence[int],
    quotas: Sequence[int],
) -> ModelCache:
    """Group-quota variant of :func:`lru_update`.

    Candidates are merged identically, then partitioned by the owner's group;
    each group keeps only its `quotas[g]` freshest entries.
    """
    merged = _merge(cache, incoming_model, incoming_cache, t)
    groups: list[list[CachedModel]] = [[] for _ in quotas]
    for e in merged.values():
        g = group_map[e.owner]
        if not 0 <= g < len(quotas):
            raise InvalidConfigError(
                f"agent {e.owner} is in group {g}, but only {len(quotas)} quotas are configured"
            )
        groups[g].append(e)
    kept: list[CachedModel] = []
    for g, members in enumerate(groups):
        members.sort(key=_rank)
        kept.extend(members[: quotas[g]])
    kept.sort(key=_rank)
    return replace(cache, entries=tuple(kept))


def cache_stats(caches: Iterable[ModelCache], t: int) -> tuple[float, float, float, float]:
    """(mean, var) of per-agent entry counts and of pooled entry ages at epoch t.

    Variances are population variances; the age statistics are 0 when every
    cache is empty.
    """
    counts = [len(c.entries) for c in caches]
    ages = [t - e.train_epoch for c in caches for e in c.entries]
    if not counts:
        return 0.0, 0.0, 0.0, 0.0
    n = len(counts)
    mean_count = sum(counts) / n
    var_count = sum((x - mean_count) ** 2 for x in counts) / n
    if not ages:
        return mean_count, var_count, 0.0, 0.0
    m = len(ages)
    mean_age = sum(ages) / m
    var_age = sum((x - mean_age) ** 2 for x in ages) / m
    return mean_count, var_count, mean_age, var_age
