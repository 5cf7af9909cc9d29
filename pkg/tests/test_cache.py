"""Cache update policies: staleness eviction, freshest-first retention, group quotas."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cached_dfl.cache import (
    CachedModel,
    ModelCache,
    cache_stats,
    evict_stale,
    gb_update,
    lru_update,
)
from cached_dfl.errors import InvalidConfigError


def entry(owner, train_epoch, group=0):
    return CachedModel(owner=owner, params=None, train_epoch=train_epoch, group=group)


def cache_of(owner, capacity, tau_max, *entries):
    ordered = tuple(sorted(entries, key=lambda e: (-e.train_epoch, e.owner)))
    return ModelCache(owner=owner, capacity=capacity, tau_max=tau_max, entries=ordered)


def contents(cache):
    return {(e.owner, e.train_epoch) for e in cache.entries}


class TestEvictStale:
    def test_rule_application(self):
        c = cache_of(0, 10, 5, entry(1, 3), entry(2, 7))
        out = evict_stale(c, t=10, tau_max=5)
        assert contents(out) == {(2, 7)}

    def test_tau_one_keeps_only_current_epoch(self):
        c = cache_of(0, 10, 1, entry(1, 9), entry(2, 8), entry(3, 7))
        out = evict_stale(c, t=9, tau_max=1)
        assert contents(out) == {(1, 9)}

    def test_empty_cache(self):
        c = cache_of(0, 10, 5)
        assert evict_stale(c, t=100).entries == ()

    def test_bad_bound(self):
        with pytest.raises(InvalidConfigError):
            evict_stale(cache_of(0, 10, 5), t=1, tau_max=0)


class TestLruUpdate:
    def test_basic_merge(self):
        cache_i = cache_of(0, 10, 10, entry(1, 3))  # A@3
        incoming_model = entry(2, 7)  # B@7
        incoming_cache = cache_of(2, 10, 10, entry(1, 5))  # holds A@5
        out = lru_update(cache_i, incoming_model, incoming_cache, t=7)
        assert contents(out) == {(2, 7), (1, 5)}

    def test_older_incoming_copy_rejected(self):
        cache_i = cache_of(0, 10, 10, entry(1, 6))
        out = lru_update(cache_i, entry(2, 7), cache_of(2, 10, 10, entry(1, 4)), t=7)
        assert (1, 6) in contents(out)
        assert (1, 4) not in contents(out)

    def test_capacity_truncation(self):
        cache_i = cache_of(0, 2, 10, entry(1, 5), entry(3, 4))
        out = lru_update(cache_i, entry(2, 7), cache_of(2, 2, 10), t=7)
        assert contents(out) == {(2, 7), (1, 5)}

    def test_never_caches_self(self):
        cache_i = cache_of(0, 10, 10)
        incoming_cache = cache_of(2, 10, 10, entry(0, 6), entry(3, 6))
        out = lru_update(cache_i, entry(2, 7), incoming_cache, t=7)
        assert 0 not in out.owners()
        assert contents(out) == {(2, 7), (3, 6)}

    def test_own_model_insert_rejected(self):
        with pytest.raises(ValueError):
            lru_update(cache_of(0, 10, 10), entry(0, 7), cache_of(1, 10, 10), t=7)

    def test_entries_sorted_fresh_first_then_owner(self):
        cache_i = cache_of(0, 10, 10, entry(5, 6), entry(1, 6), entry(3, 7))
        out = lru_update(cache_i, entry(2, 7), cache_of(2, 10, 10), t=7)
        assert [(e.owner, e.train_epoch) for e in out.entries] == [
            (2, 7), (3, 7), (1, 6), (5, 6)
        ]


class TestGbUpdate:
    GROUPS = {1: 0, 2: 1, 3: 0, 4: 2, 5: 1}

    def test_quota_pruning(self):
        cache_i = cache_of(0, 3, 10, entry(1, 9), entry(3, 8))  # both group 0
        out = gb_update(
            cache_i, entry(2, 7), cache_of(2, 3, 10), t=9,
            group_map=self.GROUPS, quotas=(1, 1, 1),
        )
        assert contents(out) == {(1, 9), (2, 7)}

    def test_single_group_takes_newest(self):
        group_map = {k: 0 for k in range(10)}
        cache_i = cache_of(0, 3, 10, entry(1, 5), entry(3, 4), entry(4, 3))
        out = gb_update(
            cache_i, entry(2, 9), cache_of(2, 3, 10), t=9,
            group_map=group_map, quotas=(3, 0, 0),
        )
        assert contents(out) == {(2, 9), (1, 5), (3, 4)}

    def test_slack_quotas_keep_everything(self):
        cache_i = cache_of(0, 30, 10, entry(1, 5), entry(4, 4))
        out = gb_update(
            cache_i, entry(2, 9), cache_of(2, 30, 10, entry(5, 3)), t=9,
            group_map=self.GROUPS, quotas=(10, 10, 10),
        )
        assert contents(out) == {(1, 5), (4, 4), (2, 9), (5, 3)}

    def test_unmapped_group_rejected(self):
        with pytest.raises(InvalidConfigError):
            gb_update(
                cache_of(0, 2, 10), entry(4, 9), cache_of(4, 2, 10), t=9,
                group_map={4: 5}, quotas=(1, 1),
            )


class TestCacheStats:
    def test_all_empty(self):
        caches = [cache_of(i, 5, 5) for i in range(3)]
        assert cache_stats(caches, t=4) == (0.0, 0.0, 0.0, 0.0)

    def test_arithmetic(self):
        a = cache_of(0, 10, 10, entry(1, 4), entry(2, 4))
        b = cache_of(1, 10, 10, entry(2, 4), entry(3, 4), entry(4, 4), entry(5, 4))
        mean_count, var_count, mean_age, var_age = cache_stats([a, b], t=5)
        assert (mean_count, var_count) == (3.0, 1.0)
        assert (mean_age, var_age) == (1.0, 0.0)

    def test_tau_one_age_zero(self):
        caches = [cache_of(0, 10, 1, entry(1, 8)), cache_of(1, 10, 1, entry(0, 8))]
        caches = [evict_stale(c, t=8) for c in caches]
        assert cache_stats(caches, t=8)[2] == 0.0


# randomized sequences checked against a brute-force retention oracle

owners = st.integers(min_value=0, max_value=9)


@st.composite
def update_op(draw, t):
    peer = draw(st.integers(1, 9))
    n_fwd = draw(st.integers(0, 5))
    forwarded = []
    seen = {peer}
    for _ in range(n_fwd):
        o = draw(owners)
        if o in seen:
            continue
        seen.add(o)
        forwarded.append(entry(o, draw(st.integers(max(0, t - 6), t))))
    return peer, forwarded


def oracle_retention(candidates, capacity):
    """Independent restatement: sort by (epoch desc, owner asc) and truncate."""
    best = {}
    for e in candidates:
        if e.owner not in best or e.train_epoch > best[e.owner].train_epoch:
            best[e.owner] = e
    ranked = sorted(best.values(), key=lambda e: (-e.train_epoch, e.owner))
    if capacity is not None:
        ranked = ranked[:capacity]
    return {(e.owner, e.train_epoch) for e in ranked}


@settings(max_examples=150, deadline=None)
@given(st.data(), st.integers(1, 4), st.integers(1, 5))
def test_lru_matches_brute_force_and_invariants(data, capacity, tau_max):
    cache = ModelCache(owner=0, capacity=capacity, tau_max=tau_max)
    for t in range(8):
        peer, forwarded = data.draw(update_op(t))
        incoming_model = entry(peer, t)
        incoming_cache = cache_of(peer, capacity, tau_max, *forwarded)
        before = {e.owner: e.train_epoch for e in cache.entries}
        live = lambda e: t - e.train_epoch < tau_max and e.owner != 0
        candidates = (
            [e for e in cache.entries if live(e)]
            + [incoming_model]
            + [e for e in incoming_cache.entries if live(e)]
        )
        cache = lru_update(cache, incoming_model, incoming_cache, t)
        assert contents(cache) == oracle_retention(candidates, capacity)
        # structural invariants
        assert len(cache.entries) <= capacity
        assert len(set(cache.owners())) == len(cache.entries)
        assert all(t - e.train_epoch < tau_max for e in cache.entries)
        for e in cache.entries:
            assert e.train_epoch >= before.get(e.owner, e.train_epoch)


@settings(max_examples=150, deadline=None)
@given(st.data(), st.integers(1, 3), st.integers(1, 5))
def test_gb_single_group_equals_lru(data, capacity, tau_max):
    group_map = {k: 0 for k in range(10)}
    lru_cache = ModelCache(owner=0, capacity=capacity, tau_max=tau_max)
    gb_cache = ModelCache(owner=0, capacity=capacity, tau_max=tau_max)
    for t in range(6):
        peer, forwarded = data.draw(update_op(t))
        incoming_model = entry(peer, t)
        incoming_cache = cache_of(peer, capacity, tau_max, *forwarded)
        lru_cache = lru_update(lru_cache, incoming_model, incoming_cache, t)
        gb_cache = gb_update(gb_cache, incoming_model, incoming_cache, t, group_map, (capacity,))
        assert gb_cache.entries == lru_cache.entries


@settings(max_examples=100, deadline=None)
@given(st.data(), st.integers(1, 5))
def test_gb_respects_quotas_and_oracle(data, tau_max):
    group_map = {k: k % 3 for k in range(10)}
    quotas = (2, 1, 1)
    cache = ModelCache(owner=0, capacity=sum(quotas), tau_max=tau_max)
    for t in range(6):
        peer, forwarded = data.draw(update_op(t))
        incoming_model = entry(peer, t)
        incoming_cache = cache_of(peer, sum(quotas), tau_max, *forwarded)
        live = lambda e: t - e.train_epoch < tau_max and e.owner != 0
        candidates = (
            [e for e in cache.entries if live(e)]
            + [incoming_model]
            + [e for e in incoming_cache.entries if live(e)]
        )
        cache = gb_update(cache, incoming_model, incoming_cache, t, group_map, quotas)
        expected = set()
        for g, quota in enumerate(quotas):
            members = [e for e in candidates if group_map[e.owner] == g]
            expected |= oracle_retention(members, quota)
        assert contents(cache) == expected
        for g, quota in enumerate(quotas):
            assert sum(group_map[o] == g for o in cache.owners()) <= quota


@settings(max_examples=80, deadline=None)
@given(st.data(), st.integers(1, 4), st.integers(2, 5))
def test_update_idempotent(data, capacity, tau_max):
    cache = ModelCache(owner=0, capacity=capacity, tau_max=tau_max)
    t = 5
    peer, forwarded = data.draw(update_op(t))
    incoming_model = entry(peer, t)
    incoming_cache = cache_of(peer, capacity, tau_max, *forwarded)
    once = lru_update(cache, incoming_model, incoming_cache, t)
    twice = lru_update(once, incoming_model, incoming_cache, t)
    assert once.entries == twice.entries
