import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import oracle_promotions, oracle_rank, oracle_score
from rolemesh.memory import TIERS, MemoryConfig, MemoryStore


def test_record_adds_one():
    store = MemoryStore()
    rid = store.record("w1", "sensory", "ran tool X", {"tool"}, 0.2, 1)
    assert len(store) == 1 and store.get(rid).content == "ran tool X"


@pytest.mark.parametrize("bad", [1.5, -0.1])
def test_importance_out_of_range(bad):
    with pytest.raises(ValueError):
        MemoryStore().record("w", "short", "x", (), bad, 0)


def test_unknown_tier():
    with pytest.raises(ValueError):
        MemoryStore().record("w", "episodic", "x")


def test_capacity_evicts_lowest_empty_query_score():
    store = MemoryStore(MemoryConfig(capacity={"sensory": 2}))
    ids = [store.record("w", "sensory", f"r{i}", (), imp, 3) for i, imp in enumerate((0.1, 0.5, 0.9))]
    # oracle: same round, no tags, so the importance term decides
    scores = {rid: oracle_score(0, imp, (), ()) for rid, imp in zip(ids, (0.1, 0.5, 0.9))}
    evicted = min(scores, key=scores.get)
    assert {r.rec_id for r in store.records()} == set(ids) - {evicted}
    assert evicted == ids[0]


def test_promotion_thresholds():
    store = MemoryStore()
    hi = store.record("w", "sensory", "hi", (), 0.9, 0)
    lo = store.record("w", "sensory", "lo", (), 0.3, 0)
    moves = store.promote(1)
    assert moves == [(hi, "sensory", "short"), (lo, "sensory", None)]
    assert store.get(hi).tier == "short" and len(store) == 1


def test_short_to_long_needs_age():
    store = MemoryStore()
    rid = store.record("w", "short", "x", (), 0.8, 0)
    assert store.promote(1) == []
    assert store.promote(2) == [(rid, "short", "long")]


def test_retrieve_empty_and_k_zero():
    store = MemoryStore()
    assert store.retrieve("w") == []
    store.record("w", "short", "x")
    assert store.retrieve("w", k=0) == []
    with pytest.raises(ValueError):
        store.retrieve("w", k=-1)


def test_recency_breaks_otherwise_equal_records():
    store = MemoryStore()
    old = store.record("w", "short", "x", {"a"}, 0.5, 3)
    new = store.record("w", "short", "x", {"a"}, 0.5, 5)
    assert [r.rec_id for r in store.retrieve("w", {"a"}, k=2, now=5)] == [new, old]


def test_top_two_hand_computed():
    # (age, importance, tags) with query {a, b}; now = 10
    triples = [(0, 0.2, {"a"}), (4, 0.9, set()), (1, 0.5, {"a", "b"}), (9, 0.7, {"b", "c"}), (2, 0.1, {"z"})]
    store = MemoryStore()
    ids = [store.record("w", "short", f"r{i}", tags, imp, 10 - age)
           for i, (age, imp, tags) in enumerate(triples)]
    # 0.99**age + importance + jaccard, written out by hand
    expected = [1.0 + 0.2 + 1 / 2, 0.99 ** 4 + 0.9 + 0.0, 0.99 + 0.5 + 1.0,
                0.99 ** 9 + 0.7 + 1 / 3, 0.99 ** 2 + 0.1 + 0.0]
    top = sorted(range(5), key=lambda i: -expected[i])[:2]
    got = store.retrieve("w", {"a", "b"}, k=2, now=10)
    assert [r.rec_id for r in got] == [ids[i] for i in top] == [ids[2], ids[3]]


def test_retrieval_touches_last_access():
    store = MemoryStore()
    rid = store.record("w", "short", "x", (), 0.5, 1)
    store.retrieve("w", now=4)
    assert store.get(rid).last_access_round == 4


def test_hybrid_context():
    store = MemoryStore()
    assert store.hybrid_context("w", budget=0) == []
    s = store.record("w", "short", "s", (), 0.5, 0)
    lg = store.record("w", "long", "l", (), 0.5, 0)
    assert [r.rec_id for r in store.hybrid_context("w", budget=2)] == [lg, s]
    assert MemoryStore(enabled=False).hybrid_context("w", budget=2) == []


def test_hybrid_context_matches_per_tier_oracle():
    rng = random.Random(7)
    store = MemoryStore()
    raw = []
    for i in range(10):
        tier = rng.choice(["short", "long"])
        tags = set(rng.sample(["a", "b", "c", "d"], rng.randint(0, 3)))
        imp = round(rng.random(), 3)
        rnd = rng.randint(0, 5)
        rid = store.record("w", tier, f"r{i}", tags, imp, rnd)
        raw.append({"rec_id": rid, "tier": tier, "tags": tags, "importance": imp,
                    "created_round": rnd, "last_access_round": rnd})
    query = {"a", "b"}
    longs = oracle_rank([r for r in raw if r["tier"] == "long"], query, 5)[:2]
    shorts = oracle_rank([r for r in raw if r["tier"] == "short"], query, 5)[:2]
    got = [r.rec_id for r in store.hybrid_context("w", query, budget=4, now=5)]
    assert got == longs + shorts


def _random_store(rng, n):
    store = MemoryStore(MemoryConfig(capacity={"sensory": 8, "short": 10, "long": 12}))
    for i in range(n):
        tier = rng.choice(TIERS)
        tags = set(rng.sample(["a", "b", "c", "d", "e"], rng.randint(0, 3)))
        store.record(rng.choice(["w", "v"]), tier, f"r{i}", tags, round(rng.random(), 2), rng.randint(0, 4))
    return store


def _raw(store, owner=None):
    return [r.to_data() | {"tags": set(r.tags)} for r in store.records(owner)]


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6), st.integers(0, 40))
def test_randomized_retrieve_and_promote(seed, n):
    rng = random.Random(seed)
    store = _random_store(rng, n)
    query = set(rng.sample(["a", "b", "c", "d", "e"], rng.randint(0, 3)))
    now = 6
    expected = oracle_rank(_raw(store, "w"), query, now)[:5]
    assert [r.rec_id for r in store.retrieve("w", query, k=5, now=now)] == expected
    before = _raw(store)
    assert store.promote(now) == oracle_promotions(before, now)
    for owner in ("w", "v"):
        for tier, cap in store.config.capacity.items():
            assert len(store.records(owner, tier)) <= cap


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_promote_idempotent_and_monotone(seed):
    rng = random.Random(seed)
    store = _random_store(rng, 25)
    rank = {t: i for i, t in enumerate(TIERS)}
    tiers = {r.rec_id: r.tier for r in store.records()}
    for now in (3, 3, 4, 6, 6):
        moves = store.promote(now)
        for rid, src, dst in moves:
            assert dst is None or rank[dst] == rank[src] + 1
        for r in store.records():
            assert rank[r.tier] >= rank[tiers.get(r.rec_id, r.tier)]
        tiers = {r.rec_id: r.tier for r in store.records()}
    assert store.promote(6) == []


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_ranking_ignores_insertion_order(seed):
    rng = random.Random(seed)
    rows = [(f"m{i:03d}", set(rng.sample("abcd", rng.randint(0, 3))), round(rng.random(), 1), rng.randint(0, 3))
            for i in range(12)]
    orders = []
    for perm in range(3):
        rows_p = list(rows)
        random.Random(perm).shuffle(rows_p)
        store = MemoryStore()
        for rid, tags, imp, r in rows_p:
            store.record("w", "short", "x", tags, imp, r, rec_id=rid)
        orders.append([r.rec_id for r in store.retrieve("w", {"a"}, k=12, now=4)])
    assert orders[0] == orders[1] == orders[2]


def test_snapshot_roundtrip():
    store = _random_store(random.Random(3), 12)
    clone = MemoryStore.loads(store.dumps())
    assert clone.snapshot() == store.snapshot()
    assert math.isclose(sum(r.importance for r in clone.records()), sum(r.importance for r in store.records()))
