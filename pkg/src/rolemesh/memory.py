"""Tiered agent memory: sensory, short-term and long-term records.

Retrieval score::

    w_recency * gamma ** (now - last_access_round)
    + w_importance * importance
    + w_relevance * jaccard(tags, query_tags)

Capacities are enforced per owner and tier by evicting the lowest-ranked
record (empty-query score, same tie-break as retrieval).
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

from .serialize import dump_yaml, load_yaml

TIERS = ("sensory", "short", "long")
_NEXT = {"sensory": "short", "short": "long"}


@dataclass(frozen=True)
class MemoryConfig:
    sensory_threshold: float = 0.5
    long_threshold: float = 0.7
    long_min_age: int = 2
    capacity: Mapping[str, int] = field(default_factory=lambda: {"sensory": 64, "short": 128, "long": 512})
    weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    decay: float = 0.99


@dataclass(frozen=True)
class MemoryRecord:
    rec_id: str
    tier: str
    owner: str
    content: str
    tags: frozenset[str]
    importance: float
    created_round: int
    last_access_round: int
    tier_round: int = 0  # round the record entered its current tier

    def to_data(self) -> dict:
        return {
            "rec_id": self.rec_id,
            "tier": self.tier,
            "owner": self.owner,
            "content": self.content,
            "tags": sorted(self.tags),
            "importance": self.importance,
            "created_round": self.created_round,
            "last_access_round": self.last_access_round,
            "tier_round": self.tier_round,
        }

    @classmethod
    def from_data(cls, data: Mapping) -> "MemoryRecord":
        return cls(
            rec_id=str(data["rec_id"]),
            tier=str(data["tier"]),
            owner=str(data["owner"]),
            content=str(data.get("content", "")),
            tags=frozenset(data.get("tags", ())),
            importance=float(data["importance"]),
            created_round=int(data["created_round"]),
            last_access_round=int(data["last_access_round"]),
            tier_round=int(data.get("tier_round", data["created_round"])),
        )


def jaccard(a: Iterable[str], b: Iterable[str]) -> float:
    a, b = set(a), set(b)
    union = a | b
    return len(a & b) / len(union) if union else 0.0


def score(rec: MemoryRecord, query: Iterable[str], now: int, config: MemoryConfig) -> float:
    w_r, w_i, w_v = config.weights
    age = max(0, now - rec.last_access_round)
    return w_r * math.pow(config.decay, age) + w_i * rec.importance + w_v * jaccard(rec.tags, query)


def rank_key(rec: MemoryRecord, value: float) -> tuple:
    # higher score first, then newer record, then rec_id
    return (-value, -rec.created_round, rec.rec_id)


class MemoryStore:
    def __init__(self, config: MemoryConfig | None = None, *, enabled: bool = True):
        self.config = config or MemoryConfig()
        self.enabled = enabled
        self._records: dict[str, MemoryRecord] = {}
        self._counter = 0
        self.clock = 0
        self._lock = threading.RLock()

    def __len__(self) -> int:
        return len(self._records)

    def records(self, owner: str | None = None, tier: str | None = None) -> list[MemoryRecord]:
        return sorted(
            (r for r in self._records.values()
             if (owner is None or r.owner == owner) and (tier is None or r.tier == tier)),
            key=lambda r: r.rec_id,
        )

    def get(self, rec_id: str) -> MemoryRecord:
        return self._records[rec_id]

    def record(self, owner: str, tier: str, content: str, tags: Iterable[str] = (),
               importance: float = 0.5, round: int = 0, *, rec_id: str | None = None) -> str:
        if tier not in TIERS:
            raise ValueError(f"unknown tier {tier!r}")
        if not 0.0 <= importance <= 1.0:
            raise ValueError(f"importance must be in [0, 1], got {importance}")
        with self._lock:
            if rec_id is None:
                self._counter += 1
                rec_id = f"m{self._counter:05d}"
            elif rec_id in self._records:
                raise ValueError(f"duplicate rec_id {rec_id}")
            self.clock = max(self.clock, round)
            self._records[rec_id] = MemoryRecord(
                rec_id, tier, owner, content, frozenset(tags), float(importance), round, round, round
            )
            self._enforce(owner, tier, round)
            return rec_id

    def _enforce(self, owner: str, tier: str, now: int) -> list[str]:
        cap = self.config.capacity.get(tier)
        evicted: list[str] = []
        if cap is None:
            return evicted
        pool = [r for r in self._records.values() if r.owner == owner and r.tier == tier]
        while len(pool) > cap:
            worst = max(pool, key=lambda r: rank_key(r, score(r, (), now, self.config)))
            pool.remove(worst)
            del self._records[worst.rec_id]
            evicted.append(worst.rec_id)
        return evicted

    def promote(self, now_round: int) -> list[tuple[str, str, str | None]]:
        """Age-and-threshold tier transfer; ``to_tier`` None marks a discarded sensory record."""
        cfg = self.config
        moves: list[tuple[str, str, str | None]] = []
        with self._lock:
            self.clock = max(self.clock, now_round)
            snapshot = sorted(self._records.values(), key=lambda r: r.rec_id)
            touched: set[tuple[str, str]] = set()
            for rec in snapshot:
                age = now_round - rec.tier_round
                if rec.tier == "sensory" and age >= 1:
                    if rec.importance >= cfg.sensory_threshold:
                        self._records[rec.rec_id] = replace(rec, tier="short", tier_round=now_round)
                        moves.append((rec.rec_id, "sensory", "short"))
                        touched.add((rec.owner, "short"))
                    else:
                        del self._records[rec.rec_id]
                        moves.append((rec.rec_id, "sensory", None))
                elif rec.tier == "short" and age >= cfg.long_min_age and rec.importance >= cfg.long_threshold:
                    self._records[rec.rec_id] = replace(rec, tier="long", tier_round=now_round)
                    moves.append((rec.rec_id, "short", "long"))
                    touched.add((rec.owner, "long"))
            for owner, tier in sorted(touched):
                self._enforce(owner, tier, now_round)
        return moves

    def retrieve(self, owner: str, query_tags: Iterable[str] = (), tiers: Sequence[str] | None = None,
                 k: int = 5, *, now: int | None = None) -> list[MemoryRecord]:
        if k < 0:
            raise ValueError("k must be non-negative")
        if k == 0:
            return []
        query = frozenset(query_tags)
        now = self.clock if now is None else now
        with self._lock:
            pool = [r for r in self._records.values()
                    if r.owner == owner and (tiers is None or r.tier in tiers)]
            ranked = sorted(pool, key=lambda r: rank_key(r, score(r, query, now, self.config)))[:k]
            out = []
            for r in ranked:
                updated = replace(r, last_access_round=max(r.last_access_round, now))
                self._records[r.rec_id] = updated
                out.append(updated)
            return out

    def hybrid_context(self, owner: str, query_tags: Iterable[str] = (), budget: int = 4, *,
                       short_owner: str | None = None, now: int | None = None) -> list[MemoryRecord]:
        """Long-term records of ``owner`` followed by short-term records of ``short_owner``."""
        if budget < 0:
            raise ValueError("budget must be non-negative")
        if not self.enabled or budget == 0:
            return []
        tags = list(query_tags)
        longs = self.retrieve(owner, tags, ("long",), math.ceil(budget / 2), now=now)
        shorts = self.retrieve(short_owner or owner, tags, ("short",), budget // 2, now=now)
        seen: set[str] = set()
        out = []
        for r in longs + shorts:
            if r.rec_id not in seen:
                seen.add(r.rec_id)
                out.append(r)
        return out

    # snapshots

    def snapshot(self) -> dict:
        return {"clock": self.clock, "counter": self._counter,
                "records": [r.to_data() for r in self.records()]}

    def dumps(self) -> str:
        return dump_yaml(self.snapshot())

    @classmethod
    def loads(cls, text: str, config: MemoryConfig | None = None) -> "MemoryStore":
        data = load_yaml(text) or {}
        store = cls(config)
        store.clock = int(data.get("clock", 0))
        store._counter = int(data.get("counter", 0))
        for raw in data.get("records", ()):
            rec = MemoryRecord.from_data(raw)
            store._records[rec.rec_id] = rec
        return store
