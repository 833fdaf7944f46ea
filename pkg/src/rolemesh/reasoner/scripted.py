"""Deterministic replay backend.

A script is an ordered list of entries::

    - expect: {op: plan, kind: Team, attempt: 0}
      respond: {agents: [...]}
    - expect: {op: reflect, kind: TeamReview}
      respond: {verdict: pass}
    - expect: {op: diff}
      respond: {items: auto, justification: "addresses s1"}

Each call consumes the next entry. Every field given under ``expect`` must
equal the corresponding field of the incoming request; fields left out
match anything.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping

import yaml

from ..domain import DiffItem, Strategy, diff_items
from ..errors import ScriptError, ScriptExhausted, ScriptMismatch
from .base import PlanRequest, ReflectRequest, ReflectResponse, decode_plan

OPS = ("plan", "reflect", "diff")


@dataclass(frozen=True)
class ScriptEntry:
    expect: dict
    respond: dict
    line: int | None = None

    def to_data(self) -> dict:
        return {"expect": self.expect, "respond": self.respond}


def _entry(raw: Any, line: int | None) -> ScriptEntry:
    if not isinstance(raw, Mapping):
        raise ScriptError("script entry must be a mapping", line)
    expect, respond = raw.get("expect"), raw.get("respond")
    if not isinstance(expect, Mapping) or expect.get("op") not in OPS:
        raise ScriptError("entry needs expect.op in plan/reflect/diff", line)
    if not isinstance(respond, Mapping):
        raise ScriptError("entry needs a respond mapping", line)
    extra = set(raw) - {"expect", "respond"}
    if extra:
        raise ScriptError(f"unknown entry keys {sorted(extra)}", line)
    return ScriptEntry(dict(expect), dict(respond), line)


def parse_script(source: Any) -> list[ScriptEntry]:
    """Parse script entries from YAML text, a path, loaded data or ScriptEntry values."""
    if isinstance(source, Path):
        source = source.read_text()
    if isinstance(source, str):
        try:
            node = yaml.compose(source, Loader=yaml.SafeLoader)
            data = yaml.safe_load(source)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            raise ScriptError(f"unparseable script: {getattr(exc, 'problem', exc)}",
                              mark.line + 1 if mark else None) from None
        if isinstance(data, Mapping) and "script" in data:
            data = data["script"]
            node = next(v for k, v in node.value if k.value == "script")
        lines = [n.start_mark.line + 1 for n in node.value] if isinstance(node, yaml.SequenceNode) else []
        if data is None:
            return []
        if not isinstance(data, list):
            raise ScriptError("script must be a list of entries", node.start_mark.line + 1 if node else None)
        return [_entry(raw, lines[i] if i < len(lines) else None) for i, raw in enumerate(data)]
    return [raw if isinstance(raw, ScriptEntry) else _entry(raw, None) for raw in (source or [])]


class ScriptedReasoner:
    def __init__(self, entries: Iterable[ScriptEntry]):
        self.entries = list(entries)
        self.cursor = 0
        self.calls: list[dict] = []

    @property
    def consumed(self) -> int:
        return self.cursor

    @property
    def remaining(self) -> int:
        return len(self.entries) - self.cursor

    def _take(self, got: dict) -> dict:
        if self.cursor >= len(self.entries):
            raise ScriptExhausted(f"script exhausted after {self.cursor} step(s); next request {got}")
        entry = self.entries[self.cursor]
        for key, want in entry.expect.items():
            if got.get(key, object()) != want:
                raise ScriptMismatch(entry.expect, got, self.cursor)
        self.cursor += 1
        self.calls.append(got)
        return copy.deepcopy(entry.respond)

    def plan(self, req: PlanRequest):
        body = self._take(req.matcher())
        return decode_plan(req.kind, body, req.scope)

    def reflect(self, req: ReflectRequest) -> ReflectResponse:
        body = self._take(req.matcher())
        return ReflectResponse.from_data(body).check(req.kind)

    def diff(self, s_new: Strategy, s_old: Strategy) -> list[DiffItem]:
        body = self._take({"op": "diff"})
        items = body.get("items", "auto")
        if items == "auto":
            return diff_items(s_new, s_old, str(body.get("justification", "")))
        return [DiffItem.from_data(i) for i in items]


def load_script(source: Any) -> ScriptedReasoner:
    return ScriptedReasoner(parse_script(source))
