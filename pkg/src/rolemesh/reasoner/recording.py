"""Wrap any reasoner and capture its traffic as a replayable script."""

from __future__ import annotations

from ..domain import DiffItem, Strategy
from .base import PlanRequest, ReflectRequest, ReflectResponse
from .scripted import ScriptEntry


def _plan_body(kind: str, draft, scope) -> dict:
    if kind == "Team":
        return {"agents": [a.to_data() for a in draft]}
    if kind == "Tasks":
        return {"tasks": {aid: [t.to_data() for t in ts] for aid, ts in draft.items()}}
    if scope is not None:
        return {"drop": True} if draft is None else {"item": draft.to_data()}
    return {"strategy": draft.to_data()}


class RecordingReasoner:
    def __init__(self, inner):
        self.inner = inner
        self.entries: list[ScriptEntry] = []

    def plan(self, req: PlanRequest):
        draft = self.inner.plan(req)
        self.entries.append(ScriptEntry(req.matcher(), _plan_body(req.kind, draft, req.scope)))
        return draft

    def reflect(self, req: ReflectRequest) -> ReflectResponse:
        resp = self.inner.reflect(req)
        body = {"verdict": resp.verdict}
        if resp.reason:
            body["reason"] = resp.reason
        if resp.patch is not None:
            body["patch"] = resp.patch
        self.entries.append(ScriptEntry(req.matcher(), body))
        return resp

    def diff(self, s_new: Strategy, s_old: Strategy) -> list[DiffItem]:
        items = self.inner.diff(s_new, s_old)
        self.entries.append(ScriptEntry({"op": "diff"}, {"items": [i.to_data() for i in items]}))
        return items

    def script(self) -> list[dict]:
        return [e.to_data() for e in self.entries]
