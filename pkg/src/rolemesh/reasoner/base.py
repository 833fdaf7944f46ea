"""Request/response types at the reasoning boundary."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Mapping, Protocol

from ..domain import (
    AgentSpec,
    DiffItem,
    ScenarioSpec,
    Strategy,
    TaskEntry,
    ValidationFinding,
    strategy_diff_paths,
)
from ..errors import DiffInconsistent, ScenarioInvalid

PLAN_KINDS = ("Team", "Tasks", "Replan")
REFLECT_KINDS = ("TeamReview", "TaskReview", "DifferenceJudgement", "LocalFix")
VERDICTS = {
    "TeamReview": ("pass", "fail"),
    "TaskReview": ("pass", "fail"),
    "DifferenceJudgement": ("improved", "not_improved"),
    "LocalFix": ("fix", "fail"),
}


@dataclass(frozen=True)
class PlanRequest:
    """Input to ``plan``.

    Replan requests carry the monitor's global state, the recommendation,
    the previous strategy and the scenario prompt; ``scope`` narrows a
    replan to regenerating a single diff path.
    """

    kind: str
    scenario: ScenarioSpec
    profile: str = ""
    context: tuple = ()
    findings: tuple[ValidationFinding, ...] = ()
    attempt: int = 0
    agents: tuple[AgentSpec, ...] = ()
    global_state: Any = None
    recommendation: Any = None
    old_strategy: Strategy | None = None
    prompt: str = ""
    scope: str | None = None
    round: int = 0

    def __post_init__(self):
        if self.kind not in PLAN_KINDS:
            raise ScenarioInvalid(f"unknown plan kind {self.kind!r}")
        if self.kind == "Replan":
            missing = [n for n in ("global_state", "recommendation", "old_strategy") if getattr(self, n) is None]
            if missing:
                raise ScenarioInvalid(f"Replan request is missing {missing}")

    def matcher(self) -> dict:
        out = {"op": "plan", "kind": self.kind}
        if self.kind == "Replan":
            out["round"] = self.round
            if self.scope is not None:
                out["scope"] = self.scope
        else:
            out["attempt"] = self.attempt
        return out

    def to_data(self) -> dict:
        data = {
            "kind": self.kind,
            "scenario": self.scenario.to_data(),
            "profile": self.profile,
            "context": [_data(c) for c in self.context],
            "findings": [f.to_data() for f in self.findings],
            "attempt": self.attempt,
            "agents": [a.to_data() for a in self.agents],
            "round": self.round,
        }
        if self.kind == "Replan":
            data.update(
                global_state=_data(self.global_state),
                recommendation=_data(self.recommendation),
                old_strategy=self.old_strategy.to_data(),
                prompt=self.prompt,
                scope=self.scope,
            )
        return data


@dataclass(frozen=True)
class ReflectRequest:
    kind: str
    subject: Any
    evidence: tuple = ()
    requester: str = "planner"
    global_state: Any = None
    recommendation: Any = None
    task_id: str | None = None
    attempt: int = 0

    def __post_init__(self):
        if self.kind not in REFLECT_KINDS:
            raise ScenarioInvalid(f"unknown reflect kind {self.kind!r}")
        if self.kind == "DifferenceJudgement":
            if not isinstance(self.subject, DiffItem) or self.global_state is None or self.recommendation is None:
                raise ScenarioInvalid("DifferenceJudgement needs one DiffItem plus global state and recommendation")

    def matcher(self) -> dict:
        out = {"op": "reflect", "kind": self.kind}
        if self.kind == "DifferenceJudgement":
            out["path"] = self.subject.path
        elif self.kind == "LocalFix":
            out["requester"] = self.requester
            if self.task_id is not None:
                out["task"] = self.task_id
        else:
            out["attempt"] = self.attempt
        return out

    def to_data(self) -> dict:
        return {
            "kind": self.kind,
            "subject": _data(self.subject),
            "evidence": [_data(e) for e in self.evidence],
            "requester": self.requester,
            "global_state": _data(self.global_state),
            "recommendation": _data(self.recommendation),
            "task_id": self.task_id,
            "attempt": self.attempt,
        }


@dataclass(frozen=True)
class ReflectResponse:
    verdict: str
    reason: str = ""
    patch: Any = None

    def to_data(self) -> dict:
        return {"verdict": self.verdict, "reason": self.reason, "patch": self.patch}

    @classmethod
    def from_data(cls, data: Mapping) -> "ReflectResponse":
        return cls(str(data["verdict"]), str(data.get("reason", "")), data.get("patch"))

    def check(self, kind: str) -> "ReflectResponse":
        if self.verdict not in VERDICTS[kind]:
            raise ScenarioInvalid(f"verdict {self.verdict!r} is not valid for {kind}")
        return self


def _data(value: Any) -> Any:
    if value is None or isinstance(value, (str, int, float, bool)):
        return value
    if hasattr(value, "to_data"):
        return value.to_data()
    if isinstance(value, Mapping):
        return {str(k): _data(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, set, frozenset)):
        items = sorted(value) if isinstance(value, (set, frozenset)) else value
        return [_data(v) for v in items]
    return str(value)


class Reasoner(Protocol):
    def plan(self, req: PlanRequest) -> Any: ...

    def reflect(self, req: ReflectRequest) -> ReflectResponse: ...

    def diff(self, s_new: Strategy, s_old: Strategy) -> list[DiffItem]: ...


# plan response decoding shared by all backends


def decode_plan(kind: str, body: Mapping, scope: str | None = None):
    """Turn a plan response body into domain values.

    Team -> tuple of AgentSpec, Tasks -> dict of task lists, Replan -> Strategy,
    scoped Replan -> DiffItem or None (difference dropped).
    """
    if kind == "Team":
        return tuple(AgentSpec.from_data(a) for a in body["agents"])
    if kind == "Tasks":
        return {str(aid): tuple(TaskEntry.from_data(t) for t in ts or ()) for aid, ts in body["tasks"].items()}
    if scope is not None:
        if body.get("drop"):
            return None
        return DiffItem.from_data(body["item"])
    return Strategy.from_data(body["strategy"])


def checked_diff(reasoner: Reasoner, s_new: Strategy, s_old: Strategy) -> list[DiffItem]:
    """Ask the reasoner for differences and gate them against the structural differ."""
    items = list(reasoner.diff(s_new, s_old))
    truth = {c.path: c.change for c in strategy_diff_paths(s_new, s_old)}
    seen = set()
    for item in items:
        if truth.get(item.path) != item.change:
            raise DiffInconsistent(f"reasoner reported {item.change} at {item.path} which is not a structural difference")
        if item.path in seen:
            raise DiffInconsistent(f"duplicate difference at {item.path}")
        seen.add(item.path)
    missing = sorted(set(truth) - seen)
    if missing:
        raise DiffInconsistent(f"reasoner missed differences at {missing}")
    order = {p: i for i, p in enumerate(truth)}
    return sorted(items, key=lambda d: order[d.path])
