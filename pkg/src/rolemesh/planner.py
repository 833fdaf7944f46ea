"""Initialization phase: profile generation, self-planning and self-reflection."""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from importlib import resources

from .domain import (
    ROLES,
    ScenarioSpec,
    Strategy,
    ValidationFinding,
    errors_only,
    validate_assignment,
    validate_tasks,
    validate_team,
)
from .errors import InitializationFailed, StructureError, TemplateError
from .memory import MemoryStore
from .reasoner.base import PlanRequest, ReflectRequest

PLANNER = "planner"
SLOTS = ("goal", "description", "constraints", "agentset", "toolkit")


def default_template() -> str:
    return resources.files("rolemesh.data").joinpath("profile_template.txt").read_text()


@dataclass(frozen=True)
class InitConfig:
    max_self_retries: int = 2
    profile_template: str = field(default_factory=default_template)

    def __post_init__(self):
        if self.max_self_retries < 0:
            raise ValueError("max_self_retries must be >= 0")


@dataclass(frozen=True)
class InitAttempt:
    stage: str
    attempt: int
    findings: tuple[ValidationFinding, ...]
    verdict: str  # pass | fail | rejected (validator short-circuit)
    reason: str = ""

    def to_data(self) -> dict:
        return {
            "stage": self.stage,
            "attempt": self.attempt,
            "findings": [f.to_data() for f in self.findings],
            "verdict": self.verdict,
            "reason": self.reason,
        }


def _slot_values(scenario: ScenarioSpec) -> dict[str, str]:
    desc = [scenario.description]
    for t in scenario.tables:
        cols = ", ".join(t.columns)
        desc.append(f"- table {t.name}({cols}): {t.summary}".rstrip(": ").rstrip())
    tools = []
    for spec in scenario.toolkit:
        ins = ", ".join(f"{n}: {ty}" for n, ty in spec.input_schema)
        outs = ", ".join(f"{n}: {ty}" for n, ty in spec.output_schema)
        tools.append(f"- {spec.name}({ins}) -> ({outs})")
    return {
        "goal": scenario.goal,
        "description": "\n".join(desc),
        "constraints": "\n".join(f"- {c}" for c in scenario.constraints) or "- none",
        "agentset": ", ".join(r for r in ROLES if r in scenario.agentset),
        "toolkit": "\n".join(tools) or "- none",
    }


def build_profile(template: str, scenario: ScenarioSpec) -> str:
    values = _slot_values(scenario)
    out = []
    try:
        parsed = list(string.Formatter().parse(template))
    except ValueError as exc:
        raise TemplateError(f"malformed template: {exc}") from None
    for literal, name, spec, conv in parsed:
        out.append(literal)
        if name is None:
            continue
        if name not in values:
            raise TemplateError(f"unknown template slot {{{name}}}")
        if spec or conv:
            raise TemplateError(f"slot {{{name}}} may not carry a format spec")
        out.append(values[name])
    return "".join(out)


def _team_findings(team, scenario) -> list[ValidationFinding]:
    try:
        return validate_team(team, scenario)
    except StructureError as exc:
        subject = team[0].agent_id if team else ""
        return [ValidationFinding("system_individual_coupling", "error", subject, f"malformed tree: {exc}")]


def initialize(scenario: ScenarioSpec, reasoner, memory: MemoryStore | None = None,
               config: InitConfig | None = None, *, trace: list | None = None) -> Strategy:
    """Plan the team, then the task lists, reflecting on each with bounded retries.

    Deterministic validators run first; a draft with error findings is
    rejected without spending a reflect call.
    """
    config = config or InitConfig()
    trace = trace if trace is not None else []
    profile = build_profile(config.profile_template, scenario)

    def stage(name: str, plan_kind: str, review_kind: str, check, extra: dict):
        feedback: tuple[ValidationFinding, ...] = ()
        last: list[ValidationFinding] = []
        for attempt in range(config.max_self_retries + 1):
            req = PlanRequest(plan_kind, scenario, profile=profile, findings=feedback, attempt=attempt, **extra)
            draft = reasoner.plan(req)
            findings = check(draft)
            errors = errors_only(findings)
            if errors:
                trace.append(InitAttempt(name, attempt, tuple(findings), "rejected"))
                feedback, last = tuple(findings), findings
                continue
            resp = reasoner.reflect(ReflectRequest(review_kind, subject=draft, evidence=tuple(findings),
                                                   requester=PLANNER, attempt=attempt))
            trace.append(InitAttempt(name, attempt, tuple(findings), resp.verdict, resp.reason))
            if resp.verdict == "pass":
                return draft
            note = ValidationFinding("compliance", "warning", PLANNER, f"reflection: {resp.reason}")
            feedback, last = tuple(findings) + (note,), findings + [note]
        raise InitializationFailed(name, last, trace)

    team = stage("team", "Team", "TeamReview", lambda d: _team_findings(d, scenario), {})

    def check_tasks(tl):
        draft = Strategy.build(team, tl)
        return validate_assignment(draft) + validate_tasks(draft, scenario.toolkit, scenario.constraints)

    tasks = stage("tasks", "Tasks", "TaskReview", check_tasks, {"agents": tuple(team)})
    strategy = Strategy.build(team, tasks, round=0, provenance="initial")
    if memory is not None:
        memory.record(PLANNER, "short", strategy.dumps(), {"strategy", "strategy:round0"}, 0.8, 0)
        memory.record(PLANNER, "short", _trace_text(trace), {"reflection", "reflection:round0"}, 0.6, 0)
    return strategy


def _trace_text(trace) -> str:
    from .serialize import dump_yaml

    return dump_yaml([t.to_data() for t in trace])
