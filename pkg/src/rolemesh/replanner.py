"""Re-planning: candidate strategy, rule-filtered differences, minimal integration."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from .domain import (
    DiffItem,
    ScenarioSpec,
    Strategy,
    ValidationFinding,
    apply_diff,
    entity_of,
    errors_only,
    parse_path,
    strategy_diff_paths,
    validate_strategy,
)
from .errors import DiffConflict, DiffInconsistent, ReplanExhausted, ScenarioError
from .memory import MemoryStore
from .monitor import GlobalState, Recommendation
from .planner import PLANNER
from .reasoner.base import PlanRequest, ReflectRequest, checked_diff
from .bus import MONITOR

RULE_KINDS = ("cites_evidence", "remove_implicated", "single_entity", "no_new_errors", "protect")
_ITEM_REF = re.compile(r"\b([is]\d+)\b")


@dataclass(frozen=True)
class GapRule:
    rule_id: str
    description: str
    kind: str
    parameters: tuple[tuple[str, Any], ...] = ()

    def __post_init__(self):
        if self.kind not in RULE_KINDS:
            raise ScenarioError(f"unknown gap rule kind {self.kind!r}")

    @property
    def params(self) -> dict:
        return dict(self.parameters)

    def to_data(self) -> dict:
        data = {"rule_id": self.rule_id, "description": self.description, "kind": self.kind}
        if self.parameters:
            data["parameters"] = self.params
        return data

    @classmethod
    def from_data(cls, data: Mapping) -> "GapRule":
        try:
            params = data.get("parameters") or {}
            return cls(str(data["rule_id"]), str(data.get("description", "")), str(data["kind"]),
                       tuple(sorted((str(k), _freeze(v)) for k, v in params.items())))
        except (KeyError, AttributeError) as exc:
            raise ScenarioError(f"malformed gap rule: {exc}") from None


def _freeze(v):
    return tuple(v) if isinstance(v, list) else v


DEFAULT_RULES = (
    GapRule("R1", "justification cites at least one insight or suggestion", "cites_evidence"),
    GapRule("R2", "removals only target implicated agents or tasks", "remove_implicated"),
    GapRule("R3", "one difference touches one agent or one task entry", "single_entity"),
    GapRule("R4", "the change introduces no error finding on the patched entity", "no_new_errors"),
)


@dataclass(frozen=True)
class ReplanConfig:
    max_replan_retries: int = 3
    rules: tuple[GapRule, ...] = DEFAULT_RULES
    context_budget: int = 4

    def __post_init__(self):
        if self.max_replan_retries < 1:
            raise ValueError("max_replan_retries must be >= 1")


def rules_from_data(data: Iterable[Mapping]) -> tuple[GapRule, ...]:
    return tuple(GapRule.from_data(r) for r in data)


# ---------------------------------------------------------------------------
# rule predicates


def _cites_evidence(d, rule, state, rec, s_old, ctx) -> bool:
    known = set(state.insight_ids) | set(rec.item_ids)
    return any(tok in known for tok in _ITEM_REF.findall(d.justification))


def _remove_implicated(d, rule, state, rec, s_old, ctx) -> bool:
    if d.change != "remove":
        return True
    agents = state.implicated("agent") | {i.value for i in rec.insights if i.kind == "agent"}
    tasks = state.implicated("task") | {i.value for i in rec.insights if i.kind == "task"}
    kind, ident = entity_of(d.path)
    if kind == "agent":
        return ident in agents
    return ident in tasks or parse_path(d.path)[1] in agents


def _single_entity(d, rule, state, rec, s_old, ctx) -> bool:
    try:
        target = parse_path(d.path)
    except DiffConflict:
        return False
    new = d.new_value
    if d.change == "remove":
        return new is None
    if not isinstance(new, Mapping):
        return False
    if target[0] in ("children", "order"):
        return d.change == "reorder" and set(new) == {"order"}
    key = "agent" if target[0] == "agent" else "task"
    allowed = {key, "after"} if d.change == "insert" or (key == "agent" and d.change == "modify") else {key}
    frag = new.get(key)
    if set(new) - allowed or not isinstance(frag, Mapping):
        return False
    ident = frag.get("agent_id") if key == "agent" else frag.get("task_id")
    return ident == (target[1] if key == "agent" else target[2])


def _entity_errors(strategy: Strategy, scenario: ScenarioSpec, subject: str) -> set[tuple]:
    return {(f.check, f.subject, f.detail) for f in errors_only(validate_strategy(strategy, scenario))
            if f.subject == subject}


def _all_errors(strategy: Strategy, scenario: ScenarioSpec) -> set[tuple]:
    return {(f.check, f.subject, f.detail) for f in errors_only(validate_strategy(strategy, scenario))}


def _no_new_errors(d, rule, state, rec, s_old, ctx) -> bool:
    scenario = ctx.get("scenario")
    if scenario is None:
        return True
    companions = list(ctx.get("companions", ()))
    try:
        before = apply_diff(s_old, companions)
    except DiffConflict:
        before = s_old
    try:
        after = apply_diff(s_old, companions + [d])
    except DiffConflict:
        return False
    if d.change == "remove":
        return not (_all_errors(after, scenario) - _all_errors(before, scenario))
    subject = entity_of(d.path)[1]
    return not (_entity_errors(after, scenario, subject) - _entity_errors(before, scenario, subject))


def _protect(d, rule, state, rec, s_old, ctx) -> bool:
    protected = set(rule.params.get("entities", ()))
    return entity_of(d.path)[1] not in protected and d.path not in set(rule.params.get("paths", ()))


_PREDICATES = {
    "cites_evidence": _cites_evidence,
    "remove_implicated": _remove_implicated,
    "single_entity": _single_entity,
    "no_new_errors": _no_new_errors,
    "protect": _protect,
}


def check_rules(d: DiffItem, rules: Sequence[GapRule], state: GlobalState, rec: Recommendation,
                s_old: Strategy, *, scenario: ScenarioSpec | None = None,
                companions: Sequence[DiffItem] = ()) -> str | None:
    """First violated rule_id, or None when every rule passes.

    ``companions`` are the other differences the item would be applied with;
    the no-new-errors rule evaluates the item against that backdrop.
    """
    ctx = {"scenario": scenario, "companions": tuple(companions)}
    for rule in rules:
        if not _PREDICATES[rule.kind](d, rule, state, rec, s_old, ctx):
            return rule.rule_id
    return None


# ---------------------------------------------------------------------------
# the replan loop


@dataclass
class ReplanStats:
    regenerations: int = 0
    rule_checks: int = 0
    judgements: int = 0
    violations: list[tuple[str, str]] = field(default_factory=list)
    accepted: list[str] = field(default_factory=list)
    new_strategy: Strategy | None = None


def replan(state: GlobalState, rec: Recommendation, scenario: ScenarioSpec, s_old: Strategy, reasoner,
           memory: MemoryStore | None = None, config: ReplanConfig | None = None, *, prompt: str = "",
           gap_narrow: bool = True, stats: ReplanStats | None = None) -> Strategy:
    """Correct ``s_old`` toward a freshly planned candidate with minimal accepted differences.

    Every regeneration (one scoped difference, or the whole candidate) costs one
    unit of ``config.max_replan_retries``; running out raises ReplanExhausted.
    """
    config = config or ReplanConfig()
    stats = stats if stats is not None else ReplanStats()
    next_round = s_old.round + 1
    context: tuple = ()
    if memory is not None:
        tags = {"strategy", "reflection", "global_state", "verdict", f"strategy:round{s_old.round}"}
        context = tuple(memory.hybrid_context(PLANNER, tags, config.context_budget,
                                              short_owner=MONITOR, now=s_old.round))
    last_findings: list[ValidationFinding] = []

    def spend(reason: str) -> None:
        if stats.regenerations >= config.max_replan_retries:
            raise ReplanExhausted(f"replan budget of {config.max_replan_retries} exhausted: {reason}",
                                  last_findings, stats.regenerations)
        stats.regenerations += 1

    def request(scope: str | None = None, findings=()) -> PlanRequest:
        return PlanRequest("Replan", scenario, profile=prompt, context=context, findings=tuple(findings),
                           attempt=stats.regenerations, global_state=state, recommendation=rec,
                           old_strategy=s_old, prompt=prompt, scope=scope, round=s_old.round)

    s_new = reasoner.plan(request())
    while True:
        stats.new_strategy = s_new
        if not gap_narrow:
            s_opt = s_new.with_round(next_round, "replanned")
            last_findings = errors_only(validate_strategy(s_opt, scenario))
            if last_findings:
                spend("candidate strategy fails validation")
                s_new = reasoner.plan(request(findings=last_findings))
                continue
            break
        pending = checked_diff(reasoner, s_new, s_old)
        if not pending:
            s_opt = s_old.with_round(next_round, "replanned")
            break
        accepted: list[DiffItem] = []
        restart = False
        for i, d in enumerate(pending):
            while d is not None:
                stats.rule_checks += 1
                violated = check_rules(d, config.rules, state, rec, s_old, scenario=scenario,
                                       companions=accepted + [p for p in pending[i + 1:] if p is not None])
                if violated is None:
                    break
                stats.violations.append((d.path, violated))
                spend(f"{d.path} violates {violated}")
                regenerated = reasoner.plan(request(scope=d.path))
                if regenerated is not None and regenerated.path != d.path:
                    raise DiffInconsistent(f"regeneration for {d.path} answered {regenerated.path}")
                d = regenerated
                pending[i] = d
            if d is None:
                continue
            stats.judgements += 1
            verdict = reasoner.reflect(ReflectRequest("DifferenceJudgement", subject=d, global_state=state,
                                                      recommendation=rec, requester=PLANNER))
            if verdict.check("DifferenceJudgement").verdict == "not_improved":
                spend(f"{d.path} judged not improved")
                s_new = reasoner.plan(request())
                restart = True
                break
            accepted.append(d)
        if restart:
            continue
        try:
            s_opt = apply_diff(s_old, accepted).with_round(next_round, "replanned")
        except DiffConflict as exc:
            last_findings = []
            spend(f"accepted differences conflict: {exc}")
            s_new = reasoner.plan(request())
            continue
        last_findings = errors_only(validate_strategy(s_opt, scenario))
        touched = {c.path for c in strategy_diff_paths(s_opt, s_old)}
        if last_findings or touched != {d.path for d in accepted}:
            spend("integrated strategy fails validation" if last_findings else "integration is not minimal")
            s_new = reasoner.plan(request(findings=last_findings))
            continue
        stats.accepted = [d.path for d in accepted]
        break
    if memory is not None:
        memory.record(PLANNER, "long", s_old.dumps(), {"strategy", f"strategy:round{s_old.round}"}, 0.9,
                      s_old.round)
        memory.record(PLANNER, "short", s_opt.dumps(), {"strategy", f"strategy:round{next_round}"}, 0.8,
                      next_round)
    return s_opt
