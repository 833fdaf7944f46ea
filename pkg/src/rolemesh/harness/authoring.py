"""Scenario authoring: a heuristic policy reasoner and suite generators.

Scripts for the scenario suites are not written by hand. A generator builds
the scenario and an intended strategy, the policy reasoner plays every
reasoning role during one recorded run, and the recorded traffic becomes the
scenario's script. Replaying that script reproduces the run exactly.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

from ..domain import AgentSpec, Binding, DiffItem, ScenarioSpec, Strategy, TableIndex, TaskEntry, diff_items
from ..reasoner.base import PlanRequest, ReflectRequest, ReflectResponse
from ..reasoner.recording import RecordingReasoner
from ..tools import builtin_spec
from .runner import execute
from .scenario import FaultSpec, LoadedScenario, Toggles, _replace

_DELAY = re.compile(r"delay (\d+) steps")


@dataclass
class Blueprint:
    """What the policy reasoner steers toward."""

    agents: tuple[AgentSpec, ...]
    tasks: dict[str, tuple[TaskEntry, ...]]
    bad_team_drafts: tuple[tuple[AgentSpec, ...], ...] = ()
    task_review_failures: int = 0
    worker_fix: str = "retry"  # retry | give_up
    replan_style: str = "rename"  # rename | delegate


class PolicyReasoner:
    """Deterministic stand-in that answers from a blueprint and simple repair rules."""

    def __init__(self, blueprint: Blueprint):
        self.bp = blueprint
        self._candidate: tuple[Strategy, Strategy] | None = None
        self._justification_text = ""

    # plan

    def plan(self, req: PlanRequest):
        if req.kind == "Team":
            if req.attempt < len(self.bp.bad_team_drafts):
                return self.bp.bad_team_drafts[req.attempt]
            return self.bp.agents
        if req.kind == "Tasks":
            return dict(self.bp.tasks)
        self._justification_text = self._justification(req)
        if req.scope is not None:
            s_new, s_old = self._candidate or (self._propose(req), req.old_strategy)
            for item in self._items(s_new, s_old, req):
                if item.path == req.scope:
                    return item
            return None
        s_new = self._propose(req)
        self._candidate = (s_new, req.old_strategy)
        return s_new

    def _propose(self, req: PlanRequest) -> Strategy:
        s_old = req.old_strategy
        tid = req.global_state.detailed.task_id
        owner = s_old.owner_of(tid)
        task = s_old.task(tid)
        if owner is None or task is None:
            return s_old
        n = s_old.round + 1
        new_id = f"{tid}_r{n}"
        new_task = replace(task, task_id=new_id)

        def rebind(t: TaskEntry) -> TaskEntry:
            inputs = tuple((p, Binding.ref(new_id, b.ref_field) if b.ref_task == tid else b) for p, b in t.inputs)
            deps = tuple(new_id if d == tid else d for d in t.depends_on)
            return replace(t, inputs=inputs, depends_on=deps)

        agents = list(s_old.agents)
        lists = {aid: [rebind(t) for t in ts] for aid, ts in s_old.task_lists}
        if self.bp.replan_style == "delegate":
            me = s_old.agent(owner)
            helper = AgentSpec(f"{owner}_b{n}", me.role, f"{me.role} standing in for {new_id}",
                               me.template_id, me.parent)
            agents.insert(agents.index(me) + 1, helper)
            lists[owner] = [t for t in lists[owner] if t.task_id != tid]
            lists[helper.agent_id] = [new_task]
        else:
            lists[owner] = [new_task if t.task_id == tid else t for t in lists[owner]]
        return Strategy.build(agents, lists, s_old.round, s_old.provenance)

    def _justification(self, req) -> str:
        state, rec = req.global_state, req.recommendation
        tid = state.detailed.task_id
        cited = [i.insight_id for i in state.key_insights if i.kind == "task" and i.value == tid]
        cited += [s.suggestion_id for s in rec.suggestions if s.target == tid]
        return f"replaces the failing task {tid} per " + ", ".join(cited or ["i1"])

    def _items(self, s_new, s_old, req) -> list[DiffItem]:
        return diff_items(s_new, s_old, self._justification_text)

    # reflect

    def reflect(self, req: ReflectRequest) -> ReflectResponse:
        if req.kind == "TeamReview":
            return ReflectResponse("pass", "team covers the pipeline")
        if req.kind == "TaskReview":
            if req.attempt < self.bp.task_review_failures:
                return ReflectResponse("fail", "task list should be checked once more")
            return ReflectResponse("pass", "task list is consistent")
        if req.kind == "DifferenceJudgement":
            return ReflectResponse("improved", "difference removes the failing element")
        if req.requester == "monitor":
            return self._monitor_fix(req)
        if self.bp.worker_fix == "retry":
            return ReflectResponse("fix", "retry the call", {"action": "retry"})
        return ReflectResponse("fail", "no local repair available")

    def _monitor_fix(self, req: ReflectRequest) -> ReflectResponse:
        evidence = {k: v for e in req.evidence for k, v in e.items()}
        leaf = evidence.get("leaf", "")
        message = req.subject.get("error_message", "")
        alternatives = evidence.get("alternatives", [])
        if leaf == "tool_timeout":
            m = _DELAY.search(message)
            if m:
                return ReflectResponse("fix", "allow the call to finish",
                                       {"steps": [{"action": "extend_timeout", "steps": int(m.group(1))}]})
        if "transient" in message:
            return ReflectResponse("fix", "transient failure, retry", {"steps": [{"action": "retry"}]})
        if alternatives and leaf in ("tool_failure", "type_mismatch", "tool_timeout"):
            return ReflectResponse("fix", f"swap to {alternatives[0]}",
                                   {"steps": [{"action": "swap_tool", "tool": alternatives[0]}]})
        return ReflectResponse("fix", "retry", {"steps": [{"action": "retry"}]})

    # diff

    def diff(self, s_new: Strategy, s_old: Strategy) -> list[DiffItem]:
        self._candidate = (s_new, s_old)
        return diff_items(s_new, s_old, self._justification_text)


def record(loaded: LoadedScenario, blueprint: Blueprint, seed: int = 0,
           toggles: Toggles | None = None) -> LoadedScenario:
    """Run once under the policy reasoner and embed the recorded script."""
    toggles = toggles or loaded.toggles
    rec = RecordingReasoner(PolicyReasoner(blueprint))
    execute(loaded.with_toggles(toggles), seed, reasoner=rec)
    return loaded.with_toggles(toggles).with_script(rec.entries)


# ---------------------------------------------------------------------------
# generators

DOMAINS = (
    ("sales", ("region", "product", "revenue"), ("north", "south", "east", "west")),
    ("energy", ("plant", "fuel", "output"), ("alpha", "beta", "gamma")),
    ("clinic", ("ward", "month", "visits"), ("a", "b", "c", "d")),
    ("freight", ("port", "carrier", "tonnes"), ("rotterdam", "hamburg", "antwerp")),
    ("library", ("branch", "genre", "loans"), ("central", "river", "hill")),
)

MAIN_TOOLS = ("table_load", "row_filter", "aggregate", "chart_spec")
ALT_SUFFIX = "_mirror"

TEAM_FAULTS = (
    ("agent team lacks capability: the {role} cannot handle this request, plan incomplete", "capability_gap"),
    ("strategy design violates a constraint: the team exceeds the limit set for this request", "constraint_violation"),
    ("role not permitted by the agentset: the {role} is disallowed in this design", "role_forbidden"),
    ("work does not serve the goal: wrong objective for the user query", "goal_mismatch"),
    ("team coupling broken: the {role} is isolated without a handoff partner", "coupling_failure"),
    ("plan incomplete: missing coverage in the strategy", "plan_gap"),
    ("toolkit insufficient: required tools unavailable for this design", "toolkit_gap"),
)


def _base(rng: random.Random, with_painter: bool, name: str):
    table, cols, keys = rng.choice(DOMAINS)
    key_col, cat_col, val_col = cols
    rows = [{key_col: k, cat_col: f"{cat_col}{j}", val_col: rng.randint(1, 500)}
            for k in keys for j in range(rng.randint(1, 3))]
    pick = rng.choice(keys)
    func = rng.choice(("sum", "max", "min", "count"))
    tools = ["table_load", "row_filter", "aggregate"] + (["chart_spec"] if with_painter else [])
    toolkit = [builtin_spec(t) for t in tools] + [builtin_spec(t, t + ALT_SUFFIX) for t in tools]
    runtimes = {t + ALT_SUFFIX: t for t in tools}
    spec = ScenarioSpec(
        goal=f"report the {func} of {val_col} for {key_col} {pick}",
        description=f"the {table} table lists {val_col} per {key_col} and {cat_col}",
        constraints=("require_role extractor", f"max_agents {5 if with_painter else 4}"),
        agentset=frozenset(("tasker", "extractor", "retriever", "painter")),
        toolkit=tuple(toolkit),
        user_query=f"what is the {func} of {val_col} in {pick}?",
        tables=(TableIndex(table, cols, f"{len(rows)} rows"),),
    )
    agents = [
        AgentSpec("lead", "tasker", "coordinates the pipeline", "tasker_v1"),
        AgentSpec("ext", "extractor", f"loads table:{table}", "extractor_v1", "lead"),
        AgentSpec("ret", "retriever", f"filters and aggregates table:{table}", "retriever_v1", "lead"),
    ]
    tasks = {
        "ext": (TaskEntry("load", "table_load", {"table": Binding.literal(table)}),),
        "ret": (
            TaskEntry("select", "row_filter", {"rows": Binding.ref("load", "rows"),
                                              "column": Binding.literal(key_col), "value": Binding.literal(pick)},
                      depends_on=("load",)),
            TaskEntry("total", "aggregate", {"rows": Binding.ref("select", "rows"),
                                             "column": Binding.literal(val_col), "func": Binding.literal(func)},
                      output_key="answer", depends_on=("select",)),
        ),
    }
    if with_painter:
        agents.append(AgentSpec("pnt", "painter", f"charts table:{table}", "painter_v1", "lead"))
        tasks["pnt"] = (TaskEntry("chart", "chart_spec", {"rows": Binding.ref("select", "rows"),
                                                          "kind": Binding.literal(rng.choice(("bar", "line"))),
                                                          "x": Binding.literal(cat_col), "y": Binding.literal(val_col)},
                                  output_key="figure", depends_on=("select",)),)
    loaded = LoadedScenario(name=name, spec=spec, fixtures={table: rows},
                            runtimes=tuple((s.name, runtimes.get(s.name, s.name)) for s in toolkit), script=())
    return loaded, tuple(agents), tasks


def _bad_drafts(rng: random.Random, agents: tuple[AgentSpec, ...]) -> tuple[tuple[AgentSpec, ...], ...]:
    n = rng.choice((0, 0, 0, 1, 2))
    drafts = []
    for i in range(n):
        if i == 0:
            # extractor without its retriever partner
            drafts.append(tuple(a for a in agents if a.role != "retriever"))
        else:
            # a worker calling another worker
            drafts.append(tuple(replace(a, parent="ext") if a.agent_id == "ret" else a for a in agents))
    return tuple(drafts)


def pipeline_case(index: int, seed: int = 0) -> tuple[LoadedScenario, Blueprint]:
    """Unrecorded pipeline-fault scenario and the blueprint its script is recorded from."""
    rng = random.Random(f"pipeline-{seed}-{index}")
    with_painter = rng.random() < 0.5
    loaded, agents, tasks = _base(rng, with_painter, f"pipeline_{index:02d}")
    used = [t.tool for ts in tasks.values() for t in ts]
    mode = ("fail_always", "corrupt_output", "delay_steps", "fail_once")[index % 4]
    target = rng.choice(used)
    if mode == "delay_steps" and rng.random() < 0.5:
        target = rng.choice([t.task_id for ts in tasks.values() for t in ts])
    fault = FaultSpec(target, mode, 0, rng.randint(4, 7) if mode == "delay_steps" else 0)
    bp = Blueprint(agents, tasks, _bad_drafts(rng, agents), rng.choice((0, 0, 1)),
                   worker_fix="give_up" if mode == "fail_once" else rng.choice(("retry", "retry", "give_up")))
    return replace_faults(loaded, (fault,)), bp


def pipeline_scenario(index: int, seed: int = 0) -> LoadedScenario:
    return record(*pipeline_case(index, seed))


def team_case(index: int, seed: int = 0) -> tuple[LoadedScenario, Blueprint]:
    """Unrecorded team-fault scenario and its blueprint."""
    rng = random.Random(f"team-{seed}-{index}")
    with_painter = rng.random() < 0.5
    loaded, agents, tasks = _base(rng, with_painter, f"team_{index:02d}")
    owners = {t.task_id: aid for aid, ts in tasks.items() for t in ts}
    target = rng.choice(sorted(owners))
    role = next(a.role for a in agents if a.agent_id == owners[target])
    message, cls = TEAM_FAULTS[index % len(TEAM_FAULTS)]
    fault = FaultSpec(target, "fail_always", 0, 0, message.format(role=role), cls)
    bp = Blueprint(agents, tasks, _bad_drafts(rng, agents), rng.choice((0, 0, 1)),
                   worker_fix=rng.choice(("retry", "give_up")),
                   replan_style="delegate" if index % 2 else "rename")
    return replace_faults(loaded, (fault,)), bp


def team_scenario(index: int, seed: int = 0) -> LoadedScenario:
    return record(*team_case(index, seed))


def clean_case(index: int = 0, seed: int = 0) -> tuple[LoadedScenario, Blueprint]:
    rng = random.Random(f"clean-{seed}-{index}")
    loaded, agents, tasks = _base(rng, index % 2 == 0, f"clean_{index:02d}")
    return loaded, Blueprint(agents, tasks)


def clean_scenario(index: int = 0, seed: int = 0) -> LoadedScenario:
    return record(*clean_case(index, seed))


def replace_faults(loaded: LoadedScenario, faults: Sequence[FaultSpec]) -> LoadedScenario:
    return _replace(loaded, faults=tuple(faults))


CASES = {"pipeline": pipeline_case, "team": team_case, "clean": clean_case}


def generate_suite(kind: str, count: int, seed: int = 0, toggles: Toggles | None = None) -> list[LoadedScenario]:
    """Build and record ``count`` scenarios; ``toggles`` are recorded into each file."""
    if kind not in CASES:
        raise ValueError(f"unknown suite kind {kind!r}")
    return [record(*CASES[kind](i, seed), toggles=toggles) for i in range(count)]


def write_suite(scenarios: Sequence[LoadedScenario], out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for s in scenarios:
        p = out / f"{s.name}.yaml"
        p.write_text(s.dumps())
        paths.append(p)
    return paths
