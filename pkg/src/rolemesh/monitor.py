"""Monitor: global state assembly, error-tree classification and verdicts."""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import cached_property
from importlib import resources
from typing import Iterable, Mapping, Sequence

from .bus import MONITOR, PLANNER, MessageBus
from .domain import ScenarioSpec, Strategy, errors_only, validate_tasks
from .errors import MonitorError, ProtocolError, ReasonerError, ScenarioError
from .execution import MONITOR_ACTIONS, ErrorReportDetailed, StatusReportNormal, normalize_steps
from .memory import MemoryStore, jaccard
from .reasoner.base import ReflectRequest
from .serialize import digest, dump_yaml, load_yaml

BRANCHES = ("pipeline", "logic")
_CONSTRAINT_MENTION = re.compile(r"\b(?:max_agents|require_role|forbid_role|require_tool)\s+\S+")


# ---------------------------------------------------------------------------
# error tree


@dataclass(frozen=True)
class ErrorNode:
    node_id: str
    label: str
    keywords: frozenset[str]
    children: tuple["ErrorNode", ...] = ()
    remediation: str = ""

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def to_data(self) -> dict:
        data = {"node_id": self.node_id, "label": self.label, "keywords": sorted(self.keywords)}
        if self.children:
            data["children"] = [c.to_data() for c in self.children]
        else:
            data["remediation"] = self.remediation
        return data

    @classmethod
    def from_data(cls, data: Mapping) -> "ErrorNode":
        try:
            return cls(
                node_id=str(data["node_id"]),
                label=str(data.get("label", data["node_id"])),
                keywords=frozenset(str(k).lower() for k in data.get("keywords", ())),
                children=tuple(cls.from_data(c) for c in data.get("children", ()) or ()),
                remediation=str(data.get("remediation", "")),
            )
        except (KeyError, TypeError, AttributeError) as exc:
            raise ScenarioError(f"malformed error tree node: {exc}") from None


class ErrorTree:
    def __init__(self, root: ErrorNode):
        self.root = root
        self._nodes: dict[str, ErrorNode] = {}
        self._branch: dict[str, str] = {}
        self._validate()

    def _validate(self) -> None:
        top = [c.node_id for c in self.root.children]
        if sorted(top) != sorted(BRANCHES):
            raise ScenarioError(f"error tree root must have exactly the branches {BRANCHES}, got {top}")
        stack = [(self.root, None, 0)]
        while stack:
            node, branch, depth = stack.pop()
            if node.node_id in self._nodes:
                raise ScenarioError(f"duplicate error tree node id {node.node_id}")
            self._nodes[node.node_id] = node
            if branch is not None:
                self._branch[node.node_id] = branch
            if node.is_leaf and depth < 2:
                raise ScenarioError(f"leaf {node.node_id} sits at depth {depth}; leaves need depth >= 2")
            for c in node.children:
                stack.append((c, c.node_id if depth == 0 else branch, depth + 1))

    def __eq__(self, other) -> bool:
        return isinstance(other, ErrorTree) and self.root == other.root

    __hash__ = None

    @classmethod
    def from_data(cls, data: Mapping) -> "ErrorTree":
        return cls(ErrorNode.from_data(data))

    @classmethod
    def loads(cls, text: str) -> "ErrorTree":
        return cls.from_data(load_yaml(text))

    @classmethod
    def default(cls) -> "ErrorTree":
        return cls.loads(resources.files("rolemesh.data").joinpath("error_tree.yaml").read_text())

    def to_data(self) -> dict:
        return self.root.to_data()

    def dumps(self) -> str:
        return dump_yaml(self.to_data())

    def node(self, node_id: str) -> ErrorNode:
        return self._nodes[node_id]

    def branch_of(self, node_id: str) -> str:
        return self._branch[node_id]

    def leaves(self) -> list[ErrorNode]:
        return [n for n in self._nodes.values() if n.is_leaf]

    @cached_property
    def subtree_bags(self) -> dict[str, frozenset[str]]:
        bags: dict[str, frozenset[str]] = {}

        def fill(node: ErrorNode) -> frozenset[str]:
            bag = set(node.keywords)
            for c in node.children:
                bag |= fill(c)
            bags[node.node_id] = frozenset(bag)
            return bags[node.node_id]

        fill(self.root)
        return bags


def classify(keywords: Iterable[str], tree: ErrorTree, *, start: str | None = None) -> str:
    """Descend from ``start`` (default root) by best subtree similarity to a leaf.

    Ties go to the lexicographically smallest node_id.
    """
    query = frozenset(k.lower() for k in keywords)
    node = tree.node(start) if start else tree.root
    bags = tree.subtree_bags
    while not node.is_leaf:
        node = min(node.children, key=lambda c: (-jaccard(bags[c.node_id], query), c.node_id))
    return node.node_id


# ---------------------------------------------------------------------------
# state and verdicts


@dataclass(frozen=True)
class Insight:
    insight_id: str
    kind: str  # failure_class | task | agent | constraint
    value: str

    def to_data(self) -> dict:
        return {"insight_id": self.insight_id, "kind": self.kind, "value": self.value}


@dataclass(frozen=True)
class GlobalState:
    round: int
    detailed: ErrorReportDetailed
    normal: tuple[StatusReportNormal, ...]
    key_insights: tuple[Insight, ...]
    strategy_ref: str

    def implicated(self, kind: str) -> set[str]:
        return {i.value for i in self.key_insights if i.kind == kind}

    @property
    def insight_ids(self) -> set[str]:
        return {i.insight_id for i in self.key_insights}

    def to_data(self) -> dict:
        return {
            "round": self.round,
            "detailed": self.detailed.to_data(),
            "normal": [r.to_data() for r in self.normal],
            "key_insights": [i.to_data() for i in self.key_insights],
            "strategy_ref": self.strategy_ref,
        }


@dataclass(frozen=True)
class Suggestion:
    suggestion_id: str
    target: str
    action: str

    def to_data(self) -> dict:
        return {"suggestion_id": self.suggestion_id, "target": self.target, "action": self.action}


@dataclass(frozen=True)
class Recommendation:
    insights: tuple[Insight, ...]
    suggestions: tuple[Suggestion, ...]
    evidence: tuple[str, ...] = ()

    @property
    def item_ids(self) -> set[str]:
        return {i.insight_id for i in self.insights} | {s.suggestion_id for s in self.suggestions}

    def to_data(self) -> dict:
        return {
            "insights": [i.to_data() for i in self.insights],
            "suggestions": [s.to_data() for s in self.suggestions],
            "evidence": list(self.evidence),
        }


@dataclass(frozen=True)
class Verdict:
    kind: str  # instruction | recommendation
    classified_leaf: str
    branch: str
    target: str
    task_id: str
    steps: tuple[dict, ...] = ()
    recommendation: Recommendation | None = None
    escalated_from: str | None = None

    @property
    def is_instruction(self) -> bool:
        return self.kind == "instruction"

    def to_data(self) -> dict:
        return {
            "kind": self.kind,
            "classified_leaf": self.classified_leaf,
            "branch": self.branch,
            "target": self.target,
            "task_id": self.task_id,
            "steps": [dict(s) for s in self.steps],
            "recommendation": self.recommendation.to_data() if self.recommendation else None,
            "escalated_from": self.escalated_from,
        }


def _direct_upstream(strategy: Strategy, task_id: str) -> set[str]:
    task = strategy.task(task_id)
    if task is None:
        return set()
    return set(task.depends_on) | {b.ref_task for _, b in task.references()}


def collect_state(reports: Sequence, strategy: Strategy, round: int | None = None) -> GlobalState:
    detailed = [r for r in reports if isinstance(r, ErrorReportDetailed)]
    normal = tuple(r for r in reports if isinstance(r, StatusReportNormal))
    if not detailed:
        raise ProtocolError("collect_state needs the detailed report of the failing worker")
    if len(detailed) > 1:
        raise ProtocolError("exactly one detailed report per alert episode")
    d = detailed[0]
    upstream = _direct_upstream(strategy, d.task_id)
    raw: list[tuple[str, str]] = [("failure_class", d.failure_class), ("task", d.task_id), ("agent", d.worker)]
    raw += [("constraint", m) for m in _CONSTRAINT_MENTION.findall(d.error_message + "\n" + "\n".join(d.logs))]
    for r in normal:
        fed = [res["task_id"] for res in r.results if res.get("task_id") in upstream]
        raw += [("task", t) for t in fed]
        if fed:
            raw.append(("agent", r.worker))
        raw += [("constraint", m) for m in _CONSTRAINT_MENTION.findall("\n".join(r.context))]
    seen: set[tuple[str, str]] = set()
    insights = []
    for kind, value in raw:
        if (kind, value) in seen or not value:
            continue
        seen.add((kind, value))
        insights.append(Insight(f"i{len(insights) + 1}", kind, value))
    return GlobalState(strategy.round if round is None else round, d, normal, tuple(insights),
                       digest(strategy.to_data()))


class Monitor:
    """Sequential alert-episode handler.

    A pipeline leaf that already produced an Instruction for the same task
    earlier in the round is escalated to a Recommendation, re-classified inside the logic
    branch so that verdict kind and leaf branch always agree.
    """

    def __init__(self, tree: ErrorTree, reasoner, scenario: ScenarioSpec, memory: MemoryStore | None = None):
        self.tree = tree
        self.reasoner = reasoner
        self.scenario = scenario
        self.memory = memory
        self._pipeline_leaves: dict[int, list[tuple[str, str]]] = {}
        self.verdicts: list[Verdict] = []
        self.completed: dict[int, set[str]] = {}

    def collect(self, bus: MessageBus) -> list:
        """Drain the monitor inbox into report objects, tracking completed tasks."""
        from .execution import report_from_payload

        reports = []
        for msg in bus.drain(MONITOR):
            if msg.kind == "StatusReport":
                reports.append(report_from_payload(msg.payload))
            elif msg.kind == "Result":
                self.completed.setdefault(msg.round, set()).add(msg.payload["task_id"])
        return reports

    def collect_state(self, reports, strategy: Strategy) -> GlobalState:
        state = collect_state(reports, strategy)
        if self.memory is not None:
            self.memory.record(MONITOR, "short", dump_yaml(state.to_data()),
                               {"global_state", f"round:{state.round}"} | {i.kind for i in state.key_insights},
                               0.8, state.round)
        return state

    def classify(self, state: GlobalState) -> str:
        return classify(state.detailed.keywords, self.tree)

    def _io_checks(self, strategy: Strategy, task_id: str) -> list[dict]:
        done = self.completed.get(strategy.round, set())
        task = strategy.task(task_id)
        checks = []
        if task is None:
            return checks
        for param, b in task.inputs:
            if b.kind == "ref":
                up = strategy.task(b.ref_task)
                status = "missing_task" if up is None else ("ok" if b.ref_task in done else "not_completed")
                checks.append({"param": param, "source": b.value, "status": status})
        return checks

    def adjudicate(self, state: GlobalState, leaf: str, strategy: Strategy) -> Verdict:
        branch = self.tree.branch_of(leaf)
        d = state.detailed
        if branch == "pipeline":
            earlier = self._pipeline_leaves.setdefault(state.round, [])
            if (leaf, d.task_id) in earlier:
                return self._recommend(state, strategy, escalated_from=leaf)
            findings = validate_tasks(strategy, self.scenario.toolkit, self.scenario.constraints)
            evidence = (
                {"leaf": leaf, "remediation": self.tree.node(leaf).remediation},
                {"findings": [f.to_data() for f in errors_only(findings)]},
                {"io_checks": self._io_checks(strategy, d.task_id)},
                {"alternatives": self._alternatives(strategy, d.task_id)},
            )
            try:
                resp = self.reasoner.reflect(ReflectRequest(
                    "LocalFix", subject=d.to_data(), evidence=evidence, requester=MONITOR,
                    global_state=state, task_id=d.task_id,
                ))
            except ReasonerError as exc:
                raise MonitorError(f"reasoner failed during adjudication: {exc}") from exc
            steps = normalize_steps(resp.patch) if resp.verdict == "fix" else []
            if resp.verdict != "fix" or any(s.get("action") not in MONITOR_ACTIONS for s in steps):
                return self._recommend(state, strategy, escalated_from=leaf)
            earlier.append((leaf, d.task_id))
            verdict = Verdict("instruction", leaf, branch, d.worker, d.task_id, tuple(steps))
        else:
            return self._recommend(state, strategy, leaf=leaf)
        self._record(verdict, state.round)
        return verdict

    def _alternatives(self, strategy: Strategy, task_id: str) -> list[str]:
        task = strategy.task(task_id)
        spec = self.scenario.tool(task.tool) if task else None
        if spec is None:
            return []
        return [t.name for t in self.scenario.toolkit
                if t.name != spec.name and t.input_schema == spec.input_schema and t.output_schema == spec.output_schema]

    def _recommend(self, state: GlobalState, strategy: Strategy, *, leaf: str | None = None,
                   escalated_from: str | None = None) -> Verdict:
        if leaf is None:
            leaf = classify(state.detailed.keywords, self.tree, start="logic")
        node = self.tree.node(leaf)
        suggestions = []
        for ins in state.key_insights:
            if ins.kind in ("task", "agent"):
                suggestions.append(Suggestion(f"s{len(suggestions) + 1}", ins.value,
                                              f"{node.remediation} ({ins.kind} {ins.value})"))
        evidence: tuple[str, ...] = ()
        if self.memory is not None:
            recs = self.memory.retrieve("planner", {"strategy", "reflection", f"strategy:round{state.round}"},
                                        ("short",), 2, now=state.round)
            evidence = tuple(r.rec_id for r in recs)
        rec = Recommendation(state.key_insights, tuple(suggestions), evidence)
        verdict = Verdict("recommendation", leaf, "logic", PLANNER, state.detailed.task_id,
                          recommendation=rec, escalated_from=escalated_from)
        self._record(verdict, state.round)
        return verdict

    def _record(self, verdict: Verdict, round: int) -> None:
        self.verdicts.append(verdict)
        if self.memory is not None:
            self.memory.record(MONITOR, "short", dump_yaml(verdict.to_data()),
                               {"verdict", verdict.kind, verdict.classified_leaf}, 0.7, round)

    def deliver(self, verdict: Verdict, bus: MessageBus, round: int) -> None:
        if verdict.is_instruction:
            bus.send(MONITOR, verdict.target, "Instruction",
                     {"leaf": verdict.classified_leaf, "task_id": verdict.task_id, "steps": list(verdict.steps)},
                     round=round)
            bus.broadcast(MONITOR, "Instruction", {"control": "resume"}, round=round)
        else:
            bus.send(MONITOR, PLANNER, "Recommendation",
                     {"leaf": verdict.classified_leaf, **verdict.recommendation.to_data()}, round=round)
            bus.send(MONITOR, PLANNER, "ReplanTrigger", {"leaf": verdict.classified_leaf}, round=round)
            bus.broadcast(MONITOR, "Instruction", {"control": "stand_down"}, round=round)
