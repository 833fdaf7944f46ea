"""Scenario, strategy and task data model plus the deterministic validators.

Everything here is an immutable value. The validators never raise on bad
content; they return :class:`ValidationFinding` lists, and only a malformed
agent tree (which cannot be reasoned about at all) raises
:class:`~rolemesh.errors.StructureError`.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import Any, Iterable, Mapping, Sequence

from .errors import DiffConflict, ScenarioInvalid, StructureError
from .serialize import dump_yaml, load_yaml

ROLES = ("tasker", "extractor", "retriever", "painter")
WORKER_RANK = {"extractor": 0, "retriever": 1, "painter": 2}
# roles a worker hands data to or receives data from under its tasker
CALL_NEIGHBOURS = {
    "extractor": {"retriever"},
    "retriever": {"extractor", "painter"},
    "painter": {"retriever"},
}
SCENARIO_KEYS = ("goal", "description", "user_query")
CHECKS = (
    "compliance",
    "scenario_compatibility",
    "system_individual_coupling",
    "task_interdependency",
    "io_parameter_logic",
)
PROVENANCES = ("initial", "replanned")

_IDENT = re.compile(r"^[A-Za-z_][A-Za-z0-9_-]*$")
_TABLE_REF = re.compile(r"\btable:([A-Za-z_][A-Za-z0-9_-]*)")
_CONSTRAINT = re.compile(r"^\s*(max_agents|require_role|forbid_role|require_tool)\s+(\S+)\s*$")


def is_identifier(value: Any) -> bool:
    return isinstance(value, str) and bool(_IDENT.match(value))


def _require_ident(value: Any, what: str) -> None:
    if not is_identifier(value):
        raise ScenarioInvalid(f"{what} must be an identifier, got {value!r}")


# ---------------------------------------------------------------------------
# scenario


@dataclass(frozen=True)
class TableIndex:
    name: str
    columns: tuple[str, ...] = ()
    summary: str = ""

    def to_data(self) -> dict:
        return {"name": self.name, "columns": list(self.columns), "summary": self.summary}

    @classmethod
    def from_data(cls, data: Mapping) -> "TableIndex":
        return cls(str(data["name"]), tuple(data.get("columns", ())), str(data.get("summary", "")))


@dataclass(frozen=True)
class ToolSpec:
    name: str
    input_schema: tuple[tuple[str, str], ...]
    output_schema: tuple[tuple[str, str], ...]
    deterministic: bool = True

    def __post_init__(self):
        _require_ident(self.name, "tool name")
        for label, schema in (("input", self.input_schema), ("output", self.output_schema)):
            names = [n for n, _ in schema]
            if len(set(names)) != len(names):
                raise ScenarioInvalid(f"tool {self.name}: duplicate {label} field names")

    @property
    def inputs(self) -> dict[str, str]:
        return dict(self.input_schema)

    @property
    def outputs(self) -> dict[str, str]:
        return dict(self.output_schema)

    def to_data(self) -> dict:
        return {
            "name": self.name,
            "input_schema": {n: t for n, t in self.input_schema},
            "output_schema": {n: t for n, t in self.output_schema},
            "deterministic": self.deterministic,
        }

    @classmethod
    def from_data(cls, data: Mapping) -> "ToolSpec":
        return cls(
            name=data["name"],
            input_schema=_schema(data.get("input_schema", {})),
            output_schema=_schema(data.get("output_schema", {})),
            deterministic=bool(data.get("deterministic", True)),
        )


def _schema(raw) -> tuple[tuple[str, str], ...]:
    if isinstance(raw, Mapping):
        return tuple((str(k), str(v)) for k, v in raw.items())
    return tuple((str(k), str(v)) for k, v in raw)


@dataclass(frozen=True)
class ScenarioSpec:
    goal: str
    description: str
    constraints: tuple[str, ...]
    agentset: frozenset[str]
    toolkit: tuple[ToolSpec, ...]
    user_query: str
    tables: tuple[TableIndex, ...] = ()

    def __post_init__(self):
        for name in ("goal", "description", "user_query"):
            if not str(getattr(self, name)).strip():
                raise ScenarioInvalid(f"scenario {name} must be non-empty")
        unknown = set(self.agentset) - set(ROLES)
        if unknown:
            raise ScenarioInvalid(f"agentset contains unknown roles {sorted(unknown)}")
        names = [t.name for t in self.toolkit]
        if len(set(names)) != len(names):
            raise ScenarioInvalid("toolkit names must be unique")

    def tool(self, name: str) -> ToolSpec | None:
        for spec in self.toolkit:
            if spec.name == name:
                return spec
        return None

    @property
    def table_names(self) -> frozenset[str]:
        return frozenset(t.name for t in self.tables)

    def to_data(self) -> dict:
        return {
            "goal": self.goal,
            "description": {"text": self.description, "tables": [t.to_data() for t in self.tables]},
            "constraints": list(self.constraints),
            "agentset": [r for r in ROLES if r in self.agentset],
            "toolkit": [t.to_data() for t in self.toolkit],
            "user_query": self.user_query,
        }

    @classmethod
    def from_data(cls, data: Mapping) -> "ScenarioSpec":
        desc = data.get("description", "")
        if isinstance(desc, Mapping):
            text = str(desc.get("text", ""))
            tables = tuple(TableIndex.from_data(t) for t in desc.get("tables", ()))
        else:
            text, tables = str(desc), ()
        return cls(
            goal=str(data.get("goal", "")),
            description=text,
            constraints=tuple(str(c) for c in data.get("constraints", ())),
            agentset=frozenset(data.get("agentset", ())),
            toolkit=tuple(ToolSpec.from_data(t) for t in data.get("toolkit", ())),
            user_query=str(data.get("user_query", "")),
            tables=tables,
        )

    def dumps(self) -> str:
        return dump_yaml(self.to_data())

    @classmethod
    def loads(cls, text: str) -> "ScenarioSpec":
        return cls.from_data(load_yaml(text))


def parse_constraint(text: str) -> tuple[str, str] | None:
    """Return ``(clause, argument)`` for machine-checkable constraints, else None."""
    m = _CONSTRAINT.match(text)
    return (m.group(1), m.group(2)) if m else None


# ---------------------------------------------------------------------------
# strategy


@dataclass(frozen=True)
class AgentSpec:
    agent_id: str
    role: str
    profile: str = ""
    template_id: str = ""
    parent: str | None = None

    def to_data(self) -> dict:
        return {
            "agent_id": self.agent_id,
            "role": self.role,
            "profile": self.profile,
            "template_id": self.template_id,
            "parent": self.parent,
        }

    @classmethod
    def from_data(cls, data: Mapping) -> "AgentSpec":
        _require_ident(data.get("agent_id"), "agent_id")
        parent = data.get("parent")
        return cls(
            agent_id=data["agent_id"],
            role=str(data.get("role", "")),
            profile=str(data.get("profile", "")),
            template_id=str(data.get("template_id", "")),
            parent=None if parent is None else str(parent),
        )


@dataclass(frozen=True)
class Binding:
    """One task input: a literal, ``task_id.field`` reference, or scenario key."""

    kind: str
    value: Any

    def __post_init__(self):
        if self.kind not in ("literal", "ref", "scenario"):
            raise ScenarioInvalid(f"unknown binding kind {self.kind!r}")
        if self.kind == "ref":
            task, _, fld = str(self.value).partition(".")
            if not fld or not is_identifier(task):
                raise ScenarioInvalid(f"reference binding must look like task_id.field, got {self.value!r}")

    @classmethod
    def literal(cls, value: Any) -> "Binding":
        return cls("literal", value)

    @classmethod
    def ref(cls, task_id: str, fld: str) -> "Binding":
        return cls("ref", f"{task_id}.{fld}")

    @classmethod
    def scenario(cls, key: str) -> "Binding":
        return cls("scenario", key)

    @property
    def ref_task(self) -> str | None:
        return str(self.value).split(".", 1)[0] if self.kind == "ref" else None

    @property
    def ref_field(self) -> str | None:
        return str(self.value).split(".", 1)[1] if self.kind == "ref" else None

    def to_data(self) -> dict:
        return {self.kind: self.value}

    @classmethod
    def from_data(cls, data: Any) -> "Binding":
        if isinstance(data, Mapping) and len(data) == 1:
            ((kind, value),) = data.items()
            if kind in ("literal", "ref", "scenario"):
                return cls(kind, value)
        return cls("literal", data)


@dataclass(frozen=True)
class TaskEntry:
    task_id: str
    tool: str
    inputs: tuple[tuple[str, Binding], ...] = ()
    output_key: str = ""
    depends_on: tuple[str, ...] = ()

    def __post_init__(self):
        _require_ident(self.task_id, "task_id")
        if isinstance(self.inputs, Mapping):
            object.__setattr__(self, "inputs", tuple(self.inputs.items()))
        object.__setattr__(self, "inputs", tuple(sorted(self.inputs, key=lambda kv: kv[0])))
        object.__setattr__(self, "depends_on", tuple(self.depends_on))
        if not self.output_key:
            object.__setattr__(self, "output_key", self.task_id)

    @property
    def input_map(self) -> dict[str, Binding]:
        return dict(self.inputs)

    def references(self) -> list[tuple[str, Binding]]:
        return [(p, b) for p, b in self.inputs if b.kind == "ref"]

    def to_data(self) -> dict:
        return {
            "task_id": self.task_id,
            "tool": self.tool,
            "inputs": {p: b.to_data() for p, b in self.inputs},
            "output_key": self.output_key,
            "depends_on": list(self.depends_on),
        }

    @classmethod
    def from_data(cls, data: Mapping) -> "TaskEntry":
        return cls(
            task_id=data["task_id"],
            tool=str(data.get("tool", "")),
            inputs=tuple((str(p), Binding.from_data(b)) for p, b in (data.get("inputs") or {}).items()),
            output_key=str(data.get("output_key") or data["task_id"]),
            depends_on=tuple(str(d) for d in data.get("depends_on", ())),
        )


def tree_order(agents: Sequence[AgentSpec]) -> list[AgentSpec] | None:
    """Depth-first pre-order of a well-formed agent tree, or None if malformed."""
    ids = [a.agent_id for a in agents]
    if not agents or len(set(ids)) != len(ids):
        return None
    roots = [a for a in agents if a.parent is None]
    if len(roots) != 1 or any(a.parent is not None and a.parent not in ids for a in agents):
        return None
    children: dict[str, list[AgentSpec]] = {}
    for a in agents:
        if a.parent is not None:
            children.setdefault(a.parent, []).append(a)
    out: list[AgentSpec] = []
    stack = [roots[0]]
    while stack:
        node = stack.pop()
        out.append(node)
        stack.extend(reversed(children.get(node.agent_id, [])))
    return out if len(out) == len(agents) else None


@dataclass(frozen=True)
class Strategy:
    """An agent tree plus per-agent task lists for one execution round.

    ``agents`` is kept in depth-first order when the tree is well-formed;
    drafts that are malformed are still representable so that reflection
    can report on them.
    """

    agents: tuple[AgentSpec, ...]
    task_lists: tuple[tuple[str, tuple[TaskEntry, ...]], ...]
    round: int = 0
    provenance: str = "initial"

    def __post_init__(self):
        ordered = tree_order(self.agents)
        agents = tuple(ordered) if ordered is not None else tuple(self.agents)
        object.__setattr__(self, "agents", agents)
        if isinstance(self.task_lists, Mapping):
            lists = dict(self.task_lists)
        else:
            lists = dict(self.task_lists)
        ranked = [a.agent_id for a in agents if a.agent_id in lists]
        ranked += sorted(k for k in lists if k not in ranked)
        object.__setattr__(
            self, "task_lists", tuple((k, tuple(lists[k])) for k in ranked)
        )
        if self.round < 0:
            raise ScenarioInvalid("strategy round must be non-negative")
        if self.provenance not in PROVENANCES:
            raise ScenarioInvalid(f"unknown provenance {self.provenance!r}")

    @classmethod
    def build(cls, agents: Iterable[AgentSpec], task_lists: Mapping[str, Iterable[TaskEntry]],
              round: int = 0, provenance: str = "initial") -> "Strategy":
        lists = {k: tuple(v) for k, v in task_lists.items()}
        agents = tuple(agents)
        for a in agents:
            lists.setdefault(a.agent_id, ())
        return cls(agents, tuple(lists.items()), round, provenance)

    @property
    def root(self) -> AgentSpec | None:
        roots = [a for a in self.agents if a.parent is None]
        return roots[0] if len(roots) == 1 else None

    def agent(self, agent_id: str) -> AgentSpec | None:
        for a in self.agents:
            if a.agent_id == agent_id:
                return a
        return None

    def children(self, agent_id: str | None) -> list[AgentSpec]:
        return [a for a in self.agents if a.parent == agent_id]

    def tasks_of(self, agent_id: str) -> tuple[TaskEntry, ...]:
        return dict(self.task_lists).get(agent_id, ())

    @property
    def task_map(self) -> dict[str, tuple[TaskEntry, ...]]:
        return dict(self.task_lists)

    def all_tasks(self) -> list[tuple[str, TaskEntry]]:
        return [(aid, t) for aid, tasks in self.task_lists for t in tasks]

    def task(self, task_id: str) -> TaskEntry | None:
        for _, t in self.all_tasks():
            if t.task_id == task_id:
                return t
        return None

    def owner_of(self, task_id: str) -> str | None:
        for aid, t in self.all_tasks():
            if t.task_id == task_id:
                return aid
        return None

    def with_round(self, round: int, provenance: str | None = None) -> "Strategy":
        return replace(self, round=round, provenance=provenance or self.provenance)

    def replace_task(self, agent_id: str, task: TaskEntry) -> "Strategy":
        lists = self.task_map
        lists[agent_id] = tuple(task if t.task_id == task.task_id else t for t in lists[agent_id])
        return Strategy(self.agents, tuple(lists.items()), self.round, self.provenance)

    def structure(self) -> dict:
        """Round/provenance-free view used for structural equality."""
        data = self.to_data()
        data.pop("round")
        data.pop("provenance")
        return data

    def to_data(self) -> dict:
        return {
            "round": self.round,
            "provenance": self.provenance,
            "agents": [a.to_data() for a in self.agents],
            "task_lists": {aid: [t.to_data() for t in tasks] for aid, tasks in self.task_lists},
        }

    @classmethod
    def from_data(cls, data: Mapping) -> "Strategy":
        agents = [AgentSpec.from_data(a) for a in data.get("agents", ())]
        lists = {
            str(aid): [TaskEntry.from_data(t) for t in tasks or ()]
            for aid, tasks in (data.get("task_lists") or {}).items()
        }
        return cls.build(agents, lists, int(data.get("round", 0)), str(data.get("provenance", "initial")))

    def dumps(self) -> str:
        return dump_yaml(self.to_data())

    @classmethod
    def loads(cls, text: str) -> "Strategy":
        return cls.from_data(load_yaml(text))


# ---------------------------------------------------------------------------
# validators


@dataclass(frozen=True)
class ValidationFinding:
    check: str
    severity: str
    subject: str
    detail: str

    def __post_init__(self):
        if self.check not in CHECKS:
            raise ScenarioInvalid(f"unknown check {self.check!r}")
        if self.severity not in ("error", "warning"):
            raise ScenarioInvalid(f"unknown severity {self.severity!r}")

    def to_data(self) -> dict:
        return {"check": self.check, "severity": self.severity, "subject": self.subject, "detail": self.detail}

    @classmethod
    def from_data(cls, data: Mapping) -> "ValidationFinding":
        return cls(data["check"], data["severity"], str(data["subject"]), str(data.get("detail", "")))


def errors_only(findings: Iterable[ValidationFinding]) -> list[ValidationFinding]:
    return [f for f in findings if f.severity == "error"]


def check_tree(al: Sequence[AgentSpec]) -> list[AgentSpec]:
    """Return the agents in depth-first order or raise StructureError."""
    if not al:
        raise StructureError("agent tree is empty")
    ids = [a.agent_id for a in al]
    dupes = sorted({i for i in ids if ids.count(i) > 1})
    if dupes:
        raise StructureError(f"duplicate agent ids {dupes}")
    known = set(ids)
    for a in al:
        if a.parent is not None and a.parent not in known:
            raise StructureError(f"agent {a.agent_id} has unknown parent {a.parent}")
    parents = {a.agent_id: a.parent for a in al}
    for a in al:
        seen = {a.agent_id}
        cur = a.parent
        while cur is not None:
            if cur in seen:
                raise StructureError(f"cycle in agent tree through {cur}")
            seen.add(cur)
            cur = parents[cur]
    roots = [a.agent_id for a in al if a.parent is None]
    if len(roots) != 1:
        raise StructureError(f"agent tree must have exactly one root, found {roots}")
    ordered = tree_order(al)
    assert ordered is not None
    return ordered


def validate_team(al: Sequence[AgentSpec], scenario: ScenarioSpec) -> list[ValidationFinding]:
    ordered = check_tree(al)
    out: list[ValidationFinding] = []
    root = ordered[0]

    def add(check, severity, subject, detail):
        out.append(ValidationFinding(check, severity, subject, detail))

    # compliance
    if root.role != "tasker":
        add("compliance", "error", root.agent_id, f"root agent must be a tasker, got {root.role}")
    for a in ordered:
        if a.role not in scenario.agentset:
            add("compliance", "error", a.agent_id, f"role {a.role} is outside the agentset")
    tool_names = {t.name for t in scenario.toolkit}
    for text in scenario.constraints:
        parsed = parse_constraint(text)
        if parsed is None:
            continue
        clause, arg = parsed
        if clause == "max_agents":
            try:
                limit = int(arg)
            except ValueError:
                continue
            if len(ordered) > limit:
                add("compliance", "error", root.agent_id, f"team has {len(ordered)} agents, max_agents {limit}")
        elif clause == "require_role":
            if not any(a.role == arg for a in ordered):
                add("compliance", "error", root.agent_id, f"required role {arg} is missing")
        elif clause == "forbid_role":
            for a in ordered:
                if a.role == arg:
                    add("compliance", "error", a.agent_id, f"role {arg} is forbidden by constraint")
        elif clause == "require_tool":
            if arg not in tool_names:
                add("compliance", "error", root.agent_id, f"required tool {arg} is not in the toolkit")

    # scenario compatibility
    tables = scenario.table_names
    for a in ordered:
        for name in _TABLE_REF.findall(a.profile):
            if name not in tables:
                add("scenario_compatibility", "error", a.agent_id, f"profile references unknown table {name}")

    # system-individual coupling
    by_id = {a.agent_id: a for a in ordered}
    kids: dict[str, list[AgentSpec]] = {}
    for a in ordered:
        if a.parent is not None:
            kids.setdefault(a.parent, []).append(a)
    for a in ordered:
        if a.role in WORKER_RANK and kids.get(a.agent_id):
            add("system_individual_coupling", "error", a.agent_id, "only taskers may call other agents")
    for a in ordered:
        if a.role not in WORKER_RANK or a.parent is None:
            continue
        parent = by_id[a.parent]
        if parent.role != "tasker":
            continue
        sibling_roles = {s.role for s in kids[parent.agent_id] if s.agent_id != a.agent_id}
        if not (CALL_NEIGHBOURS[a.role] & sibling_roles):
            add("system_individual_coupling", "error", a.agent_id,
                f"{a.role} has no upstream or downstream partner under {parent.agent_id}")
    for pid, siblings in kids.items():
        highest = -1
        for s in siblings:
            rank = WORKER_RANK.get(s.role)
            if rank is None:
                continue
            if rank < highest:
                add("system_individual_coupling", "error", s.agent_id,
                    f"{s.role} is called after a later pipeline stage under {pid}")
            highest = max(highest, rank)
    seen: dict[tuple[str, str], str] = {}
    for a in ordered:
        key = (a.role, a.profile)
        if key in seen:
            add("system_individual_coupling", "warning", a.agent_id,
                f"redundant agent: same role and profile as {seen[key]}")
        else:
            seen[key] = a.agent_id
    return out


def _as_task_lists(tl) -> list[tuple[str, Sequence[TaskEntry]]]:
    if isinstance(tl, Strategy):
        return list(tl.task_lists)
    if isinstance(tl, Mapping):
        return list(tl.items())
    return list(tl)


def validate_tasks(tl, toolkit: Sequence[ToolSpec], constraints: Sequence[str] = ()) -> list[ValidationFinding]:
    lists = _as_task_lists(tl)
    tools = {t.name: t for t in toolkit}
    out: list[ValidationFinding] = []

    def add(check, subject, detail, severity="error"):
        out.append(ValidationFinding(check, severity, subject, detail))

    tasks: list[TaskEntry] = [t for _, ts in lists for t in ts]
    by_id: dict[str, TaskEntry] = {}
    for t in tasks:
        if t.task_id in by_id:
            add("task_interdependency", t.task_id, "duplicate task id")
        else:
            by_id[t.task_id] = t

    for t in tasks:
        spec = tools.get(t.tool)
        if spec is None:
            add("io_parameter_logic", t.task_id, f"unknown tool {t.tool}")
        deps = set(t.depends_on)
        for d in t.depends_on:
            if d not in by_id:
                add("task_interdependency", t.task_id, f"depends on unknown task {d}")
        for param, b in t.inputs:
            want = spec.inputs.get(param) if spec else None
            if spec is not None and param not in spec.inputs:
                add("io_parameter_logic", t.task_id, f"tool {t.tool} has no input {param}")
            if b.kind == "ref":
                up = by_id.get(b.ref_task)
                if up is None:
                    add("io_parameter_logic", t.task_id, f"input {param} references unknown task {b.ref_task}")
                    continue
                if b.ref_task not in deps:
                    add("task_interdependency", t.task_id, f"input {param} reads {b.ref_task} without depending on it")
                up_spec = tools.get(up.tool)
                if up_spec is None:
                    continue
                have = up_spec.outputs.get(b.ref_field)
                if have is None:
                    add("io_parameter_logic", t.task_id, f"input {param} reads missing field {b.value}")
                elif want is not None and have != want:
                    add("io_parameter_logic", t.task_id, f"input {param} expects {want} but {b.value} is {have}")
            elif b.kind == "scenario":
                if b.value not in SCENARIO_KEYS:
                    add("io_parameter_logic", t.task_id, f"input {param} reads unknown scenario key {b.value}")
                elif want is not None and want != "text":
                    add("io_parameter_logic", t.task_id, f"input {param} expects {want} but scenario.{b.value} is text")
        if spec is not None:
            bound = {p for p, _ in t.inputs}
            for param in spec.inputs:
                if param not in bound:
                    add("io_parameter_logic", t.task_id, f"input {param} is unbound")

    graph = {tid: sorted(_edges(t, by_id)) for tid, t in by_id.items()}
    for cycle in _cycles(graph):
        add("task_interdependency", cycle[0], "cycle " + ",".join(cycle))

    used = {t.tool for t in tasks}
    for text in constraints:
        parsed = parse_constraint(text)
        if parsed and parsed[0] == "require_tool" and parsed[1] not in used:
            add("compliance", parsed[1], f"required tool {parsed[1]} is not used by any task")
    return out


def _edges(t: TaskEntry, by_id: Mapping[str, TaskEntry]) -> set[str]:
    deps = {d for d in t.depends_on if d in by_id}
    deps |= {b.ref_task for _, b in t.references() if b.ref_task in by_id}
    return deps


def _cycles(graph: Mapping[str, Sequence[str]]) -> list[list[str]]:
    """Strongly connected components that contain a cycle, each sorted."""
    index: dict[str, int] = {}
    low: dict[str, int] = {}
    on_stack: set[str] = set()
    stack: list[str] = []
    comps: list[list[str]] = []
    counter = [0]

    def strong(v: str) -> None:
        index[v] = low[v] = counter[0]
        counter[0] += 1
        stack.append(v)
        on_stack.add(v)
        for w in graph.get(v, ()):
            if w not in index:
                strong(w)
                low[v] = min(low[v], low[w])
            elif w in on_stack:
                low[v] = min(low[v], index[w])
        if low[v] == index[v]:
            comp = []
            while True:
                w = stack.pop()
                on_stack.discard(w)
                comp.append(w)
                if w == v:
                    break
            if len(comp) > 1 or v in graph.get(v, ()):
                comps.append(sorted(comp))

    for v in sorted(graph):
        if v not in index:
            strong(v)
    return sorted(comps)


def validate_assignment(strategy: Strategy) -> list[ValidationFinding]:
    ids = {a.agent_id for a in strategy.agents}
    return [
        ValidationFinding("system_individual_coupling", "error", aid, "task list owner is not in the agent tree")
        for aid, _ in strategy.task_lists
        if aid not in ids
    ]


def validate_strategy(strategy: Strategy, scenario: ScenarioSpec) -> list[ValidationFinding]:
    """Both reflection aspects plus owner consistency; StructureError becomes a finding."""
    try:
        team = validate_team(strategy.agents, scenario)
    except StructureError as exc:
        root = strategy.agents[0].agent_id if strategy.agents else ""
        team = [ValidationFinding("system_individual_coupling", "error", root, f"malformed tree: {exc}")]
    return (
        team
        + validate_assignment(strategy)
        + validate_tasks(strategy, scenario.toolkit, scenario.constraints)
    )


def topological_tasks(strategy: Strategy) -> list[tuple[str, TaskEntry]]:
    """Tasks in an order consistent with dependencies, ties by agent then list order."""
    import heapq

    entries = strategy.all_tasks()
    rank = {t.task_id: i for i, (_, t) in enumerate(entries)}
    by_id = {t.task_id: (aid, t) for aid, t in entries}
    indeg = {tid: 0 for tid in by_id}
    users: dict[str, list[str]] = {tid: [] for tid in by_id}
    for tid, (_, t) in by_id.items():
        for d in _edges(t, {k: v[1] for k, v in by_id.items()}):
            indeg[tid] += 1
            users[d].append(tid)
    heap = [(rank[t], t) for t, n in indeg.items() if n == 0]
    heapq.heapify(heap)
    out = []
    while heap:
        _, tid = heapq.heappop(heap)
        out.append(by_id[tid])
        for u in users[tid]:
            indeg[u] -= 1
            if indeg[u] == 0:
                heapq.heappush(heap, (rank[u], u))
    if len(out) != len(by_id):
        raise StructureError("task dependencies contain a cycle")
    return out


# ---------------------------------------------------------------------------
# structural diff


@dataclass(frozen=True)
class StructuralChange:
    path: str
    change: str  # insert | remove | modify | reorder


@dataclass(frozen=True)
class DiffItem:
    """One difference between a candidate and the current strategy.

    ``new_value`` carries everything needed to apply the change: an
    ``agent``/``task`` fragment plus the ``after`` sibling for inserts, or an
    ``order`` list for reorders.
    """

    diff_id: str
    path: str
    change: str
    old_value: Any = None
    new_value: Any = None
    justification: str = ""

    def to_data(self) -> dict:
        return {
            "diff_id": self.diff_id,
            "path": self.path,
            "change": self.change,
            "old_value": self.old_value,
            "new_value": self.new_value,
            "justification": self.justification,
        }

    @classmethod
    def from_data(cls, data: Mapping) -> "DiffItem":
        return cls(
            diff_id=str(data.get("diff_id", "")),
            path=str(data["path"]),
            change=str(data["change"]),
            old_value=data.get("old_value"),
            new_value=data.get("new_value"),
            justification=str(data.get("justification", "")),
        )


def parse_path(path: str) -> tuple[str, ...]:
    """Split a diff path into ``("agent", id)``, ``("children", id)``,
    ``("task", agent, task)`` or ``("order", agent)``."""
    parts = path.split("/")
    if len(parts) == 2 and parts[0] == "agents":
        return ("agent", parts[1])
    if len(parts) == 3 and parts[0] == "agents" and parts[2] == "children":
        return ("children", parts[1])
    if len(parts) == 3 and parts[0] == "tasks" and parts[2] == "order":
        return ("order", parts[1])
    if len(parts) == 3 and parts[0] == "tasks":
        return ("task", parts[1], parts[2])
    raise DiffConflict(f"malformed diff path {path!r}")


def agent_path(agent_id: str) -> str:
    return f"agents/{agent_id}"


def task_path(agent_id: str, task_id: str) -> str:
    return f"tasks/{agent_id}/{task_id}"


def _merged(first: Sequence[str], second: Sequence[str]) -> list[str]:
    seen = set(first)
    return list(first) + [x for x in second if x not in seen]


def _relative(seq: Sequence[str], keep: set[str]) -> list[str]:
    return [x for x in seq if x in keep]


def _child_ids(s: Strategy, agent_id: str) -> list[str]:
    return [a.agent_id for a in s.agents if a.parent == agent_id]


def _changes(s1: Strategy, s2: Strategy) -> list[tuple[StructuralChange, dict]]:
    a1 = {a.agent_id: a for a in s1.agents}
    a2 = {a.agent_id: a for a in s2.agents}
    t1 = s1.task_map
    t2 = s2.task_map
    owners = _merged([a.agent_id for a in s1.agents] + [k for k in t1 if k not in a1],
                     [a.agent_id for a in s2.agents] + [k for k in t2 if k not in a2])
    out: list[tuple[StructuralChange, dict]] = []
    for aid in owners:
        x, y = a1.get(aid), a2.get(aid)
        if x is not None and y is None:
            sibs = _child_ids(s1, x.parent)
            idx = sibs.index(aid)
            out.append((StructuralChange(agent_path(aid), "insert"),
                        {"new": {"agent": x.to_data(), "after": sibs[idx - 1] if idx else None},
                         "old": None}))
        elif x is None and y is not None:
            out.append((StructuralChange(agent_path(aid), "remove"), {"new": None, "old": {"agent": y.to_data()}}))
        elif x is not None and x != y:
            new = {"agent": x.to_data()}
            if x.parent != y.parent:
                sibs = _child_ids(s1, x.parent)
                idx = sibs.index(aid)
                new["after"] = sibs[idx - 1] if idx else None
            out.append((StructuralChange(agent_path(aid), "modify"), {"new": new, "old": {"agent": y.to_data()}}))
        c1, c2 = _child_ids(s1, aid), _child_ids(s2, aid)
        common = set(c1) & set(c2)
        if _relative(c1, common) != _relative(c2, common):
            out.append((StructuralChange(f"agents/{aid}/children", "reorder"),
                        {"new": {"order": _relative(c1, common)}, "old": {"order": _relative(c2, common)}}))
        l1 = {t.task_id: t for t in t1.get(aid, ())}
        l2 = {t.task_id: t for t in t2.get(aid, ())}
        ids1 = [t.task_id for t in t1.get(aid, ())]
        ids2 = [t.task_id for t in t2.get(aid, ())]
        for tid in _merged(ids1, ids2):
            p, q = l1.get(tid), l2.get(tid)
            if p is not None and q is None:
                idx = ids1.index(tid)
                out.append((StructuralChange(task_path(aid, tid), "insert"),
                            {"new": {"task": p.to_data(), "after": ids1[idx - 1] if idx else None}, "old": None}))
            elif p is None and q is not None:
                out.append((StructuralChange(task_path(aid, tid), "remove"), {"new": None, "old": {"task": q.to_data()}}))
            elif p != q:
                out.append((StructuralChange(task_path(aid, tid), "modify"),
                            {"new": {"task": p.to_data()}, "old": {"task": q.to_data()}}))
        common_t = set(ids1) & set(ids2)
        if _relative(ids1, common_t) != _relative(ids2, common_t):
            out.append((StructuralChange(f"tasks/{aid}/order", "reorder"),
                        {"new": {"order": _relative(ids1, common_t)}, "old": {"order": _relative(ids2, common_t)}}))
    return out


def strategy_diff_paths(s1: Strategy, s2: Strategy) -> list[StructuralChange]:
    """Canonically ordered structural differences; ``insert`` means present in s1 only."""
    return [c for c, _ in _changes(s1, s2)]


def diff_items(s_new: Strategy, s_old: Strategy, justification: str = "") -> list[DiffItem]:
    """DiffItems that turn ``s_old`` into ``s_new`` when applied together."""
    return [
        DiffItem(f"d{i}", c.path, c.change, v["old"], v["new"], justification)
        for i, (c, v) in enumerate(_changes(s_new, s_old), start=1)
    ]


_APPLY_PHASE = {"remove": 0, "modify": 1, "reorder": 2, "insert": 3}


def _level(item: DiffItem) -> int:
    """Agents are inserted before their tasks and removed after them."""
    is_agent = item.path.count("/") == 1
    if item.change == "insert":
        return 0 if is_agent else 1
    return 1 if is_agent else 0


def _slot(item: DiffItem) -> tuple:
    """(container, entity id) an insert occupies."""
    target = parse_path(item.path)
    if target[0] == "task":
        return (("task", target[1]), target[2])
    frag = (item.new_value or {}).get("agent") or {}
    return (("agent", frag.get("parent")), target[1] if len(target) > 1 else None)


def _chain_inserts(inserts: list[DiffItem]) -> list[DiffItem]:
    """Order inserts so each one lands after the new sibling it names.

    A task insert also waits for the insert of its owning agent.
    """
    pending = list(inserts)
    out: list[DiffItem] = []
    while pending:
        taken = {_slot(i) for i in pending}
        new_agents = {ident for (kind, _), ident in taken if kind == "agent"}
        for i, item in enumerate(pending):
            container = _slot(item)[0]
            if container[0] == "task" and container[1] in new_agents:
                continue
            if (container, (item.new_value or {}).get("after")) not in taken:
                out.append(pending.pop(i))
                break
        else:
            out.extend(pending)
            break
    return out


def apply_diff(s_old: Strategy, items: Iterable[DiffItem]) -> Strategy:
    """Apply diff items: removes, then modifies, then reorders, then inserts.

    The result does not depend on the order of ``items``.
    """
    agents: dict[str, AgentSpec] = {a.agent_id: a for a in s_old.agents}
    order: list[str] = [a.agent_id for a in s_old.agents]
    lists: dict[str, list[TaskEntry]] = {k: list(v) for k, v in s_old.task_lists}
    indexed = sorted(enumerate(items), key=lambda p: (_APPLY_PHASE.get(p[1].change, 9), _level(p[1]), p[0]))
    ordered = [item for _, item in indexed if item.change != "insert"]
    placements = [item for _, item in indexed if item.change == "insert"]
    for item in ordered:
        if item.change == "modify" and parse_path(item.path)[0] == "agent":
            old = agents.get(parse_path(item.path)[1])
            frag = (item.new_value or {}).get("agent") or {}
            if old is not None and frag.get("parent") != old.parent:
                # a reparented agent is placed among its new siblings with the inserts
                placements.append(replace(item, change="place"))
    ordered += _chain_inserts(placements)
    for item in ordered:
        target = parse_path(item.path)
        kind = target[0]
        change = item.change
        new = item.new_value or {}
        if kind == "agent":
            aid = target[1]
            if change == "remove":
                if aid not in agents:
                    raise DiffConflict(f"{item.path}: agent not present")
                del agents[aid]
                order.remove(aid)
                lists.pop(aid, None)
            elif change in ("modify", "insert"):
                spec = AgentSpec.from_data(new["agent"])
                if spec.agent_id != aid:
                    raise DiffConflict(f"{item.path}: fragment describes {spec.agent_id}")
                if change == "modify":
                    if aid not in agents:
                        raise DiffConflict(f"{item.path}: agent not present")
                    if agents[aid].parent != spec.parent:
                        order.remove(aid)
                    agents[aid] = spec
                else:
                    if aid in agents:
                        raise DiffConflict(f"{item.path}: agent already present")
                    agents[aid] = spec
                    lists.setdefault(aid, [])
            elif change == "place":
                pass
            else:
                raise DiffConflict(f"{item.path}: cannot {change} an agent")
            if change in ("insert", "place"):
                spec = agents[aid]
                after = new.get("after")
                siblings = [x for x in order if agents[x].parent == spec.parent]
                if after is not None and after in siblings:
                    order.insert(order.index(after) + 1, aid)
                elif siblings:
                    order.insert(order.index(siblings[0]), aid)
                else:
                    order.append(aid)
        elif kind == "children":
            want = [x for x in new.get("order", []) if x in agents and agents[x].parent == target[1]]
            slots = [i for i, x in enumerate(order) if x in want]
            for i, x in zip(slots, want):
                order[i] = x
        elif kind == "order":
            cur = lists.get(target[1])
            if cur is None:
                raise DiffConflict(f"{item.path}: agent has no task list")
            want = [x for x in new.get("order", [])]
            pos = {t.task_id: t for t in cur}
            want = [x for x in want if x in pos]
            slots = [i for i, t in enumerate(cur) if t.task_id in want]
            for i, x in zip(slots, want):
                cur[i] = pos[x]
        else:
            aid, tid = target[1], target[2]
            cur = lists.get(aid)
            if cur is None:
                raise DiffConflict(f"{item.path}: agent has no task list")
            idx = next((i for i, t in enumerate(cur) if t.task_id == tid), None)
            if change == "remove":
                if idx is None:
                    raise DiffConflict(f"{item.path}: task not present")
                del cur[idx]
            elif change in ("modify", "insert"):
                task = TaskEntry.from_data(new["task"])
                if task.task_id != tid:
                    raise DiffConflict(f"{item.path}: fragment describes {task.task_id}")
                if change == "modify":
                    if idx is None:
                        raise DiffConflict(f"{item.path}: task not present")
                    cur[idx] = task
                else:
                    if idx is not None:
                        raise DiffConflict(f"{item.path}: task already present")
                    after = new.get("after")
                    ids = [t.task_id for t in cur]
                    cur.insert(ids.index(after) + 1 if after in ids else 0, task)
            else:
                raise DiffConflict(f"{item.path}: cannot {change} a task")
    flat = [agents[x] for x in order]
    return Strategy(tuple(flat), tuple((k, tuple(v)) for k, v in lists.items()), s_old.round, s_old.provenance)


def entity_of(path: str) -> tuple[str, str]:
    """``("agent", id)`` or ``("task", id)`` touched by a path; containers map to their owner."""
    target = parse_path(path)
    if target[0] == "task":
        return ("task", target[2])
    return ("agent", target[1])


__all__ = [
    "ROLES", "AgentSpec", "Binding", "DiffItem", "ScenarioSpec", "Strategy", "StructuralChange",
    "TableIndex", "TaskEntry", "ToolSpec", "ValidationFinding", "apply_diff", "diff_items",
    "errors_only", "parse_constraint", "parse_path", "strategy_diff_paths", "topological_tasks",
    "validate_assignment", "validate_strategy", "validate_tasks", "validate_team",
]
