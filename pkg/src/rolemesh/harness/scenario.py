"""Scenario files: spec, tool fixtures, reasoner script, fault schedule, toggles."""

from __future__ import annotations

import re
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping

from ..domain import ScenarioSpec, Strategy, TaskEntry, ToolSpec
from ..errors import ScenarioError, ScenarioInvalid, ScriptError
from ..monitor import ErrorTree
from ..reasoner.base import PLAN_KINDS, REFLECT_KINDS
from ..reasoner.scripted import ScriptEntry, parse_script
from ..replanner import GapRule, rules_from_data
from ..serialize import dump_yaml, load_yaml
from ..tools import BUILTINS, schema_matches

SECTIONS = ("name", "scenario", "tools", "script", "faults", "error_tree", "rules", "toggles", "subtask_types")
FAULT_MODES = ("fail_once", "fail_always", "corrupt_output", "delay_steps")
_DELAY = re.compile(r"^delay_steps\s+(\d+)$")

SUBTASK_KINDS = ("DocumentQA", "IndicatorQA", "GraphRAGQA", "SummaryQA", "ChartQA", "SQLQA")
DEFAULT_SUBTASK_TYPES = {
    "table_load": "DocumentQA",
    "aggregate": "IndicatorQA",
    "identity": "GraphRAGQA",
    "text_extract": "SummaryQA",
    "chart_spec": "ChartQA",
    "row_filter": "SQLQA",
}


@dataclass(frozen=True)
class FaultSpec:
    target: str
    mode: str
    trigger_round: int = 0
    steps: int = 0
    message: str = ""
    failure_class: str = ""

    def __post_init__(self):
        if self.mode not in FAULT_MODES:
            raise ScenarioInvalid(f"unknown fault mode {self.mode!r}")
        if self.mode == "delay_steps" and self.steps < 1:
            raise ScenarioInvalid("delay_steps needs a positive step count")
        if self.trigger_round < 0:
            raise ScenarioInvalid("trigger_round must be >= 0")

    def to_data(self) -> dict:
        data: dict[str, Any] = {"target": self.target, "mode": self.mode, "trigger_round": self.trigger_round}
        if self.mode == "delay_steps":
            data["steps"] = self.steps
        if self.message:
            data["message"] = self.message
        if self.failure_class:
            data["failure_class"] = self.failure_class
        return data

    @classmethod
    def from_data(cls, data: Mapping) -> "FaultSpec":
        mode = str(data["mode"])
        steps = int(data.get("steps", 0))
        m = _DELAY.match(mode)
        if m:
            mode, steps = "delay_steps", int(m.group(1))
        return cls(str(data["target"]), mode, int(data.get("trigger_round", 0)), steps,
                   str(data.get("message", "")), str(data.get("failure_class", "")))


@dataclass(frozen=True)
class Toggles:
    no_monitor: bool = False
    no_gap_narrow: bool = False
    no_memory: bool = False
    no_self_reflection: bool = False

    def to_data(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_data(cls, data: Mapping | None) -> "Toggles":
        data = dict(data or {})
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ScenarioInvalid(f"unknown toggles {sorted(unknown)}")
        return cls(**{k: bool(v) for k, v in data.items()})

    def merged(self, **overrides: bool) -> "Toggles":
        """Overrides only switch toggles on; an unset flag keeps the file's value."""
        return Toggles(**{f.name: getattr(self, f.name) or bool(overrides.get(f.name)) for f in fields(self)})


@dataclass(frozen=True)
class LoadedScenario:
    name: str
    spec: ScenarioSpec
    fixtures: dict
    runtimes: tuple[tuple[str, str], ...]
    script: tuple[ScriptEntry, ...]
    faults: tuple[FaultSpec, ...] = ()
    toggles: Toggles = Toggles()
    error_tree: ErrorTree | None = None
    rules: tuple[GapRule, ...] | None = None
    subtask_types: tuple[tuple[str, str], ...] = ()

    def __eq__(self, other) -> bool:
        return isinstance(other, LoadedScenario) and self.to_data() == other.to_data()

    __hash__ = None

    def subtask_type(self, tool: str) -> str:
        explicit = dict(self.subtask_types)
        if tool in explicit:
            return explicit[tool]
        impl = dict(self.runtimes).get(tool, tool)
        return DEFAULT_SUBTASK_TYPES.get(impl, "Other")

    def with_script(self, script) -> "LoadedScenario":
        entries = tuple(parse_script(list(script))) if not all(isinstance(e, ScriptEntry) for e in script) \
            else tuple(script)
        return _replace(self, script=entries)

    def with_toggles(self, toggles: Toggles) -> "LoadedScenario":
        return _replace(self, toggles=toggles)

    def to_data(self) -> dict:
        data: dict[str, Any] = {
            "name": self.name,
            "scenario": self.spec.to_data(),
            "tools": {"fixtures": self.fixtures, "runtimes": dict(self.runtimes)},
            "faults": [f.to_data() for f in self.faults],
            "toggles": self.toggles.to_data(),
        }
        if self.subtask_types:
            data["subtask_types"] = dict(self.subtask_types)
        if self.error_tree is not None:
            data["error_tree"] = self.error_tree.to_data()
        if self.rules is not None:
            data["rules"] = [r.to_data() for r in self.rules]
        data["script"] = [e.to_data() for e in self.script]
        return data

    def dumps(self) -> str:
        return dump_yaml(self.to_data())


def _replace(obj: LoadedScenario, **changes) -> LoadedScenario:
    values = {f.name: getattr(obj, f.name) for f in fields(obj)}
    values.update(changes)
    return LoadedScenario(**values)


def _section(data: Mapping, key: str, kind: type, default):
    value = data.get(key, default)
    if value is None:
        value = default
    if not isinstance(value, kind):
        raise ScenarioError(f"section must be a {kind.__name__}", key)
    return value


def _script_tasks(entries) -> set[str]:
    """Every task id any scripted plan response could introduce."""
    ids: set[str] = set()
    for e in entries:
        r = e.respond
        if isinstance(r.get("tasks"), Mapping):
            for ts in r["tasks"].values():
                ids.update(str(t.get("task_id")) for t in ts or () if isinstance(t, Mapping))
        if isinstance(r.get("strategy"), Mapping):
            for ts in (r["strategy"].get("task_lists") or {}).values():
                ids.update(str(t.get("task_id")) for t in ts or () if isinstance(t, Mapping))
        item = r.get("item")
        if isinstance(item, Mapping) and isinstance(item.get("new_value"), Mapping):
            task = item["new_value"].get("task")
            if isinstance(task, Mapping):
                ids.add(str(task.get("task_id")))
    return ids


def _check_entry(e: ScriptEntry, i: int) -> None:
    op, kind = e.expect.get("op"), e.expect.get("kind")
    where = f"script[{i}]" + (f" (line {e.line})" if e.line else "")
    if op == "plan" and kind not in PLAN_KINDS:
        raise ScenarioError(f"plan entry needs kind in {PLAN_KINDS}", where)
    if op == "reflect" and kind not in REFLECT_KINDS:
        raise ScenarioError(f"reflect entry needs kind in {REFLECT_KINDS}", where)
    try:
        if op == "plan" and kind == "Team":
            from ..domain import AgentSpec

            [AgentSpec.from_data(a) for a in e.respond["agents"]]
        elif op == "plan" and kind == "Tasks":
            for ts in e.respond["tasks"].values():
                [TaskEntry.from_data(t) for t in ts or ()]
        elif op == "plan" and kind == "Replan" and "scope" not in e.expect:
            Strategy.from_data(e.respond["strategy"])
        elif op == "reflect" and "verdict" not in e.respond:
            raise KeyError("verdict")
    except (KeyError, TypeError, AttributeError, ScenarioInvalid) as exc:
        raise ScenarioError(f"malformed respond body: {exc}", where) from None


def scenario_from_data(data: Any, name: str = "") -> LoadedScenario:
    if not isinstance(data, Mapping):
        raise ScenarioError("scenario file must be a mapping")
    unknown = set(data) - set(SECTIONS)
    if unknown:
        raise ScenarioError(f"unknown sections {sorted(unknown)}")
    if "scenario" not in data:
        raise ScenarioError("missing section", "scenario")
    try:
        spec = ScenarioSpec.from_data(_section(data, "scenario", Mapping, {}))
    except (ScenarioInvalid, KeyError, TypeError) as exc:
        raise ScenarioError(str(exc), "scenario") from None

    tools = _section(data, "tools", Mapping, {})
    fixtures = dict(tools.get("fixtures") or {})
    for tname, rows in fixtures.items():
        if not isinstance(rows, list) or not all(isinstance(r, Mapping) for r in rows):
            raise ScenarioError("fixture tables are lists of row mappings", f"tools.fixtures.{tname}")
    raw_rt = tools.get("runtimes") or {}
    if not isinstance(raw_rt, Mapping):
        raise ScenarioError("runtimes map tool names to builtin implementations", "tools.runtimes")
    runtimes = []
    for spec_tool in spec.toolkit:
        impl = str(raw_rt.get(spec_tool.name, spec_tool.name))
        where = f"tools.runtimes.{spec_tool.name}"
        if impl not in BUILTINS:
            raise ScenarioError(f"no builtin implementation {impl!r}", where)
        if not schema_matches(impl, spec_tool):
            raise ScenarioError(f"tool schema does not match builtin {impl}", where)
        runtimes.append((spec_tool.name, impl))
    extra_rt = set(raw_rt) - {t.name for t in spec.toolkit}
    if extra_rt:
        raise ScenarioError(f"runtimes for tools outside the toolkit {sorted(extra_rt)}", "tools.runtimes")

    try:
        script = tuple(parse_script(_section(data, "script", list, [])))
    except ScriptError as exc:
        raise ScenarioError(str(exc), f"script line {exc.line}" if getattr(exc, "line", None) else "script") from None
    for i, e in enumerate(script):
        _check_entry(e, i)

    targets = _script_tasks(script) | {t.name for t in spec.toolkit}
    faults = []
    for i, raw in enumerate(_section(data, "faults", list, [])):
        where = f"faults[{i}]"
        try:
            f = FaultSpec.from_data(raw)
        except (KeyError, TypeError, ValueError) as exc:
            raise ScenarioError(f"malformed fault: {exc}", where) from None
        if f.target not in targets:
            raise ScenarioError(f"fault target {f.target!r} is neither a scripted task nor a toolkit tool",
                                f"{where}.target")
        faults.append(f)

    tree = None
    if data.get("error_tree") is not None:
        try:
            tree = ErrorTree.from_data(data["error_tree"])
        except ScenarioError as exc:
            raise ScenarioError(str(exc), "error_tree") from None
    rules = None
    if data.get("rules") is not None:
        try:
            rules = rules_from_data(_section(data, "rules", list, []))
        except ScenarioError as exc:
            raise ScenarioError(str(exc), "rules") from None
    try:
        toggles = Toggles.from_data(_section(data, "toggles", Mapping, {}))
    except ScenarioInvalid as exc:
        raise ScenarioError(str(exc), "toggles") from None
    kinds = _section(data, "subtask_types", Mapping, {})
    return LoadedScenario(
        name=str(data.get("name") or name),
        spec=spec,
        fixtures=fixtures,
        runtimes=tuple(runtimes),
        script=script,
        faults=tuple(faults),
        toggles=toggles,
        error_tree=tree,
        rules=rules,
        subtask_types=tuple(sorted((str(k), str(v)) for k, v in kinds.items())),
    )


def load_scenario(source: str | Path) -> LoadedScenario:
    """Parse a scenario file (or YAML text) and resolve its cross references."""
    name = ""
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and source.endswith((".yaml", ".yml"))):
        path = Path(source)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ScenarioError(f"cannot read scenario: {exc}", str(path)) from None
        name = path.stem
    else:
        text = source
    try:
        data = load_yaml(text)
    except Exception as exc:  # yaml.YAMLError and friends
        mark = getattr(exc, "problem_mark", None)
        raise ScenarioError(f"unparseable scenario: {getattr(exc, 'problem', exc)}",
                            f"line {mark.line + 1}" if mark else None) from None
    return scenario_from_data(data, name)


def dump_scenario(loaded: LoadedScenario) -> str:
    return loaded.dumps()


def toolkit_spec(name: str, impl: str) -> ToolSpec:
    from ..tools import builtin_spec

    return builtin_spec(impl, name)
