"""Built-in fixture tools over in-memory tables.

Each implementation declares the schema it satisfies; scenario toolkits may
expose one implementation under several tool names (useful as drop-in
alternatives when a monitor swaps a failing tool).
"""

from __future__ import annotations

import re
import statistics
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

from .domain import ToolSpec

Rows = list[dict]


class ToolFailure(Exception):
    """Raised by a tool implementation; ``failure_class`` labels the cause."""

    def __init__(self, message: str, failure_class: str = "tool_failure"):
        self.failure_class = failure_class
        super().__init__(message)


@dataclass
class ToolContext:
    fixtures: Mapping[str, Rows] = field(default_factory=dict)
    seed: int = 0
    task_id: str = ""


Apply = Callable[[dict, ToolContext], dict]


@dataclass(frozen=True)
class ToolRuntime:
    spec: ToolSpec
    apply: Apply
    fault_hooks: tuple = ()

    def with_hooks(self, *hooks) -> "ToolRuntime":
        return ToolRuntime(self.spec, self.apply, self.fault_hooks + tuple(hooks))


def _table_load(inputs: dict, ctx: ToolContext) -> dict:
    name = inputs["table"]
    if name not in ctx.fixtures:
        raise ToolFailure(f"table {name} not found in fixtures", "tool_failure")
    return {"rows": [dict(r) for r in ctx.fixtures[name]]}


def _row_filter(inputs: dict, ctx: ToolContext) -> dict:
    col, value = inputs["column"], inputs["value"]
    return {"rows": [dict(r) for r in inputs["rows"] if str(r.get(col)) == str(value)]}


_AGG = {
    "sum": sum,
    "count": len,
    "min": min,
    "max": max,
    "mean": statistics.fmean,
}


def _aggregate(inputs: dict, ctx: ToolContext) -> dict:
    func = inputs["func"]
    if func not in _AGG:
        raise ToolFailure(f"unknown aggregate {func}", "tool_failure")
    rows = inputs["rows"]
    if func == "count":
        return {"value": len(rows)}
    values = [r[inputs["column"]] for r in rows if inputs["column"] in r]
    if not values:
        raise ToolFailure(f"no values in column {inputs['column']}", "tool_failure")
    return {"value": _AGG[func](values)}


def _text_extract(inputs: dict, ctx: ToolContext) -> dict:
    try:
        pattern = re.compile(inputs["pattern"])
    except re.error as exc:
        raise ToolFailure(f"bad pattern: {exc}", "tool_failure") from None
    return {"matches": pattern.findall(str(inputs["text"]))}


CHART_KINDS = ("bar", "line", "pie", "scatter")


def _chart_spec(inputs: dict, ctx: ToolContext) -> dict:
    kind = inputs["kind"]
    if kind not in CHART_KINDS:
        raise ToolFailure(f"unsupported chart kind {kind}", "tool_failure")
    x, y = inputs["x"], inputs["y"]
    series = [{"x": r.get(x), "y": r.get(y)} for r in inputs["rows"]]
    return {"chart": {"kind": kind, "series": series, "axes": {"x": x, "y": y}}}


def validate_chart(chart: Any) -> bool:
    return (
        isinstance(chart, Mapping)
        and chart.get("kind") in CHART_KINDS
        and isinstance(chart.get("series"), list)
        and all(isinstance(p, Mapping) and set(p) == {"x", "y"} for p in chart["series"])
        and isinstance(chart.get("axes"), Mapping)
        and set(chart["axes"]) == {"x", "y"}
    )


def _identity(inputs: dict, ctx: ToolContext) -> dict:
    return dict(inputs)


BUILTIN_SCHEMAS: dict[str, tuple[dict, dict] | None] = {
    "table_load": ({"table": "text"}, {"rows": "rows"}),
    "row_filter": ({"rows": "rows", "column": "text", "value": "text"}, {"rows": "rows"}),
    "aggregate": ({"rows": "rows", "column": "text", "func": "text"}, {"value": "number"}),
    "text_extract": ({"text": "text", "pattern": "text"}, {"matches": "texts"}),
    "chart_spec": ({"rows": "rows", "kind": "text", "x": "text", "y": "text"}, {"chart": "chart"}),
    "identity": None,  # passes inputs through; schema comes from the ToolSpec
}
BUILTINS: dict[str, Apply] = {
    "table_load": _table_load,
    "row_filter": _row_filter,
    "aggregate": _aggregate,
    "text_extract": _text_extract,
    "chart_spec": _chart_spec,
    "identity": _identity,
}


def builtin_spec(impl: str, name: str | None = None) -> ToolSpec:
    ins, outs = BUILTIN_SCHEMAS[impl]
    return ToolSpec(name or impl, tuple(ins.items()), tuple(outs.items()))


def schema_matches(impl: str, spec: ToolSpec) -> bool:
    schema = BUILTIN_SCHEMAS[impl]
    if schema is None:
        return [n for n, _ in spec.input_schema] == [n for n, _ in spec.output_schema] and \
            spec.input_schema == spec.output_schema
    return spec.inputs == schema[0] and spec.outputs == schema[1]


def runtime(spec: ToolSpec, impl: str | None = None) -> ToolRuntime:
    impl = impl or spec.name
    if impl not in BUILTINS:
        raise KeyError(f"no builtin tool {impl!r}")
    return ToolRuntime(spec, BUILTINS[impl])


# semantic type checks for output conformance
TYPE_CHECKS: dict[str, Callable[[Any], bool]] = {
    "rows": lambda v: isinstance(v, list) and all(isinstance(r, Mapping) for r in v),
    "number": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
    "text": lambda v: isinstance(v, str),
    "texts": lambda v: isinstance(v, list) and all(isinstance(s, str) for s in v),
    "chart": validate_chart,
}


def conforms(value: Any, semantic_type: str) -> bool:
    check = TYPE_CHECKS.get(semantic_type)
    return True if check is None else check(value)
