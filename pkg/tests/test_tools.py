import pytest

from builders import FIXTURES, echo_spec
from rolemesh.domain import ToolSpec
from rolemesh.tools import (
    BUILTINS,
    ToolContext,
    ToolFailure,
    builtin_spec,
    conforms,
    runtime,
    schema_matches,
    validate_chart,
)

CTX = ToolContext(FIXTURES)


def call(impl, **inputs):
    return BUILTINS[impl](inputs, CTX)


def test_table_load_copies_rows():
    out = call("table_load", table="sales")
    out["rows"][0]["units"] = -1
    assert FIXTURES["sales"][0]["units"] == 12
    with pytest.raises(ToolFailure):
        call("table_load", table="nope")


def test_filter_then_aggregate_by_hand():
    rows = call("row_filter", rows=FIXTURES["sales"], column="region", value="north")["rows"]
    assert [r["units"] for r in rows] == [12, 5, 9]
    assert call("aggregate", rows=rows, column="units", func="sum") == {"value": 26}
    assert call("aggregate", rows=rows, column="units", func="count") == {"value": 3}
    assert call("aggregate", rows=rows, column="units", func="mean") == {"value": 26 / 3}
    with pytest.raises(ToolFailure):
        call("aggregate", rows=rows, column="units", func="median")
    with pytest.raises(ToolFailure):
        call("aggregate", rows=[], column="units", func="sum")


def test_text_extract():
    assert call("text_extract", text="a1 b22", pattern=r"\d+") == {"matches": ["1", "22"]}
    with pytest.raises(ToolFailure):
        call("text_extract", text="x", pattern="(")


def test_chart_spec_validates():
    out = call("chart_spec", rows=FIXTURES["sales"][:2], kind="bar", x="month", y="units")
    assert validate_chart(out["chart"])
    assert not validate_chart({"kind": "donut"})
    with pytest.raises(ToolFailure):
        call("chart_spec", rows=[], kind="donut", x="a", y="b")


def test_identity_and_schema_matching():
    spec = echo_spec()
    assert runtime(spec, "identity").apply({"x": 7}, CTX) == {"x": 7}
    assert schema_matches("identity", spec)
    assert schema_matches("table_load", builtin_spec("table_load", "loader"))
    assert not schema_matches("table_load", ToolSpec("t", (("x", "text"),), (("rows", "rows"),)))
    with pytest.raises(KeyError):
        runtime(ToolSpec("mystery", (), ()))


@pytest.mark.parametrize("value,kind,ok", [
    ([{"a": 1}], "rows", True), ([1], "rows", False), (3, "number", True), (True, "number", False),
    ("s", "text", True), (["a"], "texts", True), (None, "text", False), ("?", "unknown", True),
])
def test_conforms(value, kind, ok):
    assert conforms(value, kind) is ok
