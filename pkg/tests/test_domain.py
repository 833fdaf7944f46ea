import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from builders import lit, ref, scenario, strategy, team
from oracles import field_paths
from rolemesh.domain import (
    AgentSpec,
    Binding,
    DiffItem,
    ScenarioSpec,
    Strategy,
    TaskEntry,
    ToolSpec,
    apply_diff,
    diff_items,
    errors_only,
    parse_constraint,
    strategy_diff_paths,
    topological_tasks,
    validate_strategy,
    validate_tasks,
    validate_team,
)
from rolemesh.errors import DiffConflict, ScenarioInvalid, StructureError
from strategies_gen import agent_trees, strategies, strategy_pairs


# validate_team


def test_permitted_team_has_no_findings():
    assert validate_team(team(), scenario()) == []


def test_painter_outside_agentset_is_compliance_error():
    painter = AgentSpec("pnt", "painter", "charts", "p", "lead")
    findings = validate_team(team(painter), scenario())
    assert [(f.check, f.severity, f.subject) for f in findings] == [("compliance", "error", "pnt")]


def test_duplicate_extractor_profile_is_redundancy_warning():
    dup = AgentSpec("ext2", "extractor", "loads table:sales", "extractor_v1", "lead")
    agents = (team()[0], team()[1], dup, team()[2])
    findings = validate_team(agents, scenario())
    assert [(f.check, f.severity, f.subject) for f in findings] == [
        ("system_individual_coupling", "warning", "ext2")
    ]
    assert "redundant" in findings[0].detail


@pytest.mark.parametrize("agents", [
    (AgentSpec("a", "tasker"), AgentSpec("b", "tasker")),
    (AgentSpec("a", "tasker", parent="b"), AgentSpec("b", "extractor", parent="a")),
    (AgentSpec("a", "tasker"), AgentSpec("b", "extractor", parent="ghost")),
    (),
])
def test_malformed_tree_raises(agents):
    with pytest.raises(StructureError):
        validate_team(agents, scenario())


def test_constraints_are_checked():
    spec = scenario(constraints=("max_agents 2", "require_role painter", "forbid_role retriever"))
    checks = {(f.check, f.subject, f.detail.split()[0]) for f in validate_team(team(), spec)}
    assert ("compliance", "lead", "team") in checks
    assert ("compliance", "lead", "required") in checks
    assert ("compliance", "ret", "role") in checks


def test_extractor_after_retriever_is_ordering_error():
    ordered = (team()[0], team()[2], team()[1])
    findings = errors_only(validate_team(ordered, scenario()))
    assert [(f.check, f.subject) for f in findings] == [("system_individual_coupling", "ext")]


def test_unknown_table_in_profile():
    odd = AgentSpec("ext", "extractor", "reads table:nope", "e", "lead")
    findings = validate_team((team()[0], odd, team()[2]), scenario())
    assert [(f.check, f.subject) for f in findings] == [("scenario_compatibility", "ext")]


def test_lonely_worker_has_no_partner():
    findings = validate_team(team()[:2], scenario())
    assert [(f.check, f.subject) for f in findings] == [("system_individual_coupling", "ext")]


def test_parse_constraint():
    assert parse_constraint("max_agents 4") == ("max_agents", "4")
    assert parse_constraint("be nice") is None


# validate_tasks


def test_empty_task_list_is_clean():
    assert validate_tasks({}, scenario().toolkit) == []


def test_missing_output_field_is_io_error():
    a = TaskEntry("a", "aggregate", {"rows": ref("z", "rows"), "column": lit("c"), "func": lit("sum")})
    b = TaskEntry("b", "row_filter", {"rows": ref("a", "rows"), "column": lit("c"), "value": lit("v")},
                  depends_on=("a",))
    lists = {"ret": (TaskEntry("z", "table_load", {"table": lit("sales")}), a, b)}
    findings = validate_tasks(lists, scenario().toolkit)
    assert [(f.check, f.subject) for f in findings] == [("task_interdependency", "a"), ("io_parameter_logic", "b")]


def test_cycle_is_interdependency_error():
    lists = {"ext": (TaskEntry("a", "table_load", {"table": lit("x")}, depends_on=("b",)),
                     TaskEntry("b", "table_load", {"table": lit("x")}, depends_on=("a",)))}
    findings = validate_tasks(lists, scenario().toolkit)
    assert [(f.check, f.subject, f.detail) for f in findings] == [("task_interdependency", "a", "cycle a,b")]


def test_unknown_tool_and_unbound_inputs():
    lists = {"ext": (TaskEntry("a", "nope"), TaskEntry("b", "row_filter", {"rows": lit([])}))}
    details = [f.detail for f in validate_tasks(lists, scenario().toolkit)]
    assert details == ["unknown tool nope", "input column is unbound", "input value is unbound"]


def test_type_mismatch_between_tasks():
    lists = {"ext": (TaskEntry("a", "aggregate", {"rows": lit([]), "column": lit("c"), "func": lit("sum")}),
                     TaskEntry("b", "row_filter", {"rows": ref("a", "value"), "column": lit("c"),
                                                   "value": lit("v")}, depends_on=("a",)))}
    findings = validate_tasks(lists, scenario().toolkit)
    assert [f.detail for f in findings] == ["input rows expects rows but a.value is number"]


def test_require_tool_constraint():
    findings = validate_tasks(strategy(), scenario().toolkit, ("require_tool chart_spec",))
    assert [(f.check, f.subject) for f in findings] == [("compliance", "chart_spec")]


def test_fixture_strategy_is_valid():
    assert validate_strategy(strategy(), scenario()) == []


@settings(max_examples=60, deadline=None)
@given(strategies(), st.randoms(use_true_random=False))
def test_validators_are_pure_and_order_independent(s, rnd):
    spec = scenario(agentset=("tasker", "extractor", "retriever", "painter"))
    first = validate_strategy(s, spec)
    # call other validators in between, then again
    validate_tasks(s, spec.toolkit)
    assert validate_strategy(s, spec) == first
    lists = list(s.task_lists)
    rnd.shuffle(lists)
    assert sorted(validate_tasks(dict(lists), spec.toolkit), key=repr) == \
        sorted(validate_tasks(s, spec.toolkit), key=repr)


# strategy values


def test_strategy_roundtrip_and_invariants():
    s = strategy(painter=True, round=2)
    assert Strategy.loads(s.dumps()) == s
    assert s.owner_of("total") == "ret"
    assert [a.agent_id for a in s.children("lead")] == ["ext", "ret", "pnt"]
    with pytest.raises(ScenarioInvalid):
        Strategy.build(team(), {}, round=-1)
    with pytest.raises(ScenarioInvalid):
        Strategy.build(team(), {}, provenance="guessed")


def test_binding_forms():
    assert Binding.from_data({"ref": "a.rows"}).ref_task == "a"
    assert Binding.from_data(3) == Binding.literal(3)
    with pytest.raises(ScenarioInvalid):
        Binding("ref", "no_field")


def test_scenario_roundtrip_and_checks():
    spec = scenario()
    assert ScenarioSpec.loads(spec.dumps()) == spec
    with pytest.raises(ScenarioInvalid):
        scenario(agentset=("tasker", "wizard"))
    with pytest.raises(ScenarioInvalid):
        ToolSpec("bad name", (), ())


def test_topological_order_respects_dependencies():
    order = [t.task_id for _, t in topological_tasks(strategy(painter=True))]
    assert order.index("load") < order.index("select") < order.index("total")
    assert order.index("select") < order.index("chart")


# structural diff


def test_identical_strategies_have_no_diff():
    assert strategy_diff_paths(strategy(), strategy()) == []


def test_single_inserted_task_path():
    s1 = strategy()
    lead = dict(s1.task_lists)
    lead["lead"] = (TaskEntry("t9", "table_load", {"table": lit("sales")}),)
    s2 = Strategy.build(s1.agents, lead)
    changes = strategy_diff_paths(s2, s1)
    assert [(c.path, c.change) for c in changes] == [("tasks/lead/t9", "insert")]
    items = diff_items(s2, s1)
    assert len(items) == 1 and items[0].change == "insert"


@settings(max_examples=200, deadline=None)
@given(strategy_pairs())
def test_diff_paths_match_field_oracle(pair):
    s1, s2 = pair
    got = {(c.path, c.change) for c in strategy_diff_paths(s1, s2)}
    assert got == field_paths(s1, s2)


@settings(max_examples=200, deadline=None)
@given(strategy_pairs(), st.randoms(use_true_random=False))
def test_apply_diff_roundtrip(pair, rnd):
    s_new, s_old = pair
    items = diff_items(s_new, s_old)
    rnd.shuffle(items)
    patched = apply_diff(s_old, items)
    assert patched.structure() == s_new.structure()
    assert strategy_diff_paths(patched, s_new) == []


@settings(max_examples=50, deadline=None)
@given(agent_trees())
def test_tree_order_is_depth_first(agents):
    s = Strategy.build(agents, {})
    seen = set()
    for a in s.agents:
        assert a.parent is None or a.parent in seen
        seen.add(a.agent_id)


def test_apply_diff_conflicts():
    s = strategy()
    with pytest.raises(DiffConflict):
        apply_diff(s, [DiffItem("d1", "agents/ghost", "remove")])
    with pytest.raises(DiffConflict):
        apply_diff(s, [DiffItem("d1", "tasks/ret/nope", "modify", None, {"task": {"task_id": "nope"}})])
    with pytest.raises(DiffConflict):
        apply_diff(s, [DiffItem("d1", "bogus", "insert")])
    frag = {"task": TaskEntry("other", "table_load").to_data()}
    with pytest.raises(DiffConflict):
        apply_diff(s, [DiffItem("d1", "tasks/ext/load", "modify", None, frag)])
