import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from builders import local_fix, scenario, strategy
from oracles import brute_force_classify
from rolemesh.bus import MONITOR, PLANNER, MessageBus
from rolemesh.errors import MonitorError, ProtocolError, ScenarioError, ScriptExhausted
from rolemesh.execution import ErrorReportDetailed, StatusReportNormal, extract_keywords
from rolemesh.memory import MemoryStore
from rolemesh.monitor import ErrorTree, Monitor, classify, collect_state
from rolemesh.reasoner import ScriptedReasoner
from treegen import random_keywords, random_tree

TREE = ErrorTree.default()
SPEC = scenario(agentset=("tasker", "extractor", "retriever", "painter"))


def detailed(task="select", worker="ret", message="boom", failure_class="tool_failure", logs=()):
    return ErrorReportDetailed(worker, task, tuple(logs), message, failure_class, (), (),
                               frozenset(extract_keywords(message, failure_class)))


def normal(worker, *task_ids, context=()):
    return StatusReportNormal(worker, tuple({"task_id": t, "output": {}} for t in task_ids), tuple(context))


def monitor(script=(), memory=None):
    return Monitor(TREE, ScriptedReasoner(list(script)), SPEC, memory)


# classification


def test_exact_leaf_bag_classifies_to_that_leaf():
    keywords = TREE.node("tool_timeout").keywords
    assert classify(keywords, TREE) == "tool_timeout"


def test_empty_keywords_fall_to_smallest_logic_leaf():
    leaf = classify(set(), TREE)
    assert TREE.branch_of(leaf) == "logic"
    assert leaf == min(c.node_id for c in TREE.node("logic").children)


def test_team_words_land_in_logic_branch():
    assert TREE.branch_of(classify({"constraint", "team", "role"}, TREE)) == "logic"


def test_start_node_restricts_descent():
    assert TREE.branch_of(classify(TREE.node("tool_failure").keywords, TREE, start="logic")) == "logic"


def test_default_tree_matches_brute_force_on_every_leaf_bag():
    data = TREE.to_data()
    for leaf in TREE.leaves():
        assert classify(leaf.keywords, TREE) == brute_force_classify(data, leaf.keywords) == leaf.node_id


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_descent_matches_brute_force(seed):
    rng = random.Random(seed)
    data = random_tree(rng)
    tree = ErrorTree.from_data(data)
    for _ in range(5):
        kw = random_keywords(rng)
        assert classify(kw, tree) == brute_force_classify(data, kw)


def test_tree_roundtrip():
    assert ErrorTree.loads(TREE.dumps()) == TREE


@pytest.mark.parametrize("mutate", ["branches", "duplicate", "shallow", "malformed"])
def test_invalid_trees(mutate):
    data = TREE.to_data()
    if mutate == "branches":
        data["children"][0]["node_id"] = "plumbing"
    elif mutate == "duplicate":
        data["children"][0]["children"][1]["node_id"] = data["children"][0]["children"][0]["node_id"]
    elif mutate == "shallow":
        data["children"][1] = {"node_id": "logic", "keywords": []}
    else:
        del data["children"][0]["node_id"]
    with pytest.raises(ScenarioError):
        ErrorTree.from_data(data)


# global state


def test_state_from_detailed_only():
    s = strategy()
    state = collect_state([detailed()], s)
    assert [(i.kind, i.value) for i in state.key_insights] == [
        ("failure_class", "tool_failure"), ("task", "select"), ("agent", "ret")]
    assert state.normal == ()


def test_state_requires_exactly_one_detailed():
    with pytest.raises(ProtocolError):
        collect_state([normal("ext", "load")], strategy())
    with pytest.raises(ProtocolError):
        collect_state([detailed(), detailed()], strategy())


def test_duplicate_insights_are_merged():
    state = collect_state([detailed(), normal("ext", "load"), normal("ext", "load")], strategy())
    pairs = [(i.kind, i.value) for i in state.key_insights]
    assert len(pairs) == len(set(pairs))
    assert [i.insight_id for i in state.key_insights] == [f"i{n + 1}" for n in range(len(pairs))]


def test_state_union_by_hand():
    # select depends on load; chart and total are not upstream of select
    reports = [
        detailed(message="failed near max_agents 3"),
        normal("ext", "load"),
        normal("lead", context=("note require_role painter",)),
        normal("pnt", "chart"),
    ]
    state = collect_state(reports, strategy(painter=True))
    assert {(i.kind, i.value) for i in state.key_insights} == {
        ("failure_class", "tool_failure"), ("task", "select"), ("agent", "ret"),
        ("constraint", "max_agents 3"), ("task", "load"), ("agent", "ext"),
        ("constraint", "require_role painter"),
    }
    assert len(state.normal) == 3


# verdicts


def test_binding_leaf_yields_rebind_instruction():
    m = monitor([local_fix(MONITOR, "total", patch={"action": "rebind", "param": "rows",
                                                    "binding": {"ref": "select.rows"}})])
    state = collect_state([detailed("total", message="unresolved upstream reference binding")], strategy())
    leaf = m.classify(state)
    assert leaf == "binding"
    v = m.adjudicate(state, leaf, strategy())
    assert v.is_instruction and v.branch == "pipeline" and v.steps[0]["action"] == "rebind"
    bus = MessageBus()
    for name in (PLANNER, MONITOR, "ret", "ext"):
        bus.register(name, worker=name not in (PLANNER, MONITOR))
    m.deliver(v, bus, 0)
    kinds = [msg.kind for msg in bus.sent()]
    assert kinds.count("ReplanTrigger") == 0 and kinds.count("Instruction") == 2


def test_logic_leaf_yields_recommendation_and_one_trigger():
    m = monitor()
    state = collect_state([detailed(message="forbidden role in team", failure_class="")], strategy())
    leaf = m.classify(state)
    v = m.adjudicate(state, leaf, strategy())
    assert v.kind == "recommendation" and TREE.branch_of(v.classified_leaf) == "logic"
    assert {s.target for s in v.recommendation.suggestions} == {"select", "ret"}
    bus = MessageBus()
    for name in (PLANNER, MONITOR):
        bus.register(name, worker=False)
    m.deliver(v, bus, 0)
    kinds = [msg.kind for msg in bus.sent()]
    assert kinds.count("ReplanTrigger") == 1 and kinds.count("Recommendation") == 1


def test_transient_retry_instruction():
    m = monitor([local_fix(MONITOR, "load", patch="retry")])
    state = collect_state([detailed("load", "ext", "connection reset", "transient")], strategy())
    v = m.adjudicate(state, m.classify(state), strategy())
    assert v.classified_leaf == "tool_failure" and v.steps == ({"action": "retry"},)


def test_reasoner_error_becomes_monitor_error():
    m = monitor()
    state = collect_state([detailed(message="tool failure")], strategy())
    with pytest.raises(MonitorError) as info:
        m.adjudicate(state, "tool_failure", strategy())
    assert isinstance(info.value.__cause__, ScriptExhausted)


def test_repeat_fault_on_same_task_escalates():
    m = monitor([local_fix(MONITOR, "select", patch="retry")])
    state = collect_state([detailed(message="tool failure")], strategy())
    first = m.adjudicate(state, "tool_failure", strategy())
    second = m.adjudicate(state, "tool_failure", strategy())
    assert first.is_instruction
    assert second.kind == "recommendation" and second.escalated_from == "tool_failure"
    assert TREE.branch_of(second.classified_leaf) == "logic"


def test_unsupported_monitor_action_escalates():
    m = monitor([local_fix(MONITOR, "select", patch={"action": "rewrite_everything"})])
    state = collect_state([detailed(message="tool failure")], strategy())
    assert m.adjudicate(state, "tool_failure", strategy()).kind == "recommendation"


def test_verdict_and_state_go_to_monitor_memory():
    memory = MemoryStore()
    m = monitor([local_fix(MONITOR, "select", patch="retry")], memory)
    state = m.collect_state([detailed(message="tool failure")], strategy())
    m.adjudicate(state, m.classify(state), strategy())
    tags = set().union(*(r.tags for r in memory.records(MONITOR, "short")))
    assert {"global_state", "verdict", "instruction"} <= tags
