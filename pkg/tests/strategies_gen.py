"""Hypothesis generators for random agent trees and strategies."""

from __future__ import annotations

from hypothesis import strategies as st

from rolemesh.domain import ROLES, AgentSpec, Binding, Strategy, TaskEntry

AGENT_IDS = [f"a{i}" for i in range(7)]
TASK_IDS = [f"t{i}" for i in range(10)]
TOOLS = ["table_load", "row_filter", "aggregate"]


@st.composite
def agent_trees(draw, max_agents=5):
    n = draw(st.integers(1, max_agents))
    ids = draw(st.permutations(AGENT_IDS))[:n]
    agents = [AgentSpec(ids[0], "tasker", draw(st.sampled_from(["p", "q"])), "t")]
    for i in range(1, n):
        parent = draw(st.sampled_from(ids[:i]))
        role = draw(st.sampled_from(ROLES))
        agents.append(AgentSpec(ids[i], role, draw(st.sampled_from(["p", "q"])), "t", parent))
    return draw(st.permutations(agents))


@st.composite
def strategies(draw, max_agents=5):
    agents = draw(agent_trees(max_agents))
    owners = [a.agent_id for a in agents]
    k = draw(st.integers(0, 6))
    tids = draw(st.permutations(TASK_IDS))[:k]
    lists: dict[str, list[TaskEntry]] = {aid: [] for aid in owners}
    for tid in tids:
        tool = draw(st.sampled_from(TOOLS))
        value = draw(st.sampled_from(["x", "y"]))
        lists[draw(st.sampled_from(owners))].append(TaskEntry(tid, tool, {"v": Binding.literal(value)}))
    return Strategy.build(agents, lists)


@st.composite
def strategy_pairs(draw):
    """Two strategies that share some structure, so diffs are not all-or-nothing."""
    s1 = draw(strategies())
    if draw(st.booleans()):
        return s1, draw(strategies())
    return s1, draw(mutations(s1))


@st.composite
def mutations(draw, s: Strategy):
    agents = list(s.agents)
    lists = {k: list(v) for k, v in s.task_lists}
    for _ in range(draw(st.integers(1, 4))):
        op = draw(st.sampled_from(["add_task", "drop_task", "edit_task", "swap_tasks", "add_agent",
                                   "drop_leaf", "edit_agent", "swap_children"]))
        owners = [a.agent_id for a in agents]
        if op == "add_task":
            used = {t.task_id for ts in lists.values() for t in ts}
            free = [t for t in TASK_IDS if t not in used]
            if free:
                aid = draw(st.sampled_from(owners))
                pos = draw(st.integers(0, len(lists[aid])))
                lists[aid].insert(pos, TaskEntry(free[0], draw(st.sampled_from(TOOLS))))
        elif op == "drop_task":
            full = [a for a in owners if lists[a]]
            if full:
                aid = draw(st.sampled_from(full))
                lists[aid].pop(draw(st.integers(0, len(lists[aid]) - 1)))
        elif op == "edit_task":
            full = [a for a in owners if lists[a]]
            if full:
                aid = draw(st.sampled_from(full))
                i = draw(st.integers(0, len(lists[aid]) - 1))
                t = lists[aid][i]
                lists[aid][i] = TaskEntry(t.task_id, t.tool, {"v": Binding.literal("z")}, t.output_key)
        elif op == "swap_tasks":
            full = [a for a in owners if len(lists[a]) > 1]
            if full:
                aid = draw(st.sampled_from(full))
                lists[aid].reverse()
        elif op == "add_agent":
            free = [a for a in AGENT_IDS if a not in owners]
            if free:
                agents.append(AgentSpec(free[0], draw(st.sampled_from(ROLES)), "p", "t",
                                        draw(st.sampled_from(owners))))
                lists[free[0]] = []
        elif op == "drop_leaf":
            leaves = [a for a in agents if a.parent is not None and not any(b.parent == a.agent_id for b in agents)]
            if leaves:
                gone = draw(st.sampled_from(leaves))
                agents.remove(gone)
                lists.pop(gone.agent_id)
        elif op == "edit_agent":
            i = draw(st.integers(0, len(agents) - 1))
            a = agents[i]
            agents[i] = AgentSpec(a.agent_id, a.role, a.profile + "!", a.template_id, a.parent)
        else:
            parents = [a.agent_id for a in agents if sum(b.parent == a.agent_id for b in agents) > 1]
            if parents:
                pid = draw(st.sampled_from(parents))
                kids = [a for a in agents if a.parent == pid]
                rest = [a for a in agents if a.parent != pid]
                agents = rest + list(reversed(kids))
    return Strategy.build(agents, lists)
