"""Independent reference implementations used to check the production code.

Each oracle is written from the rule it checks, never by calling the code
under test, so a shared bug cannot hide in both.
"""

from __future__ import annotations

from itertools import product


# memory


def oracle_score(age, importance, tags, query, weights=(1.0, 1.0, 1.0), decay=0.99):
    tags, query = set(tags), set(query)
    union = tags | query
    overlap = len(tags & query) / len(union) if union else 0.0
    return weights[0] * decay ** max(0, age) + weights[1] * importance + weights[2] * overlap


def oracle_rank(records, query, now, weights=(1.0, 1.0, 1.0), decay=0.99):
    """records: dicts with rec_id, tags, importance, created_round, last_access_round."""
    scored = []
    for r in records:
        s = oracle_score(now - r["last_access_round"], r["importance"], r["tags"], query, weights, decay)
        scored.append((s, r))
    # bubble sort on an explicit comparison: higher score, newer, smaller id
    items = list(scored)
    for i in range(len(items)):
        for j in range(len(items) - 1 - i):
            a, b = items[j], items[j + 1]
            if _before(b, a):
                items[j], items[j + 1] = b, a
    return [r["rec_id"] for _, r in items]


def _before(a, b) -> bool:
    (sa, ra), (sb, rb) = a, b
    if sa != sb:
        return sa > sb
    if ra["created_round"] != rb["created_round"]:
        return ra["created_round"] > rb["created_round"]
    return ra["rec_id"] < rb["rec_id"]


def oracle_promotions(records, now, theta_s=0.5, theta_l=0.7, min_age=2):
    """Expected (rec_id, from, to) moves; records carry tier and tier_round."""
    out = []
    for r in sorted(records, key=lambda r: r["rec_id"]):
        age = now - r["tier_round"]
        if r["tier"] == "sensory" and age >= 1:
            out.append((r["rec_id"], "sensory", "short" if r["importance"] >= theta_s else None))
        elif r["tier"] == "short" and age >= min_age and r["importance"] >= theta_l:
            out.append((r["rec_id"], "short", "long"))
    return out


# error tree


def brute_force_classify(tree_data, keywords):
    """Enumerate every root-to-leaf path and pick the best one.

    A path is scored level by level with (similarity, reversed id), and paths
    are compared lexicographically. Greedy descent picks the same leaf, but
    this oracle never descends greedily. Bags are recomputed from raw dicts.
    """
    query = {k.lower() for k in keywords}

    def bag(node):
        out = {k.lower() for k in node.get("keywords", ())}
        for c in node.get("children", ()) or ():
            out |= bag(c)
        return out

    def sim(node):
        b = bag(node)
        u = b | query
        return len(b & query) / len(u) if u else 0.0

    def paths(node):
        kids = node.get("children") or ()
        if not kids:
            return [[node]]
        return [[node] + p for c in kids for p in paths(c)]

    best_key, best_leaf = None, None
    for p in paths(tree_data):
        key = [(sim(n), _Rev(n["node_id"])) for n in p[1:]]
        if best_key is None or _seq_greater(key, best_key):
            best_key, best_leaf = key, p[-1]["node_id"]
    return best_leaf


def _seq_greater(a, b):
    for x, y in zip(a, b):
        if x[0] != y[0]:
            return x[0] > y[0]
        if x[1].s != y[1].s:
            return x[1].s < y[1].s
    return len(a) > len(b)


class _Rev:
    def __init__(self, s):
        self.s = s


# strategies


def field_paths(s1, s2):
    """(path, change) pairs from a field-by-field walk over raw strategy data.

    ``insert`` marks an entity present only in ``s1``.
    """
    d1, d2 = s1.to_data(), s2.to_data()
    ag1 = {a["agent_id"]: a for a in d1["agents"]}
    ag2 = {a["agent_id"]: a for a in d2["agents"]}
    out = set()
    for aid in set(ag1) | set(ag2):
        a, b = ag1.get(aid), ag2.get(aid)
        if b is None:
            out.add((f"agents/{aid}", "insert"))
        elif a is None:
            out.add((f"agents/{aid}", "remove"))
        elif a != b:
            out.add((f"agents/{aid}", "modify"))
        if a is not None and b is not None:
            k1 = [x["agent_id"] for x in d1["agents"] if x["parent"] == aid]
            k2 = [x["agent_id"] for x in d2["agents"] if x["parent"] == aid]
            if [k for k in k1 if k in k2] != [k for k in k2 if k in k1]:
                out.add((f"agents/{aid}/children", "reorder"))
    tl1, tl2 = d1["task_lists"], d2["task_lists"]
    for aid in set(tl1) | set(tl2):
        l1 = tl1.get(aid, [])
        l2 = tl2.get(aid, [])
        m1 = {t["task_id"]: t for t in l1}
        m2 = {t["task_id"]: t for t in l2}
        for tid in set(m1) | set(m2):
            if tid not in m2:
                out.add((f"tasks/{aid}/{tid}", "insert"))
            elif tid not in m1:
                out.add((f"tasks/{aid}/{tid}", "remove"))
            elif m1[tid] != m2[tid]:
                out.add((f"tasks/{aid}/{tid}", "modify"))
        o1 = [t["task_id"] for t in l1 if t["task_id"] in m2]
        o2 = [t["task_id"] for t in l2 if t["task_id"] in m1]
        if o1 != o2:
            out.add((f"tasks/{aid}/order", "reorder"))
    return out


def all_subsets(items):
    items = list(items)
    for mask in product((0, 1), repeat=len(items)):
        yield [x for x, m in zip(items, mask) if m]
