"""Random error trees for the classification property and acceptance checks."""

from __future__ import annotations

import random

VOCAB = [f"k{i}" for i in range(24)] + ["tool", "role", "timeout", "schema", "team", "binding"]


def random_tree(rng: random.Random, max_depth: int = 4, max_leaves: int = 50) -> dict:
    """Nested node dicts: a root with pipeline and logic branches, leaves at depth 2..max_depth."""
    while True:
        tree = _draw(rng, max_depth, max_leaves)
        if count_leaves(tree) <= max_leaves:
            return tree


def _draw(rng: random.Random, max_depth: int, max_leaves: int) -> dict:
    counter = [0]
    leaves = [0]

    def node(depth: int) -> dict:
        counter[0] += 1
        # ids are shuffled-looking so that tie-breaks are not decided by creation order
        nid = f"n{rng.randrange(10**6):06d}_{counter[0]}"
        kw = rng.sample(VOCAB, rng.randint(0, 4))
        budget_left = max_leaves - leaves[0]
        grow = depth < 2 or (depth < max_depth and budget_left > 3 and rng.random() < 0.5)
        if not grow:
            leaves[0] += 1
            return {"node_id": nid, "label": nid, "keywords": kw, "remediation": "fix " + nid}
        kids = [node(depth + 1) for _ in range(rng.randint(1, 3 if budget_left > 6 else 1))]
        return {"node_id": nid, "label": nid, "keywords": kw, "children": kids}

    branches = []
    for name in ("pipeline", "logic"):
        leaves_before = leaves[0]
        kids = [node(2) for _ in range(rng.randint(1, 4))]
        assert leaves[0] > leaves_before
        branches.append({"node_id": name, "label": name, "keywords": rng.sample(VOCAB, rng.randint(0, 3)),
                         "children": kids})
    return {"node_id": "root", "label": "root", "keywords": [], "children": branches}


def count_leaves(data: dict) -> int:
    kids = data.get("children") or ()
    return 1 if not kids else sum(count_leaves(c) for c in kids)


def depth(data: dict) -> int:
    kids = data.get("children") or ()
    return 0 if not kids else 1 + max(depth(c) for c in kids)


def random_keywords(rng: random.Random, max_size: int = 12) -> set[str]:
    return set(rng.sample(VOCAB, rng.randint(0, max_size)))
