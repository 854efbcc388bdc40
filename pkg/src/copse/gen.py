"""Seeded generation of forests and queries for checking and benchmarking."""

from __future__ import annotations

import random
from decimal import Decimal

from .forest import Branch, Forest, Leaf, Node, compute_props, parse_forest

#: Canonical two-feature demo tree: five branches over features x=0 and
#: y=1 (multiplicities 2 and 3), six leaves labelled L0..L5, longest path
#: three branches.  The query (x, y) = (0, 5) lands on L4.
DEMO_FOREST = (
    "labels L0 L1 L2 L3 L4 L5\n"
    "branch 1 2 branch 0 3 branch 1 1 leaf 0 leaf 1 "
    "branch 0 8 leaf 2 leaf 3 branch 1 6 leaf 4 leaf 5\n"
)


class _MutLeaf:
    __slots__ = ("depth",)

    def __init__(self, depth: int):
        self.depth = depth


class _MutBranch:
    __slots__ = ("feature", "units", "left", "right")

    def __init__(self, feature: int, units: int, left, right):
        self.feature = feature
        self.units = units
        self.left = left
        self.right = right


def _freeze(node, rng: random.Random, n_labels: int, frac_bits: int) -> Node:
    if isinstance(node, _MutLeaf):
        return Leaf(label_index=rng.randrange(n_labels))
    scale = Decimal(1 << frac_bits)
    return Branch(
        feature_index=node.feature,
        threshold=Decimal(node.units) / scale,
        left=_freeze(node.left, rng, n_labels, frac_bits),
        right=_freeze(node.right, rng, n_labels, frac_bits),
    )


def _expandable(root, max_depth: int) -> list[tuple]:
    """(parent, side) handles of leaves that may still become branches."""
    out = []
    stack = [(None, None, root)]
    while stack:
        parent, side, node = stack.pop()
        if isinstance(node, _MutLeaf):
            if node.depth < max_depth:
                out.append((parent, side, node))
        else:
            stack.append((node, "left", node.left))
            stack.append((node, "right", node.right))
    return out


def _grow(trees: list, rng: random.Random, n_features: int, p: int,
          max_depth: int, budget: int) -> None:
    """Expand random leaves into branches until the branch budget is spent."""
    while budget > 0:
        candidates = []
        for root_idx, root in enumerate(trees):
            candidates.extend((root_idx,) + handle
                              for handle in _expandable(root, max_depth))
        if not candidates:
            break
        root_idx, parent, side, leaf = rng.choice(candidates)
        branch = _MutBranch(
            feature=rng.randrange(n_features),
            units=rng.randrange(1 << p),
            left=_MutLeaf(leaf.depth + 1),
            right=_MutLeaf(leaf.depth + 1),
        )
        if parent is None:
            trees[root_idx] = branch
        else:
            setattr(parent, side, branch)
        budget -= 1


def random_forest(rng: random.Random, max_trees: int = 5, max_depth: int = 8,
                  max_branches: int = 64, n_features: int | None = None,
                  n_labels: int | None = None, p: int = 8,
                  frac_bits: int = 0) -> Forest:
    """A random forest within the given shape envelope.

    Single-leaf trees are legal and occur naturally when the branch budget
    runs out before every tree has been expanded.
    """
    n_trees = rng.randint(1, max_trees)
    n_features = n_features or rng.randint(1, 6)
    n_labels = n_labels or rng.randint(2, 6)
    trees: list = [_MutLeaf(0) for _ in range(n_trees)]
    budget = rng.randint(0, max_branches)
    _grow(trees, rng, n_features, p, max_depth, budget)
    labels = tuple(f"C{i}" for i in range(n_labels))
    return Forest.build(labels, tuple(_freeze(t, rng, n_labels, frac_bits)
                                      for t in trees))


def exact_shape_forest(rng: random.Random, branches: int, depth: int,
                       n_trees: int, n_features: int = 2, n_labels: int = 3,
                       p: int = 8, frac_bits: int = 0) -> Forest:
    """A forest with exactly `branches` branch nodes and max level `depth`.

    The first tree carries a spine of `depth` chained branches so the
    forest's level is exact; remaining branches are spread randomly
    without exceeding it.  Requires branches >= depth + (n_trees - 1).
    """
    if depth < 1 or branches < depth + (n_trees - 1):
        raise ValueError("branch budget too small for the requested shape")
    trees: list = []
    spine: object = _MutLeaf(depth)
    # Cycle the spine's features so every feature index is exercised.
    for k in range(depth, 0, -1):
        spine = _MutBranch(k % n_features, rng.randrange(1 << p),
                           spine, _MutLeaf(k))
    trees.append(spine)
    used = depth
    for _ in range(1, n_trees):
        trees.append(_MutBranch(rng.randrange(n_features), rng.randrange(1 << p),
                                _MutLeaf(1), _MutLeaf(1)))
        used += 1
    _grow(trees, rng, n_features, p, depth, branches - used)
    labels = tuple(f"C{i}" for i in range(n_labels))
    forest = Forest.build(labels, tuple(_freeze(t, rng, n_labels, frac_bits)
                                        for t in trees))
    props = compute_props(forest)
    assert props.b == branches and props.d == depth
    return forest


#: Shape sweep used for depth/branching/precision trend measurements:
#: (name, max level, precision, trees, branches).
MICRO_SHAPES = (
    ("depth4", 4, 8, 2, 15),
    ("depth5", 5, 8, 2, 15),
    ("depth6", 6, 8, 2, 15),
    ("width55", 5, 8, 2, 10),
    ("width78", 5, 8, 2, 15),
    ("width677", 5, 8, 3, 20),
    ("prec8", 5, 8, 2, 15),
    ("prec16", 5, 16, 2, 15),
)


def micro_models(seed: int = 1107) -> list[tuple[str, int, Forest]]:
    """The eight named micro shapes as (name, precision, forest) triples."""
    out = []
    for name, depth, p, n_trees, branches in MICRO_SHAPES:
        rng = random.Random(f"{seed}:{name}")
        out.append((name, p,
                    exact_shape_forest(rng, branches=branches, depth=depth,
                                       n_trees=n_trees, n_features=2,
                                       n_labels=3, p=p)))
    return out


def random_query(rng: random.Random, n_features: int, p: int,
                 frac_bits: int = 0) -> dict[int, Decimal]:
    scale = Decimal(1 << frac_bits)
    return {f: Decimal(rng.randrange(1 << p)) / scale for f in range(n_features)}


def demo_forest() -> Forest:
    return parse_forest(DEMO_FOREST)
