"""Per-tree polynomial evaluation baseline.

Each tree becomes a sum of leaf terms: a term multiplies the decision
literals along the root-to-leaf path (negated where the path takes the
non-firing side) with the leaf's label bit pattern.  Exactly one term is
live for any decision assignment, so the XOR of all terms yields the
chosen label's bits.

The label bits for one tree are packed across SIMD slots so each boolean
operation covers the whole label at once, but unlike the staged pipeline
there is no packing across branches: decisions are pulled out of the
preorder decision vector one branch at a time.  Comparison is shared with
the staged pipeline so the two are measured over identical front ends.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .forest import Forest, compute_props
from .vm import PackedVec, VecMachine


@dataclass(frozen=True)
class PolyTerm:
    path: tuple[tuple[int, bool], ...]
    label_index: int


@dataclass(frozen=True)
class PolyTree:
    terms: tuple[PolyTerm, ...]


def label_bit_width(n_labels: int) -> int:
    return max(1, (n_labels - 1).bit_length())


def poly_compile(forest: Forest) -> tuple[PolyTree, ...]:
    """One term per leaf, taken straight from the indexed leaf paths."""
    props = compute_props(forest)
    trees = []
    for start, end in forest.tree_leaf_spans:
        terms = tuple(
            PolyTerm(path=props.leaf_paths[i],
                     label_index=forest.leaves[i].label_index)
            for i in range(start, end))
        trees.append(PolyTree(terms=terms))
    return tuple(trees)


def poly_eval(ptrees: tuple[PolyTree, ...], decisions: PackedVec | None,
              n_labels: int, vm: VecMachine) -> list[PackedVec]:
    """Evaluate every tree polynomial against a preorder decision vector.

    Returns one width-w vector of label bits per tree (w = label bit
    count, most significant first).  Each decision literal is extracted
    once per branch with a rotation and broadcast across the label slots;
    path products are combined pairwise so term depth stays logarithmic in
    the path length.  `decisions` may be None only for branchless forests.
    """
    w = label_bit_width(n_labels)
    ones = vm.plain(np.ones(w, dtype=np.uint8))
    pos_cache: dict[int, PackedVec] = {}
    neg_cache: dict[int, PackedVec] = {}

    def literal(branch: int, polarity: bool) -> PackedVec:
        if decisions is None:
            raise ValueError("a decision vector is required for non-leaf terms")
        cache = pos_cache if polarity else neg_cache
        if branch not in cache:
            if branch not in pos_cache:
                picked = vm.rotate(decisions, branch)
                picked = vm.truncate(picked, 1)
                pos_cache[branch] = vm.replicate_extend(picked, w)
            if not polarity:
                neg_cache[branch] = vm.add(pos_cache[branch], ones)
        return cache[branch]

    def pattern(label_index: int) -> PackedVec:
        bits = [(label_index >> (w - 1 - i)) & 1 for i in range(w)]
        return vm.plain(np.asarray(bits, dtype=np.uint8))

    out = []
    for ptree in ptrees:
        acc = None
        for term in ptree.terms:
            factors = [literal(b, pol) for b, pol in term.path]
            if factors:
                selected = kernels.mult_all(factors, vm)
                contrib = vm.mult(selected, pattern(term.label_index))
            else:
                contrib = pattern(term.label_index)
            acc = contrib if acc is None else vm.add(acc, contrib)
        out.append(acc)
    return out


def decode_label_bits(bits: np.ndarray) -> int:
    """Label index from a decrypted width-w bit pattern (MSB first)."""
    value = 0
    for bit in np.asarray(bits, dtype=np.uint8):
        value = (value << 1) | int(bit)
    return value
