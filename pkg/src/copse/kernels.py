"""Packed algorithmic kernels: integer comparison, diagonal matmul, AND-tree.

These are the three subroutines the inference pipeline is built from.  All
of them operate on `PackedVec` slots through a `VecMachine`, so operation
counts and multiplicative depth fall out of the ledger rather than being
estimated.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .vm import PackedVec, VecMachine


class KernelError(Exception):
    pass


def sec_comp(a_planes: Sequence[PackedVec], b_planes: Sequence[PackedVec],
             vm: VecMachine) -> PackedVec:
    """Slotwise strict greater-than over bit-transposed unsigned integers.

    Both inputs are sequences of bit planes, most significant first; slot j
    of the result is 1 iff value_a(j) > value_b(j).  The comparison is
    lexicographic over the planes: split the bit range in halves and
    combine as  gt = gt_hi OR (eq_hi AND gt_lo),  eq = eq_hi AND eq_lo.
    The two OR operands cannot both fire (gt_hi implies not eq_hi), so the
    outermost combine uses a free XOR in place of the OR's extra product;
    inner combines keep the OR form.  With both operand sets encrypted the
    product depth lands at exactly 2*ceil(lg p) for power-of-two p, within
    the comparator's documented 2*ceil(lg p) + 1 envelope.
    """
    p = len(a_planes)
    if p < 1 or len(b_planes) != p:
        raise KernelError(
            f"precision mismatch: {p} planes vs {len(b_planes)}")
    n = len(a_planes[0])
    for plane in (*a_planes, *b_planes):
        if len(plane) != n:
            raise KernelError("all planes must have the same slot count")

    ones = vm.plain(np.ones(n, dtype=np.uint8))
    not_b = [vm.add(b, ones) for b in b_planes]
    eq_bit = [vm.add(a, nb) for a, nb in zip(a_planes, not_b)]

    def compare(lo: int, hi: int, need_eq: bool, top: bool):
        """(gt, eq) over bit positions lo..hi; eq is None unless needed."""
        if lo == hi:
            gt = vm.mult(a_planes[lo], not_b[lo])
            return gt, (eq_bit[lo] if need_eq else None)
        mid = lo + (hi - lo + 2) // 2
        g_hi, e_hi = compare(lo, mid - 1, True, False)
        g_lo, e_lo = compare(mid, hi, need_eq, False)
        both = vm.mult(e_hi, g_lo)
        if top:
            gt = vm.add(g_hi, both)
        else:
            gt = vm.add(vm.add(g_hi, both), vm.mult(g_hi, both))
        eq = vm.mult(e_hi, e_lo) if need_eq else None
        return gt, eq

    gt, _ = compare(0, p - 1, False, True)
    return gt


def mat_mul(diagonals: Sequence[PackedVec], rows: int, v: PackedVec,
            vm: VecMachine) -> PackedVec:
    """Boolean matrix-vector product in generalized-diagonal form.

    Diagonal i is multiplied slotwise with v rotated left by i, and the
    partial products are XOR-summed; with at most one 1 per matrix row the
    XOR sum equals the integer sum.  The rotated vector is cyclically
    extended when the matrix is taller than it is wide and truncated when
    wider than tall.  Costs one rotation and one product per diagonal and
    a single layer of products regardless of shape.
    """
    cols = len(diagonals)
    if len(v) != cols:
        raise KernelError(f"vector length {len(v)} != matrix columns {cols}")
    for diag in diagonals:
        if len(diag) != rows:
            raise KernelError("diagonal length must equal the row count")

    acc = None
    for i, diag in enumerate(diagonals):
        w = vm.rotate(v, i)
        if rows > cols:
            w = vm.replicate_extend(w, rows)
        elif rows < cols:
            w = vm.truncate(w, rows)
        term = vm.mult(diag, w)
        acc = term if acc is None else vm.add(acc, term)
    if acc is None:
        raise KernelError("matrix must have at least one column")
    return acc


def mult_all(vs: Sequence[PackedVec], vm: VecMachine) -> PackedVec:
    """Slotwise AND of all inputs via a balanced product tree.

    Pairs left to right at every tree level, so n inputs take n - 1
    products at depth ceil(lg n).
    """
    if not vs:
        raise KernelError("mult_all needs at least one input")
    layer = list(vs)
    while len(layer) > 1:
        nxt = [vm.mult(layer[i], layer[i + 1]) for i in range(0, len(layer) - 1, 2)]
        if len(layer) % 2:
            nxt.append(layer[-1])
        layer = nxt
    return layer[0]
