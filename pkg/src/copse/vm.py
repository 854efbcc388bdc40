"""Simulated homomorphic SIMD vector machine.

Values are packed bitvectors ("slots") tagged as ciphertext or plaintext.
Every operation has the slotwise boolean semantics of its homomorphic
counterpart (add = XOR, mult = AND) and is charged to an operation ledger.
Ciphertext-by-ciphertext multiplication is the only operation that deepens
a value's multiplicative depth; the ledger tracks the deepest value ever
produced and can enforce an optional depth budget.

No noise magnitudes, keys, or actual encryption are modelled: the machine
is the boundary a real lattice-based backend could later implement.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

CIPHERTEXT = "ciphertext"
PLAINTEXT = "plaintext"

#: Ledger counter names, in reporting order.
OP_NAMES = ("encrypt", "rotate", "add", "const_add", "mult_ct_ct", "mult_ct_pt")


class VMError(Exception):
    """Base class for vector-machine faults."""


class ShapeMismatch(VMError):
    """Operands with different slot counts; signals a staging bug."""


class DepthBudgetExceeded(VMError):
    """A product exceeded the configured multiplicative-depth budget."""


@dataclass(frozen=True)
class PackedVec:
    """An immutable packed vector of 0/1 slots with provenance bookkeeping."""

    slots: np.ndarray
    kind: str
    depth: int
    origin: int

    def __post_init__(self):
        self.slots.setflags(write=False)

    def __len__(self) -> int:
        return self.slots.shape[0]

    @property
    def is_cipher(self) -> bool:
        return self.kind == CIPHERTEXT

    def bits(self) -> np.ndarray:
        """Writable copy of the slot contents."""
        return self.slots.copy()


@dataclass
class OpLedger:
    """Shared accumulator of operation counts and observed depth.

    Increments are lock-protected so concurrent queries may share a ledger,
    though one ledger per query is the intended usage.
    """

    depth_budget: int | None = None
    counts: dict[str, int] = field(default_factory=lambda: {op: 0 for op in OP_NAMES})
    max_depth_observed: int = 0
    _seq: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def bump(self, op: str, n: int = 1) -> None:
        with self._lock:
            self.counts[op] += n

    def record(self, op: str | None, depth: int) -> int:
        """Atomically count an op (if any) and a produced value's depth.

        Raises before counting when the depth budget would be exceeded, so
        a failed product never corrupts the ledger.
        """
        if self.depth_budget is not None and depth > self.depth_budget:
            raise DepthBudgetExceeded(
                f"multiplicative depth {depth} exceeds budget {self.depth_budget}")
        with self._lock:
            if op is not None:
                self.counts[op] += 1
            if depth > self.max_depth_observed:
                self.max_depth_observed = depth
            self._seq += 1
            return self._seq

    def snapshot(self) -> dict[str, int]:
        with self._lock:
            snap = dict(self.counts)
            snap["max_depth"] = self.max_depth_observed
            return snap

    @staticmethod
    def diff(before: dict[str, int], after: dict[str, int]) -> dict[str, int]:
        """Per-counter delta between two snapshots (max_depth is the later one)."""
        out = {op: after[op] - before[op] for op in OP_NAMES}
        out["max_depth"] = after["max_depth"]
        return out

    def to_text(self) -> str:
        lines = [f"ledger {op} {self.counts[op]}" for op in OP_NAMES]
        lines.append(f"ledger depth {self.max_depth_observed}")
        return "\n".join(lines)


def _as_bits(values) -> np.ndarray:
    arr = np.ascontiguousarray(values, dtype=np.uint8)
    if arr.ndim != 1:
        raise VMError(f"slot data must be one-dimensional, got shape {arr.shape}")
    if arr.size and arr.max() > 1:
        raise VMError("slot data must be 0/1 valued")
    return arr


class VecMachine:
    """Executes packed-slot operations against a ledger.

    Rotation counting note: every rotation issued on a ciphertext is
    charged, including offset 0, matching the one-rotation-per-diagonal
    accounting the matrix-vector kernel is measured against.
    """

    def __init__(self, ledger: OpLedger | None = None, depth_budget: int | None = None):
        if ledger is None:
            ledger = OpLedger(depth_budget=depth_budget)
        elif depth_budget is not None:
            ledger.depth_budget = depth_budget
        self.ledger = ledger

    # -- value constructors ------------------------------------------------

    def _mk(self, bits: np.ndarray, kind: str, depth: int,
            op: str | None = None) -> PackedVec:
        origin = self.ledger.record(op, depth)
        return PackedVec(slots=bits, kind=kind, depth=depth, origin=origin)

    def encrypt(self, values) -> PackedVec:
        """Pack a plaintext bitvector into a fresh ciphertext (depth 0)."""
        return self._mk(_as_bits(values), CIPHERTEXT, 0, "encrypt")

    def plain(self, values) -> PackedVec:
        """Wrap a bitvector as an unencrypted operand; costs nothing."""
        return self._mk(_as_bits(values), PLAINTEXT, 0)

    def decrypt(self, v: PackedVec) -> np.ndarray:
        return v.bits()

    # -- slotwise operations -----------------------------------------------

    def rotate(self, v: PackedVec, k: int) -> PackedVec:
        """Cyclic left rotation by k slots: slot i of the result is slot i+k."""
        n = len(v)
        if not 0 <= k < max(n, 1):
            raise VMError(f"rotation offset {k} out of range for length {n}")
        s = v.slots
        bits = np.concatenate((s[k:], s[:k])) if k else s
        return self._mk(bits, v.kind, v.depth,
                        "rotate" if v.is_cipher else None)

    def add(self, a: PackedVec, b: PackedVec) -> PackedVec:
        """Slotwise XOR. Depth is the max of the operand depths."""
        self._check_len(a, b)
        if a.is_cipher:
            op = "add" if b.is_cipher else "const_add"
            return self._mk(a.slots ^ b.slots, CIPHERTEXT,
                            max(a.depth, b.depth), op)
        if b.is_cipher:
            return self._mk(a.slots ^ b.slots, CIPHERTEXT, b.depth, "const_add")
        return self._mk(a.slots ^ b.slots, PLAINTEXT, 0)

    def mult(self, a: PackedVec, b: PackedVec) -> PackedVec:
        """Slotwise AND. Only ciphertext-by-ciphertext products deepen."""
        self._check_len(a, b)
        if a.is_cipher and b.is_cipher:
            return self._mk(a.slots & b.slots, CIPHERTEXT,
                            max(a.depth, b.depth) + 1, "mult_ct_ct")
        if a.is_cipher or b.is_cipher:
            return self._mk(a.slots & b.slots, CIPHERTEXT,
                            max(a.depth, b.depth), "mult_ct_pt")
        return self._mk(a.slots & b.slots, PLAINTEXT, 0)

    # -- slot bookkeeping (free) --------------------------------------------

    def replicate_extend(self, v: PackedVec, target_len: int) -> PackedVec:
        """Cyclically extend [x, y, z] -> [x, y, z, x, ...] to target_len slots."""
        if target_len < 1:
            raise VMError("target length must be positive")
        if target_len < len(v):
            raise VMError("replicate_extend cannot shrink; use truncate")
        return self._mk(np.resize(v.slots, target_len), v.kind, v.depth)

    def truncate(self, v: PackedVec, target_len: int) -> PackedVec:
        """Keep the first target_len slots."""
        if not 1 <= target_len <= len(v):
            raise VMError(f"cannot truncate length {len(v)} to {target_len}")
        return self._mk(v.slots[:target_len], v.kind, v.depth)

    def _check_len(self, a: PackedVec, b: PackedVec) -> None:
        if len(a) != len(b):
            raise ShapeMismatch(f"slot counts differ: {len(a)} vs {len(b)}")
