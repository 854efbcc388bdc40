"""Inference runtime: encode queries, run the packed pipeline, decode results.

The pipeline follows the staged artifacts end to end: compare the
replicated feature planes against the padded thresholds, reshuffle the
decisions into preorder, select-and-mask per level, then AND the level
results into one feasibility bit per leaf.  The final bitvector carries
exactly one set bit per tree.

Two party configurations are supported: `encrypted` (the model operands
are ciphertexts, as when the model owner offloads to an untrusted server)
and `plaintext` (the server owns the model, so model operands stay
plaintext and every model-side product is cheap).
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from decimal import Decimal
from typing import Mapping, Sequence

import numpy as np

from . import kernels
from .forest import Branch, Forest
from .staging import BitPlanes, CompiledModel, DiagMatrix, quantize
from .vm import OpLedger, PackedVec, VecMachine

MODE_ENCRYPTED = "encrypted"
MODE_PLAINTEXT = "plaintext"
MODES = (MODE_ENCRYPTED, MODE_PLAINTEXT)


class RuntimeFault(Exception):
    pass


class LayoutError(RuntimeFault):
    """Query and model slot layouts disagree."""


class QueryError(RuntimeFault):
    """Malformed or incomplete feature input."""


class MalformedResult(RuntimeFault):
    """Result bitvector is not one-hot per tree; signals a circuit bug."""


@dataclass(frozen=True)
class PartyConfig:
    """Which notional parties coincide, and the multiplicity bound in force."""

    mode: str = MODE_ENCRYPTED
    k_declared: int | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise RuntimeFault(f"unknown mode {self.mode!r}")


@dataclass(frozen=True)
class FeatureQuery:
    """Replicated, quantized, bit-transposed, encrypted feature vector."""

    raw: tuple[tuple[int, Decimal], ...]
    planes: tuple[PackedVec, ...]
    precision: int
    frac_bits: int
    k_declared: int
    n_features: int

    @property
    def length(self) -> int:
        return len(self.planes[0]) if self.planes else 0


@dataclass(frozen=True)
class ClassificationResult:
    """Decoded classification: one leaf per tree plus the plurality label."""

    bits: tuple[int, ...]
    per_tree_leaves: tuple[int, ...]
    per_tree_labels: tuple[str, ...]
    plurality: str


@dataclass
class InferenceRun:
    """Encrypted result plus the per-stage operation accounting."""

    cipher: PackedVec
    ledger: OpLedger
    stages: dict[str, dict[str, int]]
    level_stages: list[dict[str, int]]


def encode_features(values: Mapping[int, object], *, n_features: int, p: int,
                    frac_bits: int, k_declared: int, vm: VecMachine,
                    min_multiplicity: int | None = None) -> FeatureQuery:
    """Replicate each feature k_declared times, quantize, transpose, encrypt.

    The slot layout mirrors the padded threshold vector: feature 0's
    replicas first, then feature 1's, and so on, giving the one-to-one
    slot correspondence the comparison step relies on.
    """
    if min_multiplicity is not None and k_declared < min_multiplicity:
        raise LayoutError(
            f"declared multiplicity bound {k_declared} is below the model's "
            f"maximum {min_multiplicity}")
    norm: dict[int, Decimal] = {}
    for key, value in values.items():
        norm[int(key)] = value if isinstance(value, Decimal) else Decimal(str(value))
    units = []
    raw = []
    for feature in range(n_features):
        if feature not in norm:
            raise QueryError(f"missing value for feature {feature}")
        u = quantize(norm[feature], p, frac_bits, what=f"feature {feature}")
        units.extend([u] * k_declared)
        raw.append((feature, norm[feature]))
    extra = set(norm) - set(range(n_features))
    if extra:
        raise QueryError(f"unknown feature indices {sorted(extra)}")
    planes = BitPlanes.from_ints(units, p)
    return FeatureQuery(
        raw=tuple(raw),
        planes=tuple(vm.encrypt(plane) for plane in planes.planes),
        precision=p,
        frac_bits=frac_bits,
        k_declared=k_declared,
        n_features=n_features,
    )


def encode_query(values: Mapping[int, object], model: CompiledModel,
                 vm: VecMachine) -> FeatureQuery:
    """encode_features with the layout parameters taken from a compiled model."""
    m = model.meta
    return encode_features(values, n_features=m.n_features, p=m.p,
                           frac_bits=m.frac_bits, k_declared=m.k_declared,
                           vm=vm, min_multiplicity=m.max_multiplicity)


@dataclass(frozen=True)
class _StagedMatrix:
    diagonals: tuple[PackedVec, ...]
    rows: int
    cols: int


def _stage_planes(planes: BitPlanes, vm: VecMachine, encrypted: bool):
    load = vm.encrypt if encrypted else vm.plain
    return tuple(load(p) for p in planes.planes)


def _stage_matrix(mat: DiagMatrix, vm: VecMachine, encrypted: bool) -> _StagedMatrix:
    load = vm.encrypt if encrypted else vm.plain
    return _StagedMatrix(diagonals=tuple(load(d) for d in mat.diagonals),
                         rows=mat.rows, cols=mat.cols)


def infer(model: CompiledModel, query: FeatureQuery, cfg: PartyConfig,
          vm: VecMachine) -> InferenceRun:
    """Run the packed inference circuit; returns ciphertext result + ledger.

    In encrypted mode the model operands are encrypted onto the same
    ledger first (one ciphertext per threshold plane, matrix diagonal, and
    mask), so the run's counts cover the whole evaluation.
    """
    m = model.meta
    if query.precision != m.p or query.frac_bits != m.frac_bits:
        raise LayoutError(
            f"query precision {query.precision}/{query.frac_bits} does not match "
            f"model {m.p}/{m.frac_bits}")
    if query.k_declared != m.k_declared or query.n_features != m.n_features:
        raise LayoutError(
            f"query layout ({query.n_features} features x {query.k_declared}) does "
            f"not match model ({m.n_features} x {m.k_declared})")
    if cfg.k_declared is not None and cfg.k_declared != m.k_declared:
        raise LayoutError(
            f"configured multiplicity bound {cfg.k_declared} does not match the "
            f"model's {m.k_declared}")
    if query.length != m.q:
        raise LayoutError(f"query slot count {query.length} != q={m.q}")

    encrypted = cfg.mode == MODE_ENCRYPTED
    ledger = vm.ledger
    stages: dict[str, dict[str, int]] = {}
    level_stages: list[dict[str, int]] = []

    mark = ledger.snapshot()
    thresh = _stage_planes(model.thresholds, vm, encrypted)
    reshuf = _stage_matrix(model.reshuf, vm, encrypted)
    levels = [_stage_matrix(mat, vm, encrypted) for mat in model.level_mats]
    masks = [(vm.encrypt if encrypted else vm.plain)(mask) for mask in model.level_masks]
    stages["stage_model"] = ledger.diff(mark, ledger.snapshot())

    if m.b == 0:
        # Leaf-only forest: every tree selects its single leaf unconditionally.
        mark = ledger.snapshot()
        result = vm.encrypt(np.ones(m.n_leaves, dtype=np.uint8))
        stages["constant"] = ledger.diff(mark, ledger.snapshot())
        return InferenceRun(cipher=result, ledger=ledger, stages=stages,
                            level_stages=level_stages)

    mark = ledger.snapshot()
    decisions = kernels.sec_comp(query.planes, thresh, vm)
    stages["comparison"] = ledger.diff(mark, ledger.snapshot())

    mark = ledger.snapshot()
    branches = kernels.mat_mul(reshuf.diagonals, reshuf.rows, decisions, vm)
    stages["reshuffle"] = ledger.diff(mark, ledger.snapshot())

    mark = ledger.snapshot()
    level_results = []
    for staged, mask in zip(levels, masks):
        lmark = ledger.snapshot()
        picked = kernels.mat_mul(staged.diagonals, staged.rows, branches, vm)
        level_results.append(vm.add(picked, mask))
        level_stages.append(ledger.diff(lmark, ledger.snapshot()))
    stages["levels"] = ledger.diff(mark, ledger.snapshot())

    mark = ledger.snapshot()
    labels = kernels.mult_all(level_results, vm)
    stages["accumulation"] = ledger.diff(mark, ledger.snapshot())

    return InferenceRun(cipher=labels, ledger=ledger, stages=stages,
                        level_stages=level_stages)


def decode(bits: np.ndarray | Sequence[int], model: CompiledModel) -> ClassificationResult:
    """Decode a decrypted result bitvector at the data-owner boundary.

    Each tree's span must contain exactly one set bit.  The plurality vote
    breaks ties toward the lowest label index; that rule is this
    implementation's choice and is relied on by the decoders' tests.
    """
    arr = np.asarray(bits, dtype=np.uint8)
    if arr.shape != (model.meta.n_leaves,):
        raise MalformedResult(
            f"expected {model.meta.n_leaves} slots, got {arr.shape}")
    per_tree = []
    for tree, (start, end) in enumerate(model.tree_leaf_spans):
        hot = np.flatnonzero(arr[start:end])
        if hot.shape[0] != 1:
            raise MalformedResult(
                f"tree {tree} has {hot.shape[0]} set bits, expected exactly 1")
        per_tree.append(start + int(hot[0]))
    label_indices = [model.codebook[leaf] for leaf in per_tree]
    votes = Counter(label_indices)
    best = max(votes.items(), key=lambda kv: (kv[1], -kv[0]))[0]
    return ClassificationResult(
        bits=tuple(int(x) for x in arr),
        per_tree_leaves=tuple(per_tree),
        per_tree_labels=tuple(model.labels[i] for i in label_indices),
        plurality=model.labels[best],
    )


def traverse_oracle(forest: Forest, values: Mapping[int, object], p: int,
                    frac_bits: int) -> list[int]:
    """Reference sequential traversal on quantized values.

    Ground truth for every equivalence test: quantizes features and
    thresholds exactly as the staged pipeline does, takes the right child
    when feature > threshold, and returns one forest-wide leaf index per
    tree.
    """
    xq: dict[int, int] = {}
    for key, value in values.items():
        dec = value if isinstance(value, Decimal) else Decimal(str(value))
        xq[int(key)] = quantize(dec, p, frac_bits, what=f"feature {key}")

    out = []
    for root in forest.trees:
        node = root
        while isinstance(node, Branch):
            try:
                fv = xq[node.feature_index]
            except KeyError:
                raise QueryError(f"missing value for feature {node.feature_index}") from None
            tq = quantize(node.threshold, p, frac_bits, what="threshold")
            node = node.right if fv > tq else node.left
        out.append(forest.leaf_index[node])
    return out


def oracle_bitvector(forest: Forest, values: Mapping[int, object], p: int,
                     frac_bits: int) -> np.ndarray:
    """One-hot-per-tree encoding of the traversal oracle's answer."""
    leaves = traverse_oracle(forest, values, p, frac_bits)
    bits = np.zeros(len(forest.leaves), dtype=np.uint8)
    bits[leaves] = 1
    return bits


# -- query file format ---------------------------------------------------------


def parse_query_block(text: str) -> dict[int, Decimal]:
    """Parse `feature <index> <decimal>` lines into a feature map."""
    values: dict[int, Decimal] = {}
    for lineno, line in enumerate(text.split("\n"), start=1):
        if not line.strip():
            continue
        toks = line.split()
        if len(toks) != 3 or toks[0] != "feature" or not toks[1].isdigit():
            raise QueryError(f"query line {lineno}: expected 'feature <index> <decimal>'")
        try:
            values[int(toks[1])] = Decimal(toks[2])
        except ArithmeticError:
            raise QueryError(f"query line {lineno}: bad decimal {toks[2]!r}") from None
    if not values:
        raise QueryError("empty query")
    return values


def parse_queries(text: str) -> list[dict[int, Decimal]]:
    """Split a query file into blank-line-separated blocks and parse each."""
    blocks = [blk for blk in text.split("\n\n") if blk.strip()]
    if not blocks:
        raise QueryError("empty query file")
    return [parse_query_block(blk) for blk in blocks]


def format_result(result: ClassificationResult, ledger: OpLedger | None = None) -> str:
    lines = ["bitvector " + "".join(str(b) for b in result.bits)]
    for tree, (leaf, label) in enumerate(zip(result.per_tree_leaves,
                                             result.per_tree_labels)):
        lines.append(f"tree {tree} leaf {leaf} label {label}")
    lines.append(f"plurality {result.plurality}")
    if ledger is not None:
        lines.append(ledger.to_text())
    return "\n".join(lines)
