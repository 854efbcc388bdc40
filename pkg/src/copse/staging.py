"""Staging compiler: fixes slot layouts and builds the packed model artifacts.

A compiled model is four data structures plus a manifest:

* a sentinel-padded threshold vector, stored as bit-transposed planes
  (plane 0 = most significant bit of every slot);
* a reshuffling matrix that reorders comparison results into preorder
  branch order and drops the sentinel slots;
* one selection matrix and one mask bitvector per level, which turn the
  preorder decision vector into per-leaf feasibility bits;
* a codebook mapping leaf slots back to label names.

Matrices are stored as generalized diagonals so the runtime can multiply
them against a packed vector with a single layer of products.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from .forest import Forest, ForestProps, compute_props

#: Filler threshold for feature groups below the declared multiplicity.
SENTINEL = 0

#: Comparison convention recorded in every manifest: a decision fires
#: (bit = 1) when feature > threshold, and a firing decision routes to the
#: right child.
PREDICATE = "feature_gt_threshold"
TRUE_CHILD = "right"

MANIFEST_MAGIC = "copse-manifest"
MANIFEST_VERSION = 1


class StagingError(Exception):
    """Base class for compile-time faults."""


class QuantizationOverflow(StagingError):
    """A value does not fit the unsigned fixed-point range."""


class ManifestError(StagingError):
    """Malformed `.copse` manifest text."""


def quantize(value, p: int, frac_bits: int, what: str = "value") -> int:
    """Round value * 2**frac_bits half-up to an unsigned p-bit integer."""
    dec = value if isinstance(value, Decimal) else Decimal(value)
    units = int((dec * (1 << frac_bits)).quantize(Decimal(1), rounding=ROUND_HALF_UP))
    if units < 0 or units >= (1 << p):
        raise QuantizationOverflow(
            f"{what} {dec} quantizes to {units}, outside [0, {(1 << p) - 1}] "
            f"(p={p}, frac_bits={frac_bits})")
    return units


@dataclass(frozen=True)
class BitPlanes:
    """Fixed-point values in bit-transposed form: plane i holds bit i (MSB first)."""

    precision: int
    planes: tuple[np.ndarray, ...]

    def __post_init__(self):
        if self.precision < 1 or len(self.planes) != self.precision:
            raise StagingError("plane count must equal the precision and be >= 1")
        length = self.planes[0].shape[0]
        for plane in self.planes:
            if plane.shape != (length,):
                raise StagingError("all planes must have the same length")
            plane.setflags(write=False)

    @property
    def length(self) -> int:
        return self.planes[0].shape[0]

    @classmethod
    def from_ints(cls, values, p: int) -> "BitPlanes":
        vals = np.asarray(values, dtype=np.int64)
        if vals.size and (vals.min() < 0 or vals.max() >= (1 << p)):
            raise QuantizationOverflow(f"values do not fit in {p} bits")
        planes = tuple(
            np.ascontiguousarray((vals >> (p - 1 - i)) & 1, dtype=np.uint8)
            for i in range(p))
        return cls(precision=p, planes=planes)

    def to_ints(self) -> np.ndarray:
        out = np.zeros(self.length, dtype=np.int64)
        for i, plane in enumerate(self.planes):
            out |= plane.astype(np.int64) << (self.precision - 1 - i)
        return out


@dataclass(frozen=True)
class DiagMatrix:
    """Boolean matrix stored as its generalized diagonals.

    Diagonal i of an m x n matrix A is (A[0, i], A[1, i+1], ...): offset i
    columns, wrapping around column indices mod n.  There are always n
    diagonals of length m, and the encoding is a bijection with the dense
    form.
    """

    rows: int
    cols: int
    diagonals: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.diagonals) != self.cols:
            raise StagingError("expected one diagonal per column")
        for diag in self.diagonals:
            if diag.shape != (self.rows,):
                raise StagingError("each diagonal must have one entry per row")
            diag.setflags(write=False)

    @classmethod
    def from_dense(cls, dense) -> "DiagMatrix":
        arr = np.asarray(dense, dtype=np.uint8)
        m, n = arr.shape
        cols = np.arange(m, dtype=np.int64)
        diags = tuple(
            np.ascontiguousarray(arr[np.arange(m), (cols + i) % n], dtype=np.uint8)
            if m else np.zeros(0, dtype=np.uint8)
            for i in range(n))
        return cls(rows=m, cols=n, diagonals=diags)

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((self.rows, self.cols), dtype=np.uint8)
        for i, diag in enumerate(self.diagonals):
            rows = np.arange(self.rows)
            dense[rows, (rows + i) % self.cols] = diag
        return dense


def threshold_slot_layout(props: ForestProps, k_declared: int) -> list:
    """Slot -> branch index map for the padded threshold vector.

    Slots are grouped by feature in index order; within a group, branches
    appear in ascending preorder index, padded with None (sentinel slots)
    up to k_declared entries.
    """
    layout: list = []
    for feature in range(props.n_features):
        group = [j for j in range(props.b) if props.f_vec[j] == feature]
        layout.extend(group)
        layout.extend([None] * (k_declared - len(group)))
    return layout


def build_threshold_vector(props: ForestProps, p: int, frac_bits: int,
                           k_declared: int | None = None) -> BitPlanes:
    """Quantize thresholds into the padded, feature-grouped slot layout."""
    k_declared = _resolve_k(props, k_declared)
    units = []
    for slot in threshold_slot_layout(props, k_declared):
        if slot is None:
            units.append(SENTINEL)
        else:
            units.append(quantize(props.t_vec[slot], p, frac_bits,
                                  what=f"threshold of branch {slot}"))
    return BitPlanes.from_ints(units, p)


def build_reshuffle(props: ForestProps, k_declared: int | None = None) -> DiagMatrix:
    """b x q selector: row i picks the threshold slot of branch i."""
    k_declared = _resolve_k(props, k_declared)
    q = k_declared * props.n_features
    dense = np.zeros((props.b, q), dtype=np.uint8)
    for slot, branch in enumerate(threshold_slot_layout(props, k_declared)):
        if branch is not None:
            dense[branch, slot] = 1
    return DiagMatrix.from_dense(dense)


def level_selection(props: ForestProps) -> list[list]:
    """Per level 1..d, per leaf: the selected branch index or None.

    The branch at exactly that level above the leaf when one exists,
    otherwise the deepest ancestor below the level; None when every
    ancestor sits above it (including leaves with no ancestors at all),
    in which case the leaf is unconstrained at that level.
    """
    selections = []
    for level in range(1, props.d + 1):
        row: list = []
        for path in props.leaf_paths:
            exact = None
            below = None
            for branch, _ in path:
                bl = props.level_of[branch]
                if bl == level:
                    exact = branch
                elif bl < level and (below is None or bl > props.level_of[below]):
                    below = branch
            row.append(exact if exact is not None else below)
        selections.append(row)
    return selections


def build_levels(props: ForestProps) -> tuple[list[DiagMatrix], list[np.ndarray]]:
    """Selection matrix (leaves x b) and mask per level, leaf-level first.

    Mask bit i is 0 when leaf i hangs off the firing ("true") side of its
    selected branch, 1 otherwise, so decision XOR mask reads "leaf i is
    still feasible at this level".  Unconstrained leaves get an all-zero
    row and a mask bit of 1.
    """
    n_leaves = len(props.leaf_paths)
    went_right = [dict(path) for path in props.leaf_paths]
    mats = []
    masks = []
    for row in level_selection(props):
        dense = np.zeros((n_leaves, props.b), dtype=np.uint8)
        mask = np.ones(n_leaves, dtype=np.uint8)
        for leaf, branch in enumerate(row):
            if branch is None:
                continue
            dense[leaf, branch] = 1
            mask[leaf] = 0 if went_right[leaf][branch] else 1
        mats.append(DiagMatrix.from_dense(dense))
        masks.append(mask)
    return mats, masks


def _resolve_k(props: ForestProps, k_declared: int | None) -> int:
    if k_declared is None:
        return props.max_multiplicity
    if k_declared < props.max_multiplicity:
        raise StagingError(
            f"declared multiplicity bound {k_declared} is below the true "
            f"maximum {props.max_multiplicity}")
    return k_declared


@dataclass(frozen=True)
class ModelMeta:
    p: int
    frac_bits: int
    b: int
    q: int
    d: int
    max_multiplicity: int
    k_declared: int
    n_features: int
    n_trees: int
    n_leaves: int


@dataclass(frozen=True)
class CompiledModel:
    meta: ModelMeta
    thresholds: BitPlanes
    reshuf: DiagMatrix
    level_mats: tuple[DiagMatrix, ...]
    level_masks: tuple[np.ndarray, ...]
    labels: tuple[str, ...]
    codebook: tuple[int, ...]
    tree_leaf_spans: tuple[tuple[int, int], ...]

    def label_of_leaf(self, leaf: int) -> str:
        return self.labels[self.codebook[leaf]]


def compile_forest(forest: Forest, p: int = 8, frac_bits: int = 0,
                   k_declared: int | None = None,
                   props: ForestProps | None = None) -> CompiledModel:
    """Stage a forest into a CompiledModel; deterministic for equal inputs."""
    if props is None:
        props = compute_props(forest)
    k = _resolve_k(props, k_declared)
    mats, masks = build_levels(props)
    meta = ModelMeta(
        p=p,
        frac_bits=frac_bits,
        b=props.b,
        q=k * props.n_features,
        d=props.d,
        max_multiplicity=props.max_multiplicity,
        k_declared=k,
        n_features=props.n_features,
        n_trees=len(forest.trees),
        n_leaves=len(forest.leaves),
    )
    return CompiledModel(
        meta=meta,
        thresholds=build_threshold_vector(props, p, frac_bits, k),
        reshuf=build_reshuffle(props, k),
        level_mats=tuple(mats),
        level_masks=tuple(masks),
        labels=forest.labels,
        codebook=tuple(leaf.label_index for leaf in forest.leaves),
        tree_leaf_spans=forest.tree_leaf_spans,
    )


# -- manifest serialization ---------------------------------------------------


def _bits_str(arr: np.ndarray) -> str:
    return "".join("1" if x else "0" for x in arr) or "-"


def _parse_bits(text: str, where: str) -> np.ndarray:
    if text == "-":
        return np.zeros(0, dtype=np.uint8)
    if not set(text) <= {"0", "1"}:
        raise ManifestError(f"{where}: bits must be 0/1, got {text!r}")
    return np.frombuffer(text.encode(), dtype=np.uint8) - ord("0")


def write_manifest(model: CompiledModel) -> str:
    """Render the model as stable, line-oriented `.copse` text."""
    m = model.meta
    lines = [f"{MANIFEST_MAGIC} {MANIFEST_VERSION}"]
    for key in ("p", "frac_bits", "b", "q", "d", "max_multiplicity",
                "k_declared", "n_features", "n_trees", "n_leaves"):
        lines.append(f"meta {key} {getattr(m, key)}")
    lines.append(f"meta predicate {PREDICATE}")
    lines.append(f"meta true_child {TRUE_CHILD}")
    lines.append("labels " + " ".join(model.labels))
    lines.append("codebook " + " ".join(str(i) for i in model.codebook))
    lines.append("tree_spans " + " ".join(f"{s}:{e}" for s, e in model.tree_leaf_spans))
    for plane in model.thresholds.planes:
        lines.append("plane " + _bits_str(plane))
    lines.append(f"reshuffle {model.reshuf.rows} {model.reshuf.cols}")
    for diag in model.reshuf.diagonals:
        lines.append("rdiag " + _bits_str(diag))
    for idx, (mat, mask) in enumerate(zip(model.level_mats, model.level_masks), start=1):
        lines.append(f"level {idx} {mat.rows} {mat.cols}")
        for diag in mat.diagonals:
            lines.append("ldiag " + _bits_str(diag))
        lines.append("lmask " + _bits_str(mask))
    lines.append("end")
    return "\n".join(lines) + "\n"


def read_manifest(text: str) -> CompiledModel:
    """Parse `.copse` text back into a CompiledModel, validating shapes."""
    lines = [ln for ln in text.split("\n") if ln.strip()]
    it = iter(enumerate(lines, start=1))

    def next_line(expect: str) -> tuple[int, list[str]]:
        try:
            no, line = next(it)
        except StopIteration:
            raise ManifestError(f"unexpected end of manifest, expected {expect}") from None
        return no, line.split()

    no, head = next_line("header")
    if len(head) != 2 or head[0] != MANIFEST_MAGIC or head[1] != str(MANIFEST_VERSION):
        raise ManifestError(f"line {no}: not a {MANIFEST_MAGIC} v{MANIFEST_VERSION} file")

    meta_raw: dict[str, str] = {}
    no, toks = next_line("meta")
    while toks and toks[0] == "meta":
        if len(toks) != 3:
            raise ManifestError(f"line {no}: malformed meta line")
        meta_raw[toks[1]] = toks[2]
        no, toks = next_line("labels")
    if meta_raw.get("predicate") != PREDICATE or meta_raw.get("true_child") != TRUE_CHILD:
        raise ManifestError("unsupported comparison convention")
    try:
        meta = ModelMeta(**{k: int(meta_raw[k]) for k in
                            ("p", "frac_bits", "b", "q", "d", "max_multiplicity",
                             "k_declared", "n_features", "n_trees", "n_leaves")})
    except KeyError as exc:
        raise ManifestError(f"missing meta key {exc}") from None

    if toks[0] != "labels" or len(toks) < 2:
        raise ManifestError(f"line {no}: expected labels line")
    labels = tuple(toks[1:])

    no, toks = next_line("codebook")
    if toks[0] != "codebook" or len(toks) != meta.n_leaves + 1:
        raise ManifestError(f"line {no}: expected codebook with {meta.n_leaves} entries")
    codebook = tuple(int(t) for t in toks[1:])
    if codebook and max(codebook) >= len(labels):
        raise ManifestError("codebook entry out of label range")

    no, toks = next_line("tree_spans")
    if toks[0] != "tree_spans" or len(toks) != meta.n_trees + 1:
        raise ManifestError(f"line {no}: expected {meta.n_trees} tree spans")
    spans = tuple(tuple(int(x) for x in t.split(":")) for t in toks[1:])

    planes = []
    for _ in range(meta.p):
        no, toks = next_line("plane")
        if toks[0] != "plane" or len(toks) != 2:
            raise ManifestError(f"line {no}: expected plane line")
        bits = _parse_bits(toks[1], f"line {no}")
        if bits.shape[0] != meta.q:
            raise ManifestError(f"line {no}: plane length {bits.shape[0]} != q={meta.q}")
        planes.append(bits)
    thresholds = BitPlanes(precision=meta.p, planes=tuple(planes))

    def read_matrix(kind: str, header: list[str], no: int) -> DiagMatrix:
        rows, cols = int(header[-2]), int(header[-1])
        diags = []
        tag = "rdiag" if kind == "reshuffle" else "ldiag"
        for _ in range(cols):
            dno, dtoks = next_line(tag)
            if dtoks[0] != tag or len(dtoks) != 2:
                raise ManifestError(f"line {dno}: expected {tag} line")
            diag = _parse_bits(dtoks[1], f"line {dno}")
            if diag.shape[0] != rows:
                raise ManifestError(f"line {dno}: diagonal length != {rows}")
            diags.append(diag)
        return DiagMatrix(rows=rows, cols=cols, diagonals=tuple(diags))

    no, toks = next_line("reshuffle")
    if toks[0] != "reshuffle" or len(toks) != 3:
        raise ManifestError(f"line {no}: expected reshuffle header")
    reshuf = read_matrix("reshuffle", toks, no)
    if (reshuf.rows, reshuf.cols) != (meta.b, meta.q):
        raise ManifestError("reshuffle shape does not match meta")

    mats = []
    masks = []
    for idx in range(1, meta.d + 1):
        no, toks = next_line("level")
        if toks[0] != "level" or len(toks) != 4 or int(toks[1]) != idx:
            raise ManifestError(f"line {no}: expected level {idx} header")
        mat = read_matrix("level", toks, no)
        if (mat.rows, mat.cols) != (meta.n_leaves, meta.b):
            raise ManifestError(f"level {idx} shape does not match meta")
        mats.append(mat)
        no, toks = next_line("lmask")
        if toks[0] != "lmask" or len(toks) != 2:
            raise ManifestError(f"line {no}: expected lmask line")
        mask = _parse_bits(toks[1], f"line {no}")
        if mask.shape[0] != meta.n_leaves:
            raise ManifestError(f"line {no}: mask length != {meta.n_leaves}")
        masks.append(mask)

    no, toks = next_line("end")
    if toks[0] != "end":
        raise ManifestError(f"line {no}: expected end marker")

    return CompiledModel(
        meta=meta,
        thresholds=thresholds,
        reshuf=reshuf,
        level_mats=tuple(mats),
        level_masks=tuple(masks),
        labels=labels,
        codebook=codebook,
        tree_leaf_spans=spans,
    )
