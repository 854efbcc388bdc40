"""Decision-forest intermediate representation.

Parses the line-oriented `.forest` text format, indexes branches and leaves
in preorder across the whole forest, and derives the structural properties
(levels, downstream sets, feature multiplicities) the staging compiler
consumes.

Format::

    labels <name> <name> ...
    <tree>            # one tree per line, prefix form
    ...

    <tree>   := branch <feature_index> <threshold> <tree> <tree>
              | leaf <label_index>

Thresholds are decimal literals, kept exact as `decimal.Decimal` until the
staging compiler quantizes them.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from typing import Iterator, Union


class ForestError(Exception):
    """Base class for model-format faults."""


class ParseError(ForestError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"line {line}, col {col}: {message}")
        self.line = line
        self.col = col


@dataclass(frozen=True, eq=False)
class Leaf:
    label_index: int


@dataclass(frozen=True, eq=False)
class Branch:
    feature_index: int
    threshold: Decimal
    left: "Node"
    right: "Node"


Node = Union[Branch, Leaf]


def _preorder(root: Node) -> Iterator[Node]:
    stack = [root]
    while stack:
        node = stack.pop()
        yield node
        if isinstance(node, Branch):
            stack.append(node.right)
            stack.append(node.left)


@dataclass(frozen=True, eq=False)
class Forest:
    """A parsed forest with forest-wide preorder branch and leaf indices."""

    labels: tuple[str, ...]
    trees: tuple[Node, ...]
    branches: tuple[Branch, ...]
    leaves: tuple[Leaf, ...]
    branch_index: dict
    leaf_index: dict
    tree_leaf_spans: tuple[tuple[int, int], ...]

    @classmethod
    def build(cls, labels, trees) -> "Forest":
        branches: list[Branch] = []
        leaves: list[Leaf] = []
        branch_index: dict = {}
        leaf_index: dict = {}
        spans = []
        for root in trees:
            start = len(leaves)
            for node in _preorder(root):
                # Indexing is by node identity, so sharing a subtree object
                # between positions would silently merge their indices.
                if isinstance(node, Branch):
                    if node in branch_index:
                        raise ForestError("subtree object appears more than once")
                    branch_index[node] = len(branches)
                    branches.append(node)
                else:
                    if node in leaf_index:
                        raise ForestError("subtree object appears more than once")
                    leaf_index[node] = len(leaves)
                    leaves.append(node)
            spans.append((start, len(leaves)))
        return cls(
            labels=tuple(labels),
            trees=tuple(trees),
            branches=tuple(branches),
            leaves=tuple(leaves),
            branch_index=branch_index,
            leaf_index=leaf_index,
            tree_leaf_spans=tuple(spans),
        )


@dataclass(frozen=True)
class ForestProps:
    """Structural properties of a forest, indexed by preorder position.

    `level_of[j]` is the longest branch-path length from branch j down to a
    leaf (leaves sit at level 0), `downstream[j]` the set of leaf indices
    reachable from it, and `width[j]` that set's size.  `kappa[i]` counts
    how many branches test feature i; `max_multiplicity` is its maximum and
    `q = max_multiplicity * n_features` the padded comparison width.
    `leaf_paths[i]` lists (branch index, went_right) pairs from the root
    down to leaf i.
    """

    b: int
    d: int
    max_multiplicity: int
    q: int
    n_features: int
    kappa: tuple[int, ...]
    level_of: tuple[int, ...]
    downstream: tuple[frozenset, ...]
    width: tuple[int, ...]
    f_vec: tuple[int, ...]
    t_vec: tuple[Decimal, ...]
    leaf_paths: tuple[tuple[tuple[int, bool], ...], ...]


_DECIMAL_RE = re.compile(r"^[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?$")
_TOKEN_RE = re.compile(r"\S+")


class _Tok:
    __slots__ = ("text", "line", "col")

    def __init__(self, text: str, line: int, col: int):
        self.text = text
        self.line = line
        self.col = col


def _tokenize_line(text: str, lineno: int) -> list[_Tok]:
    return [_Tok(m.group(), lineno, m.start() + 1) for m in _TOKEN_RE.finditer(text)]


class _LineParser:
    def __init__(self, tokens: list[_Tok], lineno: int, n_labels: int):
        self.tokens = tokens
        self.pos = 0
        self.lineno = lineno
        self.n_labels = n_labels

    def _eol_col(self) -> int:
        return self.tokens[-1].col + len(self.tokens[-1].text) if self.tokens else 1

    def take(self, expected: str) -> _Tok:
        if self.pos >= len(self.tokens):
            raise ParseError(f"unexpected end of line, expected {expected}",
                             self.lineno, self._eol_col())
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def node(self) -> Node:
        tok = self.take("'branch' or 'leaf'")
        if tok.text == "leaf":
            idx_tok = self.take("label index")
            idx = self._nonneg_int(idx_tok, "label index")
            if idx >= self.n_labels:
                raise ParseError(
                    f"label index {idx} out of range ({self.n_labels} labels declared)",
                    idx_tok.line, idx_tok.col)
            return Leaf(label_index=idx)
        if tok.text == "branch":
            f_tok = self.take("feature index")
            feature = self._nonneg_int(f_tok, "feature index")
            t_tok = self.take("threshold")
            if not _DECIMAL_RE.match(t_tok.text):
                raise ParseError(f"bad threshold literal {t_tok.text!r}",
                                 t_tok.line, t_tok.col)
            try:
                threshold = Decimal(t_tok.text)
            except InvalidOperation:
                raise ParseError(f"bad threshold literal {t_tok.text!r}",
                                 t_tok.line, t_tok.col) from None
            left = self.node()
            right = self.node()
            return Branch(feature_index=feature, threshold=threshold,
                          left=left, right=right)
        raise ParseError(f"expected 'branch' or 'leaf', got {tok.text!r}",
                         tok.line, tok.col)

    def _nonneg_int(self, tok: _Tok, what: str) -> int:
        if not tok.text.isdigit():
            raise ParseError(f"bad {what} {tok.text!r}", tok.line, tok.col)
        return int(tok.text)


def parse_forest(text: str) -> Forest:
    """Parse `.forest` text into a validated, indexed Forest."""
    lines = text.split("\n")
    header = None
    header_line = 0
    body: list[tuple[int, str]] = []
    for i, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        if header is None:
            header = line
            header_line = i
        else:
            body.append((i, line))
    if header is None:
        raise ParseError("empty input, expected a labels line", 1, 1)

    head_toks = _tokenize_line(header, header_line)
    if head_toks[0].text != "labels":
        raise ParseError(f"expected 'labels', got {head_toks[0].text!r}",
                         head_toks[0].line, head_toks[0].col)
    labels = [t.text for t in head_toks[1:]]
    if not labels:
        raise ParseError("at least one label name is required",
                         header_line, head_toks[0].col + len("labels"))

    trees = []
    for lineno, line in body:
        parser = _LineParser(_tokenize_line(line, lineno), lineno, len(labels))
        root = parser.node()
        if parser.pos != len(parser.tokens):
            tok = parser.tokens[parser.pos]
            raise ParseError(f"trailing tokens after tree, starting at {tok.text!r}",
                             tok.line, tok.col)
        trees.append(root)
    if not trees:
        raise ParseError("empty forest: no tree lines", header_line + 1, 1)
    return Forest.build(labels, trees)


def print_forest(forest: Forest) -> str:
    """Serialize in canonical form; parse(print(f)) reproduces f exactly."""

    def fmt(node: Node) -> str:
        if isinstance(node, Leaf):
            return f"leaf {node.label_index}"
        return (f"branch {node.feature_index} {node.threshold} "
                f"{fmt(node.left)} {fmt(node.right)}")

    lines = ["labels " + " ".join(forest.labels)]
    lines.extend(fmt(root) for root in forest.trees)
    return "\n".join(lines) + "\n"


def compute_props(forest: Forest) -> ForestProps:
    """Derive all structural properties; total on valid forests."""
    b = len(forest.branches)
    level_of = [0] * b
    downstream: list[frozenset] = [frozenset()] * b
    leaf_paths: list[tuple[tuple[int, bool], ...]] = [()] * len(forest.leaves)

    def walk(node: Node, path: tuple[tuple[int, bool], ...]) -> tuple[int, frozenset]:
        if isinstance(node, Leaf):
            li = forest.leaf_index[node]
            leaf_paths[li] = path
            return 0, frozenset((li,))
        bi = forest.branch_index[node]
        l_level, l_down = walk(node.left, path + ((bi, False),))
        r_level, r_down = walk(node.right, path + ((bi, True),))
        level = 1 + max(l_level, r_level)
        down = l_down | r_down
        level_of[bi] = level
        downstream[bi] = down
        return level, down

    d = 0
    for root in forest.trees:
        level, _ = walk(root, ())
        d = max(d, level)

    f_vec = tuple(br.feature_index for br in forest.branches)
    t_vec = tuple(br.threshold for br in forest.branches)
    n_features = 1 + max(f_vec) if f_vec else 0
    kappa = [0] * n_features
    for f in f_vec:
        kappa[f] += 1
    max_mult = max(kappa) if kappa else 0

    return ForestProps(
        b=b,
        d=d,
        max_multiplicity=max_mult,
        q=max_mult * n_features,
        n_features=n_features,
        kappa=tuple(kappa),
        level_of=tuple(level_of),
        downstream=tuple(downstream),
        width=tuple(len(s) for s in downstream),
        f_vec=f_vec,
        t_vec=t_vec,
        leaf_paths=tuple(leaf_paths),
    )
