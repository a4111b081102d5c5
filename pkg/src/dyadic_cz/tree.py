"""Finite dyadic families stored as rooted weighted trees.

Cubes are numbered in depth-first preorder with the root at 0, so the
subtree of cube ``q`` occupies the id range ``[q, q + subtree_size[q])`` and
every cube covers a contiguous range of leaves.  The measure is atomic on
the leaves; cube measures are sums of leaf weights.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

MAX_LEAVES = 2**24
ADDITIVITY_RTOL = 1e-12


class TreeError(ValueError):
    """Raised when a tree description violates a dyadic-family invariant."""

    def __init__(self, message: str, cube: int | None = None, rule: str | None = None):
        super().__init__(message)
        self.cube = cube
        self.rule = rule


@dataclass(frozen=True)
class TreeStats:
    M: int
    dyadic_doubling_C: float
    growth_eps: float


@dataclass
class DyadicReport:
    ok: bool
    stats: TreeStats | None
    failures: list[dict] = field(default_factory=list)


class DyadicTree:
    """Immutable finite dyadic family.

    Build instances with :func:`build_uniform`, :func:`build_random`,
    :func:`load_tree` or :meth:`from_counts`; the constructor takes the raw
    preorder arrays and does not validate them.
    """

    def __init__(self, parent, child_ptr, child_idx, measure):
        self.parent = np.asarray(parent, dtype=np.int64)
        self.child_ptr = np.asarray(child_ptr, dtype=np.int64)
        self.child_idx = np.asarray(child_idx, dtype=np.int64)
        self.measure = np.asarray(measure, dtype=np.float64)
        for arr in (self.parent, self.child_ptr, self.child_idx, self.measure):
            arr.setflags(write=False)

        n = len(self.parent)
        counts = np.diff(self.child_ptr)
        level = np.zeros(n, dtype=np.int64)
        size = np.ones(n, dtype=np.int64)
        for q in range(1, n):
            level[q] = level[self.parent[q]] + 1
        for q in range(n - 1, 0, -1):
            size[self.parent[q]] += size[q]
        is_leaf = counts == 0
        leaf_cube = np.flatnonzero(is_leaf)
        # preorder: leaves below q are the leaves with ids in [q, q + size)
        leaf_rank = np.cumsum(is_leaf) - is_leaf
        ends = np.append(leaf_rank, len(leaf_cube))
        self.level = level
        self.subtree_size = size
        self.leaf_cube = leaf_cube
        self.leaf_start = leaf_rank
        self.leaf_stop = ends[np.arange(n) + size]
        for arr in (level, size, leaf_cube, self.leaf_start, self.leaf_stop):
            arr.setflags(write=False)

    # construction -----------------------------------------------------

    @classmethod
    def from_counts(cls, counts, leaf_weights, measures=None, collapse=True,
                    validate=True, strict=False) -> "DyadicTree":
        """Build from preorder children counts.

        ``measures`` optionally gives a measure per node (preorder, before
        collapse); when absent measures are summed bottom-up from the leaves.
        Unary chains are merged into their single child unless ``strict``,
        in which case they are an error.
        """
        counts = [int(c) for c in counts]
        if any(c < 0 for c in counts):
            raise TreeError("negative children count in structure", rule="structure")
        parent = _parent_from_counts(counts)
        leaves = [i for i, c in enumerate(counts) if c == 0]
        leaf_weights = np.asarray(leaf_weights, dtype=np.float64)
        if len(leaf_weights) != len(leaves):
            raise TreeError(
                f"leaf weight count {len(leaf_weights)} != leaf count {len(leaves)}",
                rule="leaf_weights")
        if len(leaves) > MAX_LEAVES:
            raise TreeError(f"tree has {len(leaves)} leaves, limit is {MAX_LEAVES}",
                            rule="size")
        if validate:
            bad = np.flatnonzero(~(leaf_weights > 0) | ~np.isfinite(leaf_weights))
            if len(bad):
                raise TreeError(f"leaf {bad[0]} has nonpositive weight "
                                f"{float(leaf_weights[bad[0]])!r}", cube=leaves[bad[0]],
                                rule="positivity")

        children: list[list[int]] = [[] for _ in counts]
        for v, p in enumerate(parent):
            if p >= 0:
                children[p].append(v)
        if measures is None:
            mu = np.zeros(len(counts))
            mu[leaves] = leaf_weights
            for v in range(len(counts) - 1, 0, -1):
                mu[parent[v]] += mu[v]
        else:
            mu = np.asarray(measures, dtype=np.float64)
            if len(mu) != len(counts):
                raise TreeError(f"measure count {len(mu)} != node count {len(counts)}",
                                rule="measures")
            if validate:
                _check_given_measures(mu, children, leaves, leaf_weights)

        unary = [v for v, ch in enumerate(children) if len(ch) == 1]
        if unary and strict:
            raise TreeError(f"unary chain at node {unary[0]}", cube=unary[0],
                            rule="unary")
        if not collapse:
            unary = []
        keep_parent, keep_mu, kept_children = _collapse(children, mu, bool(unary))
        child_ptr = np.zeros(len(keep_parent) + 1, dtype=np.int64)
        child_ptr[1:] = np.cumsum([len(c) for c in kept_children])
        child_idx = np.array([c for ch in kept_children for c in ch], dtype=np.int64)
        tree = cls(keep_parent, child_ptr, child_idx, keep_mu)
        if validate:
            report = verify_dyadic(tree)
            if not report.ok:
                first = report.failures[0]
                raise TreeError(first["message"], cube=first.get("cube"),
                                rule=first["rule"])
        return tree

    # basic queries ----------------------------------------------------

    @property
    def n_cubes(self) -> int:
        return len(self.parent)

    @property
    def n_leaves(self) -> int:
        return len(self.leaf_cube)

    @property
    def depth(self) -> int:
        return int(self.level.max())

    @property
    def root(self) -> int:
        return 0

    @cached_property
    def n_children(self) -> np.ndarray:
        return np.diff(self.child_ptr)

    @cached_property
    def internal(self) -> np.ndarray:
        """Ids of cubes with children, i.e. the branching family."""
        return np.flatnonzero(self.n_children > 0)

    @cached_property
    def leaf_measures(self) -> np.ndarray:
        return self.measure[self.leaf_cube]

    def children(self, q: int) -> np.ndarray:
        return self.child_idx[self.child_ptr[q]:self.child_ptr[q + 1]]

    def is_leaf(self, q: int) -> bool:
        return self.child_ptr[q] == self.child_ptr[q + 1]

    def leaves_of(self, q: int) -> range:
        return range(int(self.leaf_start[q]), int(self.leaf_stop[q]))

    def contains(self, q: int, r: int) -> bool:
        """True iff cube ``r`` is ``q`` or one of its descendants."""
        return q <= r < q + self.subtree_size[q]

    @cached_property
    def leaf_path(self) -> np.ndarray:
        """``leaf_path[x, j]`` is the level-``j`` ancestor of leaf ``x`` (-1 past the leaf)."""
        path = np.full((self.n_leaves, self.depth + 1), -1, dtype=np.int64)
        rows = np.arange(self.n_leaves)
        cur = self.leaf_cube.copy()
        while len(rows):
            path[rows, self.level[cur]] = cur
            cur = self.parent[cur]
            keep = cur >= 0
            rows, cur = rows[keep], cur[keep]
        path.setflags(write=False)
        return path

    @cached_property
    def leaf_child_slot(self) -> np.ndarray:
        """Position of each cube among its parent's children (0 for the root)."""
        slot = np.zeros(self.n_cubes, dtype=np.int64)
        for q in self.internal:
            slot[self.children(q)] = np.arange(self.n_children[q])
        return slot

    def counts(self) -> list[int]:
        return [int(c) for c in self.n_children]

    def equals(self, other: "DyadicTree", rtol: float = 0.0) -> bool:
        return (np.array_equal(self.child_ptr, other.child_ptr)
                and np.array_equal(self.child_idx, other.child_idx)
                and np.allclose(self.measure, other.measure, rtol=rtol, atol=0))

    def to_json(self) -> dict:
        return {"structure": self.counts(),
                "leaf_weights": [float(w) for w in self.leaf_measures]}

    def __repr__(self) -> str:
        return (f"DyadicTree(cubes={self.n_cubes}, leaves={self.n_leaves}, "
                f"depth={self.depth})")


def _parent_from_counts(counts: list[int]) -> list[int]:
    parent = [-1] * len(counts)
    stack: list[list[int]] = []  # [node, remaining children]
    for v, c in enumerate(counts):
        if v > 0:
            if not stack:
                raise TreeError(f"structure has more than one root (node {v})",
                                cube=v, rule="root")
            parent[v] = stack[-1][0]
            stack[-1][1] -= 1
            if stack[-1][1] == 0:
                stack.pop()
        if c > 0:
            stack.append([v, c])
    if stack or not counts:
        raise TreeError("structure ends before all children are listed",
                        rule="structure")
    return parent


def _check_given_measures(mu, children, leaves, leaf_weights):
    for v, ch in enumerate(children):
        if not mu[v] > 0:
            raise TreeError(f"cube {v} has nonpositive measure {float(mu[v])!r}", cube=v,
                            rule="positivity")
        for c in ch:
            if mu[c] > mu[v]:
                raise TreeError(f"cube {c}: measure {float(mu[c])!r} exceeds measure "
                                f"{float(mu[v])!r} of its parent {v}", cube=c, rule="additivity")
    for v, ch in enumerate(children):
        if ch:
            total = math.fsum(mu[c] for c in ch)
            if abs(total - mu[v]) > ADDITIVITY_RTOL * mu[v]:
                raise TreeError(f"cube {v}: measure {float(mu[v])!r} != sum of children "
                                f"{float(total)!r}", cube=v, rule="additivity")
    for x, v in enumerate(leaves):
        if mu[v] != leaf_weights[x]:
            raise TreeError(f"leaf cube {v}: measure {float(mu[v])!r} != leaf weight "
                            f"{float(leaf_weights[x])!r}", cube=v, rule="additivity")


def _collapse(children, mu, any_unary):
    """Renumber in preorder, merging every single-child node into its child."""
    parent: list[int] = []
    measure: list[float] = []
    kids: list[list[int]] = []
    stack = [(0, -1)]
    while stack:
        v, p = stack.pop()
        m = mu[v]
        if any_unary:
            while len(children[v]) == 1:
                v = children[v][0]
        new = len(parent)
        parent.append(p)
        measure.append(m)
        kids.append([])
        if p >= 0:
            kids[p].append(new)
        for c in reversed(children[v]):
            stack.append((c, new))
    return parent, measure, kids


# builders ---------------------------------------------------------------

def build_uniform(depth: int, branching: int, leaf_weight_rule: str = "equal",
                  weights=None, total_mass: float = 1.0) -> DyadicTree:
    """Complete ``branching``-ary tree of the given depth.

    With ``leaf_weight_rule="equal"`` every leaf gets ``total_mass / n``;
    with ``"listed"`` the ``weights`` are used as given.
    """
    if depth < 1 or branching < 2:
        raise ValueError("need depth >= 1 and branching >= 2")
    n = branching**depth
    if n > MAX_LEAVES:
        raise TreeError(f"{n} leaves exceed limit {MAX_LEAVES}", rule="size")
    counts = []
    stack = [0]
    while stack:
        j = stack.pop()
        if j == depth:
            counts.append(0)
        else:
            counts.append(branching)
            stack.extend([j + 1] * branching)
    if leaf_weight_rule == "equal":
        w = np.full(n, total_mass / n)
    elif leaf_weight_rule == "listed":
        if weights is None:
            raise ValueError("leaf_weight_rule 'listed' needs weights")
        w = np.asarray(weights, dtype=np.float64)
        if len(w) != n:
            raise TreeError(f"weight list length {len(w)} != leaf count {n}",
                            rule="leaf_weights")
    else:
        raise ValueError(f"unknown leaf_weight_rule {leaf_weight_rule!r}")
    return DyadicTree.from_counts(counts, w)


def self_similar_weights(depth: int, split) -> np.ndarray:
    """Leaf weights of a complete tree where every cube splits in fixed proportions."""
    split = np.asarray(split, dtype=np.float64)
    split = split / split.sum()
    w = np.ones(1)
    for _ in range(depth):
        w = np.outer(w, split).ravel()
    return w


def build_random(seed: int, depth: int, branching_range=(2, 3),
                 weight_law: str = "log-uniform", stop_prob: float = 0.0) -> DyadicTree:
    """Seeded random tree with leaves at level ``depth``.

    Branching is uniform on ``branching_range`` (inclusive).  ``stop_prob``
    makes a non-root internal node a leaf early with that probability.
    Weight laws: ``equal``, ``log-uniform`` (ratio 10) or ``log-uniform:<ratio>``.
    Total mass is normalised to 1.
    """
    lo, hi = (int(b) for b in branching_range)
    if hi < lo or hi < 2:
        raise ValueError(f"empty branching range {branching_range!r}")
    lo = max(lo, 2)
    if depth < 1:
        raise ValueError("depth must be >= 1")
    rng = np.random.default_rng(seed)
    counts = []
    stack = [0]
    while stack:
        j = stack.pop()
        if j == depth or (j > 0 and stop_prob > 0 and rng.random() < stop_prob):
            counts.append(0)
            continue
        b = int(rng.integers(lo, hi + 1))
        counts.append(b)
        stack.extend([j + 1] * b)
    n = counts.count(0)
    if n > MAX_LEAVES:
        raise TreeError(f"{n} leaves exceed limit {MAX_LEAVES}", rule="size")
    law, _, arg = weight_law.partition(":")
    if law == "equal":
        w = np.ones(n)
    elif law == "log-uniform":
        ratio = float(arg) if arg else 10.0
        w = np.exp(rng.uniform(0.0, math.log(ratio), size=n))
    else:
        raise ValueError(f"unknown weight law {weight_law!r}")
    return DyadicTree.from_counts(counts, w / w.sum())


# file format ------------------------------------------------------------

TREE_FORMAT_HELP = """\
Tree file grammar (JSON object):
  leaf_weights : [number > 0, ...]   one weight per leaf, depth-first order
  structure    : either a flat list of children counts, one per node in
                 depth-first preorder (0 marks a leaf), or nested lists
                 where every node is the list of its children ([] = leaf)
  measures     : optional [number > 0, ...], one per node in preorder;
                 when present they are checked for additivity
Trees with more than 2^24 leaves are rejected.  Single-child nodes are
merged into their child unless strict loading is requested.
"""


def _flatten_nested(node) -> list[int]:
    out: list[int] = []
    stack = [node]
    while stack:
        v = stack.pop()
        if not isinstance(v, list):
            raise TreeError("nested structure entries must be lists", rule="structure")
        out.append(len(v))
        stack.extend(reversed(v))
    return out


def tree_from_dict(doc: dict, strict: bool = False, validate: bool = True) -> DyadicTree:
    try:
        weights = doc["leaf_weights"]
        structure = doc["structure"]
    except (KeyError, TypeError) as exc:
        raise TreeError(f"tree document missing field {exc}", rule="parse") from exc
    if isinstance(structure, list) and structure and isinstance(structure[0], list):
        counts = _flatten_nested(structure)
    elif isinstance(structure, list) and all(isinstance(c, int) for c in structure):
        counts = structure
    else:
        raise TreeError("structure must be a list of ints or nested lists",
                        rule="parse")
    return DyadicTree.from_counts(counts, weights, measures=doc.get("measures"),
                                  validate=validate, strict=strict)


def load_tree(path, strict: bool = False, validate: bool = True) -> DyadicTree:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise TreeError(f"cannot parse {path}: {exc}", rule="parse") from exc
    return tree_from_dict(doc, strict=strict, validate=validate)


def save_tree(tree: DyadicTree, path) -> None:
    Path(path).write_text(json.dumps(tree.to_json()) + "\n")


# verification -----------------------------------------------------------

def tree_stats(tree: DyadicTree) -> TreeStats:
    ratios = []
    for q in tree.internal:
        ratios.append(tree.measure[q] / tree.measure[tree.children(q)])
    if not ratios:
        return TreeStats(M=0, dyadic_doubling_C=1.0, growth_eps=0.0)
    r = np.concatenate(ratios)
    return TreeStats(M=int(tree.n_children.max()),
                     dyadic_doubling_C=float(r.max()),
                     growth_eps=float(r.min() - 1.0))


def verify_dyadic(tree: DyadicTree) -> DyadicReport:
    """Check the finite nesting/covering/additivity invariants.

    Failures are collected, not raised.  Rules: ``root``, ``level``,
    ``nesting`` (d.3/d.4), ``partition`` (d.1/d.2), ``additivity``,
    ``positivity``, ``branching``.
    """
    fails: list[dict] = []

    def fail(rule, message, cube=None):
        fails.append({"rule": rule, "cube": None if cube is None else int(cube),
                      "message": message})

    roots = np.flatnonzero(tree.parent < 0)
    if len(roots) != 1 or roots[0] != 0:
        fail("root", f"expected a single root at 0, found {roots.tolist()}")
    mu = tree.measure
    for q in np.flatnonzero(~(mu > 0) | ~np.isfinite(mu)):
        fail("positivity", f"cube {q} has nonpositive measure {float(mu[q])!r}", q)
    for q in range(1, tree.n_cubes):
        p = tree.parent[q]
        if tree.level[q] != tree.level[p] + 1:
            fail("level", f"cube {q} level {tree.level[q]} is not parent level + 1", q)
        if not (tree.leaf_start[p] <= tree.leaf_start[q]
                and tree.leaf_stop[q] <= tree.leaf_stop[p]):
            fail("nesting", f"cube {q} leaf span not inside parent {p}", q)
        if mu[q] > mu[p]:
            fail("additivity", f"cube {q}: measure {float(mu[q])!r} exceeds measure "
                 f"{float(mu[p])!r} of its parent {p}", q)
    for q in tree.internal:
        ch = tree.children(q)
        if len(ch) < 2:
            fail("branching", f"cube {q} has a single child", q)
        spans = sorted((int(tree.leaf_start[c]), int(tree.leaf_stop[c])) for c in ch)
        pos = int(tree.leaf_start[q])
        for a, b in spans:
            if a != pos or b <= a:
                fail("partition", f"children of cube {q} do not partition its leaves", q)
                break
            pos = b
        else:
            if pos != tree.leaf_stop[q]:
                fail("partition", f"children of cube {q} do not cover its leaves", q)
        total = math.fsum(mu[ch])
        if abs(total - mu[q]) > ADDITIVITY_RTOL * abs(mu[q]):
            fail("additivity", f"cube {q}: measure {float(mu[q])!r} != sum of children "
                 f"{float(total)!r}", q)
    stats = None if fails else tree_stats(tree)
    if stats is not None and tree.n_cubes > 1 and not stats.growth_eps > 0:
        fail("growth", f"growth_eps {float(stats.growth_eps)!r} is not positive")
    return DyadicReport(ok=not fails, stats=stats if not fails else None, failures=fails)
