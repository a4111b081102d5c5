"""Haar systems on weighted trees and the fast analysis/synthesis transforms.

Every branching cube ``Q`` with ``m`` children carries ``m - 1`` functions,
each constant on the children of ``Q`` and zero off ``Q``.  Function ids run
in cube preorder, then by index within the cube.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .metric import lipschitz_sup
from .tree import DyadicTree

STRATEGIES = ("classical-binary", "rotated-helmert")
DEFAULT_NONVANISH_TOL = 1e-3
RETRY_BUDGET = 64


class HaarConstructionError(RuntimeError):
    def __init__(self, cube: int, best_tol: float):
        super().__init__(f"cube {cube}: no rotation reached the nonvanishing "
                         f"tolerance after {RETRY_BUDGET} draws (best {best_tol:.3g})")
        self.cube = cube
        self.best_tol = best_tol


@dataclass
class HaarCoefficients:
    """Coefficients against the root scaling function and every Haar function."""

    scaling: float
    detail: np.ndarray

    def copy(self) -> "HaarCoefficients":
        return HaarCoefficients(self.scaling, self.detail.copy())


class HaarSystem:
    def __init__(self, tree: DyadicTree, fn_cube, fn_index, value_ptr, values,
                 strategy: str, seed: int, nonvanish_tol: float):
        self.tree = tree
        self.fn_cube = np.asarray(fn_cube, dtype=np.int64)
        self.fn_index = np.asarray(fn_index, dtype=np.int64)
        self.value_ptr = np.asarray(value_ptr, dtype=np.int64)
        self.values = np.asarray(values, dtype=np.float64)
        self.strategy = strategy
        self.seed = seed
        self.nonvanish_tol = nonvanish_tol
        ptr = np.zeros(tree.n_cubes + 1, dtype=np.int64)
        np.add.at(ptr, self.fn_cube + 1, 1)
        self.cube_fn_ptr = np.cumsum(ptr)

    @property
    def n_functions(self) -> int:
        return len(self.fn_cube)

    @property
    def scaling(self) -> float:
        """Value of the root scaling function ``chi_X / mu(X)^(1/2)``."""
        return 1.0 / math.sqrt(self.tree.measure[0])

    def functions_of(self, q: int) -> range:
        return range(int(self.cube_fn_ptr[q]), int(self.cube_fn_ptr[q + 1]))

    def child_values(self, k: int) -> np.ndarray:
        return self.values[self.value_ptr[k]:self.value_ptr[k + 1]]

    def function_values(self, k: int) -> np.ndarray:
        """Values of function ``k`` on the leaves of its cube."""
        t = self.tree
        ch = t.children(self.fn_cube[k])
        return np.repeat(self.child_values(k), t.leaf_stop[ch] - t.leaf_start[ch])

    def function_on_leaves(self, k: int) -> np.ndarray:
        out = np.zeros(self.tree.n_leaves)
        q = self.fn_cube[k]
        out[self.tree.leaf_start[q]:self.tree.leaf_stop[q]] = self.function_values(k)
        return out

    @cached_property
    def child_matrix(self) -> sp.csr_matrix:
        """Sparse ``(functions x cubes)`` matrix of child values ``h_R``."""
        t = self.tree
        counts = np.diff(self.value_ptr)
        rows = np.repeat(np.arange(self.n_functions), counts)
        cols = np.concatenate([t.children(q) for q in self.fn_cube]) if len(rows) else rows
        return sp.csr_matrix((self.values, (rows, cols)),
                             shape=(self.n_functions, t.n_cubes))

    @cached_property
    def evaluation_matrix(self) -> sp.csc_matrix:
        """Sparse ``(leaves x functions)`` matrix with entries ``h_k(x)``."""
        t = self.tree
        rows, vals = [], []
        for k in range(self.n_functions):
            q = self.fn_cube[k]
            rows.append(np.arange(t.leaf_start[q], t.leaf_stop[q]))
            vals.append(self.function_values(k))
        if not rows:
            return sp.csc_matrix((t.n_leaves, 0))
        indptr = np.zeros(self.n_functions + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(r) for r in rows])
        # column k holds the support of function k in leaf order
        return sp.csc_matrix((np.concatenate(vals), np.concatenate(rows), indptr),
                             shape=(t.n_leaves, self.n_functions))

    @cached_property
    def _levels(self):
        t = self.tree
        return [np.flatnonzero(t.level == j) for j in range(t.depth + 1)]

    def to_json(self) -> dict:
        cubes = []
        for q in self.tree.internal:
            cubes.append({
                "cube": int(q),
                "children": [int(c) for c in self.tree.children(q)],
                "functions": [[float(v) for v in self.child_values(k)]
                              for k in self.functions_of(q)],
            })
        return {"strategy": self.strategy, "seed": self.seed,
                "nonvanish_tol": self.nonvanish_tol, "scaling": self.scaling,
                "cubes": cubes}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


# construction -------------------------------------------------------------

def classical_pair(w_first: float, w_second: float) -> np.ndarray:
    """Two-child Haar values, positive on the first child."""
    total = w_first + w_second
    return np.array([math.sqrt(w_second / (w_first * total)),
                     -math.sqrt(w_first / (w_second * total))])


def weighted_helmert(w) -> np.ndarray:
    """``(m-1) x m`` rows orthonormal for ``<u, v> = sum u_i v_i w_i`` and mean-zero.

    Row ``k`` is constant on children ``0..k``, negative on child ``k+1``
    and zero after it, so it has exact zeros whenever ``m >= 3``.
    """
    w = np.asarray(w, dtype=np.float64)
    m = len(w)
    out = np.zeros((m - 1, m))
    for k in range(1, m):
        head = w[:k].sum()
        tot = head + w[k]
        out[k - 1, :k] = math.sqrt(w[k] / (head * tot))
        out[k - 1, k] = -math.sqrt(head / (w[k] * tot))
    return out


def random_rotation(rng: np.random.Generator, k: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((k, k)))
    return q * np.sign(np.diag(r))


def relative_min(rows: np.ndarray) -> float:
    """Smallest ``min|v| / max|v|`` over the rows."""
    a = np.abs(rows)
    return float((a.min(axis=1) / a.max(axis=1)).min())


def build_haar(tree: DyadicTree, strategy: str = "rotated-helmert", seed: int = 0,
               nonvanish_tol: float = DEFAULT_NONVANISH_TOL) -> HaarSystem:
    """Construct a Haar system on ``tree``.

    Binary cubes get the classical function positive on the first child.
    Cubes with ``m >= 3`` children get a weighted Helmert basis rotated by a
    random orthogonal matrix seeded by ``(seed, cube)``; draws are repeated
    until every value is at least ``nonvanish_tol`` times the largest value
    of its function.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown Haar strategy {strategy!r}")
    fn_cube, fn_index, ptr, vals = [], [], [0], []
    for q in tree.internal:
        ch = tree.children(q)
        w = tree.measure[ch]
        if len(ch) == 2:
            rows = classical_pair(w[0], w[1])[None, :]
        elif strategy == "classical-binary":
            raise ValueError(f"cube {q} has {len(ch)} children; classical-binary "
                             "needs a binary tree")
        else:
            rows = _rotated_helmert(w, seed, int(q), nonvanish_tol)
        for i, row in enumerate(rows):
            fn_cube.append(int(q))
            fn_index.append(i)
            vals.extend(row)
            ptr.append(len(vals))
    return HaarSystem(tree, fn_cube, fn_index, ptr, vals, strategy, seed, nonvanish_tol)


def _rotated_helmert(w, seed: int, cube: int, tol: float) -> np.ndarray:
    base = weighted_helmert(w)
    rng = np.random.default_rng([seed, cube])
    best = 0.0
    for _ in range(RETRY_BUDGET):
        rows = random_rotation(rng, len(w) - 1) @ base
        score = relative_min(rows)
        if score >= tol:
            return rows
        best = max(best, score)
    raise HaarConstructionError(cube, best)


# transforms ----------------------------------------------------------------

def cube_integrals(tree: DyadicTree, f) -> np.ndarray:
    """``int_Q f dmu`` for every cube, accumulated bottom-up level by level."""
    f = np.asarray(f, dtype=np.float64)
    if f.ndim not in (1, 2) or f.shape[0] != tree.n_leaves:
        raise ValueError(f"function has shape {f.shape}, tree has {tree.n_leaves} leaves")
    mu = tree.leaf_measures if f.ndim == 1 else tree.leaf_measures[:, None]
    acc = np.zeros((tree.n_cubes,) + f.shape[1:])
    acc[tree.leaf_cube] = f * mu
    for j in range(tree.depth, 0, -1):
        cubes = np.flatnonzero(tree.level == j)
        np.add.at(acc, tree.parent[cubes], acc[cubes])
    return acc


def analyze(tree: DyadicTree, system: HaarSystem, f) -> HaarCoefficients:
    integrals = cube_integrals(tree, f)
    scaling = integrals[0] * system.scaling
    return HaarCoefficients(scaling=float(scaling) if integrals.ndim == 1 else scaling,
                            detail=system.child_matrix @ integrals)


def synthesize(tree: DyadicTree, system: HaarSystem, coeffs: HaarCoefficients) -> np.ndarray:
    detail = np.asarray(coeffs.detail, dtype=np.float64)
    if detail.shape[:1] != (system.n_functions,) or coeffs.scaling is None:
        raise ValueError(f"expected {system.n_functions} detail coefficients and a "
                         "scaling coefficient")
    acc = system.child_matrix.T @ detail
    for cubes in system._levels[1:]:
        acc[cubes] += acc[tree.parent[cubes]]
    return acc[tree.leaf_cube] + coeffs.scaling * system.scaling


def inner(tree: DyadicTree, f, g) -> float:
    return float(np.dot(np.asarray(f) * tree.leaf_measures, np.asarray(g)))


def norm(tree: DyadicTree, f) -> float:
    return math.sqrt(inner(tree, f, f))


# verification ---------------------------------------------------------------

@dataclass
class HaarReport:
    C1: float
    C2: float
    h5_constant: float
    gram_residual: float | None
    local_residual: float
    mean_zero_residual: float
    counts_ok: bool
    support_ok: bool
    failures: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def verify_haar(tree: DyadicTree, system: HaarSystem, gram_limit: int = 4096,
                gram_tol: float = 1e-10, mean_tol: float = 1e-12) -> HaarReport:
    """Check (h.1)-(h.5) and measure the constants ``C1 <= |h| mu(Q)^(1/2) <= C2``."""
    fails: list[str] = []
    mu = tree.measure
    counts_ok, support_ok = True, True
    local, mean_res = 0.0, 0.0
    c1, c2 = np.inf, 0.0
    for q in tree.internal:
        fns = system.functions_of(q)
        ch = tree.children(q)
        if len(fns) != len(ch) - 1:
            counts_ok = False
            fails.append(f"(h.2) cube {q} has {len(fns)} functions, expected {len(ch) - 1}")
        if not len(fns):
            continue
        rows = np.array([system.child_values(k) for k in fns])
        w = mu[ch]
        basis = np.vstack([np.full(len(ch), 1.0 / math.sqrt(mu[q])), rows])
        gram = (basis * w) @ basis.T
        local = max(local, float(np.abs(gram - np.eye(len(ch))).max()))
        mean_res = max(mean_res, float(np.abs(rows @ w).max()))
        scaled = np.abs(rows) * math.sqrt(mu[q])
        c1 = min(c1, float(scaled.min()))
        c2 = max(c2, float(scaled.max()))
        if np.any(rows.max(axis=1) - rows.min(axis=1) <= 0) or np.any(rows == 0):
            support_ok = False
            fails.append(f"(h.1) cube {q} has a function constant or vanishing on a child")
    if system.n_functions and set(system.fn_cube.tolist()) - set(tree.internal.tolist()):
        counts_ok = False
        fails.append("(h.1) function attached to a non-branching cube")
    gram_res = None
    if tree.n_leaves <= gram_limit:
        B = np.hstack([np.full((tree.n_leaves, 1), system.scaling),
                       system.evaluation_matrix.toarray()])
        G = (B * tree.leaf_measures[:, None]).T @ B
        gram_res = float(np.abs(G - np.eye(G.shape[0])).max())
        if B.shape[1] != tree.n_leaves:
            fails.append(f"system has {B.shape[1]} functions for {tree.n_leaves} leaves")
        if gram_res > gram_tol:
            fails.append(f"(h.4) Gram residual {gram_res:.3g} > {gram_tol}")
    if local > gram_tol:
        fails.append(f"(h.4) local residual {local:.3g} > {gram_tol}")
    if mean_res > mean_tol:
        fails.append(f"(h.3) mean-zero residual {mean_res:.3g} > {mean_tol}")
    if not system.n_functions:
        c1, c2 = 0.0, 0.0
    elif not c1 > 0:
        fails.append("(3.5) lower constant C1 is zero")
    h5 = c2 / c1 if c1 > 0 else math.inf
    return HaarReport(C1=c1, C2=c2, h5_constant=h5, gram_residual=gram_res,
                      local_residual=local, mean_zero_residual=mean_res,
                      counts_ok=counts_ok, support_ok=support_ok, failures=fails)


def haar_lipschitz_constant(tree: DyadicTree, system: HaarSystem) -> float:
    """``max |h(x) - h(x')| mu(Q(h))^(3/2) / delta(x, x')`` over all functions and leaf pairs."""
    best = 0.0
    for k in range(system.n_functions):
        q = system.fn_cube[k]
        lip = lipschitz_sup(tree, q, system.function_values(k))
        best = max(best, lip * float(tree.measure[q]) ** 1.5)
    return best
