"""Haar multipliers with constant or variable symbols and generalised Petermichl shifts.

All operators send the scaling (constant) component to zero, so their
kernels ``K(x, y) = sum_h eta(x, h) h(x) h(y)`` take values in mean-zero
functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .haar import HaarCoefficients, HaarSystem, analyze, synthesize
from .tree import DyadicTree

DENSE_LIMIT = 4096


class SymbolError(ValueError):
    pass


@dataclass
class Symbol:
    """Multiplier symbol indexed by Haar function id.

    ``constant`` holds one value per function; ``variable`` holds, per
    function, its values on the leaves of the function's cube (the symbol is
    zero elsewhere).
    """

    kind: str
    constant: np.ndarray | None = None
    variable: list[np.ndarray] | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def from_constant(cls, values) -> "Symbol":
        return cls("constant", constant=np.asarray(values, dtype=np.float64))

    @classmethod
    def from_variable(cls, values) -> "Symbol":
        return cls("variable", variable=[np.asarray(v, dtype=np.float64) for v in values])

    @property
    def n_functions(self) -> int:
        return len(self.constant) if self.kind == "constant" else len(self.variable)

    @property
    def bound_B(self) -> float:
        """``sup |eta|``."""
        if self.kind == "constant":
            return float(np.abs(self.constant).max()) if len(self.constant) else 0.0
        return max((float(np.abs(v).max()) for v in self.variable if len(v)), default=0.0)

    def check(self, system: HaarSystem) -> None:
        if self.n_functions != system.n_functions:
            raise SymbolError(f"symbol has {self.n_functions} entries, system has "
                              f"{system.n_functions} Haar functions")
        if self.kind == "variable":
            t = system.tree
            for k, v in enumerate(self.variable):
                q = system.fn_cube[k]
                if len(v) != t.leaf_stop[q] - t.leaf_start[q]:
                    raise SymbolError(f"variable symbol entry {k} has {len(v)} values, "
                                      f"cube {q} has {t.leaf_stop[q] - t.leaf_start[q]} leaves")
                if not np.all(np.isfinite(v)):
                    raise SymbolError(f"variable symbol entry {k} is not finite")

    def leaf_values(self, system: HaarSystem, k: int) -> np.ndarray:
        """``eta(., h_k)`` on the leaves of ``Q(h_k)``."""
        if self.kind == "variable":
            return self.variable[k]
        t = system.tree
        q = system.fn_cube[k]
        return np.full(int(t.leaf_stop[q] - t.leaf_start[q]), self.constant[k])

    def weighted_evaluation(self, system: HaarSystem) -> sp.csc_matrix:
        """Sparse ``(leaves x functions)`` matrix ``eta(x, h) h(x)``."""
        key = ("G", id(system))
        if key not in self._cache:
            self.check(system)
            H = system.evaluation_matrix
            if self.kind == "constant":
                G = H @ sp.diags(self.constant)
            else:
                # columns of H are the function supports in leaf order
                data = H.data * np.concatenate(self.variable) if len(H.data) else H.data
                G = sp.csc_matrix((data, H.indices, H.indptr), shape=H.shape)
            self._cache[key] = sp.csc_matrix(G)
        return self._cache[key]

    def to_json(self, system: HaarSystem) -> dict:
        entries = []
        for k in range(self.n_functions):
            val = (float(self.constant[k]) if self.kind == "constant"
                   else [float(v) for v in self.variable[k]])
            entries.append({"cube": int(system.fn_cube[k]),
                            "index": int(system.fn_index[k]), "eta": val})
        return {"kind": self.kind, "values": entries}


def symbol_from_json(doc: dict, system: HaarSystem) -> Symbol:
    """Read a symbol keyed by ``(cube, index)``; every Haar function needs an entry."""
    kind = doc.get("kind")
    if kind not in ("constant", "variable"):
        raise SymbolError(f"symbol kind must be 'constant' or 'variable', got {kind!r}")
    table = {(int(e["cube"]), int(e["index"])): e["eta"] for e in doc.get("values", [])}
    out = []
    for k in range(system.n_functions):
        key = (int(system.fn_cube[k]), int(system.fn_index[k]))
        if key not in table:
            raise SymbolError(f"symbol has no entry for cube {key[0]} index {key[1]}")
        out.append(table[key])
    sym = Symbol.from_constant(out) if kind == "constant" else Symbol.from_variable(out)
    sym.check(system)
    return sym


@dataclass
class AlphaSequence:
    values: np.ndarray

    @property
    def sup(self) -> float:
        return float(np.abs(self.values).max()) if len(self.values) else 0.0

    def to_json(self, system: HaarSystem) -> dict:
        return {"alphas": [{"cube": int(system.fn_cube[k]), "index": int(system.fn_index[k]),
                            "alpha": float(a)} for k, a in enumerate(self.values)]}


def alphas_from_json(doc: dict, system: HaarSystem) -> AlphaSequence:
    table = {(int(e["cube"]), int(e["index"])): float(e["alpha"]) for e in doc["alphas"]}
    vals = []
    for k in range(system.n_functions):
        key = (int(system.fn_cube[k]), int(system.fn_index[k]))
        if key not in table:
            raise SymbolError(f"alphas have no entry for cube {key[0]} index {key[1]}")
        vals.append(table[key])
    return AlphaSequence(np.array(vals))


def alpha_preset(system: HaarSystem, spec: str) -> AlphaSequence:
    """``plus-minus``: (-1)^(child position of Q(h)); ``ones``; ``random:<seed>``
    (uniform on [-1, 1]); ``random-sign:<seed>``."""
    name, _, arg = spec.partition(":")
    n = system.n_functions
    if name == "plus-minus":
        slot = system.tree.leaf_child_slot[system.fn_cube]
        return AlphaSequence(np.where(slot % 2 == 0, 1.0, -1.0))
    if name == "ones":
        return AlphaSequence(np.ones(n))
    if name == "random":
        return AlphaSequence(np.random.default_rng(int(arg or 0)).uniform(-1.0, 1.0, n))
    if name == "random-sign":
        rng = np.random.default_rng(int(arg or 0))
        return AlphaSequence(rng.choice([-1.0, 1.0], size=n))
    raise SymbolError(f"unknown alpha preset {spec!r}")


# multipliers ------------------------------------------------------------------

def apply_multiplier(tree: DyadicTree, system: HaarSystem, symbol: Symbol, f) -> np.ndarray:
    """``T f(x) = sum_h eta(x, h) <f, h> h(x)``; accepts one function or a column batch."""
    symbol.check(system)
    coeffs = analyze(tree, system, f)
    if symbol.kind == "constant":
        detail = coeffs.detail * (symbol.constant if coeffs.detail.ndim == 1
                                  else symbol.constant[:, None])
        zero = np.zeros_like(np.asarray(coeffs.scaling))
        return synthesize(tree, system, HaarCoefficients(zero, detail))
    return symbol.weighted_evaluation(system) @ coeffs.detail


@dataclass
class KernelMatrix:
    entries: np.ndarray
    tree: DyadicTree


def assemble_kernel(tree: DyadicTree, system: HaarSystem, symbol: Symbol,
                    dense_limit: int = DENSE_LIMIT) -> KernelMatrix:
    if tree.n_leaves > dense_limit:
        raise ValueError(f"{tree.n_leaves} leaves exceed the dense kernel limit {dense_limit}")
    G = symbol.weighted_evaluation(system)
    K = (G @ system.evaluation_matrix.T).toarray()
    return KernelMatrix(entries=np.asarray(K), tree=tree)


# Petermichl shift --------------------------------------------------------------

def _parent_of_function(system: HaarSystem) -> np.ndarray:
    return system.tree.parent[system.fn_cube]


def _check_alphas(system: HaarSystem, alphas: AlphaSequence) -> None:
    if len(alphas.values) != system.n_functions:
        raise SymbolError(f"{len(alphas.values)} alphas for {system.n_functions} "
                          "Haar functions")


def petermichl_coefficients(system: HaarSystem, alphas: AlphaSequence, detail) -> np.ndarray:
    """Shift in coefficient space: ``h~`` on a child of ``Q`` receives
    ``alpha_h~ * sum_{Q(h)=Q} <f, h>``."""
    _check_alphas(system, alphas)
    detail = np.asarray(detail, dtype=np.float64)
    per_cube = np.zeros((system.tree.n_cubes,) + detail.shape[1:])
    np.add.at(per_cube, system.fn_cube, detail)
    par = _parent_of_function(system)
    out = np.zeros_like(detail)
    has = par >= 0
    a = alphas.values[has] if detail.ndim == 1 else alphas.values[has][:, None]
    out[has] = a * per_cube[par[has]]
    return out


def petermichl_adjoint_coefficients(system: HaarSystem, alphas: AlphaSequence,
                                    detail) -> np.ndarray:
    _check_alphas(system, alphas)
    detail = np.asarray(detail, dtype=np.float64)
    par = _parent_of_function(system)
    has = par >= 0
    a = alphas.values[has] if detail.ndim == 1 else alphas.values[has][:, None]
    per_cube = np.zeros((system.tree.n_cubes,) + detail.shape[1:])
    np.add.at(per_cube, par[has], a * detail[has])
    return per_cube[system.fn_cube]


def petermichl_apply(tree: DyadicTree, system: HaarSystem, alphas: AlphaSequence,
                     f) -> np.ndarray:
    c = analyze(tree, system, f)
    out = petermichl_coefficients(system, alphas, c.detail)
    return synthesize(tree, system, HaarCoefficients(np.zeros_like(np.asarray(c.scaling)), out))


def petermichl_adjoint_apply(tree: DyadicTree, system: HaarSystem, alphas: AlphaSequence,
                             f) -> np.ndarray:
    c = analyze(tree, system, f)
    out = petermichl_adjoint_coefficients(system, alphas, c.detail)
    return synthesize(tree, system, HaarCoefficients(np.zeros_like(np.asarray(c.scaling)), out))


def petermichl_matrix(system: HaarSystem, alphas: AlphaSequence) -> sp.csr_matrix:
    """``P`` in the Haar basis: entry ``(h~, h)`` is ``alpha_h~`` when ``Q(h)`` is the
    parent of ``Q(h~)``."""
    _check_alphas(system, alphas)
    par = _parent_of_function(system)
    rows, cols, vals = [], [], []
    for k in np.flatnonzero(par >= 0):
        for j in system.functions_of(par[k]):
            rows.append(k)
            cols.append(j)
            vals.append(alphas.values[k])
    n = system.n_functions
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


@dataclass
class CompositionReport:
    diagonal: dict[int, float]
    expected: dict[int, float]
    interior: list[int]
    offdiag_residual: float
    cross_cube_residual: float
    within_cube_residual: float
    M: int
    unimodular: bool

    @property
    def bracket_ok(self) -> bool:
        """``1 <= C(Q) <= M^2`` on every cube with grandchildren (only claimed for |alpha| = 1)."""
        return all(1.0 <= self.diagonal[q] <= self.M**2 for q in self.interior)


def petermichl_compose_diag(tree: DyadicTree, system: HaarSystem,
                            alphas: AlphaSequence) -> CompositionReport:
    """Diagonal and off-diagonal parts of ``P* P`` in the Haar basis.

    ``C(Q)`` is read off the diagonal; ``expected`` is ``sum alpha_h~^2`` over
    the functions on the children of ``Q``.  The off-diagonal residual is
    split into entries between different cubes and entries between two
    functions of the same cube.
    """
    P = petermichl_matrix(system, alphas)
    PtP = (P.T @ P).toarray()
    diag = np.diag(PtP)
    off = PtP - np.diag(diag)
    same = system.fn_cube[:, None] == system.fn_cube[None, :]
    cross = float(np.abs(off[~same]).max()) if (~same).any() else 0.0
    within = float(np.abs(off[same]).max()) if same.any() else 0.0
    sq = np.zeros(tree.n_cubes)
    par = _parent_of_function(system)
    has = par >= 0
    np.add.at(sq, par[has], alphas.values[has] ** 2)
    diagonal, expected = {}, {}
    for q in tree.internal:
        fns = system.functions_of(q)
        diagonal[int(q)] = float(diag[fns.start])
        expected[int(q)] = float(sq[q])
    interior = [int(q) for q in tree.internal
                if any(not tree.is_leaf(c) for c in tree.children(q))]
    unimodular = bool(np.all(np.abs(alphas.values) == 1.0))
    return CompositionReport(diagonal=diagonal, expected=expected, interior=interior,
                             offdiag_residual=max(cross, within), cross_cube_residual=cross,
                             within_cube_residual=within, M=int(tree.n_children.max()),
                             unimodular=unimodular)


def petermichl_symbol(tree: DyadicTree, system: HaarSystem, alphas: AlphaSequence) -> Symbol:
    """Variable symbol with ``eta(x, h) h(x) = sum_{R child of Q(h)} sum_{h~ on R} alpha_h~ h~(x)``.

    On a child ``R`` of ``Q(h)`` the symbol is that sum divided by the
    constant value ``h_R``.
    """
    _check_alphas(system, alphas)
    shifted = {}
    for q in tree.internal:
        for r in tree.children(q):
            u = np.zeros(int(tree.leaf_stop[r] - tree.leaf_start[r]))
            for j in system.functions_of(r):
                u += alphas.values[j] * system.function_values(j)
            shifted[int(r)] = u
    out = []
    for k in range(system.n_functions):
        q = system.fn_cube[k]
        hv = system.child_values(k)
        if np.any(np.abs(hv) < system.nonvanish_tol * np.abs(hv).max()):
            raise SymbolError(f"Haar function {k} on cube {q} nearly vanishes on a child")
        out.append(np.concatenate([shifted[int(r)] / hv[i]
                                   for i, r in enumerate(tree.children(q))]))
    return Symbol.from_variable(out)


# norm estimation ----------------------------------------------------------------

def l2_norm_estimate(tree: DyadicTree, system: HaarSystem, symbol: Symbol,
                     iterations: int = 1000, seed: int = 0, tol: float = 1e-14) -> float:
    """``||T||`` on mean-zero functions from the top eigenvalue of ``T* T`` in Haar
    coordinates.

    A mean-zero ``f`` is ``sum c_h h`` with ``||f|| = |c|``, so the Gram
    operator is ``G^T diag(mu) G`` where ``G`` maps coefficients to ``T f``.
    Lanczos iteration (``eigsh``) is used above 64 functions, a dense
    eigensolver below.
    """
    symbol.check(system)
    n = system.n_functions
    if n == 0:
        return 0.0
    if symbol.kind == "constant":
        sq = symbol.constant**2

        def gram(v):
            return sq * v if v.ndim == 1 else sq[:, None] * v
    else:
        G = symbol.weighted_evaluation(system)
        GtW = sp.csr_matrix(G.T.multiply(tree.leaf_measures[None, :]))

        def gram(v):
            return GtW @ (G @ v)

    if n <= 64:
        lam = float(np.linalg.eigvalsh(gram(np.eye(n))).max())
    else:
        op = spla.LinearOperator((n, n), matvec=gram, dtype=np.float64)
        v0 = np.random.default_rng(seed).standard_normal(n)
        lam = float(spla.eigsh(op, k=1, which="LA", v0=v0, tol=tol,
                               maxiter=max(int(iterations), 1) * 10,
                               return_eigenvectors=False)[0])
    return math.sqrt(max(lam, 0.0))
