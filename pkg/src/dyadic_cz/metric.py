"""Dyadic ultrametric, smallest common cubes and dyadic balls."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .tree import DyadicTree, tree_stats


@dataclass
class NormalityReport:
    sup_ratio: float
    inf_ratio: float
    ball_equals_cube: bool
    lower_bound_holds: bool
    doubling_C: float
    resolution: float
    n_checked: int
    witness: dict | None = None

    @property
    def ok(self) -> bool:
        return self.ball_equals_cube and self.lower_bound_holds and self.sup_ratio <= 1.0


@dataclass
class UltrametricReport:
    ok: bool
    n_triples: int
    mode: str
    worst: dict | None


def _check_leaf(tree: DyadicTree, x) -> None:
    arr = np.asarray(x)
    if np.any(arr < 0) or np.any(arr >= tree.n_leaves):
        raise IndexError(f"leaf index out of range 0..{tree.n_leaves - 1}: {x!r}")


def lca(tree: DyadicTree, x, y):
    """Vectorised smallest common cube of leaf arrays ``x`` and ``y``."""
    x = np.asarray(x)
    y = np.asarray(y)
    _check_leaf(tree, x)
    _check_leaf(tree, y)
    px = tree.leaf_path[x]
    py = tree.leaf_path[y]
    common = ((px == py) & (px >= 0)).sum(axis=-1)
    return np.take_along_axis(px, (common - 1)[..., None], axis=-1)[..., 0]


def smallest_common_cube(tree: DyadicTree, x: int, y: int) -> int:
    """Smallest cube containing leaves ``x`` and ``y``; the leaf itself when ``x == y``."""
    return int(lca(tree, x, y))


def delta(tree: DyadicTree, x: int, y: int) -> float:
    if x == y:
        _check_leaf(tree, x)
        return 0.0
    return float(tree.measure[smallest_common_cube(tree, x, y)])


def lca_matrix(tree: DyadicTree) -> np.ndarray:
    """Dense ``n x n`` table of smallest common cubes (leaf cube on the diagonal)."""
    path = tree.leaf_path
    out = np.zeros((tree.n_leaves, tree.n_leaves), dtype=np.int64)
    for j in range(path.shape[1]):
        col = path[:, j]
        same = (col[:, None] == col[None, :]) & (col[:, None] >= 0)
        np.copyto(out, col[:, None], where=same)
    return out


def delta_matrix(tree: DyadicTree) -> np.ndarray:
    d = tree.measure[lca_matrix(tree)]
    np.fill_diagonal(d, 0.0)
    return d


def ball(tree: DyadicTree, x: int, r: float) -> np.ndarray:
    """Closed dyadic ball ``{y : delta(x, y) <= r}``.

    This is the biggest cube through ``x`` whose measure is at most ``r``,
    or ``{x}`` when even the leaf of ``x`` is heavier than ``r``.
    """
    if not r > 0:
        raise ValueError("radius must be positive")
    _check_leaf(tree, x)
    path = tree.leaf_path[x]
    path = path[path >= 0]
    fits = tree.measure[path] <= r
    if not fits.any():
        return np.array([x])
    q = path[np.argmax(fits)]  # measures decrease along the path
    return np.arange(tree.leaf_start[q], tree.leaf_stop[q])


def ball_cube(tree: DyadicTree, x: int, r: float) -> int | None:
    path = tree.leaf_path[x]
    path = path[path >= 0]
    fits = tree.measure[path] <= r
    return int(path[np.argmax(fits)]) if fits.any() else None


def verify_ultrametric(tree: DyadicTree | None = None, sample: int | None = None,
                       seed: int = 0, table: np.ndarray | None = None) -> UltrametricReport:
    """Check ``delta(x,y) <= max(delta(x,z), delta(z,y))``.

    Exhaustive over all triples unless ``sample`` gives a number of seeded
    random triples.  ``table`` overrides the delta matrix computed from
    ``tree`` (used to feed in corrupted tables).
    """
    if table is None and sample is not None:
        rng = np.random.default_rng(seed)
        n = tree.n_leaves
        x, y, z = (rng.integers(0, n, size=sample) for _ in range(3))
        dxy = np.where(x == y, 0.0, tree.measure[lca(tree, x, y)])
        dxz = np.where(x == z, 0.0, tree.measure[lca(tree, x, z)])
        dzy = np.where(z == y, 0.0, tree.measure[lca(tree, z, y)])
        excess = dxy - np.maximum(dxz, dzy)
        i = int(np.argmax(excess))
        worst = {"x": int(x[i]), "y": int(y[i]), "z": int(z[i]), "excess": float(excess[i])}
        return UltrametricReport(ok=bool(excess[i] <= 0), n_triples=sample,
                                 mode="sampled", worst=worst)
    d = delta_matrix(tree) if table is None else np.asarray(table, dtype=np.float64)
    n = d.shape[0]
    best = (-np.inf, 0, 0, 0)
    for z in range(n):
        excess = d - np.maximum(d[:, z][:, None], d[z, :][None, :])
        k = int(np.argmax(excess))
        if excess.flat[k] > best[0]:
            best = (float(excess.flat[k]), k // n, k % n, z)
    worst = {"x": best[1], "y": best[2], "z": best[3], "excess": best[0]}
    return UltrametricReport(ok=best[0] <= 0, n_triples=n**3, mode="exhaustive",
                             worst=worst)


def verify_normal(tree: DyadicTree, brute_force_limit: int = 1024) -> NormalityReport:
    """Sweep radii through every ancestor measure of every leaf, one ulp either side.

    Between consecutive ancestor measures the ball is fixed and
    ``mu(B)/r`` is monotone, so these radii carry the extremes.  Radii run
    from the measure of the leaf of ``x`` up to the root measure.  The lower
    bound ``r < C mu(B)`` is checked in exact rational arithmetic.
    """
    C = tree_stats(tree).dyadic_doubling_C
    C_exact = Fraction(C)
    mu = tree.measure
    root = float(mu[0])
    brute = tree.n_leaves <= brute_force_limit
    d = delta_matrix(tree) if brute else None
    sup_r, inf_r = 0.0, np.inf
    lower_ok, equal_ok = True, True
    witness = None
    checked = 0
    for x in range(tree.n_leaves):
        path = tree.leaf_path[x]
        path = path[path >= 0]
        lo = float(mu[path[-1]])
        radii = set()
        for m in mu[path]:
            m = float(m)
            for r in (np.nextafter(m, 0.0), m, np.nextafter(m, np.inf)):
                if lo <= r <= root:
                    radii.add(float(r))
        for r in sorted(radii):
            q = ball_cube(tree, x, r)
            mb = float(mu[q])
            ratio = mb / r
            sup_r = max(sup_r, ratio)
            inf_r = min(inf_r, ratio)
            checked += 1
            if r < root and not Fraction(r) < C_exact * Fraction(mb):
                lower_ok = False
                witness = witness or {"x": x, "r": r, "ball_measure": mb}
            if brute:
                members = np.flatnonzero(d[x] <= r)
                expect = np.arange(tree.leaf_start[q], tree.leaf_stop[q])
                if not np.array_equal(members, expect):
                    equal_ok = False
                    witness = witness or {"x": x, "r": r, "ball": members.tolist()}
    internal = tree.internal
    resolution = float(mu[internal].min()) if len(internal) else root
    return NormalityReport(sup_ratio=sup_r, inf_ratio=float(inf_r),
                           ball_equals_cube=equal_ok, lower_bound_holds=lower_ok,
                           doubling_C=C, resolution=resolution, n_checked=checked,
                           witness=witness)


def lipschitz_sup(tree: DyadicTree, cube: int, values) -> float:
    """``sup |g(x) - g(x')| / delta(x, x')`` for ``g`` equal to ``values`` on the
    leaves of ``cube`` and zero elsewhere.

    Pairs split by a subcube ``S`` of ``cube`` sit at distance ``mu(S)``;
    pairs leaving ``cube`` are at distance at least the parent measure.
    """
    g = np.asarray(values, dtype=np.float64)
    a = int(tree.leaf_start[cube])
    best = 0.0
    p = tree.parent[cube]
    if p >= 0:
        best = float(np.abs(g).max()) / float(tree.measure[p])
    stop = cube + tree.subtree_size[cube]
    for s in range(cube, stop):
        ch = tree.children(s)
        if len(ch) == 0:
            continue
        b = int(tree.leaf_start[s]) - a
        gs = g[b:b + int(tree.leaf_stop[s] - tree.leaf_start[s])]
        starts = tree.leaf_start[ch] - tree.leaf_start[s]
        hi = np.maximum.reduceat(gs, starts)
        lo = np.minimum.reduceat(gs, starts)
        # largest max_i - min_j over i != j
        order = np.argsort(lo, kind="stable")
        j0, j1 = order[0], order[1]
        other_min = np.where(np.arange(len(ch)) == j0, lo[j1], lo[j0])
        spread = float((hi - other_min).max())
        best = max(best, spread / float(tree.measure[s]))
    return best


def characteristic_lipschitz(tree: DyadicTree) -> float:
    """Max over cubes of ``mu(Q) * Lip(chi_Q)``; at most 1 on a dyadic tree."""
    worst = 0.0
    for q in range(tree.n_cubes):
        g = np.ones(int(tree.leaf_stop[q] - tree.leaf_start[q]))
        worst = max(worst, float(tree.measure[q]) * lipschitz_sup(tree, q, g))
    return worst
