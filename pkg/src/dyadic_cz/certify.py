"""Measured Calderon-Zygmund constants, symbol bounds and empirical norm probes."""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .haar import HaarSystem, haar_lipschitz_constant, verify_haar
from .metric import delta_matrix, lca, lipschitz_sup, verify_normal, verify_ultrametric
from .operators import (AlphaSequence, KernelMatrix, Symbol, apply_multiplier,
                        assemble_kernel, l2_norm_estimate, petermichl_compose_diag)
from .tree import DyadicTree, tree_stats, verify_dyadic

TRIPLE_LIMIT = 512
SAMPLED_TRIPLES = 1_000_000


class LemmaViolation(AssertionError):
    """An admissible triple with ``Q(x, y) != Q(x', y)``."""

    def __init__(self, witness: dict):
        super().__init__(f"admissible triple with delta(x,y) != delta(x',y): {witness}")
        self.witness = witness


# Calderon-Zygmund conditions ---------------------------------------------------

def size_constant(tree: DyadicTree, kernel: KernelMatrix, delta=None) -> float:
    """``max_{x != y} delta(x, y) |K(x, y)|``."""
    d = delta_matrix(tree) if delta is None else delta
    prod = d * np.abs(kernel.entries)
    np.fill_diagonal(prod, 0.0)
    return float(prod.max()) if prod.size else 0.0


@dataclass
class SmoothnessResult:
    Cx: float
    Cy: float
    n_triples: int
    mode: str
    empty: bool
    gamma_x: float | None
    gamma_y: float | None


def _scan_rows(K, D, xs):
    """Partial scan over first points ``xs``: returns (max, triples, envelope pairs)."""
    best = 0.0
    count = 0
    env: dict[float, float] = {}
    for x in xs:
        dx = D[x]
        adm = (2.0 * dx[:, None] <= dx[None, :]) & (dx[:, None] > 0.0)
        if not adm.any():
            continue
        xp, y = np.nonzero(adm)
        if np.any(D[xp, y] != dx[y]):
            i = int(np.flatnonzero(D[xp, y] != dx[y])[0])
            raise LemmaViolation({"x": int(x), "x_prime": int(xp[i]), "y": int(y[i])})
        diff = np.abs(K[xp, y] - K[x, y])
        val = diff * dx[y] ** 2 / dx[xp]
        count += len(xp)
        best = max(best, float(val.max()))
        _envelope(env, dx[xp] / dx[y], diff * dx[y])
    return best, count, env


def _envelope(env, t, s):
    keep = s > 0
    if not keep.any():
        return
    t = np.round(t[keep], 12)
    s = s[keep]
    for tv in np.unique(t):
        m = float(s[t == tv].max())
        if m > env.get(float(tv), 0.0):
            env[float(tv)] = m


def _fit_gamma(env) -> float | None:
    """Slope of the upper envelope ``log(|dK| delta(x,y))`` against ``log(delta(x,x')/delta(x,y))``."""
    if len(env) < 2:
        return None
    t = np.log(np.array(sorted(env)))
    s = np.log(np.array([env[k] for k in sorted(env)]))
    return float(np.polyfit(t, s, 1)[0])


def _one_side(K, D, threads, limit, samples, seed, tree):
    n = K.shape[0]
    if n <= limit:
        chunks = np.array_split(np.arange(n), max(1, threads))
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                parts = list(pool.map(lambda xs: _scan_rows(K, D, xs), chunks))
        else:
            parts = [_scan_rows(K, D, chunks[0])]
        env: dict[float, float] = {}
        for _, _, e in parts:
            for k, v in e.items():
                env[k] = max(env.get(k, 0.0), v)
        return (max(p[0] for p in parts), sum(p[1] for p in parts),
                "exhaustive", _fit_gamma(env))
    return _sampled_side(K, D, samples, seed, tree)


def _sampled_side(K, D, samples, seed, tree):
    rng = np.random.default_rng(seed)
    best, count, env = 0.0, 0, {}
    done = 0
    while done < samples:
        m = min(100_000, samples - done)
        done += m
        x = rng.integers(0, tree.n_leaves, m)
        y = rng.integers(0, tree.n_leaves, m)
        ok = x != y
        x, y = x[ok], y[ok]
        q = lca(tree, x, y)
        # x' uniform on the child of Q(x, y) that holds x
        child = tree.leaf_path[x, tree.level[q] + 1]
        lo, hi = tree.leaf_start[child], tree.leaf_stop[child]
        xp = lo + (rng.random(len(x)) * (hi - lo)).astype(np.int64)
        dxy, dxxp = D[x, y], D[x, xp]
        adm = (2.0 * dxxp <= dxy) & (dxxp > 0)
        x, y, xp = x[adm], y[adm], xp[adm]
        if np.any(D[xp, y] != D[x, y]):
            i = int(np.flatnonzero(D[xp, y] != D[x, y])[0])
            raise LemmaViolation({"x": int(x[i]), "x_prime": int(xp[i]), "y": int(y[i])})
        diff = np.abs(K[xp, y] - K[x, y])
        if len(x):
            val = diff * D[x, y] ** 2 / D[x, xp]
            best = max(best, float(val.max()))
            _envelope(env, D[x, xp] / D[x, y], diff * D[x, y])
        count += len(x)
    return best, count, "sampled", _fit_gamma(env)


def smoothness_constants(tree: DyadicTree, kernel: KernelMatrix, delta=None,
                         triple_limit: int = TRIPLE_LIMIT,
                         samples: int = SAMPLED_TRIPLES, seed: int = 0,
                         threads: int = 1) -> SmoothnessResult:
    """Smoothness constants with exponent 1 in each variable.

    ``Cx = max |K(x', y) - K(x, y)| delta(x, y)^2 / delta(x, x')`` over triples
    with ``0 < 2 delta(x, x') <= delta(x, y)``; ``Cy`` is the same scan on the
    transposed kernel.  Every admissible triple is checked for
    ``delta(x', y) == delta(x, y)`` and :class:`LemmaViolation` is raised on
    failure.
    """
    D = delta_matrix(tree) if delta is None else delta
    K = kernel.entries
    cx, nx, mode, gx = _one_side(K, D, threads, triple_limit, samples, seed, tree)
    cy, ny, _, gy = _one_side(np.ascontiguousarray(K.T), D, threads, triple_limit,
                              samples, seed + 1, tree)
    return SmoothnessResult(Cx=cx, Cy=cy, n_triples=nx + ny, mode=mode,
                            empty=(nx + ny) == 0, gamma_x=gx, gamma_y=gy)


# symbol hypotheses -----------------------------------------------------------------

def symbol_conditions(tree: DyadicTree, system: HaarSystem, symbol: Symbol):
    """``(sup |eta|, sup |eta(x',h) - eta(x,h)| mu(Q(h)) / delta(x, x'))``.

    A constant symbol does not depend on ``x`` anywhere on ``X``, so its
    second constant is 0.  A variable symbol is given on ``Q(h)`` only and
    is extended by zero outside.
    """
    symbol.check(system)
    ba, bb = 0.0, 0.0
    for k in range(system.n_functions):
        eta = symbol.leaf_values(system, k)
        if not len(eta):
            continue
        ba = max(ba, float(np.abs(eta).max()))
        if symbol.kind == "variable":
            q = int(system.fn_cube[k])
            bb = max(bb, lipschitz_sup(tree, q, eta) * float(tree.measure[q]))
    return ba, bb


@dataclass
class PetermichlBounds:
    """Closed-form symbol bounds from measured constants."""

    B: float
    case3: float
    case4: float
    case5: float

    @property
    def Bb(self) -> float:
        return max(self.case3, self.case4, self.case5)


def petermichl_symbol_bounds(tree: DyadicTree, system: HaarSystem,
                             alphas: AlphaSequence, haar_report=None) -> PetermichlBounds:
    """``B = M^2 |alpha|_inf sqrt(C) C2/C1`` and the per-case bounds for ``symbol_Bb``.

    Case 3 (points split inside a child ``R`` of ``Q(h)``) gives
    ``2 (M-1) |alpha|_inf (C2/C1) C^(3/2)``; leaving ``Q(h)`` gives ``B``;
    points in different children give ``2B``.
    """
    st = tree_stats(tree)
    hr = haar_report or verify_haar(tree, system, gram_limit=0)
    a = alphas.sup
    if hr.C1 <= 0:
        return PetermichlBounds(math.inf, math.inf, math.inf, math.inf)
    ratio = hr.C2 / hr.C1
    C = st.dyadic_doubling_C
    B = st.M**2 * a * math.sqrt(C) * ratio
    case3 = 2.0 * (st.M - 1) * a * ratio * C**1.5
    return PetermichlBounds(B=B, case3=case3, case4=B, case5=2.0 * B)


# weak integral identity ---------------------------------------------------------------

def _disjoint_pairs(tree: DyadicTree):
    internal = tree.internal
    pairs = []
    for i, a in enumerate(internal):
        for b in internal[i + 1:]:
            if not tree.contains(a, b) and not tree.contains(b, a):
                pairs.append((int(a), int(b)))
    return pairs


def weak_integral_identity(tree: DyadicTree, system: HaarSystem, symbol: Symbol,
                           trials: int = 50, seed: int = 0,
                           kernel: KernelMatrix | None = None) -> float:
    """Max ``|<T phi, psi> - sum K(x, y) phi(y) psi(x) mu(x) mu(y)|`` over random
    Haar-span ``phi``, ``psi`` living in disjoint cubes."""
    K = (kernel or assemble_kernel(tree, system, symbol)).entries
    pairs = _disjoint_pairs(tree)
    if not pairs:
        raise ValueError("tree has no pair of disjoint branching cubes")
    rng = np.random.default_rng(seed)
    mu = tree.leaf_measures
    worst = 0.0
    for _ in range(trials):
        a, b = pairs[int(rng.integers(len(pairs)))]
        if rng.random() < 0.5:
            a, b = b, a
        phi = _random_span(tree, system, a, rng)
        psi = _random_span(tree, system, b, rng)
        lhs = float(np.dot(apply_multiplier(tree, system, symbol, phi) * mu, psi))
        rhs = float((psi * mu) @ K @ (phi * mu))
        worst = max(worst, abs(lhs - rhs))
    return worst


def _random_span(tree, system, cube, rng):
    fns = [k for k in range(system.n_functions) if tree.contains(cube, system.fn_cube[k])]
    c = rng.standard_normal(len(fns))
    out = np.zeros(tree.n_leaves)
    for coef, k in zip(c, fns):
        out += coef * system.function_on_leaves(k)
    return out


# empirical norm probes ---------------------------------------------------------------

def _candidates(tree, system, trials, rng, mean_zero=True):
    n = tree.n_leaves
    mu = tree.leaf_measures
    cols = [rng.standard_normal((n, trials))]
    pick = np.arange(n) if n <= trials else np.sort(rng.choice(n, trials, replace=False))
    ind = np.zeros((n, len(pick)))
    ind[pick, np.arange(len(pick))] = 1.0
    cols.append(ind)
    if system.n_functions:
        fpick = (np.arange(system.n_functions) if system.n_functions <= max(trials, 4096)
                 else np.sort(rng.choice(system.n_functions, trials, replace=False)))
        cols.append(system.evaluation_matrix[:, fpick].toarray())
    F = np.hstack(cols)
    if mean_zero:
        F = F - (mu @ F) / mu.sum()
    return F


def empirical_lp_probe(tree: DyadicTree, system: HaarSystem, symbol: Symbol, p: float,
                       trials: int = 200, seed: int = 0) -> float:
    """Lower estimate of ``||T||_{p->p}`` from random mean-zero functions,
    single-leaf indicators minus their means, and the Haar functions."""
    if not p > 1:
        raise ValueError("p must exceed 1; use weak_11_probe for the endpoint")
    rng = np.random.default_rng(seed)
    F = _candidates(tree, system, trials, rng)
    mu = tree.leaf_measures
    TF = apply_multiplier(tree, system, symbol, F)
    num = np.sum(np.abs(TF) ** p * mu[:, None], axis=0) ** (1.0 / p)
    den = np.sum(np.abs(F) ** p * mu[:, None], axis=0) ** (1.0 / p)
    ok = den > 0
    return float((num[ok] / den[ok]).max()) if ok.any() else 0.0


def weak_ratio(g, mu) -> float:
    """``sup_lambda lambda mu{|g| > lambda}``."""
    a = np.abs(g)
    order = np.argsort(-a, kind="stable")
    return float((a[order] * np.cumsum(mu[order])).max()) if len(a) else 0.0


def weak_11_probe(tree: DyadicTree, system: HaarSystem, symbol: Symbol,
                  trials: int = 200, seed: int = 0) -> float:
    """Sup over test functions of ``sup_lambda lambda mu{|Tf| > lambda} / ||f||_1``.

    Test functions are random (not centred) plus L1-normalised single-leaf
    indicators.
    """
    rng = np.random.default_rng(seed)
    mu = tree.leaf_measures
    F = _candidates(tree, system, trials, rng, mean_zero=False)
    TF = apply_multiplier(tree, system, symbol, F)
    best = 0.0
    for j in range(F.shape[1]):
        l1 = float(np.dot(np.abs(F[:, j]), mu))
        if l1 > 0:
            best = max(best, weak_ratio(TF[:, j], mu) / l1)
    return best


# reports --------------------------------------------------------------------------

@dataclass
class CertReport:
    n_leaves: int
    depth: int
    M: int
    dyadic_doubling_C: float
    growth_eps: float
    C1: float
    C2: float
    h5_constant: float
    haar_lip_C: float
    size_C: float | None = None
    smooth_Cx: float | None = None
    smooth_Cy: float | None = None
    smooth_gamma_x: float | None = None
    smooth_gamma_y: float | None = None
    smooth_mode: str | None = None
    smooth_triples: int = 0
    smooth_empty: bool = False
    symbol_Ba: float | None = None
    symbol_Bb: float | None = None
    bound_B: float | None = None
    l2_estimate: float | None = None
    l2_within_bound: bool | None = None
    lp_estimate: float | None = None
    weak11_estimate: float | None = None
    weak_identity_residual: float | None = None
    normality: dict | None = None
    ultrametric: dict | None = None
    haar: dict | None = None
    composition: dict | None = None
    petermichl_bounds: dict | None = None
    verdicts: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(self.verdicts.values())

    def to_json(self) -> dict:
        return clean_json(asdict(self))

    def csv_row(self) -> dict:
        flat = {}
        for k, v in self.to_json().items():
            if not isinstance(v, (dict, list)):
                flat[k] = v
        flat["passed"] = self.passed
        return flat


SWEEP_COLUMNS = ["depth", "n_leaves", "size_C", "smooth_Cx", "smooth_Cy", "symbol_Ba",
                 "symbol_Bb", "haar_lip_C", "growth_eps", "smooth_empty", "smooth_triples"]


def clean_json(obj):
    if isinstance(obj, dict):
        return {str(k): clean_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean_json(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else ("inf" if f > 0 else "-inf" if f < 0 else "nan")
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def rows_to_csv(rows: list[dict], columns: list[str] | None = None) -> str:
    columns = columns or sorted({k for r in rows for k in r})
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: r.get(k) for k in columns})
    return buf.getvalue()


@dataclass
class CertOptions:
    triple_limit: int = TRIPLE_LIMIT
    sampled_triples: int = SAMPLED_TRIPLES
    dense_limit: int = 4096
    ultrametric_limit: int = 256
    gram_limit: int = 1024
    trials: int = 50
    probe_trials: int = 200
    p: float = 3.0
    power_iterations: int = 1000
    seed: int = 0
    threads: int = 1
    checks: tuple = ("dyadic", "ultrametric", "normality", "haar", "lipschitz",
                     "symbol", "kernel", "identity", "composition", "norms")


def certify(tree: DyadicTree, system: HaarSystem, symbol: Symbol,
            alphas: AlphaSequence | None = None,
            options: CertOptions | None = None) -> CertReport:
    """Run every enabled check and collect constants with pass/fail verdicts."""
    opt = options or CertOptions()
    checks = set(opt.checks)
    dy = verify_dyadic(tree)
    st = dy.stats or tree_stats(tree)
    hr = verify_haar(tree, system, gram_limit=opt.gram_limit)
    rep = CertReport(n_leaves=tree.n_leaves, depth=tree.depth, M=st.M,
                     dyadic_doubling_C=st.dyadic_doubling_C, growth_eps=st.growth_eps,
                     C1=hr.C1, C2=hr.C2, h5_constant=hr.h5_constant,
                     haar_lip_C=haar_lipschitz_constant(tree, system)
                     if "lipschitz" in checks else math.nan)
    v = rep.verdicts
    if "dyadic" in checks:
        v["dyadic"] = dy.ok
    if not dy.ok:
        rep.notes.extend(f["message"] for f in dy.failures)
        rep.notes.append("tree is not dyadic: only metric checks were run")
        checks &= {"dyadic", "ultrametric", "normality"}
    if "ultrametric" in checks:
        if tree.n_leaves <= opt.ultrametric_limit:
            um = verify_ultrametric(tree)
        else:
            um = verify_ultrametric(tree, sample=opt.sampled_triples, seed=opt.seed)
        rep.ultrametric = asdict(um)
        v["ultrametric"] = um.ok
    if "normality" in checks:
        nr = verify_normal(tree, brute_force_limit=opt.ultrametric_limit)
        rep.normality = asdict(nr)
        v["normality"] = nr.ok
    if "haar" in checks:
        rep.haar = asdict(hr)
        v["haar"] = hr.ok
    if "lipschitz" in checks:
        v["haar_lipschitz_finite"] = math.isfinite(rep.haar_lip_C)
    if "symbol" in checks:
        rep.symbol_Ba, rep.symbol_Bb = symbol_conditions(tree, system, symbol)
        rep.bound_B = symbol.bound_B
        v["symbol_finite"] = math.isfinite(rep.symbol_Ba) and math.isfinite(rep.symbol_Bb)
        if alphas is not None:
            pb = petermichl_symbol_bounds(tree, system, alphas, hr)
            rep.petermichl_bounds = {**asdict(pb), "Bb": pb.Bb}
            v["symbol_Ba_within_closed_form"] = rep.symbol_Ba <= pb.B * (1 + 1e-12)
            v["symbol_Bb_within_closed_form"] = rep.symbol_Bb <= pb.Bb * (1 + 1e-12)
    kernel = None
    if ("kernel" in checks or "identity" in checks) and tree.n_leaves <= opt.dense_limit:
        kernel = assemble_kernel(tree, system, symbol, dense_limit=opt.dense_limit)
    elif "kernel" in checks:
        rep.notes.append("kernel checks skipped: dense limit exceeded")
    if "kernel" in checks and kernel is not None:
        D = delta_matrix(tree)
        rep.size_C = size_constant(tree, kernel, D)
        try:
            sm = smoothness_constants(tree, kernel, D, opt.triple_limit,
                                      opt.sampled_triples, opt.seed, opt.threads)
        except LemmaViolation as exc:
            rep.notes.append(str(exc))
            v["admissible_triple_lemma"] = False
        else:
            v["admissible_triple_lemma"] = True
            rep.smooth_Cx, rep.smooth_Cy = sm.Cx, sm.Cy
            rep.smooth_gamma_x, rep.smooth_gamma_y = sm.gamma_x, sm.gamma_y
            rep.smooth_mode, rep.smooth_triples = sm.mode, sm.n_triples
            rep.smooth_empty = sm.empty
            if sm.empty:
                rep.notes.append("smoothness scan: empty admissible set, constants are 0")
            v["cz_constants_finite"] = all(math.isfinite(c) for c in
                                           (rep.size_C, sm.Cx, sm.Cy))
    if "identity" in checks and kernel is not None:
        try:
            rep.weak_identity_residual = weak_integral_identity(
                tree, system, symbol, opt.trials, opt.seed, kernel)
            v["weak_integral_identity"] = rep.weak_identity_residual <= 1e-9
        except ValueError as exc:
            rep.notes.append(f"weak integral identity skipped: {exc}")
    if "composition" in checks and alphas is not None:
        comp = petermichl_compose_diag(tree, system, alphas)
        rep.composition = {
            "diagonal": comp.diagonal, "expected": comp.expected,
            "interior": comp.interior, "offdiag_residual": comp.offdiag_residual,
            "cross_cube_residual": comp.cross_cube_residual,
            "within_cube_residual": comp.within_cube_residual,
            "unimodular": comp.unimodular, "bracket_ok": comp.bracket_ok,
        }
        v["composition_diagonal"] = all(
            abs(comp.diagonal[q] - comp.expected[q]) <= 1e-10 for q in comp.diagonal)
        v["composition_offdiag"] = comp.offdiag_residual <= 1e-10
        if comp.unimodular:
            v["composition_bracket"] = comp.bracket_ok
        else:
            rep.notes.append("alphas not unimodular: 1 <= C(Q) <= M^2 not checked")
    if "norms" in checks:
        rep.l2_estimate = l2_norm_estimate(tree, system, symbol, opt.power_iterations,
                                           opt.seed)
        rep.l2_within_bound = rep.l2_estimate <= symbol.bound_B * (1 + 1e-9)
        if not rep.l2_within_bound:
            rep.notes.append("l2 estimate exceeds sup|eta|")
        rep.lp_estimate = empirical_lp_probe(tree, system, symbol, opt.p, opt.probe_trials,
                                             opt.seed)
        rep.weak11_estimate = weak_11_probe(tree, system, symbol, opt.probe_trials, opt.seed)
        v["norm_probes_finite"] = all(math.isfinite(x) for x in
                                      (rep.l2_estimate, rep.lp_estimate, rep.weak11_estimate))
    return rep


def sweep_row(report: CertReport) -> dict:
    row = report.csv_row()
    return {k: row.get(k) for k in SWEEP_COLUMNS} | {"passed": report.passed}


def stability_sweep(make_tree, make_operator, depths, options: CertOptions | None = None,
                    max_leaves: int | None = None) -> list[dict]:
    """One report row per depth.

    ``make_tree(depth)`` builds the tree, ``make_operator(tree)`` returns
    ``(system, symbol, alphas_or_None)``.  Rows beyond ``max_leaves`` are
    marked skipped.
    """
    opt = options or CertOptions()
    limit = max_leaves or opt.dense_limit
    rows = []
    for d in sorted(depths):
        tree = make_tree(d)
        if tree.n_leaves > limit:
            rows.append({"depth": d, "n_leaves": tree.n_leaves, "skipped": True})
            continue
        system, symbol, alphas = make_operator(tree)
        sweep_opts = CertOptions(**{**asdict(opt), "checks": (
            "lipschitz", "symbol", "kernel")})
        rep = certify(tree, system, symbol, alphas, sweep_opts)
        row = sweep_row(rep)
        row["depth"] = d
        row["skipped"] = False
        rows.append(row)
    return rows


def relative_variation(rows: list[dict], column: str) -> float:
    """``(max - min) / max`` of a sweep column over the rows that ran."""
    vals = [r[column] for r in rows if not r.get("skipped") and r.get(column) is not None]
    if not vals:
        return 0.0
    hi, lo = max(vals), min(vals)
    return 0.0 if hi == 0 else (hi - lo) / abs(hi)
