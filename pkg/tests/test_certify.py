import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dyadic_cz.certify import (LemmaViolation, certify, empirical_lp_probe,
                               petermichl_symbol_bounds, relative_variation, rows_to_csv,
                               size_constant, smoothness_constants, stability_sweep,
                               symbol_conditions, weak_11_probe, weak_integral_identity,
                               weak_ratio)
from dyadic_cz.haar import build_haar
from dyadic_cz.metric import delta_matrix
from dyadic_cz.operators import (Symbol, alpha_preset, assemble_kernel, l2_norm_estimate,
                                 petermichl_symbol)
from dyadic_cz.tree import build_random, build_uniform


def brute_smoothness(K, D):
    """Triple loop over ``(x, x', y)``."""
    n = len(K)
    best = 0.0
    for x in range(n):
        for xp in range(n):
            for y in range(n):
                if 0 < 2 * D[x, xp] <= D[x, y]:
                    assert D[xp, y] == D[x, y]
                    best = max(best, abs(K[xp, y] - K[x, y]) * D[x, y] ** 2 / D[x, xp])
    return best


def brute_symbol_bb(tree, system, symbol):
    D = delta_matrix(tree)
    n = tree.n_leaves
    off = ~np.eye(n, dtype=bool)
    best = 0.0
    for k in range(system.n_functions):
        q = system.fn_cube[k]
        eta = np.zeros(n)
        eta[tree.leaf_start[q]:tree.leaf_stop[q]] = symbol.leaf_values(system, k)
        best = max(best, (np.abs(eta[:, None] - eta[None, :])[off] / D[off]).max()
                   * tree.measure[q])
    return best


def petermichl(tree, system, preset="plus-minus"):
    a = alpha_preset(system, preset)
    return petermichl_symbol(tree, system, a), a


def test_size_constant_identity(bin3_haar):
    tree, system = bin3_haar
    K = assemble_kernel(tree, system, Symbol.from_constant(np.ones(7)))
    D = delta_matrix(tree)
    assert D[0, 7] * abs(K.entries[0, 7]) == pytest.approx(1.0)
    zero = assemble_kernel(tree, system, Symbol.from_constant(np.zeros(7)))
    assert size_constant(tree, zero) == 0.0


def test_constant_symbol_same_deepest_cube(bin3_haar):
    tree, system = bin3_haar
    K = assemble_kernel(tree, system, Symbol.from_constant(np.ones(7))).entries
    for y in range(2, 8):
        assert K[1, y] == pytest.approx(K[0, y])


@given(st.integers(0, 10_000))
def test_smoothness_matches_triple_loop(seed):
    t = build_random(seed, 3, (2, 3))
    s = build_haar(t, seed=seed)
    sym, _ = petermichl(t, s, f"random:{seed}")
    K = assemble_kernel(t, s, sym)
    D = delta_matrix(t)
    res = smoothness_constants(t, K)
    assert res.mode == "exhaustive"
    assert res.Cx == pytest.approx(brute_smoothness(K.entries, D), rel=1e-12, abs=1e-15)
    assert res.Cy == pytest.approx(brute_smoothness(K.entries.T, D), rel=1e-12, abs=1e-15)


def test_smoothness_threads_agree():
    t = build_random(3, 4, (2, 3))
    s = build_haar(t)
    K = assemble_kernel(t, s, petermichl(t, s)[0])
    one = smoothness_constants(t, K, threads=1)
    four = smoothness_constants(t, K, threads=4)
    assert (one.Cx, one.Cy, one.n_triples) == (four.Cx, four.Cy, four.n_triples)


def test_smoothness_sampled_mode():
    t = build_uniform(5, 2)
    s = build_haar(t)
    K = assemble_kernel(t, s, petermichl(t, s)[0])
    exact = smoothness_constants(t, K)
    sampled = smoothness_constants(t, K, triple_limit=8, samples=200_000, seed=1)
    assert sampled.mode == "sampled"
    assert sampled.Cx <= exact.Cx * (1 + 1e-12)
    assert sampled.Cx == pytest.approx(exact.Cx)


def test_lemma_violation_has_witness(bin3_haar):
    tree, system = bin3_haar
    K = assemble_kernel(tree, system, Symbol.from_constant(np.ones(7)))
    D = delta_matrix(tree)
    D[1, 7] = D[7, 1] = 0.5  # x=0, x'=1 share a quarter, but y=7 now sees a different scale
    with pytest.raises(LemmaViolation) as err:
        smoothness_constants(tree, K, delta=D)
    assert set(err.value.witness) == {"x", "x_prime", "y"}


def test_empty_scan_flag():
    t = build_uniform(1, 2)
    s = build_haar(t)
    res = smoothness_constants(t, assemble_kernel(t, s, Symbol.from_constant(np.ones(1))))
    assert res.empty and res.Cx == 0.0 and res.n_triples == 0


def test_constant_symbol_conditions():
    t = build_random(2, 3, (2, 4))
    s = build_haar(t)
    eta = np.linspace(-2, 1, s.n_functions)
    ba, bb = symbol_conditions(t, s, Symbol.from_constant(eta))
    assert ba == pytest.approx(2.0)
    assert bb == 0.0


def test_binary_petermichl_symbol_conditions(bin3_haar):
    tree, system = bin3_haar
    sym, a = petermichl(tree, system)
    ba, bb = symbol_conditions(tree, system, sym)
    assert ba == pytest.approx(math.sqrt(2))
    assert bb == pytest.approx(brute_symbol_bb(tree, system, sym))
    b = petermichl_symbol_bounds(tree, system, a)
    assert ba <= b.B and bb <= b.Bb


@given(st.integers(0, 10_000))
def test_symbol_bb_matches_brute_force(seed):
    t = build_random(seed, 3, (2, 4))
    s = build_haar(t, seed=seed)
    sym, a = petermichl(t, s, f"random:{seed}")
    ba, bb = symbol_conditions(t, s, sym)
    assert bb == pytest.approx(brute_symbol_bb(t, s, sym), rel=1e-12)
    b = petermichl_symbol_bounds(t, s, a)
    assert ba <= b.B * (1 + 1e-12)
    assert bb <= b.Bb * (1 + 1e-12)


@pytest.mark.parametrize("eta", [0.0, 1.0, -2.5])
def test_weak_identity_constant(eta):
    t = build_random(6, 3, (2, 3))
    s = build_haar(t)
    sym = Symbol.from_constant(np.full(s.n_functions, eta))
    assert weak_integral_identity(t, s, sym, trials=20, seed=2) <= 1e-9


def test_weak_identity_petermichl():
    t = build_random(6, 4, (2, 3))
    s = build_haar(t)
    assert weak_integral_identity(t, s, petermichl(t, s)[0], trials=50, seed=2) <= 1e-9


def test_lp_probe():
    t = build_random(2, 4, (2, 3))
    s = build_haar(t)
    sym = Symbol.from_constant(np.random.default_rng(0).uniform(-2, 2, s.n_functions))
    est = empirical_lp_probe(t, s, sym, 2.0, trials=200)
    assert est == pytest.approx(l2_norm_estimate(t, s, sym), rel=0.05)
    assert est <= l2_norm_estimate(t, s, sym) * (1 + 1e-9)
    zero = Symbol.from_constant(np.zeros(s.n_functions))
    assert empirical_lp_probe(t, s, zero, 3.0) == 0.0
    with pytest.raises(ValueError):
        empirical_lp_probe(t, s, sym, 1.0)


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=12))
def test_weak_ratio_matches_level_sets(vals):
    g = np.array(vals)
    mu = np.linspace(1, 2, len(g))
    # sup over lambda is approached just below each |g| value
    brute = max([lam * mu[np.abs(g) >= lam].sum() for lam in np.abs(g)] + [0.0])
    assert weak_ratio(g, mu) == pytest.approx(brute)


def test_weak_probe():
    t = build_uniform(4, 2)
    s = build_haar(t)
    zero = Symbol.from_constant(np.zeros(s.n_functions))
    assert weak_11_probe(t, s, zero) == 0.0
    one = Symbol.from_constant(np.ones(s.n_functions))
    est = weak_11_probe(t, s, one, trials=100)
    assert 0.0 < est < math.inf


def test_certify_binary_petermichl():
    t = build_uniform(4, 2)
    s = build_haar(t, "classical-binary")
    sym, a = petermichl(t, s)
    rep = certify(t, s, sym, a)
    assert rep.passed, rep.verdicts
    assert all(rep.composition["diagonal"][q] == pytest.approx(2.0)
               for q in rep.composition["interior"])
    assert rep.l2_estimate == pytest.approx(math.sqrt(2))
    row = rep.csv_row()
    assert row["passed"] is True
    json.dumps(rep.to_json())


def test_certify_ternary_flags_offdiagonal():
    t = build_uniform(3, 3)
    s = build_haar(t, seed=1)
    sym, a = petermichl(t, s)
    rep = certify(t, s, sym, a)
    assert rep.verdicts["composition_diagonal"]
    assert rep.verdicts["composition_bracket"]
    assert not rep.verdicts["composition_offdiag"]


def test_sweep_constant_symbol():
    rows = stability_sweep(lambda d: build_uniform(d, 2),
                           lambda t: (build_haar(t), Symbol.from_constant(
                               np.ones(t.n_leaves - 1)), None), [2, 3, 4])
    assert [r["depth"] for r in rows] == [2, 3, 4]
    assert all(r["symbol_Bb"] == 0.0 for r in rows)
    assert "depth" in rows_to_csv(rows)


def test_sweep_degenerate_depth():
    rows = stability_sweep(lambda d: build_uniform(d, 2),
                           lambda t: (build_haar(t), Symbol.from_constant(np.ones(1)), None),
                           [1])
    assert len(rows) == 1
    assert rows[0]["smooth_Cx"] == 0.0 and rows[0]["smooth_empty"] is True


def test_sweep_skips_over_budget():
    rows = stability_sweep(lambda d: build_uniform(d, 2),
                           lambda t: (build_haar(t), Symbol.from_constant(
                               np.ones(t.n_leaves - 1)), None), [2, 6], max_leaves=16)
    assert rows[1]["skipped"] and not rows[0]["skipped"]
    assert relative_variation(rows, "size_C") == 0.0
