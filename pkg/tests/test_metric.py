import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import brute_lca
from dyadic_cz.metric import (ball, characteristic_lipschitz, delta, delta_matrix, lca_matrix,
                              lipschitz_sup, smallest_common_cube, verify_normal,
                              verify_ultrametric)
from dyadic_cz.tree import build_random, build_uniform


def test_smallest_common_cube(bin3):
    q = smallest_common_cube(bin3, 0, 1)
    assert bin3.level[q] == 2
    assert bin3.measure[q] == pytest.approx(0.25)
    assert smallest_common_cube(bin3, 0, 7) == 0
    assert smallest_common_cube(bin3, 3, 3) == bin3.leaf_cube[3]


def test_delta_values(bin3):
    assert delta(bin3, 0, 1) == pytest.approx(0.25)
    assert delta(bin3, 0, 7) == pytest.approx(1.0)
    assert delta(bin3, 4, 4) == 0.0


def test_out_of_range(bin3):
    with pytest.raises(IndexError):
        delta(bin3, 0, 8)


@given(st.integers(0, 1000))
def test_lca_matrix_matches_parent_walk(seed):
    t = build_random(seed, 3, (2, 4))
    L = lca_matrix(t)
    for x in range(t.n_leaves):
        for y in range(t.n_leaves):
            assert L[x, y] == brute_lca(t, x, y)


def test_ball_examples(bin3):
    assert ball(bin3, 0, 0.3).tolist() == [0, 1]
    assert ball(bin3, 0, 2.0).tolist() == list(range(8))
    assert ball(bin3, 0, 0.1).tolist() == [0]
    with pytest.raises(ValueError):
        ball(bin3, 0, 0.0)


@given(st.integers(0, 1000), st.floats(1e-3, 2.0))
def test_ball_is_delta_sublevel(seed, r):
    t = build_random(seed, 3, (2, 3))
    d = delta_matrix(t)
    for x in range(t.n_leaves):
        assert ball(t, x, r).tolist() == np.flatnonzero(d[x] <= r).tolist()


def test_ultrametric_exhaustive(bin3):
    assert verify_ultrametric(bin3).ok


@given(st.integers(0, 1000))
def test_ultrametric_random(seed):
    t = build_random(seed, 4, (2, 3))
    assert t.n_leaves <= 256
    assert verify_ultrametric(t).ok


def test_ultrametric_sampled():
    t = build_random(3, 6, (2, 3))
    rep = verify_ultrametric(t, sample=20_000, seed=1)
    assert rep.ok and rep.mode == "sampled"


def test_corrupted_table_gives_witness(bin3):
    d = delta_matrix(bin3)
    d[0, 1] = d[1, 0] = 5.0  # breaks additivity: the pair outweighs the root
    rep = verify_ultrametric(table=d)
    assert not rep.ok
    w = rep.worst
    assert d[w["x"], w["y"]] > max(d[w["x"], w["z"]], d[w["z"], w["y"]])


@pytest.mark.parametrize("branching", [2, 3])
def test_normality_uniform(branching):
    rep = verify_normal(build_uniform(3, branching))
    assert rep.ok
    assert rep.sup_ratio == pytest.approx(1.0)
    assert rep.inf_ratio >= 1 / branching - 1e-12


def test_normality_random():
    rep = verify_normal(build_random(5, 4, (2, 4)))
    assert rep.ok
    assert rep.inf_ratio > 1 / rep.doubling_C


def test_ratio_just_below_one(bin3):
    r = np.nextafter(0.25, 1.0)
    assert len(ball(bin3, 0, r)) == 2
    ratio = 0.25 / r
    assert ratio < 1.0 and ratio == pytest.approx(1.0)


@given(st.integers(0, 1000))
def test_characteristic_lipschitz(seed):
    t = build_random(seed, 3, (2, 4))
    assert characteristic_lipschitz(t) <= 1.0 + 1e-12


@given(st.integers(0, 1000))
def test_lipschitz_sup_matches_brute_force(seed):
    t = build_random(seed, 3, (2, 3))
    rng = np.random.default_rng(seed)
    d = delta_matrix(t)
    for q in t.internal[:4]:
        vals = rng.standard_normal(int(t.leaf_stop[q] - t.leaf_start[q]))
        g = np.zeros(t.n_leaves)
        g[t.leaf_start[q]:t.leaf_stop[q]] = vals
        off = ~np.eye(t.n_leaves, dtype=bool)
        brute = (np.abs(g[:, None] - g[None, :])[off] / d[off]).max()
        assert lipschitz_sup(t, q, vals) == pytest.approx(brute, rel=1e-12)
