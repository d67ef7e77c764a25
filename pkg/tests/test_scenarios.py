import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from quenched_coalescent.ergodics import backward_stationary, estimate_eps
from quenched_coalescent.model import (
    EnvironmentStream,
    IIDWeights,
    IslandStructure,
    condition_checks,
    effective_migration,
    validate,
)
from quenched_coalescent.scenarios import (
    COIN_HIGH,
    COIN_LOW,
    build,
    closed_forms,
    describe,
    dummy_island,
    favored_island,
    ks_critical,
    ks_uniform,
    normalize_name,
    two_island_coin,
    z_recursions,
)

HALF = (0.5, 0.5)


def test_coin_definition_and_closed_forms():
    spec = two_island_coin(HALF)
    np.testing.assert_array_equal(spec.matrices[0], [[0.5, 0.5], [0.0, 1.0]])
    np.testing.assert_array_equal(spec.matrices[1], [[1.0, 0.0], [0.5, 0.5]])
    assert spec.driver == IIDWeights((0.5, 0.5))
    cf = closed_forms("two_island_coin", (0.2, 0.8))
    assert math.isclose(cf["c_q"][0], (1 / 3) * (1 / 0.2 + 1 / 0.8))
    assert math.isclose(cf["c_a"][0], (1 / 4) * (1 / 0.2 + 1 / 0.8))


def test_coin_with_N_corrections_vanish_when_exact():
    spec = two_island_coin(HALF, 1000)
    assert np.all(spec.perturbations[0] == 0) and np.all(spec.perturbations[1] == 0)
    odd = two_island_coin(HALF, 1002)  # island of 501: half-blocks are not whole
    assert validate(odd, IslandStructure(HALF, 1002)) == []
    B = effective_migration(odd, 0, 1002)
    assert B[0, 0] == 250 / 501


def test_favored_island_definition():
    spec = favored_island(2)
    np.testing.assert_array_equal(spec.matrices[0], [[1, 0], [1, 0]])
    np.testing.assert_array_equal(spec.matrices[1], [[0, 1], [0, 1]])
    cf = closed_forms("favored_island", (0.2, 0.3, 0.5))
    assert math.isclose(cf["c_q"][0], (1 / 3) * (1 / 0.2 + 1 / 0.3 + 1 / 0.5))
    with pytest.raises(ValueError):
        favored_island(1)


def test_favored_gamma_law_is_multinomial_one():
    L = 3
    spec = favored_island(L)
    gam = np.array([backward_stationary(EnvironmentStream(spec, 6, i)).gamma
                    for i in range(3000)])
    assert set(map(tuple, gam)) <= {tuple(e) for e in np.eye(L)}
    freq = gam.mean(axis=0)
    assert np.all(np.abs(freq - 1 / L) < 3 * math.sqrt((1 / L) * (1 - 1 / L) / 3000))


def test_dummy_island_examples():
    spec = dummy_island((0.25, 0.75), 10)
    np.testing.assert_allclose(effective_migration(spec, 0, 10), [[0.2, 0.8], [0.2, 0.8]])
    np.testing.assert_allclose(spec.perturbations[0][0], [-0.5, 0.5], atol=1e-12)
    cf = closed_forms("dummy_island", (0.3, 0.7))
    assert cf["c_f"][0] == cf["c_a"][0] == cf["c_q"][0] == 1.0


@pytest.mark.parametrize("a", [(0.25, 0.75), (0.3, 0.7), (0.2, 0.3, 0.5), (1 / 3, 1 / 3, 1 / 3)])
def test_dummy_perturbation_bounded(a):
    for N in range(max(10, 2 * len(a)), 10**4, 7):
        D = dummy_island(a, N).perturbations[0]
        assert np.abs(D).max() <= len(a)
        np.testing.assert_allclose(D.sum(axis=1), 0.0, atol=1e-12)


def test_scenarios_satisfy_conditions():
    for spec in (two_island_coin(HALF), favored_island(2), favored_island(4)):
        assert condition_checks(spec) == {"irr": True, "st": True}


def test_names_and_descriptors():
    assert normalize_name("two-island-coin") == "two_island_coin"
    assert normalize_name("favored") == "favored_island"
    assert normalize_name("Dummy") == "dummy_island"
    with pytest.raises(KeyError):
        normalize_name("nope")
    d = describe("favored-island", (0.5, 0.5))
    assert d.L == 2 and d.closed_forms["c_q"][0] == 2.0
    assert build("dummy", (0.5, 0.5), 100).is_constant()


def test_coin_moments_and_correction_ratio():
    rep = estimate_eps(two_island_coin(HALF), IslandStructure(HALF, 1000), 21, 6000)
    se = rep.std_errors
    assert abs(rep.gamma_variance[0] - 1 / 12) < 3 * se["gamma_variance"][0]
    assert abs(rep.gap - 1 / 3) < 3 * se["gap"]
    ratio = rep.c_q / rep.c_a
    ratio_se = ratio * math.hypot(se["c_q"] / rep.c_q, se["c_a"] / rep.c_a)
    assert abs(ratio - 4 / 3) < 3 * ratio_se
    fav = estimate_eps(favored_island(2), IslandStructure(HALF, 1000), 21, 6000)
    assert abs(fav.c_q / fav.c_a - 2) < 3 * 2 * fav.std_errors["c_a"] / fav.c_a
    np.testing.assert_allclose(fav.gamma_second_moment, fav.gamma_mean, atol=1e-15)


# -- Z recursions ---------------------------------------------------------------


def test_z_example_two_highs():
    # eps = (1/2, 1/2) means M_1 = M_2 = [[1,0],[1/2,1/2]]
    for sid in range(200):
        z = z_recursions(0, 2, sid)
        if np.all(z.eps == 0.5):
            np.testing.assert_allclose(z.forward, [[1, 0], [0.75, 0.25]])
            assert z.Z[2] == 1.0
            return
    pytest.fail("no stream with two high matrices in 200 tries")


@given(st.integers(0, 10**6), st.integers(1, 40))
def test_z_products_and_cauchy(seed, u):
    z = z_recursions(seed, u)
    mats = [COIN_HIGH if e else COIN_LOW for e in z.eps]
    fwd = np.linalg.multi_dot(mats) if u > 1 else mats[0]
    bwd = np.linalg.multi_dot(mats[::-1]) if u > 1 else mats[0]
    np.testing.assert_allclose(z.forward, fwd, atol=1e-12)
    np.testing.assert_allclose(z.backward, bwd, atol=1e-12)
    steps = np.abs(np.diff(z.Z_star))
    assert np.all(steps <= 2.0 ** -(np.arange(u) + 1))


def test_forward_top_left_uniform_on_grid():
    u = 3
    vals = np.array([z_recursions(1, u, i).forward[0, 0] for i in range(8000)])
    grid = np.arange(1, 2**u + 1) / 2**u
    k = np.rint(vals * 2**u).astype(int)
    assert np.allclose(vals * 2**u, k)
    counts = np.bincount(k, minlength=2**u + 1)[1:]
    assert counts.sum() == 8000 and set(np.unique(vals)) <= set(grid)
    assert stats.chisquare(counts).pvalue > 0.001


def test_ks_uniform_examples():
    m = 400
    grid = (np.arange(1, m + 1) - 0.5) / m
    assert math.isclose(ks_uniform(grid), 0.5 / m)
    assert ks_uniform(np.full(200, 0.5)) == 0.5
    with pytest.raises(ValueError):
        ks_uniform(np.full(200, 1.5))
    with pytest.raises(ValueError):
        ks_uniform([0.5] * 10)
    assert math.isclose(ks_critical(10**4), 0.01628)


@given(st.integers(0, 2**31), st.integers(100, 3000))
def test_ks_uniform_matches_scipy(seed, m):
    x = np.random.default_rng(seed).random(m) ** 1.1
    assert math.isclose(ks_uniform(x), stats.kstest(x, "uniform").statistic, abs_tol=1e-12)


def test_z30_uniform():
    zu = [z_recursions(3, 30, i).Z[30] for i in range(10**4)]
    assert ks_uniform(zu) < 0.0163
