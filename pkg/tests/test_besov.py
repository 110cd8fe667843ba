import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from magcgo.besov import (BesovParams, besov_norm, besov_report, diff_seminorm, equivalence_constants,
                          lp_family, lp_project, parse_r, smooth_step, sobolev_norm)
from magcgo.grid import Field, fftn, ifftn, make_grid, scalar_field, vector_field
from magcgo.potentials import generated_pair


def band_limited(grid, seed, ncomp=1):
    """Random field with no energy in the Littlewood-Paley tail."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((ncomp,) + (grid.N,) * 3) + 1j * rng.standard_normal((ncomp,) + (grid.N,) * 3)
    keep = lp_family(grid).tail() == 0
    return Field(grid, ifftn(fftn(v) * keep), 0 if ncomp == 1 else 1)


def test_smooth_step_profile():
    t = np.linspace(-1, 2, 301)
    s = smooth_step(t)
    assert np.all(s[t <= 0] == 0) and np.all(s[t >= 1] == 1)
    assert np.all(np.diff(s) >= 0)
    assert smooth_step(0.5) == pytest.approx(0.5)


@pytest.mark.parametrize("N", [16, 32, 64])
def test_partition_of_unity(N):
    assert lp_family(make_grid(1.0, N)).partition_error() <= 1e-12


def test_block_beyond_nyquist_rejected(grid16):
    fam = lp_family(grid16)
    with pytest.raises(ValueError, match="Nyquist"):
        fam.multiplier(fam.j_max + 1)


def test_blocks_sum_back(grid32):
    u = band_limited(grid32, 1)
    total = sum(lp_project(u, j).values for j in range(lp_family(grid32).j_max + 1))
    assert np.abs(total - u.values).max() < 1e-12 * np.abs(u.values).max()


@pytest.mark.parametrize("s", [-1.0, 0.0, 0.5])
def test_besov_sobolev_equivalence(grid32, s):
    lo, hi = equivalence_constants(grid32, s)
    assert 0 < lo <= hi
    for seed in range(5):
        u = band_limited(grid32, seed)
        ratio = besov_norm(u, BesovParams(s, 2)) / sobolev_norm(u, s)
        assert lo * (1 - 1e-12) <= ratio <= hi * (1 + 1e-12)


def test_besov_r_ordering(grid32):
    u = band_limited(grid32, 4)
    n1, n2, ninf = (besov_norm(u, BesovParams(0.3, r)) for r in (1, 2, "inf"))
    assert ninf <= n2 <= n1


def test_parse_r():
    assert parse_r("inf") == np.inf
    assert parse_r(1) == 1.0
    with pytest.raises(ValueError):
        parse_r(3)


def test_sobolev_zero_is_l2(grid16):
    u = band_limited(grid16, 2)
    l2 = np.sqrt((np.abs(u.values) ** 2).sum() * grid16.cell_volume)
    assert sobolev_norm(u, 0.0) == pytest.approx(l2, rel=1e-12)


def test_besov_report_tail_reported(grid16):
    rng = np.random.default_rng(0)
    u = scalar_field(grid16, rng.standard_normal((16,) * 3))
    rep = besov_report(u, BesovParams(0.0, 2))
    assert rep["tail_l2"] > 0
    assert len(rep["blocks"]) == rep["j_max"] + 1


def brute_force_seminorm_inf(A, eps):
    """Per component: sup over lattice translations |y| < L of ||A_j(.+y) - A_j|| / |y|^eps, by rolls."""
    g = A.grid
    return float(np.sqrt(sum(_brute_component(A.values[j:j + 1], g, eps) ** 2 for j in range(A.ncomp))))


def _brute_component(vals, g, eps):
    best = 0.0
    n = g.N
    for a in range(n):
        for b in range(n):
            for c in range(n):
                y = np.array([min(a, n - a), min(b, n - b), min(c, n - c)]) * g.spacing
                r = np.linalg.norm(y)
                if r == 0 or r >= g.L:
                    continue
                diff = np.roll(vals, (-a, -b, -c), axis=(1, 2, 3)) - vals
                val = np.sqrt((np.abs(diff) ** 2).sum() * g.cell_volume) / r ** eps
                best = max(best, val)
    norm = np.sqrt((np.abs(vals) ** 2).sum() * g.cell_volume)
    return max(best, np.sqrt(2.0) * norm / g.L ** eps)


def test_seminorm_matches_brute_force():
    g = make_grid(1.0, 8)
    rng = np.random.default_rng(5)
    A = Field(g, rng.standard_normal((3, 8, 8, 8)), 1)
    assert diff_seminorm(A, 0.5, np.inf) == pytest.approx(brute_force_seminorm_inf(A, 0.5), rel=1e-10)


@settings(max_examples=6, deadline=None)
@given(st.integers(0, 1000), st.integers(-3, 3), st.sampled_from([2.0, np.inf]))
def test_seminorm_translation_invariant(seed, shift, r):
    g = make_grid(1.0, 16)
    A = band_limited(g, seed, 3)
    B = A.with_values(np.roll(A.values, shift, axis=2))
    assert diff_seminorm(B, 0.5, r) == pytest.approx(diff_seminorm(A, 0.5, r), rel=1e-10)


@pytest.mark.parametrize("r", [1, 2, "inf"])
def test_seminorm_homogeneous(grid16, r):
    A = band_limited(grid16, 9, 3)
    assert diff_seminorm(A * 2.5, 0.4, r) == pytest.approx(2.5 * diff_seminorm(A, 0.4, r), rel=1e-10)


def test_seminorm_of_constant_is_box_term(grid16):
    # A constant field only sees the |y| >= L disjoint-support allowance
    A = vector_field(grid16, [1.0, 0.0, 0.0])
    expected = np.sqrt(2.0 * grid16.volume) / grid16.L ** 0.5
    assert diff_seminorm(A, 0.5, np.inf) == pytest.approx(expected, rel=1e-12)


def test_admissible_generated_pair():
    from magcgo.besov import admissibility_check
    P = generated_pair(make_grid(1.0, 16), 0.5, 2, half_width=0.5)
    rep = admissibility_check(P)
    assert rep["pass"]
    assert P.M == pytest.approx(max(1.0, 1.1 * rep["total"]))
