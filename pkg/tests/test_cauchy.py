import numpy as np
import pytest
from scipy.optimize import minimize

from magcgo.cauchy import (CauchyDataApprox, _Whitened, assemble_cauchy, basis_modes, dist_cauchy,
                           gauge_invariance_check, gram_norm, inner_inf, load_cauchy, save_cauchy, trace_dual_norm,
                           trace_norm)
from magcgo.cauchy import boundary_basis
from magcgo.forward import CubeDomain
from magcgo.grid import make_grid
from magcgo.potentials import bump_scalar, generated_pair, zero_pair


@pytest.fixture(scope="module")
def cauchy_pair():
    g = make_grid(1.0, 16)
    P = generated_pair(g, 0.5, 1)
    P2 = P.replace(q=P.q * 1.2, label="scaled")
    return P, assemble_cauchy(P, 10), assemble_cauchy(P2, 10)


def one_mode(a, g=1.5):
    return CauchyDataApprox(1.0, 16, 0.5, 1, np.array([[g]]), np.array([[a]]), "x")


@pytest.mark.parametrize("a,b,g", [(2.0, 3.0, 1.5), (1 + 1j, 0.5, 2.0), (3.0, 0.2, 1.0)])
def test_single_mode_closed_form(a, b, g):
    """K = 1: inf_d |c-d| sqrt g + |a c - b d| / sqrt g over unit-norm c has a closed form."""
    oracle = max(abs(1 - a / b) * min(1, abs(b) / g), abs(1 - b / a) * min(1, abs(a) / g))
    assert dist_cauchy(one_mode(a, g), one_mode(b, g)).value == pytest.approx(oracle, rel=1e-8)


def test_basis_modes_order():
    assert basis_modes(5) == [(0, 0, 0), (0, 0, 1), (0, 1, 0), (1, 0, 0), (0, 0, 2)]


def test_boundary_basis_constant_first():
    dom = CubeDomain(make_grid(1.0, 16), 0.5)
    f = boundary_basis(dom, 4)
    assert np.all(f[0] == 1.0)


def test_gram_matches_trace_norm(cauchy_pair):
    P, C, _ = cauchy_pair
    dom = CubeDomain(P.grid, P.half_width)
    rng = np.random.default_rng(0)
    c = rng.standard_normal(C.K)
    f = np.tensordot(c, boundary_basis(dom, C.K), axes=1)
    assert gram_norm(C.gram, c) == pytest.approx(trace_norm(P, f), rel=1e-10)


def test_dual_norm_is_dual(cauchy_pair):
    _, C, _ = cauchy_pair
    rng = np.random.default_rng(1)
    gvec = rng.standard_normal(C.K) + 1j * rng.standard_normal(C.K)
    # |g . c| <= ||g||_* ||c|| with equality at c = G^-1 conj(g)
    c = np.linalg.solve(C.gram, gvec.conj())
    assert abs(gvec @ c) == pytest.approx(trace_dual_norm(C.gram, gvec) * gram_norm(C.gram, c), rel=1e-10)


def test_inner_infimum_against_generic_minimizer(cauchy_pair):
    _, C1, C2 = cauchy_pair
    K = 4
    G, F1, F2 = C1.gram[:K, :K], C1.flux[:K, :K], C2.flux[:K, :K]
    W = _Whitened(G)
    rng = np.random.default_rng(2)
    c = rng.standard_normal(K) + 1j * rng.standard_normal(K)
    val, d = inner_inf(W, c, F1, F2)
    Ginv = np.linalg.inv(G)

    def obj(x):
        dd = x[:K] + 1j * x[K:]
        r = F1.T @ c - F2.T @ dd
        return np.sqrt(max(((c - dd).conj() @ G @ (c - dd)).real, 0)) + np.sqrt(max((r.conj() @ Ginv @ r).real, 0))

    best = min(minimize(obj, np.concatenate([s.real, s.imag]), method="Nelder-Mead",
                        options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 40000, "maxfev": 40000}).fun
               for s in (c, d, np.zeros(K)))
    assert val <= best * (1 + 1e-6)
    assert val >= best * (1 - 1e-4)
    assert obj(np.concatenate([d.real, d.imag])) == pytest.approx(val, rel=1e-10)


def test_dist_identity_and_symmetry(cauchy_pair):
    _, C1, C2 = cauchy_pair
    assert dist_cauchy(C1, C1).value <= 1e-10
    assert dist_cauchy(C1, C2).value == dist_cauchy(C2, C1).value
    assert dist_cauchy(C1, C2).value > 0


def test_dist_rejects_incompatible(cauchy_pair):
    _, C1, _ = cauchy_pair
    other = assemble_cauchy(generated_pair(make_grid(1.0, 16), 0.5, 2), 8)
    with pytest.raises(ValueError, match="different"):
        dist_cauchy(C1, other)


def test_gram_must_be_positive_definite():
    with pytest.raises(ValueError, match="positive definite"):
        CauchyDataApprox(1.0, 16, 0.5, 1, np.array([[0.0]]), np.array([[1.0]]), "x")


def test_persistence_round_trip(tmp_path, cauchy_pair):
    _, C, _ = cauchy_pair
    save_cauchy(tmp_path / "c.json", C)
    D = load_cauchy(tmp_path / "c.json", expect_fingerprint=C.fingerprint)
    assert np.array_equal(D.gram, C.gram) and np.array_equal(D.flux, C.flux)
    with pytest.raises(ValueError, match="fingerprint"):
        load_cauchy(tmp_path / "c.json", expect_fingerprint="nope")
    raw = (tmp_path / "c_flux.cgof").read_bytes()
    (tmp_path / "c_flux.cgof").write_bytes(raw[:-16])
    with pytest.raises(ValueError, match="truncated"):
        load_cauchy(tmp_path / "c.json")


def test_gauge_invariance_small():
    g = make_grid(1.0, 16)
    rep = gauge_invariance_check(zero_pair(g), bump_scalar(g, 0.35, amplitude=0.5), K=20)
    assert rep["dist"] < 5e-2


def test_gauge_requires_boundary_vanishing():
    g = make_grid(1.0, 16)
    with pytest.raises(ValueError, match="vanish"):
        gauge_invariance_check(zero_pair(g), bump_scalar(g, 0.8, amplitude=0.5), K=5)
