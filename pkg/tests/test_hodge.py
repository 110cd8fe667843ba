import numpy as np
import pytest

from magcgo.grid import fftn, gradient, ifftn, l2_norm, make_grid, scalar_field
from magcgo.hodge import (ball_complex, coexact_estimate, curl_weight_norm, decompose_ball, gauge_phi,
                          helmholtz_oracle)
from magcgo.potentials import generated_pair

L, N, HW, R_IN, R = 1.5, 32, 0.25, 0.5, 1.3


@pytest.fixture(scope="module")
def grid():
    return make_grid(L, N)


@pytest.fixture(scope="module")
def difference(grid):
    return generated_pair(grid, 0.5, 0, half_width=HW).A - generated_pair(grid, 0.5, 10, half_width=HW).A


@pytest.fixture(scope="module")
def decomposition(difference):
    return decompose_ball(difference, R, R_IN)


def test_complex_is_exact(grid):
    C = ball_complex(grid, R)
    assert abs(C.d1 @ C.d0).max() == 0
    assert abs(C.d2 @ C.d1).max() == 0


def test_reconstruction_and_orthogonality(decomposition):
    H = decomposition
    assert H.residual <= 1e-6
    assert H.orthogonality <= 1e-10
    assert np.abs(H.d_psi + H.delta_F - H.u).max() <= 1e-6 * np.abs(H.u).max()


def test_gradient_input_has_no_coexact_part(grid):
    """A spectral gradient samples to an exact coboundary once the Nyquist modes are removed."""
    x1, x2, x3 = grid.coords()
    nyq = np.isclose(np.abs(np.stack(np.broadcast_arrays(*grid.kappas()))), grid.nyquist).any(axis=0)
    rho = ifftn(fftn(np.exp(-(x1 ** 2 + x2 ** 2 + x3 ** 2) / 0.15 ** 2)) * ~nyq)
    u = gradient(scalar_field(grid, rho))
    H = decompose_ball(u, R, R_IN, support_tol=0.01)
    assert H.coexact_norm() <= 1e-10 * l2_norm(u)


def test_helmholtz_oracle_split(difference):
    """The divergence-free part has kappa . u^ = 0 at every lattice frequency (Nyquist included)."""
    _, divfree = helmholtz_oracle(difference)
    g = difference.grid
    K = np.broadcast_arrays(*g.kappas())
    vh = fftn(divfree.values)
    uh = fftn(difference.values)
    assert np.abs(sum(K[j] * vh[j] for j in range(3))).max() <= 1e-12 * np.abs(uh).max() * g.nyquist


def test_ball_matches_oracle(difference, decomposition):
    _, divfree = helmholtz_oracle(difference)
    assert decomposition.coexact_norm() == pytest.approx(l2_norm(divfree), rel=0.05)


def test_coexact_estimate_ratio(difference, decomposition):
    est = coexact_estimate(decomposition, difference)
    assert 0.5 < est["ratio"] < 2.0
    assert est["shell_ratio"] >= 0
    assert curl_weight_norm(difference) > 0


def test_gauge_product_rule_bound(decomposition):
    G = gauge_phi(decomposition)
    rep = G.report
    assert rep["holds"]
    assert rep["grad_phi_prime_shell"] <= rep["bound"]


def test_support_outside_inner_ball_rejected(grid):
    P = generated_pair(grid, 0.5, 3, half_width=0.5)
    with pytest.raises(ValueError):
        decompose_ball(P.A, R, R_IN)
