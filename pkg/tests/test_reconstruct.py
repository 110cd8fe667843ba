import numpy as np
import pytest

from magcgo.cauchy import assemble_cauchy, dist_cauchy
from magcgo.cgo import orthonormal_pair
from magcgo.forward import ForwardOperator
from magcgo.grid import make_grid
from magcgo.potentials import generated_pair, mode_scalar, mode_vector, zero_pair
from magcgo.reconstruct import (StabilityParams, assemble_dA_stability, assemble_q_stability, cauchy_identity_bound,
                                cube_quadrature, dA_truth, direct_norms, extract_dA_hat, extract_q_hat, gauge_repair,
                                h_schedule_dA, h_schedule_q, integral_identity_check, k_schedule_dA, k_schedule_q,
                                lattice_points, rate_exponent, rho_schedule_dA, rho_schedule_q, sweep,
                                transverse_from_pairings, two_form_from_transverse)


# ---------------------------------------------------------------- identities

def test_exponential_identity_closed_form():
    """-Lap u + c u = 0 for u = e^{x.zeta}, zeta.zeta = c; with u2 = 1 the identity reads
    int_faces d_nu u = c int_Omega u, and int_Omega u = prod 2 sinh(zeta_j hw) / zeta_j."""
    hw, c = 0.5, 2.0 + 0.5j
    mu1, mu2 = np.array([1.0, 0, 0]), np.array([0, 1.0, 0])
    zeta = np.sqrt(c) * np.array([0, 0, 1.0]) + 1.3 * (mu1 + 1j * mu2)
    assert abs(zeta @ zeta - c) < 1e-14
    vol = cube_quadrature(lambda x1, x2, x3: np.exp(zeta[0] * x1 + zeta[1] * x2 + zeta[2] * x3), hw)
    closed = np.prod([2 * np.sinh(z * hw) / z for z in zeta])
    assert abs(vol - closed) < 1e-12 * abs(closed)
    t, w = np.polynomial.legendre.leggauss(32)
    x, w = hw * t, hw * w
    W = w[:, None] * w[None, :]
    face = 0j
    for j in range(3):
        a, b = [k for k in range(3) if k != j]
        for sign in (-1, 1):
            X = np.zeros((3, 32, 32), dtype=complex)
            X[a], X[b] = x[:, None], x[None, :]
            X[j] = sign * hw
            face += sign * zeta[j] * np.sum(W * np.exp(np.tensordot(zeta, X, axes=1)))
    assert abs(face - c * vol) < 1e-11 * abs(c * vol)


@pytest.fixture(scope="module")
def pairs16():
    g = make_grid(1.0, 16)
    return generated_pair(g, 0.5, 1), generated_pair(g, 0.5, 2)


def test_discrete_identity_on_solutions(pairs16):
    P1, P2 = pairs16
    op1, op2 = ForwardOperator(P1), ForwardOperator(P2.conj())
    rng = np.random.default_rng(0)
    shape = op1.dom.shape
    f = rng.standard_normal((2,) + shape) + 1j * rng.standard_normal((2,) + shape)
    u1 = op1.solve_many(f[:1])[0]
    u2 = op2.solve_many(f[1:])[0]
    rep = integral_identity_check(P1, P2, u1, u2)
    assert rep["solutions_ok"]
    assert rep["relative_gap"] <= 1e-9


def test_identity_flags_non_solutions(pairs16):
    P1, P2 = pairs16
    shape = ForwardOperator(P1).dom.shape
    with pytest.warns(UserWarning, match="not discrete solutions"):
        rep = integral_identity_check(P1, P2, np.ones(shape), np.ones(shape))
    assert not rep["solutions_ok"]


def test_cauchy_identity_within_dist_bound(pairs16):
    P1, P2 = pairs16
    K = 10
    C1, C2, C2c = assemble_cauchy(P1, K), assemble_cauchy(P2, K), assemble_cauchy(P2.conj(), K)
    d = dist_cauchy(C1, C2).value
    rng = np.random.default_rng(3)
    for _ in range(5):
        c1 = rng.standard_normal(K) + 1j * rng.standard_normal(K)
        c2 = rng.standard_normal(K) + 1j * rng.standard_normal(K)
        rep = cauchy_identity_bound(C1, C2c, c1, c2, d)
        assert rep["ratio"] <= 1.3


# ---------------------------------------------------------------- dA extraction pieces

def test_transverse_inversion_round_trip():
    xi = np.array([1.0, 2.0, -0.5])
    h = 0.3
    mu1, mu2 = orthonormal_pair(xi)
    rng = np.random.default_rng(1)
    A_perp = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    A_perp -= (A_perp @ xi) / (xi @ xi) * xi
    s = np.sqrt(1 - h * h * (xi @ xi) / 4)
    E_plus = (mu1 + 1j * s * mu2) @ A_perp
    E_minus = (mu1 - 1j * s * mu2) @ A_perp
    back = transverse_from_pairings(xi, h, (mu1, mu2), E_plus, E_minus)
    assert np.abs(back - A_perp).max() < 1e-12
    F = two_form_from_transverse(xi, A_perp)
    expected = [-1j * (xi[j] * A_perp[k] - xi[k] * A_perp[j]) for j, k in ((0, 1), (0, 2), (1, 2))]
    assert np.abs(F - expected).max() < 1e-12


def test_degenerate_component_is_zero():
    xi = np.array([0.0, 0.0, 1.5])
    F = two_form_from_transverse(xi, np.array([1.0, 2.0, 0.0]))
    assert F[0] == 0     # the (1,2) component needs xi_1 or xi_2 != 0


@pytest.fixture(scope="module")
def mode_case():
    g = make_grid(2.0, 32)
    P1 = generated_pair(g, 0.5, 3)
    xi = np.array([1.0, 1.0, 0.0]) * g.freq_unit
    P2 = P1.replace(A=P1.A + mode_vector(g, xi, [0, 0, 1], amplitude=0.3))
    return P1, P2, xi


def test_zero_difference_extracts_zero(mode_case):
    P1, _, xi = mode_case
    rec = extract_dA_hat(P1, P1, xi, 0.5)
    assert np.abs(rec.value).max() < 1e-10
    rq = extract_q_hat(P1, P1, xi, 0.5)
    assert abs(rq.value[0]) < 1e-10


def test_dA_extraction_close_to_truth(mode_case):
    P1, P2, xi = mode_case
    truth = dA_truth(P1, P2, xi)
    errs = [extract_dA_hat(P1, P2, xi, h).error for h in (0.5, 0.25)]
    assert errs[1] < errs[0] < 0.2 * np.linalg.norm(truth)


def test_boundary_mode_agrees_with_interior(mode_case):
    P1, P2, xi = mode_case
    a = extract_dA_hat(P1, P2, xi, 0.5, mode="interior")
    b = extract_dA_hat(P1, P2, xi, 0.5, mode="boundary")
    assert np.abs(a.value - b.value).max() < 0.1 * np.abs(a.truth).max()


def test_q_extraction_free_case():
    g = make_grid(2.0, 32)
    xi = np.array([1.0, 0.0, 0.0]) * g.freq_unit
    P1 = zero_pair(g)
    P2 = P1.replace(q=mode_scalar(g, xi, amplitude=0.5))
    rec = extract_q_hat(P1, P2, xi, 0.25)
    assert rec.error < 0.05 * abs(rec.truth[0])
    zero = extract_q_hat(P1, P2, np.zeros(3), 0.25)
    assert zero.error < 0.05 * abs(rec.truth[0])


def test_q_boundary_mode_refused(mode_case):
    P1, P2, xi = mode_case
    with pytest.raises(ValueError, match="interior"):
        extract_q_hat(P1, P2, xi, 0.5, mode="boundary")


# ---------------------------------------------------------------- schedules

def test_params_validation():
    with pytest.raises(ValueError, match="theta"):
        StabilityParams(theta=0.7)
    with pytest.raises(ValueError, match="besov_delta"):
        StabilityParams(besov_delta=0.4)
    with pytest.raises(ValueError, match="lambda"):
        StabilityParams(lam=1.5)
    assert StabilityParams(eps=0.5).besov_delta == pytest.approx(0.75)


def test_schedules_formulas():
    p = StabilityParams(eps=0.5, c_prime=1.0, c_prime_q=0.5, h_max=1.0)
    d = 1e-6
    assert h_schedule_dA(d, p) == pytest.approx(1 / abs(np.log(d)))
    e = p.theta * p.eps ** 2 / 18
    assert h_schedule_q(d, p) == pytest.approx(0.5 * abs(np.log(d)) ** (-e))
    h = 0.1
    assert rho_schedule_dA(h, p) == pytest.approx(2.0 * h ** (-2 * 0.5 * 1.5 / (2.5 * (3 + 1.5 + 1))))
    assert rho_schedule_q(h, p) == pytest.approx(2.0 * h ** (-2 * 0.5 / (2.5 * 5)))
    for f in (k_schedule_dA, k_schedule_q):
        k = f(1e-8, p)
        assert k >= 0
    with pytest.raises(ValueError):
        h_schedule_dA(1.5, p)


def test_rho_cap_noted():
    p = StabilityParams(rho_scale=100.0)
    notes = []
    rho = rho_schedule_dA(0.5, p, notes)
    assert rho <= 2 / 0.5 and notes


def test_lambda_ordering_of_rho():
    h = 0.2
    assert rho_schedule_q(h, StabilityParams(lam=0.5)) > rho_schedule_q(h, StabilityParams(lam=1.0))


def test_lattice_points_half_space():
    g = make_grid(2.0, 16)
    full = lattice_points(g, 3.0, include_zero=True, half=False)
    half = lattice_points(g, 3.0, include_zero=True, half=True)
    assert len(full) == 2 * (len(half) - 1) + 1
    assert not np.any(np.all(lattice_points(g, 3.0) == 0, axis=1))


# ---------------------------------------------------------------- assembly

@pytest.fixture(scope="module")
def small_family():
    g = make_grid(2.0, 32)
    base = generated_pair(g, 0.5, 1)
    dA = mode_vector(g, np.array([1.0, 1.0, 0.0]) * g.freq_unit, [0, 0, 1], 0.3)
    dq = mode_scalar(g, np.array([1.0, 0.0, 0.0]) * g.freq_unit, 0.5)
    return base, dA, dq


def test_identical_pairs_give_zero_bounds(small_family):
    base, dA, dq = small_family
    rep = sweep(base, dA, dq, [0.0], StabilityParams(), K=8)
    row = rep.rows[0]
    assert row["dist"] == 0
    for c in ("dA_Hm1", "dA_Besov", "q_Hlambda", "q_Besov0"):
        assert row[c + "_direct"] == 0 and row[c + "_bound"] == 0


def test_assembly_bounds_and_lambda_monotone(small_family):
    base, dA, dq = small_family
    P2 = base.replace(A=base.A + dA, q=base.q + dq)
    p1, ph = StabilityParams(lam=1.0), StabilityParams(lam=0.5)
    cache = {}
    a = assemble_dA_stability(base, P2, 0.05, p1, cache)
    G = gauge_repair(base, P2)
    q1 = assemble_q_stability(base, P2, 0.05, p1, a["dA_Hm1_bound"], G, cache)
    qh = assemble_q_stability(base, P2, 0.05, ph, a["dA_Hm1_bound"], G, cache)
    direct = direct_norms(base, P2, p1)
    assert direct["dA_Hm1_direct"] <= a["dA_Hm1_bound"]
    assert direct["dA_Besov_direct"] <= a["dA_Besov_bound"]
    assert direct["q_Hlambda_direct"] <= q1["q_Hlambda_bound"]
    assert qh["q_Hlambda_bound"] >= q1["q_Hlambda_bound"]


def test_rate_exponent():
    assert rate_exponent(0.5) == pytest.approx(0.2)
