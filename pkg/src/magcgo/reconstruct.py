"""Fourier extraction of ``dA1 - dA2`` and ``q1 - q2`` from CGO pairs, and stability assembly.

Pairings are evaluated on the amplitude level.  With ``u_j = e^{x.zeta_j/h} b_j``
and ``zeta1 + conj(zeta2) = i h xi``,

    u1 conj(u2)                  = e^{i x.xi} b1 conj(b2)
    u1 grad conj(u2) - conj(u2) grad u1
        = e^{i x.xi} [ b1 (conj(zeta2)/h conj(b2) + grad conj(b2)) - conj(b2) (zeta1/h b1 + grad b1) ]

so no exponentially large factor is ever formed in the interior pairing.
Fourier transforms use ``f^(xi) = int f e^{+i x.xi}``; then
``(dA)^_jk = -i (xi_j A^_k - xi_k A^_j)``.
"""
from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass, field

import numpy as np

from .cgo import CGOSolution, build_cgo, h1_scl_on, orthonormal_pair
from .forward import CubeDomain, ForwardOperator, edge_phases
from .grid import TWO_FORM_PAIRS, Field, d_form, fourier_coefficient, gradient, l2_norm
from .potentials import PotentialPair

MODES = ("interior", "boundary")


def rate_exponent(eps: float) -> float:
    """``eps / (eps + 2)``: the h-rate of the extraction error."""
    return eps / (eps + 2.0)


# ---------------------------------------------------------------- pairings

def _products(s1: CGOSolution, s2: CGOSolution):
    """``e^{-ix.xi} u1 conj(u2)`` and ``e^{-ix.xi} (u1 grad conj u2 - conj u2 grad u1)``."""
    h = s1.h
    b1, gb1 = s1.b(), s1.grad_b()
    b2c, gb2c = s2.b().conj(), s2.grad_b().conj()
    z1, z2c = s1.zeta, s2.zeta.conj()
    prod = b1 * b2c
    flux = np.stack([b1 * (z2c[j] / h * b2c + gb2c[j]) - b2c * (z1[j] / h * b1 + gb1[j]) for j in range(3)])
    return prod, flux


def _plane_wave(grid, xi) -> np.ndarray:
    x1, x2, x3 = grid.coords()
    return (np.exp(1j * xi[0] * x1) * np.exp(1j * xi[1] * x2)) * np.exp(1j * xi[2] * x3)


def volume_terms(P1: PotentialPair, P2: PotentialPair, s1: CGOSolution, s2: CGOSolution) -> dict:
    """Volume side of the integral identity, split into its magnetic and remaining parts.

    ``magnetic = int i (A1 - A2).(u1 grad conj u2 - conj u2 grad u1)``,
    ``electric = int (A1.A1 - A2.A2 + q1 - q2) u1 conj u2``.
    """
    g = P1.grid
    xi = s1.zetas.xi
    e = _plane_wave(g, xi)
    prod, flux = _products(s1, s2)
    dA = (P1.A - P2.A).values
    sq = (P1.A.values ** 2).sum(axis=0) - (P2.A.values ** 2).sum(axis=0)
    dq = (P1.q - P2.q).values[0]
    dv = g.cell_volume
    mag = complex(np.sum(1j * e * (dA * flux).sum(axis=0)) * dv)
    ele = complex(np.sum(e * (sq + dq) * prod) * dv)
    return {"magnetic": mag, "electric": ele, "total": mag + ele,
            "q_part": complex(np.sum(e * dq * prod) * dv), "prod": prod, "flux": flux}


_OPS: dict = {}


def _operator(pair: PotentialPair) -> ForwardOperator:
    key = (pair.fingerprint(), pair.half_width)
    op = _OPS.get(key)
    if op is None:
        if len(_OPS) > 16:
            _OPS.clear()
        op = _OPS[key] = ForwardOperator(pair)
    return op


def _boundary_only(dom: CubeDomain, u: np.ndarray) -> np.ndarray:
    out = np.zeros(dom.shape, dtype=complex)
    out[dom.boundary] = u[dom.boundary]
    return out


def boundary_pairing(P1: PotentialPair, P2: PotentialPair, s1: CGOSolution, s2: CGOSolution) -> dict:
    """``<N1 u1, conj T u2> - conj <N2* u2, conj T u1>`` from the discrete Dirichlet-to-Neumann maps.

    Only the traces of the CGOs on the faces of Omega enter: each trace is
    continued by the discrete Dirichlet solver of its own operator, and the
    Neumann data are paired with the other trace.
    """
    op1, op2 = _operator(P1), _operator(P2.conj())
    dom = op1.dom
    t1, t2 = dom.restrict(s1.u()), dom.restrict(s2.u())
    U1 = op1.solve_many(_boundary_only(dom, t1)[None])[0]
    U2 = op2.solve_many(_boundary_only(dom, t2)[None])[0]
    val = op1.bilinear(U1, _boundary_only(dom, t2).conj()) - np.conj(op2.bilinear(U2, _boundary_only(dom, t1).conj()))
    return {"total": complex(val), "trace_scale": float(np.abs(t1).max() * np.abs(t2).max())}


def discrete_volume_value(P1: PotentialPair, P2: PotentialPair, u1: np.ndarray, u2: np.ndarray) -> complex:
    """Volume side of the identity for the link-variable discretization (cube-node arrays).

    ``sum_edges s [(e^{i th2} - e^{i th1}) u1_b conj u2_a + (e^{-i th2} - e^{-i th1}) u1_a conj u2_b]``,
    i.e. ``conj(u2)^T (K1 - K2^H) u1`` for the link matrices ``K``; plus
    ``sum_nodes w (q1 - q2) u1 conj u2``.
    """
    dom = CubeDomain(P1.grid, P1.half_width)
    dx = dom.grid.spacing
    th1, th2 = edge_phases(P1.A), edge_phases(P2.A)
    a1, b2 = u1.ravel(), u2.conj().ravel()
    total = 0j
    for j in range(3):
        a, b, w, lo, _ = dom.edges(j)
        s = w / dx ** 2
        e1 = th1[j][dom.slices][lo].ravel()
        e2 = th2[j][dom.slices][lo].ravel()
        total += np.sum(s * ((np.exp(1j * e2) - np.exp(1j * e1)) * a1[b] * b2[a]
                             + (np.exp(-1j * e2) - np.exp(-1j * e1)) * a1[a] * b2[b]))
    dq = dom.restrict(P1.q) - dom.restrict(P2.q)
    total += np.sum(dom.node_weights * dq * u1 * u2.conj())
    return complex(total)


def integral_identity_check(P1: PotentialPair, P2: PotentialPair, u1: np.ndarray, u2: np.ndarray,
                            tol: float = 1e-8) -> dict:
    """Both sides of the boundary/volume identity for discrete solutions on Omega.

    ``u1`` solves the equation for ``P1`` and ``u2`` the one for ``conj(P2)``
    (cube-node arrays or full-grid fields).  The boundary value pairs each
    solution's discrete Neumann data with the other trace only; the volume
    value is the independent edge/node sum of ``discrete_volume_value``.
    """
    op1, op2 = _operator(P1), _operator(P2.conj())
    dom = op1.dom
    u1, u2 = dom.restrict(u1), dom.restrict(u2)
    r1, r2 = op1.interior_residual(u1), op2.interior_residual(u2)
    ok = bool(r1 <= tol and r2 <= tol)
    if not ok:
        warnings.warn(f"identity inputs are not discrete solutions (residuals {r1:.2e}, {r2:.2e})")
    bval = op1.bilinear(u1, _boundary_only(dom, u2).conj()) - np.conj(op2.bilinear(u2, _boundary_only(dom, u1).conj()))
    vval = discrete_volume_value(P1, P2, u1, u2)
    mags = max(abs(op1.bilinear(u1, u2.conj())), abs(op2.bilinear(u2, u1.conj())), 1e-300)
    return {"volume": complex(vval), "boundary": complex(bval), "gap": float(abs(vval - bval)),
            "relative_gap": float(abs(vval - bval) / mags), "magnitude": float(mags),
            "residuals": (r1, r2), "solutions_ok": ok}


def cauchy_identity_bound(C1, C2conj, c1: np.ndarray, c2: np.ndarray, dist: float) -> dict:
    """Identity value from Cauchy data coefficients and its dist-based bound.

    ``(f1, g1) = (c1, F1^T c1)`` lies in ``C_{A1,q1}``, ``(f2, g2) = (c2, F2*^T c2)``
    in ``C_{conj A2, conj q2}``.  The value ``<g1, conj f2> - conj <g2, conj f1>``
    is bounded by ``dist ||f1|| max(||f2||, ||g2||_*)``.
    """
    from .cauchy import gram_norm, trace_dual_norm
    G = C1.gram
    g1 = C1.flux.T @ c1
    g2 = C2conj.flux.T @ c2
    val = complex(g1 @ c2.conj() - np.conj(g2 @ c1.conj()))
    rhs = dist * gram_norm(G, c1) * max(gram_norm(G, c2), trace_dual_norm(G, g2))
    return {"value": val, "bound": float(rhs), "ratio": float(abs(val) / rhs) if rhs > 0 else float("inf")}


def cube_quadrature(f, half_width: float, order: int = 32) -> complex:
    """Tensor Gauss-Legendre quadrature of ``f(x1, x2, x3)`` over ``[-hw, hw]^3``."""
    t, w = np.polynomial.legendre.leggauss(order)
    x = half_width * t
    w = half_width * w
    X1, X2, X3 = np.meshgrid(x, x, x, indexing="ij")
    W = w[:, None, None] * w[None, :, None] * w[None, None, :]
    return complex(np.sum(W * f(X1, X2, X3)))


# ---------------------------------------------------------------- records

@dataclass
class ExtractionRecord:
    kind: str                       # "dA" or "q"
    xi: list
    h: float
    mode: str
    pairings: list                  # raw pairing values (complex)
    value: np.ndarray               # extracted Fourier coefficient(s)
    truth: np.ndarray | None = None
    h_term: float = 0.0             # h^(eps/(eps+2))
    dist_term: float | None = None  # dist-based bound of the pairing
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.value = np.atleast_1d(np.asarray(self.value, dtype=complex))
        if self.truth is not None:
            self.truth = np.atleast_1d(np.asarray(self.truth, dtype=complex))
        if not np.all(np.isfinite(self.value)):
            raise ValueError("non-finite extracted value")

    @property
    def error(self) -> float | None:
        if self.truth is None:
            return None
        return float(np.linalg.norm(self.value - self.truth))

    def to_dict(self) -> dict:
        def cx(a):
            return [[float(z.real), float(z.imag)] for z in np.atleast_1d(a)]
        return {"kind": self.kind, "xi": [float(v) for v in self.xi], "h": self.h, "mode": self.mode,
                "pairings": cx(self.pairings), "value": cx(self.value),
                "truth": None if self.truth is None else cx(self.truth), "error": self.error,
                "h_term": self.h_term, "dist_term": self.dist_term,
                "extra": {k: v for k, v in self.extra.items() if isinstance(v, (int, float, str, bool, list))}}


def _cgo(pair, xi, h, which, frame, cache, maxiter, rtol):
    key = None
    if cache is not None:
        key = (pair.fingerprint(), pair.half_width, tuple(np.round(xi, 12)), round(h, 14), which,
               tuple(np.round(np.concatenate(frame), 12)))
        if key in cache:
            return cache[key]
    sol = build_cgo(pair, xi, h, which=which, maxiter=maxiter, rtol=rtol, frame=frame)
    if not sol.converged:
        raise RuntimeError(f"CGO remainder did not converge at xi={list(xi)}, h={h}")
    if key is not None:
        cache[key] = sol
    return sol


def _pairing(P1, P2, s1, s2, mode):
    if mode == "interior":
        return volume_terms(P1, P2, s1, s2)
    if mode == "boundary":
        return boundary_pairing(P1, P2, s1, s2)
    raise ValueError(f"mode must be one of {MODES}")


def _weight_max(s1: CGOSolution, s2: CGOSolution, mask) -> float:
    w = np.exp((s1.phi.values[0] + s2.phi.values[0].conj()).real)
    return float(w[mask].max())


def _h1_omega(P: PotentialPair, s: CGOSolution) -> float:
    return h1_scl_on(s.u(), s.grad_u(), 1.0, P.grid, P.omega_mask(closed=True))


def dist_factor(P1: PotentialPair, P2: PotentialPair, s1: CGOSolution, s2: CGOSolution) -> float:
    """``(1 + ||A2||_inf^2 + ||q2||_inf) ||u1||_{H1(Omega)} ||u2||_{H1(Omega)}``: multiplies dist."""
    a2 = float(np.sqrt((np.abs(P2.A.values) ** 2).sum(axis=0)).max())
    q2 = float(np.abs(P2.q.values).max())
    return (1 + a2 ** 2 + q2) * _h1_omega(P1, s1) * _h1_omega(P2, s2)


# ---------------------------------------------------------------- dA

def dA_truth(P1: PotentialPair, P2: PotentialPair, xi) -> np.ndarray:
    return fourier_coefficient(d_form(P1.A - P2.A), np.asarray(xi, dtype=float))


def transverse_from_pairings(xi, h: float, frame, E_plus: complex, E_minus: complex) -> np.ndarray:
    """``A^`` projected on the plane orthogonal to ``xi`` from the two frame pairings.

    ``E_pm ~ (mu1 +- i s mu2).A^`` with ``s = sqrt(1 - h^2 |xi|^2 / 4)``.
    """
    xi = np.asarray(xi, dtype=float)
    mu1, mu2 = frame
    s = np.sqrt(max(0.0, 1.0 - h * h * (xi @ xi) / 4.0))
    a1 = (E_plus + E_minus) / 2.0
    a2 = (E_plus - E_minus) / (2j * s)
    return a1 * mu1 + a2 * mu2


def two_form_from_transverse(xi, A_perp: np.ndarray) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    return np.array([-1j * (xi[j] * A_perp[k] - xi[k] * A_perp[j]) for j, k in TWO_FORM_PAIRS])


def extract_dA_hat(P1: PotentialPair, P2: PotentialPair, xi, h: float, mode: str = "interior",
                   cache: dict | None = None, maxiter: int = 500, rtol: float = 1e-6,
                   dist: float | None = None, with_truth: bool = True) -> ExtractionRecord:
    """Estimate ``(dA1 - dA2)^(xi)`` (components (1,2), (1,3), (2,3)).

    Two CGO pairs are built, with frames ``(mu1, mu2)`` and ``(mu1, -mu2)``;
    each gives ``E = h I / (-2i) ~ (mu1 +- i s mu2).(A1 - A2)^`` where ``I`` is
    the identity pairing.  The full transverse part of ``(A1 - A2)^`` follows,
    so every component of the 2-form is obtained, including those with
    ``xi_j = xi_k = 0`` (which vanish).
    """
    xi = np.asarray(xi, dtype=float)
    if not np.any(xi):
        raise ValueError("xi must be nonzero")
    mu1, mu2 = orthonormal_pair(xi)
    E, raw, weights, dterms = [], [], [], []
    omega = P1.omega_mask(closed=True)
    for frame in ((mu1, mu2), (mu1, -mu2)):
        s1 = _cgo(P1, xi, h, 1, frame, cache, maxiter, rtol)
        s2 = _cgo(P2, xi, h, 2, frame, cache, maxiter, rtol)
        I = _pairing(P1, P2, s1, s2, mode)["total"]
        raw.append(I)
        E.append(h * I / (-2j))
        weights.append(_weight_max(s1, s2, omega))
        if dist is not None:
            dterms.append(h / 2.0 * dist * dist_factor(P1, P2, s1, s2))
    Aperp = transverse_from_pairings(xi, h, (mu1, mu2), E[0], E[1])
    value = two_form_from_transverse(xi, Aperp)
    truth = dA_truth(P1, P2, xi) if with_truth else None
    extra = {"E_plus": [E[0].real, E[0].imag], "E_minus": [E[1].real, E[1].imag],
             "exp_weight_max": max(weights), "A_perp_abs": float(np.linalg.norm(Aperp))}
    if truth is not None:
        A_true = fourier_coefficient(P1.A - P2.A, xi)
        perp_true = A_true - xi * (xi @ A_true) / (xi @ xi)
        extra["A_perp_error"] = float(np.linalg.norm(Aperp - perp_true))
    return ExtractionRecord("dA", xi.tolist(), float(h), mode, raw, value, truth,
                            h ** rate_exponent(P1.eps), max(dterms) if dterms else None, extra)


# ---------------------------------------------------------------- q (with gauge repair)

@dataclass(eq=False)
class GaugeRepair:
    """Gauge ``phi = chi (psi - psi*)`` from the ball decomposition of ``A1 - A2``."""

    R_inner: float
    R: float
    half_width: float           # cube [-hw, hw]^3 containing the ball, on nodes
    phi: Field
    grad_phi: Field
    hodge: object
    gauge: object

    @property
    def report(self) -> dict:
        rep = dict(self.gauge.report)
        rep.update({"R_inner": self.R_inner, "R": self.R, "half_width": self.half_width,
                    "hodge_residual": self.hodge.residual, "coexact_L2": self.hodge.coexact_norm()})
        return rep


def default_radii(pair: PotentialPair) -> tuple[float, float]:
    """``B'`` just containing the closed cube Omega and ``B`` between it and the box."""
    g = pair.grid
    r_in = 1.05 * np.sqrt(3.0) * pair.half_width
    r_out = min(1.3 * r_in, g.L - 4 * g.spacing)
    if r_out <= r_in + 2 * g.spacing:
        raise ValueError("box too small for the gauge balls")
    return float(r_in), float(r_out)


def gauge_repair(P1: PotentialPair, P2: PotentialPair, R_inner: float | None = None,
                 R: float | None = None) -> GaugeRepair:
    from .hodge import decompose_ball, gauge_phi
    if R_inner is None or R is None:
        R_inner, R = default_radii(P1)
    g = P1.grid
    H = decompose_ball(P1.A - P2.A, R, R_inner)
    G = gauge_phi(H)
    phi = G.phi_field(H.complex)
    if P1.is_real() and P2.is_real():
        phi = phi.with_values(phi.values.real.astype(complex))
    hw = float(np.ceil(R / g.spacing - 1e-9) * g.spacing)
    grad = gradient(phi)
    grad = grad.with_values(grad.values * (g.radius() <= R)[None])
    return GaugeRepair(R_inner, R, hw, phi, grad, H, G)


def q_truth(P1: PotentialPair, P2: PotentialPair, xi) -> complex:
    return complex(fourier_coefficient(P1.q - P2.q, np.asarray(xi, dtype=float))[0])


def gauged_pairs(P1: PotentialPair, P2: PotentialPair, G: GaugeRepair, class_factor: float = 2.0):
    """``(A1, q1)`` and ``(A2 + grad phi, q2)`` on the cube containing ``B``."""
    Q1 = dataclasses.replace(P1, half_width=G.half_width, meta=dict(P1.meta))
    A2p = P2.A + G.grad_phi
    Q2 = dataclasses.replace(P2, A=A2p, half_width=G.half_width, label=P2.label + "+grad",
                             meta=dict(P2.meta))
    sup = float(np.sqrt((np.abs(A2p.values) ** 2).sum(axis=0)).max())
    if sup > class_factor * P2.M:
        warnings.warn(f"gauged potential sup {sup:.3g} exceeds {class_factor} M = {class_factor * P2.M:.3g}")
    return Q1, Q2


def extract_q_hat(P1: PotentialPair, P2: PotentialPair, xi, h: float, gauge: GaugeRepair | None = None,
                  mode: str = "interior", cache: dict | None = None, maxiter: int = 500,
                  rtol: float = 1e-6, dist: float | None = None, with_truth: bool = True) -> ExtractionRecord:
    """Estimate ``(q1 - q2)^(xi)`` from the gauge-modified pairing.

    CGOs are built for ``(A1, q1)`` and ``conj(A2 + grad phi, q2)`` on the
    cube containing ``B``; the pairing is the identity integrand for these
    two pairs, which equals the pairing with ``u2`` and ``e^{i phi}`` weights.
    The magnetic terms that remain are not subtracted (they are unknown to a
    boundary observer); ``extra["S"]`` bounds them by ``S ||A1 - A2 - grad phi||_2``.
    """
    if mode == "boundary":
        raise ValueError("the gauge-modified pairing lives on B; only mode='interior' is available")
    xi = np.asarray(xi, dtype=float)
    G = gauge or gauge_repair(P1, P2)
    Q1, Q2 = gauged_pairs(P1, P2, G)
    frame = orthonormal_pair(xi) if np.any(xi) else (np.eye(3)[0], np.eye(3)[1])
    s1 = _cgo(Q1, xi, h, 1, frame, cache, maxiter, rtol)
    s2 = _cgo(Q2, xi, h, 2, frame, cache, maxiter, rtol)
    t = volume_terms(Q1, Q2, s1, s2)
    g = P1.grid
    dv = g.cell_volume
    dA = (Q1.A - Q2.A).values
    eta = float(np.sqrt((np.abs(dA) ** 2).sum() * dv))
    Asum = Q1.A.values + Q2.A.values
    S = float(np.sqrt((np.abs(t["flux"]) ** 2).sum() * dv)
              + np.sqrt((np.abs(Asum * t["prod"][None]) ** 2).sum() * dv))
    truth = q_truth(P1, P2, xi) if with_truth else None
    dterm = dist * dist_factor(P1, P2, s1, s2) if dist is not None else None
    ball = g.radius() <= G.R
    extra = {"q_part": [t["q_part"].real, t["q_part"].imag], "coexact_gap": eta, "S": S,
             "magnetic_terms": float(abs(t["total"] - t["q_part"])),
             "exp_weight_max": _weight_max(s1, s2, ball), "gauge_sup": float(np.abs(G.phi.values).max())}
    return ExtractionRecord("q", xi.tolist(), float(h), mode, [t["total"]], t["total"], truth,
                            h ** rate_exponent(P1.eps), dterm, extra)


# ---------------------------------------------------------------- schedules

@dataclass
class StabilityParams:
    """Schedule exponents, knobs and fitted constants.

    ``C_A``, ``C_q`` bound the extraction errors by ``C h^(eps/(eps+2))``;
    ``C_hodge`` bounds ``||A1 - A2 - grad phi||_2`` by ``C ||dA1 - dA2||_{H^-1}``;
    ``c_prime``/``c_prime_q`` couple ``h`` to ``|log dist|``.  ``rho_scale``
    multiplies the frequency radius of the low/high split.
    """

    eps: float = 0.5
    lam: float = 1.0
    theta: float = 0.5
    besov_delta: float | None = None
    r: float = 2.0
    n: int = 3
    c_tilde: float = 1.0
    c_prime: float = 1.0
    c_prime_q: float = 0.5
    rho_scale: float = 2.0
    h_max: float = 0.5
    C_A: float = 1.0
    C_q: float = 1.0
    C_hodge: float = 1.0
    mode: str = "interior"

    def __post_init__(self):
        from .besov import parse_r
        if not 0 < self.eps < 1:
            raise ValueError("eps must lie in (0, 1)")
        if not 0 < self.lam <= 1:
            raise ValueError("lambda must lie in (0, 1]")
        if not 0 < self.theta < 2.0 / self.n:
            raise ValueError(f"theta must lie in (0, 2/n) = (0, {2.0 / self.n:.4g})")
        if self.besov_delta is None:
            self.besov_delta = 1.0 - self.eps / 2.0
        if not 1.0 - self.eps < self.besov_delta < 1.0:
            raise ValueError("besov_delta must lie in (1 - eps, 1)")
        self.r = parse_r(self.r)
        if not 0 < self.h_max <= 1:
            raise ValueError("h_max must lie in (0, 1]")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["r"] = "inf" if np.isinf(self.r) else self.r
        return d


def _log_dist(dist: float) -> float:
    if not 0 < dist < 1:
        raise ValueError(f"schedule needs 0 < dist < 1, got {dist}")
    return abs(np.log(dist))


def h_schedule_dA(dist: float, p: StabilityParams) -> float:
    """``h = c' |log dist|^-1`` (capped by ``h_max``)."""
    return float(min(p.c_prime / _log_dist(dist), p.h_max))


def h_schedule_q(dist: float, p: StabilityParams) -> float:
    """``h = c' |log dist|^(-c~ theta eps^2 / (6n))`` (capped by ``h_max``)."""
    e = p.c_tilde * p.theta * p.eps ** 2 / (6.0 * p.n)
    return float(min(p.c_prime_q * _log_dist(dist) ** (-e), p.h_max))


def _cap_rho(rho: float, h: float, notes: list) -> float:
    cap = 1.9 / h
    if rho > cap:
        notes.append(f"rho {rho:.4g} exceeds 2/h at h={h:.4g}; reduced to {cap:.4g}")
        return cap
    return rho


def rho_schedule_dA(h: float, p: StabilityParams, notes: list | None = None) -> float:
    n, e = p.n, p.eps
    rho = p.rho_scale * h ** (-2 * e * (1 + e) / ((2 + e) * (n + n * e + 2 * e)))
    return _cap_rho(rho, h, notes if notes is not None else [])


def rho_schedule_q(h: float, p: StabilityParams, notes: list | None = None) -> float:
    n, e = p.n, p.eps
    rho = p.rho_scale * h ** (-2 * e / ((2 + e) * (n + 2 * p.lam)))
    return _cap_rho(rho, h, notes if notes is not None else [])


def _dyadic_k(h: float, gamma: float, notes: list) -> int:
    """``k`` with ``2^-(k+1) < h^gamma <= 2^-k``."""
    k = int(np.floor(-np.log2(h ** gamma) + 1e-12))
    if h > 2.0 ** -k * (1 + 1e-12):
        notes.append(f"k={k} violates h <= 2^-k at h={h:.4g}")
    return max(k, 0)


def k_schedule_dA(h: float, p: StabilityParams, notes: list | None = None) -> int:
    e, d = p.eps, p.besov_delta
    return _dyadic_k(h, e / ((e + 2) * (d - 1 + e + p.n)), notes if notes is not None else [])


def k_schedule_q(h: float, p: StabilityParams, notes: list | None = None) -> int:
    e = p.eps
    return _dyadic_k(h, e / ((e + 2) * (e + p.n)), notes if notes is not None else [])


def lattice_points(grid, radius: float, include_zero: bool = False, half: bool = True) -> np.ndarray:
    """Dual-lattice frequencies with ``|xi| <= radius``; ``half`` keeps one of each ``+-xi``."""
    u = grid.freq_unit
    m = int(np.floor(radius / u + 1e-12))
    rng = np.arange(-m, m + 1)
    pts = np.array(np.meshgrid(rng, rng, rng, indexing="ij")).reshape(3, -1).T
    pts = pts[(pts ** 2).sum(axis=1) * u * u <= radius ** 2 * (1 + 1e-12)]
    if half:
        first = np.array([next((v for v in p if v != 0), 0) for p in pts])
        pts = pts[first > 0] if not include_zero else pts[first >= 0]
    elif not include_zero:
        pts = pts[np.any(pts != 0, axis=1)]
    return pts * u


# ---------------------------------------------------------------- assembly

def _map_xi(fn, pts, workers: int = 1) -> list:
    """Per-frequency jobs in order; ``workers > 1`` runs them on a thread pool."""
    if workers <= 1 or len(pts) <= 1:
        return [fn(xi) for xi in pts]
    from concurrent.futures import ThreadPoolExecutor
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, pts))


def _lattice_sum(grid, pts: np.ndarray, vals: np.ndarray, weight, mirrored: bool) -> float:
    """``(2L)^-3 sum weight(xi) vals(xi)^2`` with mirrored points counted twice."""
    total = 0.0
    for xi, v in zip(pts, vals):
        m = 2.0 if (mirrored and np.any(xi)) else 1.0
        total += m * weight(xi) * v * v
    return total / grid.volume


def _lp_value(grid, j: int, xi) -> float:
    from .besov import eta, kappa
    r = float(np.linalg.norm(xi))
    return float(eta(r)) if j == 0 else float(kappa(r / 2.0 ** j))


def _lr(values, r: float) -> float:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return 0.0
    return float(v.max()) if np.isinf(r) else float((v ** r).sum() ** (1.0 / r))


def direct_norms(P1: PotentialPair, P2: PotentialPair, p: StabilityParams) -> dict:
    from .besov import BesovParams, besov_norm, sobolev_norm
    dA = d_form(P1.A - P2.A)
    dq = P1.q - P2.q
    return {
        "dA_Hm1_direct": sobolev_norm(dA, -1.0),
        "dA_Besov_direct": besov_norm(dA, BesovParams(-p.besov_delta, p.r)),
        "q_Hlambda_direct": sobolev_norm(dq, -p.lam),
        "q_Besov0_direct": besov_norm(dq, BesovParams(0.0, p.r)),
    }


def _tail_dA(P1, P2, rho, p, notes):
    """``sqrt(2 rho^-2 ||dA_sharp||^2 + 2 ||A_flat||^2)`` with each potential's own split."""
    from .grid import l2_norm as _l2
    from .mollify import min_tau, split
    g = P1.grid
    tau = rho ** (-1.0 / (p.eps + 1.0))
    if tau < min_tau(g):
        notes.append(f"tau {tau:.4g} below grid resolution; raised to {min_tau(g):.4g}")
        tau = min_tau(g)
    tau = min(tau, 1.0)
    sharp, flat = 0.0, 0.0
    for P in (P1, P2):
        s, f = split(P.A, tau)
        sharp += _l2(d_form(s))
        flat += _l2(f)
    return float(np.sqrt(2 * sharp ** 2 / rho ** 2 + 2 * flat ** 2)), tau


def assemble_dA_stability(P1: PotentialPair, P2: PotentialPair, dist: float, p: StabilityParams,
                          cache: dict | None = None, workers: int = 1) -> dict:
    """Low-frequency bound from extractions plus the mollifier tail, for ``H^-1`` and ``B^{2,r}_{-delta}``.

    Per frequency, ``|(dA1 - dA2)^(xi)| <= |xi| (|A_perp extracted| + C_A h^a)``.
    The tail uses the mollifier split of each potential separately (never
    the unknown difference).
    """
    from .besov import BesovParams, besov_norm
    notes: list = []
    g = P1.grid
    h = h_schedule_dA(dist, p)
    rho = rho_schedule_dA(h, p, notes)
    k = k_schedule_dA(h, p, notes)
    radius = max(rho, 2.0 ** (k + 1))
    if radius > 1.9 / h:
        notes.append(f"Besov blocks up to 2^(k+1)={2.0 ** (k + 1):.3g} exceed 2/h; truncated")
        radius = 1.9 / h
    mirrored = P1.is_real() and P2.is_real()
    pts = lattice_points(g, radius, include_zero=False, half=mirrored)
    a = h ** rate_exponent(p.eps)
    recs = _map_xi(lambda xi: extract_dA_hat(P1, P2, xi, h, mode=p.mode, cache=cache), pts, workers)
    bounds = np.array([float(np.linalg.norm(r.xi)) * (r.extra["A_perp_abs"] + p.C_A * a) for r in recs])
    inside = np.array([np.linalg.norm(x) <= rho for x in pts], dtype=bool) if len(pts) else np.zeros(0, bool)
    low = _lattice_sum(g, pts[inside], bounds[inside], lambda x: 1.0 / (1.0 + x @ x), mirrored) if len(pts) else 0.0
    tail, tau = _tail_dA(P1, P2, rho, p, notes)
    hm1 = float(np.sqrt(low + tail ** 2))
    # Besov: blocks j <= k from the extractions, tail from each potential's B^{2,r}_eps norm
    d = p.besov_delta
    blocks = [2.0 ** (-d * j) * np.sqrt(_lattice_sum(g, pts, bounds, lambda x, j=j: _lp_value(g, j, x) ** 2,
                                                      mirrored)) for j in range(k + 1)]
    hi = 2.0 * 2.0 ** (-k * (d - 1 + p.eps)) * sum(besov_norm(P.A, BesovParams(p.eps, p.r)) for P in (P1, P2))
    besov = _lr(blocks, p.r) + hi
    return {"h": h, "rho": rho, "k": k, "tau": tau, "n_xi": int(len(pts)), "dA_Hm1_bound": hm1,
            "dA_Hm1_low": float(np.sqrt(low)), "dA_Hm1_tail": tail, "dA_Besov_bound": float(besov),
            "dA_Besov_low": _lr(blocks, p.r), "dA_Besov_tail": float(hi), "notes": notes, "records": recs}


def assemble_q_stability(P1: PotentialPair, P2: PotentialPair, dist: float, p: StabilityParams,
                         dA_Hm1_bound: float, gauge: GaugeRepair | None = None,
                         cache: dict | None = None, workers: int = 1) -> dict:
    """Same assembly for ``q1 - q2`` in ``H^-lambda`` and ``B^{2,r}_0``.

    Per frequency, ``|(q1 - q2)^(xi)| <= |Q| + C_q h^a + C_hodge dA_bound S(xi)``
    where ``Q`` is the gauge-modified pairing and ``S`` its sensitivity to
    the residual magnetic difference.
    """
    from .besov import BesovParams, besov_norm
    notes: list = []
    g = P1.grid
    G = gauge or gauge_repair(P1, P2)
    h = h_schedule_q(dist, p)
    rho = rho_schedule_q(h, p, notes)
    k = k_schedule_q(h, p, notes)
    radius = max(rho, 2.0 ** (k + 1))
    if radius > 1.9 / h:
        notes.append(f"Besov blocks up to 2^(k+1)={2.0 ** (k + 1):.3g} exceed 2/h; truncated")
        radius = 1.9 / h
    mirrored = P1.is_real() and P2.is_real()
    pts = lattice_points(g, radius, include_zero=True, half=mirrored)
    a = h ** rate_exponent(p.eps)
    eta_b = p.C_hodge * dA_Hm1_bound
    recs = _map_xi(lambda xi: extract_q_hat(P1, P2, xi, h, gauge=G, cache=cache), pts, workers)
    bounds = np.array([abs(r.value[0]) + p.C_q * a + eta_b * r.extra["S"] for r in recs])
    inside = np.array([np.linalg.norm(x) <= rho for x in pts], dtype=bool)
    lam = p.lam
    low = _lattice_sum(g, pts[inside], bounds[inside], lambda x: (1.0 + x @ x) ** (-lam), mirrored)
    qn = sum(l2_norm(P.q) for P in (P1, P2))
    tail = rho ** (-lam) * qn
    hl = float(np.sqrt(low + tail ** 2))
    out = {"h": h, "rho": rho, "k": k, "n_xi": int(len(pts)), "q_Hlambda_bound": hl,
           "q_Hlambda_low": float(np.sqrt(low)), "q_Hlambda_tail": float(tail), "eta_bound": eta_b,
           "eta_observed": max(r.extra["coexact_gap"] for r in recs),
           "gauge": G.report, "notes": notes, "records": recs}
    # Besov B^{2,r}_0 needs the a priori bound ||q_j||_{B^{2,r}_eps} <= M
    qb = [besov_norm(P.q, BesovParams(p.eps, p.r)) for P in (P1, P2)]
    if any(v > P.M for v, P in zip(qb, (P1, P2))):
        notes.append(f"a priori bound ||q_j||_B^(2,r)_eps <= M fails ({qb[0]:.3g}, {qb[1]:.3g}); Besov variant skipped")
        out["q_Besov0_bound"] = None
    else:
        blocks = [np.sqrt(_lattice_sum(g, pts, bounds, lambda x, j=j: _lp_value(g, j, x) ** 2, mirrored))
                  for j in range(k + 1)]
        hi = 2.0 ** (-(k + 1) * p.eps) * sum(qb)
        out["q_Besov0_bound"] = float(_lr(blocks, p.r) + hi)
        out["q_Besov0_low"], out["q_Besov0_tail"] = _lr(blocks, p.r), float(hi)
    return out


# ---------------------------------------------------------------- sweep

SWEEP_COLUMNS = ("t", "dist", "dA_Hm1_direct", "dA_Hm1_bound", "dA_Besov_direct", "dA_Besov_bound",
                 "q_Hlambda_direct", "q_Hlambda_bound", "q_Besov0_direct", "q_Besov0_bound",
                 "h_used", "rho_used", "k_used")


@dataclass
class StabilityReport:
    params: dict
    rows: list                  # dicts keyed by SWEEP_COLUMNS
    records: list               # ExtractionRecord
    details: list               # per-row dicts (q schedule, gauge report, notes)
    fitted: dict = field(default_factory=dict)

    def holds(self) -> dict:
        """``direct <= bound`` for each norm over all rows (skipped variants count as not checked)."""
        out = {}
        for name in ("dA_Hm1", "dA_Besov", "q_Hlambda", "q_Besov0"):
            pairs = [(r[name + "_direct"], r[name + "_bound"]) for r in self.rows if r[name + "_bound"] is not None]
            out[name] = bool(pairs) and all(d <= b for d, b in pairs)
        return out

    def dist_monotone(self) -> bool:
        rows = sorted(self.rows, key=lambda r: r["t"])
        return all(a["dist"] <= b["dist"] for a, b in zip(rows, rows[1:]))

    def to_dict(self) -> dict:
        return {"params": self.params, "fitted": self.fitted, "columns": list(SWEEP_COLUMNS), "rows": self.rows,
                "details": self.details, "records": [r.to_dict() for r in self.records]}


def perturbed(base: PotentialPair, dA: Field | None, dq: Field | None, t: float) -> PotentialPair:
    A = base.A if dA is None else base.A + dA * t
    q = base.q if dq is None else base.q + dq * t
    return base.replace(A=A, q=q, label=f"{base.label}+{t:g}")


def sweep(base: PotentialPair, dA: Field | None, dq: Field | None, ts, params: StabilityParams,
          K: int = 50, cache: dict | None = None, progress=None, workers: int = 1,
          radii: tuple | None = None, C1=None) -> StabilityReport:
    """Stability instances ``(base, base + t (dA, dq))`` for each ``t``.

    ``radii = (R_inner, R)`` fixes the gauge balls (default ``default_radii``);
    ``C1`` may pass precomputed Cauchy data of ``base``.
    """
    from .cauchy import assemble_cauchy, dist_cauchy
    cache = {} if cache is None else cache
    C1 = C1 if C1 is not None else assemble_cauchy(base, K)
    radii = radii or (None, None)
    rows, recs, details = [], [], []
    for t in ts:
        P2 = perturbed(base, dA, dq, t)
        C2 = assemble_cauchy(P2, K)
        dist = dist_cauchy(C1, C2).value
        row = {"t": float(t), "dist": float(dist)}
        row.update(direct_norms(base, P2, params))
        if dist <= 0:
            row.update({"dA_Hm1_bound": 0.0, "dA_Besov_bound": 0.0, "q_Hlambda_bound": 0.0,
                        "q_Besov0_bound": 0.0, "h_used": None, "rho_used": None, "k_used": None})
            rows.append(row)
            details.append({"t": float(t), "notes": ["identical Cauchy data: every bound is zero"]})
            continue
        a = assemble_dA_stability(base, P2, dist, params, cache, workers)
        G = gauge_repair(base, P2, *radii)
        q = assemble_q_stability(base, P2, dist, params, a["dA_Hm1_bound"], G, cache, workers)
        row.update({"dA_Hm1_bound": a["dA_Hm1_bound"], "dA_Besov_bound": a["dA_Besov_bound"],
                    "q_Hlambda_bound": q["q_Hlambda_bound"], "q_Besov0_bound": q["q_Besov0_bound"],
                    "h_used": a["h"], "rho_used": a["rho"], "k_used": a["k"]})
        rows.append(row)
        recs += a["records"] + q["records"]
        details.append({"t": float(t),
                        "dA": {k: v for k, v in a.items() if k != "records"},
                        "q": {k: v for k, v in q.items() if k != "records"}})
        if progress:
            progress(row)
    return StabilityReport(params.to_dict(), rows, recs, details)


def fit_constants(report: StabilityReport, params: StabilityParams, base: PotentialPair | None = None,
                  h_max: float | None = None) -> dict:
    """Constants from a calibration sweep, to be frozen for held-out families.

    ``C_A``/``C_q``: largest observed extraction error over ``h^a`` (after
    removing the magnetic allowance for ``q``); ``C_hodge``: largest ratio of
    the gauge residual to ``||dA1 - dA2||_{H^-1}``; ``c_prime``/``c_prime_q``:
    chosen so the largest observed dist maps to ``h_max``.
    """
    a_exp = rate_exponent(params.eps)
    cA = [r.extra["A_perp_error"] / r.h ** a_exp for r in report.records if r.kind == "dA" and "A_perp_error" in r.extra]
    dA_by_t = {row["t"]: row["dA_Hm1_direct"] for row in report.rows}
    ch = []
    for det in report.details:
        if "q" in det and dA_by_t.get(det["t"], 0) > 0:
            ch.append(det["q"]["eta_observed"] / dA_by_t[det["t"]])
    C_hodge = max(ch) if ch else params.C_hodge
    cq = []
    for r in report.records:
        if r.kind == "q" and r.truth is not None:
            err = abs(r.value[0] - r.truth[0]) - r.extra["coexact_gap"] * r.extra["S"]
            cq.append(max(err, 0.0) / r.h ** a_exp)
    hm = params.h_max if h_max is None else h_max
    dmax = max(row["dist"] for row in report.rows)
    ld = _log_dist(dmax)
    e = params.c_tilde * params.theta * params.eps ** 2 / (6.0 * params.n)
    return {"C_A": max(cA) if cA else params.C_A, "C_q": max(cq) if cq else params.C_q, "C_hodge": C_hodge,
            "c_prime": float(hm * ld), "c_prime_q": float(hm * ld ** e)}
