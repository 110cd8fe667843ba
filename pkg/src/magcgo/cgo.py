"""Complex geometrical optics solutions ``u = exp(x.zeta/h) (a + r)``.

Conventions: derivatives act as ``i kappa`` on the FFT index; the magnetic
Schroedinger operator is ``L_{A,q} = -Lap - 2i A.grad - i div(A) + A.A + q``.
The remainder is computed on the periodic box (a particular solution, not the
one produced by Carleman estimates) and measured on Omega.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .grid import Field, Grid, fftn, ifftn, scalar_field
from .mollify import split
from .potentials import PotentialPair, smooth_step

REMAINDER_MODEL = "periodic box, half-lattice shifted Fourier symbol, GMRES, restricted to Omega"


# ---------------------------------------------------------------- zetas

@dataclass(frozen=True)
class Zetas:
    xi: np.ndarray
    h: float
    mu1: np.ndarray
    mu2: np.ndarray
    zeta1: np.ndarray
    zeta2: np.ndarray

    def zeta(self, which: int) -> np.ndarray:
        return self.zeta1 if which == 1 else self.zeta2

    def zeta0(self, which: int) -> np.ndarray:
        """h-independent leading part: ``mu1 + i mu2`` or ``-mu1 + i mu2``."""
        s = 1.0 if which == 1 else -1.0
        return s * self.mu1 + 1j * self.mu2

    def invariants(self) -> dict:
        z1, z2 = self.zeta1, self.zeta2
        return {
            "zeta1_null": float(abs(z1 @ z1)),
            "zeta2_null": float(abs(z2 @ z2)),
            "sum_minus_ixi": float(np.abs((z1 + z2.conj()) / self.h - 1j * self.xi).max()),
            "mu_orthonormal": float(max(abs(self.mu1 @ self.mu1 - 1), abs(self.mu2 @ self.mu2 - 1),
                                        abs(self.mu1 @ self.mu2), abs(self.mu1 @ self.xi),
                                        abs(self.mu2 @ self.xi))),
        }


def orthonormal_pair(xi) -> tuple[np.ndarray, np.ndarray]:
    """``mu1, mu2`` orthonormal and orthogonal to ``xi``.

    ``mu1`` comes from Gram-Schmidt on the canonical axis least aligned with
    ``xi`` (first index on ties); ``mu2 = xi_hat x mu1``.
    """
    xi = np.asarray(xi, dtype=float)
    n = xi / np.linalg.norm(xi)
    e = np.zeros(3)
    e[int(np.argmin(np.abs(n)))] = 1.0
    mu1 = e - (e @ n) * n
    mu1 /= np.linalg.norm(mu1)
    mu2 = np.cross(n, mu1)
    return mu1, mu2 / np.linalg.norm(mu2)


def make_zetas(xi, h: float, frame=None) -> Zetas:
    """``zeta1, zeta2`` for ``xi`` and ``h``; ``frame = (mu1, mu2)`` overrides the default pair."""
    xi = np.asarray(xi, dtype=float).reshape(3)
    nx = float(np.linalg.norm(xi))
    if nx == 0 and frame is None:
        raise ValueError("xi must be nonzero unless a frame is given")
    hmax = min(1.0, 2.0 / nx) if nx > 0 else 1.0
    if not 0 < h <= hmax * (1 + 1e-12):
        raise ValueError(f"h={h} outside (0, min(1, 2/|xi|)] = (0, {hmax:.6g}]")
    if frame is None:
        mu1, mu2 = orthonormal_pair(xi)
    else:
        mu1, mu2 = (np.asarray(m, dtype=float).reshape(3) for m in frame)
        G = np.array([[mu1 @ mu1, mu1 @ mu2], [mu2 @ mu1, mu2 @ mu2]])
        if np.abs(G - np.eye(2)).max() > 1e-10 or max(abs(mu1 @ xi), abs(mu2 @ xi)) > 1e-10 * max(nx, 1.0):
            raise ValueError("frame must be orthonormal and orthogonal to xi")
    s = np.sqrt(max(0.0, 1.0 - h * h * nx * nx / 4.0))
    z1 = 1j * h * xi / 2 + mu1 + 1j * s * mu2
    z2 = -1j * h * xi / 2 - mu1 + 1j * s * mu2
    return Zetas(xi, float(h), mu1, mu2, z1, z2)


# ---------------------------------------------------------------- dbar

def _zeta_dot_grad_symbol(grid: Grid, zeta0) -> np.ndarray:
    K = grid.kappas()
    return 1j * (zeta0[0] * K[0] + zeta0[1] * K[1] + zeta0[2] * K[2])


def dbar_inverse(zeta0, f: Field, return_info: bool = False):
    """Regularized inverse of ``zeta0.grad`` as a Fourier multiplier.

    ``m = conj(s)/(|s|^2 + d^2)`` with ``s`` the symbol of ``zeta0.grad`` and
    ``d = 1e-8`` frequency units; modes with ``|s|`` below ``1e-6`` units
    (the characteristic set, including the zero mode) are set to zero.
    """
    g = f.grid
    zeta0 = np.asarray(zeta0, dtype=complex)
    s = _zeta_dot_grad_symbol(g, zeta0)
    d = 1e-8 * g.freq_unit
    char = np.abs(s) < 1e-6 * g.freq_unit
    m = np.where(char, 0.0, s.conj() / (np.abs(s) ** 2 + d * d))
    fh = fftn(f.values)
    out = f.with_values(ifftn(m * fh))
    if not return_info:
        return out
    killed = (np.abs(fh[:, char]) ** 2).sum()
    total = (np.abs(fh) ** 2).sum()
    info = {
        "characteristic_modes": int(char.sum()),
        "killed_fraction": float(np.sqrt(killed / total)) if total > 0 else 0.0,
        "min_symbol": float(np.abs(s[~char]).min()) if (~char).any() else 0.0,
    }
    return out, info


def characteristic_part(zeta0, f: Field) -> Field:
    """Projection of ``f`` onto the modes discarded by :func:`dbar_inverse`."""
    g = f.grid
    s = _zeta_dot_grad_symbol(g, np.asarray(zeta0, dtype=complex))
    char = np.abs(s) < 1e-6 * g.freq_unit
    return f.with_values(ifftn(char * fftn(f.values)))


def zeta_dot(zeta0, A: Field) -> Field:
    return scalar_field(A.grid, sum(complex(zeta0[j]) * A.values[j] for j in range(3)))


def zeta_dot_grad(zeta0, u: Field) -> Field:
    s = _zeta_dot_grad_symbol(u.grid, np.asarray(zeta0, dtype=complex))
    return u.with_values(ifftn(s * fftn(u.values)))


def confine_source(zeta0, f: Field, rho: np.ndarray) -> Field:
    """Remove the characteristic component of ``f`` using only the region where ``rho > 0``.

    With ``P`` the projection onto characteristic modes (a conditional
    expectation, since those modes form an algebra), ``f - P(f) rho / P(rho)``
    has no characteristic component and equals ``f`` wherever ``rho = 0``.
    """
    Pf = characteristic_part(zeta0, f).values[0]
    Prho = characteristic_part(zeta0, scalar_field(f.grid, rho)).values[0].real
    if Prho.min() <= 1e-3 * Prho.max():
        raise ValueError("confinement weight does not meet every characteristic fibre")
    return f.with_values(f.values - (Pf * rho / Prho)[None])


def phase(zeta0, A: Field, rho: np.ndarray | None = None, return_info: bool = False):
    """Solve ``zeta0.grad Phi + i zeta0.A = 0``.

    Without ``rho`` the characteristic modes of the source are discarded.
    With ``rho`` (vanishing on the region of interest) the source is first
    corrected inside ``{rho > 0}`` so the equation holds exactly where
    ``rho = 0``.  The reported residual is measured there.
    """
    rhs = zeta_dot(zeta0, A) * (-1j)
    src = rhs if rho is None else confine_source(zeta0, rhs, rho)
    phi, info = dbar_inverse(zeta0, src, return_info=True)
    if not return_info:
        return phi
    res = (zeta_dot_grad(zeta0, phi) - rhs).values[0]
    if rho is None:
        res = res + characteristic_part(zeta0, rhs).values[0]
        where = np.ones(res.shape, dtype=bool)
    else:
        where = rho == 0
    nrm = float(np.linalg.norm(rhs.values[0][where]))
    info["residual"] = float(np.linalg.norm(res[where])) / nrm if nrm > 0 else 0.0
    return phi, info


# ---------------------------------------------------------------- norms

def scl_norms(u: Field, h: float, k0=None) -> tuple[float, float]:
    """Semiclassical ``H^1`` and ``H^-1`` norms on the periodic box.

    Both use the weight ``1 + h^2 |kappa|^2``; ``k0`` shifts the lattice for
    fields stored as ``exp(i k0.x)`` times a periodic function.
    """
    g = u.grid
    ksq = g.kappa_sq if k0 is None else _shifted_ksq(g, k0)
    p = (np.abs(fftn(u.values)) ** 2).sum(axis=0) * g.cell_volume ** 2 / g.volume
    wgt = 1.0 + h * h * ksq
    return float(np.sqrt((wgt * p).sum())), float(np.sqrt((p / wgt).sum()))


def h1_scl_on(u: np.ndarray, grad: np.ndarray, h: float, grid: Grid, mask: np.ndarray) -> float:
    """``(||u||^2 + ||h grad u||^2)^(1/2)`` over the nodes in ``mask``."""
    dv = grid.cell_volume
    val = (np.abs(u) ** 2 * mask).sum() + h * h * ((np.abs(grad) ** 2).sum(axis=0) * mask).sum()
    return float(np.sqrt(val * dv))


def _shifted_kappas(g: Grid, k0):
    k = g.kappas()
    return tuple(k[j] + k0[j] for j in range(3))


def _shifted_ksq(g: Grid, k0):
    k = _shifted_kappas(g, k0)
    return k[0] ** 2 + k[1] ** 2 + k[2] ** 2


# ---------------------------------------------------------------- amplitude and w

def _grad(v: np.ndarray, g: Grid, k0=None) -> np.ndarray:
    """Spectral gradient of ``exp(i k0.x) v`` divided by ``exp(i k0.x)``."""
    K = g.kappas() if k0 is None else _shifted_kappas(g, k0)
    vh = fftn(v)
    return np.stack([ifftn(1j * K[j] * vh) for j in range(3)])


def _div(F: np.ndarray, g: Grid) -> np.ndarray:
    K = g.kappas()
    Fh = fftn(F)
    return ifftn(sum(1j * K[j] * Fh[j] for j in range(3)))


def _laplacian(u: np.ndarray, g: Grid) -> np.ndarray:
    return ifftn(-g.kappa_sq * fftn(u))


@dataclass(frozen=True, eq=False)
class Amplitude:
    """``a = exp(Phi_sharp)`` built from ``A_sharp = Psi_tau * A``."""

    zeta0: np.ndarray
    tau: float
    A_sharp: Field
    A_flat: Field
    phi: Field
    a: Field
    grad_a: np.ndarray
    info: dict


def make_amplitude(A: Field, zeta0, tau: float, rho: np.ndarray | None = None) -> Amplitude:
    """Split ``A`` at scale ``tau`` and solve the transport equation for ``a``.

    The transport residual is measured where ``rho = 0`` (everywhere modulo
    characteristic modes when ``rho`` is None).
    """
    g = A.grid
    sharp, flat = split(A, tau)
    phi, info = phase(zeta0, sharp, rho, return_info=True)
    a = phi.with_values(np.exp(phi.values))
    grad_a = a.values[0][None] * _grad(phi.values[0], g)
    za = zeta_dot(zeta0, sharp).values[0]
    av = a.values[0]
    res = sum(zeta0[j] * grad_a[j] for j in range(3)) + 1j * za * av
    if rho is None:
        res = res - av * characteristic_part(zeta0, scalar_field(g, 1j * za)).values[0]
        where = np.ones(res.shape, dtype=bool)
    else:
        where = rho == 0
    scale = float(np.linalg.norm((av * za)[where]))
    info["transport_residual"] = float(np.linalg.norm(res[where])) / scale if scale > 0 else 0.0
    return Amplitude(np.asarray(zeta0), float(tau), sharp, flat, phi, a, grad_a, info)


def assemble_w(A: Field, q: Field, amp: Amplitude, zeta, h: float, tau: float | None = None):
    """Right-hand side of the remainder equation and its pairing functional.

    ``w = h^2 Lap a + i h^2 A.grad a - h^2 m_A(a) - h^2 (A.A + q) a
    + 2h zeta1.grad a + 2ih zeta0.A_flat a + 2ih zeta1.A a`` with
    ``zeta1 = zeta - zeta0`` and ``m_A(a) = -i div(a A)`` in strong form.
    The functional evaluates ``<w, phi> = int w phi`` with the ``m_A`` term
    kept in the integrated-by-parts form ``int i a A.grad(phi)``.
    """
    if tau is not None and abs(tau - amp.tau) > 1e-14:
        raise ValueError(f"amplitude was built with tau={amp.tau}, not tau={tau}")
    g = A.grid
    zeta = np.asarray(zeta, dtype=complex)
    z1 = zeta - amp.zeta0
    a = amp.a.values[0]
    ga = amp.grad_a
    Av = A.values
    AA = (Av * Av).sum(axis=0)
    rest = (h * h * _laplacian(a, g) + 1j * h * h * (Av * ga).sum(axis=0)
            - h * h * (AA + q.values[0]) * a
            + 2 * h * sum(z1[j] * ga[j] for j in range(3))
            + 2j * h * sum(amp.zeta0[j] * amp.A_flat.values[j] for j in range(3)) * a
            + 2j * h * sum(z1[j] * Av[j] for j in range(3)) * a)
    w = rest + 1j * h * h * _div(Av * a[None], g)

    def functional(phi: np.ndarray, grad_phi: np.ndarray) -> complex:
        m = (1j * a[None] * Av * grad_phi).sum(axis=0)
        return complex(((rest * phi).sum() - h * h * m.sum()) * g.cell_volume)

    return scalar_field(g, w), functional


# ---------------------------------------------------------------- remainder

def cutoff(grid: Grid, half_width: float) -> np.ndarray:
    """Tensor cutoff: 1 on a collar around Omega, 0 near the box faces."""
    gap = grid.L - half_width
    inner, outer = half_width + gap / 3.0, grid.L - gap / 6.0
    out = np.ones((grid.N,) * 3)
    for x in grid.coords():
        out = out * smooth_step((outer - np.abs(x)) / (outer - inner))
    return out


def faddeev_symbol(grid: Grid, zeta, h: float, k0) -> np.ndarray:
    """Symbol of ``-h^2 Lap - 2h zeta.grad`` on the lattice shifted by ``k0``."""
    k = _shifted_kappas(grid, k0)
    ksq = k[0] ** 2 + k[1] ** 2 + k[2] ** 2
    return h * h * ksq - 2j * h * (zeta[0] * k[0] + zeta[1] * k[1] + zeta[2] * k[2])


def choose_shift(grid: Grid, zeta, h: float) -> tuple[np.ndarray, float]:
    """Half-lattice shift maximizing the minimum modulus of the Faddeev symbol."""
    best, best_val = None, -1.0
    u = grid.freq_unit
    for s in np.ndindex(2, 2, 2):
        k0 = 0.5 * u * np.array(s, dtype=float)
        val = float(np.abs(faddeev_symbol(grid, zeta, h, k0)).min())
        if val > best_val:
            best, best_val = k0, val
    return best, best_val


class ConjugatedOperator:
    """``exp(-x.zeta/h) h^2 L_{A,q} exp(x.zeta/h)`` acting on ``exp(i k0.x) v``, ``v`` periodic.

    ``= -h^2 Lap - 2h zeta.grad - i h^2 (A.grad + div(A .)) - 2ih zeta.A + h^2 (A.A + q)``.
    """

    def __init__(self, A: Field, q: Field, zeta, h: float, k0=None):
        g = A.grid
        self.grid, self.h = g, float(h)
        self.k0 = np.zeros(3) if k0 is None else np.asarray(k0, dtype=float)
        self.zeta = np.asarray(zeta, dtype=complex)
        self.A = A.values
        self.P0 = faddeev_symbol(g, self.zeta, h, self.k0)
        d = 1e-8 * g.freq_unit
        self.P0inv = self.P0.conj() / (np.abs(self.P0) ** 2 + d * d)
        self.K = _shifted_kappas(g, self.k0)
        AA = (self.A * self.A).sum(axis=0)
        zA = sum(self.zeta[j] * self.A[j] for j in range(3))
        self.pot = -2j * h * zA + h * h * (AA + q.values[0])
        self.magnetic = bool(np.any(self.A != 0))

    def grad(self, v: np.ndarray) -> np.ndarray:
        vh = fftn(v)
        return np.stack([ifftn(1j * self.K[j] * vh) for j in range(3)])

    def div(self, F: np.ndarray) -> np.ndarray:
        Fh = fftn(F)
        return ifftn(sum(1j * self.K[j] * Fh[j] for j in range(3)))

    def perturbation(self, v: np.ndarray) -> np.ndarray:
        out = self.pot * v
        if self.magnetic:
            gv = self.grad(v)
            out = out - 1j * self.h ** 2 * ((self.A * gv).sum(axis=0) + self.div(self.A * v[None]))
        return out

    def apply(self, v: np.ndarray) -> np.ndarray:
        return ifftn(self.P0 * fftn(v)) + self.perturbation(v)

    def apply_P0inv(self, v: np.ndarray) -> np.ndarray:
        return ifftn(self.P0inv * fftn(v))


@dataclass
class RemainderResult:
    r_periodic: np.ndarray
    k0: np.ndarray
    converged: bool
    iterations: int
    residual_history: list
    residual_Hm1scl: float
    info: dict = field(default_factory=dict)


def solve_remainder(A: Field, q: Field, zeta, h: float, w: Field, half_width: float = 0.5,
                    maxiter: int = 500, rtol: float = 1e-6) -> RemainderResult:
    """Solve the conjugated equation for ``r`` with right-hand side ``chi w``.

    ``r = exp(i k0.x) v`` with ``v`` periodic; GMRES on
    ``(I + P0^-1 V) v = P0^-1 exp(-i k0.x) chi w``.
    """
    g = A.grid
    zeta = np.asarray(zeta, dtype=complex)
    k0, min_sym = choose_shift(g, zeta, h)
    op = ConjugatedOperator(A, q, zeta, h, k0)
    x1, x2, x3 = g.coords()
    e0 = np.exp(-1j * (k0[0] * x1 + k0[1] * x2 + k0[2] * x3))
    rhs = e0 * cutoff(g, half_width) * w.values[0]
    shape = rhs.shape
    n = rhs.size
    history: list = []
    b = op.apply_P0inv(rhs).ravel()
    if not np.any(rhs):
        v = np.zeros(shape, dtype=complex)
        its, conv = 0, True
    elif not np.any(op.pot) and not op.magnetic:
        v = b.reshape(shape)
        its, conv = 0, True
    else:
        M = LinearOperator((n, n), dtype=complex,
                           matvec=lambda x: x + op.apply_P0inv(op.perturbation(x.reshape(shape))).ravel())
        count = [0]

        def cb(res):
            count[0] += 1
            history.append(float(res))

        sol, flag = gmres(M, b, rtol=rtol * 1e-3, atol=0.0, restart=60, maxiter=max(1, maxiter // 60),
                          callback=cb, callback_type="pr_norm")
        v = sol.reshape(shape)
        its, conv = count[0], flag == 0
    resid = op.apply(v) - rhs
    rs = scalar_field(g, resid)
    _, rn = scl_norms(rs, h, k0)
    _, wn = scl_norms(scalar_field(g, rhs), h, k0)
    rel = rn / wn if wn > 0 else 0.0
    conv = bool(conv and rel <= rtol)
    return RemainderResult(v, k0, conv, its, history, rel,
                           {"min_symbol": min_sym, "model": REMAINDER_MODEL, "w_Hm1scl": wn})


# ---------------------------------------------------------------- full solution

@dataclass(eq=False)
class CGOSolution:
    """``u = exp(x.zeta/h) (a + r)`` with ``a = exp(Phi_sharp)``, ``r = exp(i k0.x) v``."""

    zetas: Zetas
    which: int
    tau: float
    eps: float
    phi: Field
    a: Field
    grad_a: np.ndarray
    v: np.ndarray
    k0: np.ndarray
    w: Field
    converged: bool
    diagnostics: dict

    @property
    def grid(self) -> Grid:
        return self.a.grid

    @property
    def h(self) -> float:
        return self.zetas.h

    @property
    def zeta(self) -> np.ndarray:
        return self.zetas.zeta(self.which)

    def _shift(self) -> np.ndarray:
        x1, x2, x3 = self.grid.coords()
        return np.exp(1j * (self.k0[0] * x1 + self.k0[1] * x2 + self.k0[2] * x3))

    @property
    def r(self) -> np.ndarray:
        return self._shift() * self.v

    def grad_r(self) -> np.ndarray:
        return self._shift()[None] * _grad(self.v, self.grid, self.k0)

    def b(self) -> np.ndarray:
        """``a + r`` at every node."""
        return self.a.values[0] + self.r

    def grad_b(self) -> np.ndarray:
        return self.grad_a + self.grad_r()

    def exponential(self) -> np.ndarray:
        x1, x2, x3 = self.grid.coords()
        z = self.zeta
        return np.exp((z[0] * x1 + z[1] * x2 + z[2] * x3) / self.h)

    def u(self) -> np.ndarray:
        return self.exponential() * self.b()

    def grad_u(self) -> np.ndarray:
        e = self.exponential()
        b, gb = self.b(), self.grad_b()
        return np.stack([e * (gb[j] + self.zeta[j] / self.h * b) for j in range(3)])


def build_cgo(pair: PotentialPair, xi, h: float, which: int = 1, eps: float | None = None,
              tau: float | None = None, maxiter: int = 500, rtol: float = 1e-6,
              frame=None) -> CGOSolution:
    """Split, phase, amplitude, right-hand side and remainder for one ``(xi, h)``.

    ``which = 2`` builds the solution for the conjugated potentials with ``zeta2``.
    ``tau`` defaults to ``h^(1/(eps+2))``; ``frame`` is passed to ``make_zetas``.
    """
    if which not in (1, 2):
        raise ValueError("which must be 1 or 2")
    Z = make_zetas(xi, h, frame)
    eps = pair.eps if eps is None else eps
    tau = h ** (1.0 / (eps + 2.0)) if tau is None else tau
    P = pair if which == 1 else pair.conj()
    A, q = P.A, P.q
    zeta0, zeta = Z.zeta0(which), Z.zeta(which)
    g = A.grid
    chi = cutoff(g, pair.half_width)
    amp = make_amplitude(A, zeta0, tau, rho=np.where(chi >= 1.0, 0.0, 1.0 - chi))
    w, _ = assemble_w(A, q, amp, zeta, h, tau)
    # the solver uses the discrete operator applied to a, so a + r solves the
    # discrete equation exactly on the cutoff plateau; w is its analytic form
    w_disc = scalar_field(g, -ConjugatedOperator(A, q, zeta, h).apply(amp.a.values[0]))
    plateau = chi >= 1.0
    nw = float(np.linalg.norm(w.values[0][plateau]))
    defect = float(np.linalg.norm((w - w_disc).values[0][plateau])) / nw if nw > 0 else 0.0
    rem = solve_remainder(A, q, zeta, h, w_disc, pair.half_width, maxiter, rtol)
    sol = CGOSolution(Z, which, float(tau), float(eps), amp.phi, amp.a, amp.grad_a, rem.r_periodic,
                      rem.k0, w, rem.converged, {})
    omega = pair.omega_mask(closed=True)
    _, w_hm1 = scl_norms(w, h)
    sol.diagnostics = {
        "xi": Z.xi.tolist(), "h": h, "which": which, "tau": tau, "eps": eps,
        "zeta_invariants": Z.invariants(),
        "phase": {k: amp.info[k] for k in ("residual", "characteristic_modes", "killed_fraction",
                                           "transport_residual")},
        "w_Hm1scl": w_hm1,
        "w_discrete_defect": defect,
        "residual_equation": rem.residual_Hm1scl,
        "remainder_H1scl": h1_scl_on(sol.r, sol.grad_r(), h, g, omega),
        "remainder_iterations": rem.iterations,
        "residual_history": rem.residual_history[-20:],
        "k0": rem.k0.tolist(),
        "min_symbol": rem.info["min_symbol"],
        "converged": rem.converged,
        "remainder_model": REMAINDER_MODEL,
        "u_H1_omega": h1_scl_on(sol.u(), sol.grad_u(), 1.0, g, omega),
    }
    return sol


def equation_residual(pair: PotentialPair, sol: CGOSolution) -> float:
    """Relative size of ``exp(-x.zeta/h) h^2 L (u)`` on Omega.

    Computed on the amplitude level: the conjugated operator applied to
    ``a + r`` must vanish where the cutoff equals one.
    """
    P = pair if sol.which == 1 else pair.conj()
    op = ConjugatedOperator(P.A, P.q, sol.zeta, sol.h, np.zeros(3))
    a = sol.a.values[0]
    La = op.apply(a)
    opk = ConjugatedOperator(P.A, P.q, sol.zeta, sol.h, sol.k0)
    Lr = sol._shift() * opk.apply(sol.v)
    mask = pair.omega_mask(closed=True)
    tot = np.abs(La + Lr)[mask].max()
    scale = max(np.abs(La)[mask].max(), np.abs(Lr)[mask].max())
    return float(tot / scale) if scale > 0 else 0.0


def calibrate_h_max(pair: PotentialPair, xi, h_start: float | None = None, steps: int = 4,
                    maxiter: int = 200) -> float:
    """Largest ``h`` (bisection on a log scale) for which the remainder solve converges."""
    hi = min(1.0, 2.0 / float(np.linalg.norm(xi))) if h_start is None else h_start
    if build_cgo(pair, xi, hi, maxiter=maxiter).converged:
        return hi
    lo = hi / 2
    while not build_cgo(pair, xi, lo, maxiter=maxiter).converged:
        hi, lo = lo, lo / 2
        if lo < 4 * pair.grid.spacing:
            raise RuntimeError("no convergent h above the grid resolution")
    for _ in range(steps):
        mid = np.sqrt(lo * hi)
        if build_cgo(pair, xi, mid, maxiter=maxiter).converged:
            lo = mid
        else:
            hi = mid
    return float(lo)
