"""Hodge decomposition ``u = d psi + delta F`` on a ball, and the cutoff gauge.

The ball is the staircase cochain complex of grid cells inside it: nodes with
``|x| <= R``, and every edge, face and cube whose vertices are all such nodes.
Cochains carry the uniform inner product (weight ``dx^3``), ``d0, d1, d2``
are scaled incidence matrices and ``delta`` is their adjoint on the complex.
A 1-form is sampled on edges as the mean of its trigonometric interpolant
along the edge, so spectral gradients land exactly in the image of ``d0``.

``psi`` solves the Neumann problem ``d0^T d0 psi = d0^T u`` (zero mean) and
``F`` the face Hodge problem ``(d1 d1^T + d2^T d2) F = d1 u``, which is the
variational problem ``<dF, dv> + <delta F, delta v> = <du, v>`` over face
cochains of the complex.  ``delta F`` is orthogonal to every gradient, which
is the discrete form of the normal condition ``nF = 0``.

Component conventions: 1-forms are ``(u_1, u_2, u_3)``; 2-forms are stored
as ``(F_12, F_13, F_23)``; ``(dA)_jk = d_j A_k - d_k A_j``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg

from .grid import TWO_FORM_PAIRS, Field, Grid, fftn, ifftn, two_form_field, vector_field
from .forward import edge_phases

CG_RTOL = 1e-12


# ---------------------------------------------------------------- Fourier oracle

def helmholtz_oracle(u: Field):
    """Periodic Helmholtz split: ``psi~ = -i kappa.u^ / |kappa|^2`` (numpy sign) and ``u - grad psi~``."""
    g = u.grid
    K = g.kappas()
    uh = fftn(u.values)
    ksq = g.kappa_sq
    with np.errstate(divide="ignore", invalid="ignore"):
        ph = np.where(ksq > 0, -1j * sum(K[j] * uh[j] for j in range(3)) / ksq, 0.0)
    psi = ifftn(ph)
    grad = np.stack([ifftn(1j * K[j] * ph) for j in range(3)])
    return Field(g, psi[None], 0), u.with_values(u.values - grad)


def curl_weight_norm(u: Field) -> float:
    """``(sum |kappa ^ u^|^2 / |kappa|^2)^(1/2)`` (the Parseval value of the divergence-free part)."""
    g = u.grid
    K = g.kappas()
    uh = fftn(u.values) * g.cell_volume
    ksq = g.kappa_sq
    w = 0.0
    for j, k in TWO_FORM_PAIRS:
        w = w + np.abs(K[j] * uh[k] - K[k] * uh[j]) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(ksq > 0, w / ksq, 0.0)
    return float(np.sqrt(s.sum() / g.volume))


# ---------------------------------------------------------------- complex

def _shift(mask: np.ndarray, j: int) -> np.ndarray:
    """``out[p] = mask[p + e_j]`` with False beyond the last index (no wrap)."""
    out = np.zeros_like(mask)
    src = [slice(None)] * 3
    dst = [slice(None)] * 3
    src[j], dst[j] = slice(1, None), slice(0, -1)
    out[tuple(dst)] = mask[tuple(src)]
    return out


class BallComplex:
    """Staircase cochain complex of the ball ``|x| <= R`` on a grid."""

    def __init__(self, grid: Grid, radius: float):
        if radius + 2 * grid.spacing >= grid.L:
            raise ValueError("ball must lie inside the box with a two-cell margin")
        self.grid, self.R = grid, float(radius)
        n = grid.radius() <= radius + 1e-12
        self.node_mask = n
        self.edge_mask = [n & _shift(n, j) for j in range(3)]
        self.face_mask = []
        for j, k in TWO_FORM_PAIRS:
            self.face_mask.append(n & _shift(n, j) & _shift(n, k) & _shift(_shift(n, j), k))
        c = n
        for shifts in ((0,), (1,), (2,), (0, 1), (0, 2), (1, 2), (0, 1, 2)):
            s = n
            for j in shifts:
                s = _shift(s, j)
            c = c & s
        self.cube_mask = c
        self.node_id = self._ids([n])
        self.edge_id = self._ids(self.edge_mask)
        self.face_id = self._ids(self.face_mask)
        self.cube_id = self._ids([c])

    @staticmethod
    def _ids(masks):
        ids, start = [], 0
        for m in masks:
            a = np.full(m.shape, -1, dtype=np.int64)
            cnt = int(m.sum())
            a[m] = np.arange(start, start + cnt)
            ids.append(a)
            start += cnt
        return ids

    @property
    def sizes(self):
        return (int(self.node_mask.sum()), int(sum(m.sum() for m in self.edge_mask)),
                int(sum(m.sum() for m in self.face_mask)), int(self.cube_mask.sum()))

    def _shifted_id(self, ids: np.ndarray, j: int) -> np.ndarray:
        out = np.full(ids.shape, -1, dtype=np.int64)
        src = [slice(None)] * 3
        dst = [slice(None)] * 3
        src[j], dst[j] = slice(1, None), slice(0, -1)
        out[tuple(dst)] = ids[tuple(src)]
        return out

    @cached_property
    def d0(self) -> sp.csr_matrix:
        nn, ne, _, _ = self.sizes
        nid = self.node_id[0]
        terms = []
        for j in range(3):
            m = self.edge_mask[j]
            terms.append((m, self._shifted_id(nid, j), 1.0))
            terms.append((m, nid, -1.0))
        return self._combine(terms, [self.edge_id[j] for j in range(3) for _ in range(2)], ne, nn)

    @cached_property
    def d1(self) -> sp.csr_matrix:
        _, ne, nf, _ = self.sizes
        terms, rows = [], []
        for f, (j, k) in enumerate(TWO_FORM_PAIRS):
            m = self.face_mask[f]
            fid = self.face_id[f]
            ej, ek = self.edge_id[j], self.edge_id[k]
            for col, sign in ((self._shifted_id(ek, j), 1.0), (ek, -1.0),
                              (self._shifted_id(ej, k), -1.0), (ej, 1.0)):
                terms.append((m, col, sign))
                rows.append(fid)
        return self._combine(terms, rows, nf, ne)

    @cached_property
    def d2(self) -> sp.csr_matrix:
        _, _, nf, nc = self.sizes
        m = self.cube_mask
        cid = self.cube_id[0]
        f12, f13, f23 = self.face_id
        terms = [(m, self._shifted_id(f23, 0), 1.0), (m, f23, -1.0),
                 (m, self._shifted_id(f13, 1), -1.0), (m, f13, 1.0),
                 (m, self._shifted_id(f12, 2), 1.0), (m, f12, -1.0)]
        return self._combine(terms, [cid] * 6, nc, nf)

    def _combine(self, terms, row_ids, nrows, ncols):
        rows, cols, vals = [], [], []
        for (mask, col_ids, sign), rid in zip(terms, row_ids):
            c = col_ids[mask]
            if np.any(c < 0):
                raise RuntimeError("complex is not closed under the boundary map")
            rows.append(rid[mask])
            cols.append(c)
            vals.append(np.full(c.size, sign / self.grid.spacing))
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(nrows, ncols))

    # sampling and embedding
    def sample_one_form(self, u: Field) -> np.ndarray:
        """Edge means of the trigonometric interpolant of ``u``."""
        theta = edge_phases(u) / self.grid.spacing
        return np.concatenate([theta[j][self.edge_mask[j]] for j in range(3)])

    def nodes_to_field(self, x: np.ndarray) -> Field:
        out = np.zeros((self.grid.N,) * 3, dtype=complex)
        out[self.node_mask] = x
        return Field(self.grid, out[None], 0)

    def edges_to_field(self, x: np.ndarray) -> Field:
        out = np.zeros((3,) + (self.grid.N,) * 3, dtype=complex)
        s = 0
        for j in range(3):
            c = int(self.edge_mask[j].sum())
            out[j][self.edge_mask[j]] = x[s:s + c]
            s += c
        return vector_field(self.grid, out)

    def faces_to_field(self, x: np.ndarray) -> Field:
        out = np.zeros((3,) + (self.grid.N,) * 3, dtype=complex)
        s = 0
        for f in range(3):
            c = int(self.face_mask[f].sum())
            out[f][self.face_mask[f]] = x[s:s + c]
            s += c
        return two_form_field(self.grid, out)

    def norm(self, x: np.ndarray) -> float:
        return float(np.linalg.norm(x) * self.grid.spacing ** 1.5)


_COMPLEXES: dict = {}


def ball_complex(grid: Grid, radius: float) -> BallComplex:
    key = (grid, round(radius, 12))
    c = _COMPLEXES.get(key)
    if c is None:
        c = _COMPLEXES[key] = BallComplex(grid, radius)
    return c


def _cg(Aop, b, x0=None):
    if not np.any(b):
        return np.zeros_like(b), 0
    x, info = cg(Aop, b, x0=x0, rtol=CG_RTOL, atol=0.0, maxiter=20000)
    if info != 0:
        raise RuntimeError(f"variational solver did not converge (info={info})")
    return x, info


def _cg_complex(Aop, b):
    """CG on a real SPD matrix with complex right-hand side, split into real and imaginary parts."""
    xr, _ = _cg(Aop, b.real.copy())
    xi, _ = _cg(Aop, b.imag.copy())
    return xr + 1j * xi


# ---------------------------------------------------------------- decomposition

@dataclass(eq=False)
class HodgeDecomposition:
    complex: BallComplex
    R_inner: float
    u: np.ndarray           # edge cochain of the input
    psi: np.ndarray         # node cochain (zero mean)
    F: np.ndarray           # face cochain
    psi_star: complex
    residual: float         # ||u - d psi - delta F|| / ||u||
    orthogonality: float    # |<delta F, d psi>| / (||delta F|| ||d psi||)

    @property
    def grid(self) -> Grid:
        return self.complex.grid

    @cached_property
    def d_psi(self) -> np.ndarray:
        return self.complex.d0 @ self.psi

    @cached_property
    def delta_F(self) -> np.ndarray:
        return self.complex.d1.T @ self.F

    def psi_field(self) -> Field:
        return self.complex.nodes_to_field(self.psi)

    def F_field(self) -> Field:
        return self.complex.faces_to_field(self.F)

    def delta_F_field(self) -> Field:
        return self.complex.edges_to_field(self.delta_F)

    def coexact_norm(self) -> float:
        return self.complex.norm(self.delta_F)

    def shell_mask(self) -> np.ndarray:
        """Nodes of ``B`` outside the closed inner ball ``B'``."""
        return self.complex.node_mask & (self.grid.radius() > self.R_inner + 1e-12)


def decompose_ball(u: Field, R: float, R_inner: float, support_tol: float = 0.0) -> HodgeDecomposition:
    """Decompose a 1-form supported in the inner ball ``B'`` (radius ``R_inner``) on ``B`` (radius ``R``)."""
    if u.degree != 1:
        raise ValueError("decompose_ball expects a 1-form")
    if not 0 < R_inner < R:
        raise ValueError("need 0 < R_inner < R")
    g = u.grid
    outside = g.radius() > R_inner + 1e-12
    mag = np.abs(u.values).max(axis=0)
    if np.any(mag[outside] > support_tol * max(mag.max(), 1e-300)):
        raise ValueError("input is not supported inside the inner ball")
    C = ball_complex(g, R)
    x = C.sample_one_form(u)
    d0, d1, d2 = C.d0, C.d1, C.d2
    L0 = (d0.T @ d0).tocsr()
    b0 = d0.T @ x
    psi = _cg_complex(L0, b0 - b0.mean())
    psi = psi - psi.mean()
    L2 = (d1 @ d1.T + d2.T @ d2).tocsr()
    F = _cg_complex(L2, d1 @ x)
    dpsi, dF = d0 @ psi, d1.T @ F
    res = np.linalg.norm(x - dpsi - dF) / max(np.linalg.norm(x), 1e-300)
    den = np.linalg.norm(dF) * np.linalg.norm(dpsi)
    orth = abs(np.vdot(dF, dpsi)) / den if den > 0 else 0.0
    shell = C.node_mask[C.node_mask] & (g.radius()[C.node_mask] > R_inner + 1e-12)
    psi_star = complex(psi[shell].mean()) if shell.any() else 0j
    return HodgeDecomposition(C, float(R_inner), x, psi, F, psi_star, float(res), float(orth))


def coexact_estimate(H: HodgeDecomposition, u: Field) -> dict:
    """Both sides of ``||u - d psi||_B <= C ||du||_{H^-1}`` and of the shell estimate."""
    from .besov import sobolev_norm
    from .grid import d_form
    du = sobolev_norm(d_form(u), -1.0)
    lhs = H.coexact_norm()
    shell = shell_h1(H, H.psi - H.psi_star)
    return {"coexact_L2": lhs, "du_Hm1": du, "ratio": lhs / du if du > 0 else float("nan"),
            "shell_H1": shell, "shell_ratio": shell / du if du > 0 else float("nan")}


def shell_h1(H: HodgeDecomposition, f: np.ndarray) -> float:
    """``H^1(B \\ B')`` norm of a node cochain (nodes and edges with both ends in the shell)."""
    C = H.complex
    shell_nodes = H.shell_mask()[C.node_mask]
    e_in = np.abs(C.d0) @ shell_nodes.astype(float) >= 2.0 / C.grid.spacing - 1e-9
    df = C.d0 @ f
    val = (np.abs(f[shell_nodes]) ** 2).sum() + (np.abs(df[e_in]) ** 2).sum()
    return float(np.sqrt(val * C.grid.cell_volume))


# ---------------------------------------------------------------- gauge

@dataclass(eq=False)
class GaugeData:
    chi: np.ndarray         # node values on the ball
    phi: np.ndarray         # chi (psi - psi*)
    phi_prime: np.ndarray   # (1 - chi)(psi - psi*)
    report: dict

    def phi_field(self, C: BallComplex) -> Field:
        return C.nodes_to_field(self.phi)


def ball_cutoff_nodes(H: HodgeDecomposition, margin_cells: float = 2.0) -> np.ndarray:
    """Smooth radial cutoff: 1 on ``B'``, 0 within ``margin_cells`` cells of the sphere."""
    from .besov import smooth_step
    C = H.complex
    r = C.grid.radius()[C.node_mask]
    outer = C.R - margin_cells * C.grid.spacing
    return smooth_step((outer - r) / (outer - H.R_inner))


def gauge_phi(H: HodgeDecomposition, chi: np.ndarray | None = None) -> GaugeData:
    """``phi = chi (psi - psi*)`` and ``phi' = (1 - chi)(psi - psi*)`` with checks on ``chi``."""
    C = H.complex
    if chi is None:
        chi = ball_cutoff_nodes(H)
    chi = np.asarray(chi, dtype=float)
    if chi.shape != H.psi.shape:
        raise ValueError("chi must be given on the ball nodes")
    r = C.grid.radius()[C.node_mask]
    inner = r <= H.R_inner + 1e-12
    near = r > C.R - 1.5 * C.grid.spacing
    if np.abs(chi[inner] - 1).max() > 1e-12:
        raise ValueError("cutoff must equal 1 on the inner ball")
    if near.any() and np.abs(chi[near]).max() > 1e-12:
        raise ValueError("cutoff must vanish near the boundary sphere")
    f = H.psi - H.psi_star
    phi = chi * f
    phi_p = (1 - chi) * f
    dchi = C.d0 @ chi
    grad_chi_sup = float(np.abs(dchi).max())
    shell_nodes = H.shell_mask()[C.node_mask]
    e_in = np.abs(C.d0) @ shell_nodes.astype(float) >= 2.0 / C.grid.spacing - 1e-9
    grad_phi_p = float(np.linalg.norm((C.d0 @ phi_p)[e_in]) * C.grid.spacing ** 1.5)
    sh = shell_h1(H, f)
    report = {
        "grad_phi_prime_shell": grad_phi_p,
        "psi_shell_H1": sh,
        "grad_chi_sup": grad_chi_sup,
        "bound": sh * (1 + grad_chi_sup),
        "holds": bool(grad_phi_p <= sh * (1 + grad_chi_sup)),
        "split_error": float(np.abs(phi + phi_p - f).max()),
        "phi_on_sphere": float(np.abs(phi[near]).max()) if near.any() else 0.0,
    }
    return GaugeData(chi, phi, phi_p, report)
