"""Dirichlet problems for ``L_{A,q}`` on the cube Omega and the boundary flux pairing.

The weak form

    B(u, v) = int grad u . grad v + i A.(u grad v - v grad u) + (A.A + q) u v
            = int (grad + iA) u . (grad - iA) v + q u v

is discretized with link variables: on the edge ``a -> b = a + dx e_j``,
``(grad + iA)_j u ~ (e^{i theta/2} u_b - e^{-i theta/2} u_a) / dx`` where
``theta`` is the line integral of the trigonometric interpolant of ``A_j``
along the edge.  Gauge changes ``A -> A + grad phi`` (spectral gradient) shift
``theta`` by exactly ``phi_b - phi_a``, so the discrete Cauchy data are gauge
invariant up to rounding.  Quadrature uses trapezoid weights on the closed
cube.  Interior rows of the matrix are the discrete equation; the pairing with
a boundary extension ``v`` is ``B(u, v)`` itself.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, onenormest, splu

from .grid import Field, Grid, fftn, ifftn, scalar_field
from .potentials import PotentialPair

COND_LIMIT = 1e12
RESIDUAL_TOL = 1e-10


class InteriorEigenvalueError(RuntimeError):
    """Zero is (numerically) a Dirichlet eigenvalue of the discrete operator."""


@dataclass(frozen=True)
class CubeDomain:
    """Closed sub-cube ``[-hw, hw]^3`` of a grid; its faces must lie on nodes."""

    grid: Grid
    half_width: float

    def __post_init__(self):
        if self.half_width >= self.grid.L:
            raise ValueError("Omega must lie strictly inside the box")
        self.grid.node_index(-self.half_width)
        self.grid.node_index(self.half_width)

    @cached_property
    def start(self) -> int:
        return self.grid.node_index(-self.half_width)

    @cached_property
    def M(self) -> int:
        return self.grid.node_index(self.half_width) - self.start + 1

    @property
    def slices(self):
        s = slice(self.start, self.start + self.M)
        return (s, s, s)

    @property
    def shape(self):
        return (self.M,) * 3

    @cached_property
    def axis(self) -> np.ndarray:
        return self.grid.axis[self.start:self.start + self.M]

    def coords(self):
        x = self.axis
        return x[:, None, None], x[None, :, None], x[None, None, :]

    @cached_property
    def boundary(self) -> np.ndarray:
        b = np.zeros(self.shape, dtype=bool)
        b[0], b[-1] = True, True
        b[:, 0], b[:, -1] = True, True
        b[:, :, 0], b[:, :, -1] = True, True
        return b

    @cached_property
    def trapezoid(self) -> np.ndarray:
        """One-dimensional trapezoid factors (1/2 at the two ends)."""
        t = np.ones(self.M)
        t[0] = t[-1] = 0.5
        return t

    @cached_property
    def node_weights(self) -> np.ndarray:
        t = self.trapezoid
        return t[:, None, None] * t[None, :, None] * t[None, None, :] * self.grid.cell_volume

    def restrict(self, u) -> np.ndarray:
        """Values of a full-grid field (or array) on the cube nodes."""
        vals = u.values[0] if isinstance(u, Field) else np.asarray(u)
        if vals.shape == self.shape:
            return vals.astype(complex)
        return np.asarray(vals[self.slices], dtype=complex)

    def extend(self, u: np.ndarray) -> Field:
        """Full-grid scalar field equal to ``u`` on the cube and 0 elsewhere."""
        out = np.zeros((self.grid.N,) * 3, dtype=complex)
        out[self.slices] = u
        return scalar_field(self.grid, out)

    def edges(self, j: int):
        """Flat indices ``(a, b)`` of edges ``a -> a + e_j`` and their weights."""
        M = self.M
        idx = np.arange(M ** 3).reshape(self.shape)
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[j], hi[j] = slice(0, M - 1), slice(1, M)
        a, b = idx[tuple(lo)].ravel(), idx[tuple(hi)].ravel()
        t = [self.trapezoid] * 3
        t[j] = np.ones(M - 1)
        w = (t[0][:, None, None] * t[1][None, :, None] * t[2][None, None, :]) * self.grid.cell_volume
        return a, b, w.ravel(), tuple(lo), tuple(hi)


def edge_phases(A: Field) -> np.ndarray:
    """``theta_j(x) = int_0^dx A_j(x + s e_j) ds`` for the trigonometric interpolant of ``A``."""
    g = A.grid
    dx = g.spacing
    out = []
    for j, k in enumerate(g.kappas()):
        k = np.broadcast_to(k, (g.N,) * 3)
        with np.errstate(divide="ignore", invalid="ignore"):
            m = np.where(k == 0, dx, (np.exp(1j * k * dx) - 1.0) / (1j * k))
        m = np.where(np.isclose(np.abs(k), g.nyquist), 0.0, m)
        out.append(ifftn(m * fftn(A.values[j])))
    return np.stack(out)


class ForwardOperator:
    """Assembled weak-form matrix of ``L_{A,q}`` on the cube nodes with a cached factorization."""

    def __init__(self, pair: PotentialPair, check_condition: bool = True):
        self.pair = pair
        self.dom = CubeDomain(pair.grid, pair.half_width)
        self.K = self._assemble()
        bnd = self.dom.boundary.ravel()
        self.interior = np.flatnonzero(~bnd)
        self.bnodes = np.flatnonzero(bnd)
        K = self.K.tocsr()
        self.K_II = K[self.interior][:, self.interior].tocsc()
        self.K_IB = K[self.interior][:, self.bnodes].tocsr()
        try:
            self.lu = splu(self.K_II)
        except RuntimeError as exc:
            raise InteriorEigenvalueError(f"interior eigenvalue: discrete Dirichlet matrix is singular ({exc})")
        self.condition = self._condition() if check_condition else float("nan")
        if self.condition > COND_LIMIT:
            raise InteriorEigenvalueError(
                f"interior eigenvalue: condition estimate {self.condition:.3e} exceeds {COND_LIMIT:.0e}")

    def _assemble(self) -> sp.csr_matrix:
        dom = self.dom
        dx = dom.grid.spacing
        theta = edge_phases(self.pair.A)
        q = dom.restrict(self.pair.q)
        n = dom.M ** 3
        rows, cols, vals = [], [], []
        for j in range(3):
            a, b, w, lo, hi = dom.edges(j)
            s = w / dx ** 2
            e = np.exp(1j * theta[j][dom.slices][lo].ravel())
            rows += [a, a, b, b]
            cols += [a, b, a, b]
            vals += [s, -s * e, -s / e, s]
        rows.append(np.arange(n))
        cols.append(np.arange(n))
        vals.append((q * dom.node_weights).ravel())
        return sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(n, n)).tocsr()

    def _condition(self) -> float:
        n = self.K_II.shape[0]
        inv = LinearOperator((n, n), dtype=complex, matvec=lambda x: self.lu.solve(np.asarray(x, dtype=complex)),
                             rmatvec=lambda x: self.lu.solve(np.asarray(x, dtype=complex), trans="H"))
        norm1 = float(abs(self.K_II).sum(axis=0).max())
        return float(onenormest(inv) * norm1)

    def bilinear(self, u: np.ndarray, v: np.ndarray) -> complex:
        """``B(u, v)`` for cube-node arrays (bilinear, no conjugation)."""
        return complex(v.ravel() @ (self.K @ u.ravel()))

    def solve_many(self, boundary: np.ndarray, source: np.ndarray | None = None) -> np.ndarray:
        """Solve for several right-hand sides.

        ``boundary`` has shape ``(m, M, M, M)`` (only boundary nodes are read);
        ``source`` is ``None`` or of the same shape.
        """
        m = boundary.shape[0]
        fb = boundary.reshape(m, -1)[:, self.bnodes]
        rhs = -(self.K_IB @ fb.T)
        if source is not None:
            wI = self.dom.node_weights.ravel()[self.interior]
            rhs = rhs + (source.reshape(m, -1)[:, self.interior] * wI).T
        uI = self.lu.solve(np.asarray(rhs, dtype=complex))
        out = boundary.reshape(m, -1).astype(complex).copy()
        out[:, self.interior] = uI.T
        res = self.K_II @ uI - rhs
        rel = np.linalg.norm(res) / max(np.linalg.norm(rhs), 1e-300)
        if rel > RESIDUAL_TOL and np.linalg.norm(rhs) > 0:
            raise InteriorEigenvalueError(f"interior eigenvalue: residual {rel:.2e} after direct solve")
        self.last_residual = float(rel)
        return out.reshape(boundary.shape)

    def interior_residual(self, u: np.ndarray) -> float:
        """Relative size of the homogeneous discrete equation at interior nodes."""
        r = (self.K @ u.ravel())[self.interior]
        scale = float(np.abs(self.K).sum(axis=1).max()) * max(float(np.abs(u).max()), 1e-300)
        return float(np.abs(r).max() / scale)


@dataclass
class DirichletProblem:
    """``L_{A,q} u = F`` in Omega, ``u = f`` on its faces."""

    pair: PotentialPair
    boundary: object            # Field on the full grid or array on the cube nodes
    source: object = None       # optional Field or cube array

    def __post_init__(self):
        dom = CubeDomain(self.pair.grid, self.pair.half_width)
        f = dom.restrict(self.boundary)
        if not np.all(np.isfinite(f[dom.boundary])):
            raise ValueError("boundary data must be finite")


def solve_dirichlet(prob: DirichletProblem, op: ForwardOperator | None = None) -> Field:
    """Solve and return ``u`` as a full-grid field (zero outside Omega)."""
    op = op or ForwardOperator(prob.pair)
    dom = op.dom
    f = dom.restrict(prob.boundary)[None]
    F = None if prob.source is None else dom.restrict(prob.source)[None]
    u = op.solve_many(f, F)[0]
    return dom.extend(u)


def apply_operator(pair: PotentialPair, u: np.ndarray, op: ForwardOperator | None = None) -> np.ndarray:
    """Discrete ``L_{A,q} u`` at interior cube nodes (zero on the faces)."""
    op = op or ForwardOperator(pair, check_condition=False)
    out = np.zeros(op.dom.M ** 3, dtype=complex)
    wI = op.dom.node_weights.ravel()[op.interior]
    out[op.interior] = (op.K @ u.ravel())[op.interior] / wI
    return out.reshape(op.dom.shape)


@dataclass
class FluxPairing:
    value: complex
    residual: float
    solution_ok: bool

    def __complex__(self):
        return self.value


def flux_pairing(u, pair: PotentialPair, v, op: ForwardOperator | None = None,
                 tol: float = 1e-8) -> FluxPairing:
    """``<N_{A,q} u, T v> = B(u, v)``; flags ``u`` whose interior residual exceeds ``tol``."""
    op = op or ForwardOperator(pair, check_condition=False)
    uu, vv = op.dom.restrict(u), op.dom.restrict(v)
    res = op.interior_residual(uu)
    return FluxPairing(op.bilinear(uu, vv), res, bool(res <= tol))
