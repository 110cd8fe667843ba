"""Mollifier splitting ``A = A_sharp + A_flat`` at scale ``tau``."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .grid import Field, Grid, fftn, ifftn


def bump(r):
    """Unnormalized profile ``exp(-1/(1-|x|^2))`` on the unit ball."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    m = r < 1.0
    out[m] = np.exp(-1.0 / (1.0 - r[m] ** 2))
    return out


def bump_integral() -> float:
    """Continuum integral of :func:`bump` over R^3."""
    val, _ = quad(lambda s: 4 * np.pi * s * s * np.exp(-1.0 / (1.0 - s * s)), 0.0, 1.0, epsabs=1e-15, epsrel=1e-13)
    return val


def bump_transform(k: float) -> float:
    """Continuum Fourier transform of the normalized profile at ``|xi| = k``."""
    def f(s):
        w = np.exp(-1.0 / (1.0 - s * s)) * 4 * np.pi * s * s
        return w * (np.sinc(k * s / np.pi))
    val, _ = quad(f, 0.0, 1.0, epsabs=1e-15, epsrel=1e-13, limit=200)
    return val / bump_integral()


@dataclass(frozen=True, eq=False)
class Mollifier:
    """Discrete ``Psi_tau`` on a grid, renormalized to unit discrete mass."""

    grid: Grid
    tau: float
    kernel: np.ndarray      # values at nodes, centered at the origin
    symbol: np.ndarray      # Fourier multiplier on the FFT index

    @property
    def mass(self) -> float:
        return float(self.kernel.sum() * self.grid.cell_volume)


def min_tau(grid: Grid) -> float:
    return 2.0 * grid.spacing


def make_mollifier(grid: Grid, tau: float) -> Mollifier:
    """Sample and renormalize ``Psi_tau(x) = tau^-3 Psi(x/tau)``."""
    if not 0 < tau <= 1:
        raise ValueError(f"tau must lie in (0, 1], got {tau}")
    if tau < min_tau(grid) - 1e-12:
        raise ValueError(f"tau={tau} is below the resolvable scale; minimal admissible tau is {min_tau(grid)}")
    k = bump(grid.radius() / tau)
    k /= k.sum() * grid.cell_volume
    wrapped = np.fft.ifftshift(k)
    symbol = (fftn(wrapped) * grid.cell_volume).real
    k.setflags(write=False)
    symbol.setflags(write=False)
    return Mollifier(grid, float(tau), k, symbol)


def support_extent(u: Field, rtol: float = 0.0) -> float:
    """Largest ``max_i |x_i|`` over nodes where ``u`` is nonzero."""
    mag = np.abs(u.values).max(axis=0)
    thr = rtol * mag.max()
    nz = mag > thr
    if not nz.any():
        return 0.0
    x1, x2, x3 = u.grid.coords()
    cheb = np.maximum(np.maximum(np.abs(x1), np.abs(x2)), np.abs(x3))
    return float(np.broadcast_to(cheb, mag.shape)[nz].max())


def split(A: Field, tau: float, periodic: bool = False):
    """Return ``(A_sharp, A_flat)`` with ``A_sharp = Psi_tau * A``.

    Unless ``periodic`` is set, ``A`` must be supported at least ``tau`` away
    from the box faces so the periodic convolution matches the one on R^3.
    """
    g = A.grid
    if not periodic:
        ext = support_extent(A)
        if ext + tau >= g.L:
            raise ValueError(f"support extent {ext:.3g} plus tau {tau} reaches the box face at L={g.L}; "
                             "mollification would wrap around")
    mol = make_mollifier(g, tau)
    sharp = A.with_values(ifftn(mol.symbol * fftn(A.values)))
    return sharp, A - sharp


def derivative_constant(grid: Grid, alpha) -> float:
    """``||d^alpha Psi||_{L1}`` measured on the grid with ``tau = 1``."""
    mol = make_mollifier(grid, 1.0)
    D = grid.derivs()
    m = np.ones((grid.N,) * 3, dtype=complex)
    for j, a in enumerate(alpha):
        m = m * D[j] ** a
    dk = ifftn(m * fftn(np.fft.ifftshift(mol.kernel)))
    return float(np.abs(dk).sum() * grid.cell_volume)


def sharp_derivative_sup(A: Field, tau: float, alpha) -> float:
    """``||d^alpha A_sharp||_inf`` (pointwise Euclidean norm over components)."""
    g = A.grid
    mol = make_mollifier(g, tau)
    D = g.derivs()
    m = mol.symbol.astype(complex)
    for j, a in enumerate(alpha):
        m = m * D[j] ** a
    vals = ifftn(m * fftn(A.values))
    return float(np.sqrt((np.abs(vals) ** 2).sum(axis=0)).max())
