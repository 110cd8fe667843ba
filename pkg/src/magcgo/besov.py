"""Littlewood-Paley blocks, Besov and Sobolev norms, the first-difference seminorm.

The dyadic cutoff ``eta`` is a fixed module constant: ``eta(xi) = S(2 - |xi|)``
where ``S`` is the exp-based smooth step (0 below 0, 1 above 1).  All measured
equivalence constants refer to this profile.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Field, Grid, fftn, ifftn, sup_norm

SUPPORTED_R = (1.0, 2.0, np.inf)


def smooth_step(t):
    """C-infinity step: 0 for ``t <= 0``, 1 for ``t >= 1``."""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
    return a / (a + b)


def eta(r):
    """Radial cutoff: 1 on ``|xi| <= 1``, 0 on ``|xi| >= 2``."""
    return smooth_step(2.0 - np.asarray(r, dtype=float))


def kappa(r):
    r = np.asarray(r, dtype=float)
    return eta(r) - eta(2.0 * r)


def parse_r(r) -> float:
    if isinstance(r, str):
        r = np.inf if r.strip().lower() in ("inf", "infinity", "oo") else float(r)
    r = float(r)
    if r not in SUPPORTED_R:
        raise ValueError(f"Besov index r must be one of 1, 2, inf; got {r}")
    return r


@dataclass(frozen=True)
class BesovParams:
    s: float
    r: float = 2.0

    def __post_init__(self):
        if not np.isfinite(self.s):
            raise ValueError("smoothness s must be finite")
        object.__setattr__(self, "r", parse_r(self.r))


class LPFamily:
    """Sampled dyadic multipliers on a grid's dual lattice.

    Block 0 is ``eta``, block ``j >= 1`` is ``kappa(2^-j xi)``, for
    ``j <= j_max = floor(log2(nyquist)) - 1``.  Everything above ``j_max`` is
    collected in a tail multiplier ``1 - eta(2^-j_max xi)`` so the blocks plus
    tail sum to one at every lattice point.
    """

    def __init__(self, grid: Grid):
        self.grid = grid
        self.radius = np.sqrt(grid.kappa_sq)
        self.j_max = int(np.floor(np.log2(grid.nyquist))) - 1
        if self.j_max < 0:
            raise ValueError("grid too coarse for any dyadic block")

    def multiplier(self, j: int) -> np.ndarray:
        if j < 0:
            raise ValueError("block index must be nonnegative")
        if j > self.j_max:
            raise ValueError(f"block {j} exceeds Nyquist; maximal representable block is {self.j_max}")
        if j == 0:
            return eta(self.radius)
        return kappa(self.radius / 2.0 ** j)

    def tail(self) -> np.ndarray:
        return 1.0 - eta(self.radius / 2.0 ** self.j_max)

    def partition_error(self) -> float:
        total = sum(self.multiplier(j) for j in range(self.j_max + 1)) + self.tail()
        return float(np.abs(total - 1.0).max())


_FAMILIES: dict = {}


def lp_family(grid: Grid) -> LPFamily:
    fam = _FAMILIES.get(grid)
    if fam is None:
        fam = _FAMILIES[grid] = LPFamily(grid)
    return fam


def lp_project(u: Field, j: int) -> Field:
    """Littlewood-Paley block ``Delta_j u``."""
    m = lp_family(u.grid).multiplier(j)
    return u.with_values(ifftn(m * fftn(u.values)))


def _block_l2(u: Field):
    g = u.grid
    fam = lp_family(g)
    p = (np.abs(fftn(u.values)) ** 2).sum(axis=0) * g.cell_volume ** 2 / g.volume
    blocks = np.array([np.sqrt((fam.multiplier(j) ** 2 * p).sum()) for j in range(fam.j_max + 1)])
    tail = float(np.sqrt((fam.tail() ** 2 * p).sum()))
    return blocks, tail


def besov_report(u: Field, p: BesovParams) -> dict:
    """Besov norm over blocks ``0..j_max`` plus the reported tail beyond."""
    blocks, tail = _block_l2(u)
    j = np.arange(blocks.size)
    w = 2.0 ** (p.s * j) * blocks
    if np.isinf(p.r):
        value = float(w.max())
    else:
        value = float((w ** p.r).sum() ** (1.0 / p.r))
    return {
        "value": value,
        "s": p.s,
        "r": "inf" if np.isinf(p.r) else p.r,
        "j_max": int(blocks.size - 1),
        "blocks": blocks.tolist(),
        "tail_l2": tail,
    }


def besov_norm(u: Field, p: BesovParams | float, r=2.0) -> float:
    if not isinstance(p, BesovParams):
        p = BesovParams(float(p), r)
    return besov_report(u, p)["value"]


def sobolev_norm(u: Field, s: float) -> float:
    """``(sum (1+|xi|^2)^s |u_hat|^2 / (2L)^3)^(1/2)`` over the dual lattice."""
    g = u.grid
    p = (np.abs(fftn(u.values)) ** 2).sum(axis=0) * g.cell_volume ** 2 / g.volume
    return float(np.sqrt(((1.0 + g.kappa_sq) ** s * p).sum()))


def equivalence_constants(grid: Grid, s: float) -> tuple[float, float]:
    """Measured ``c, C`` with ``c ||u||_{H^s} <= ||u||_{B^{2,2}_s} <= C ||u||_{H^s}``.

    Extremes over the dual lattice (tail-free points) of the symbol ratio
    ``sum_j 2^{2sj} phi_j^2 / (1 + |xi|^2)^s``; valid for every field with
    no energy in the tail beyond ``j_max``.
    """
    fam = lp_family(grid)
    m = sum(2.0 ** (2 * s * j) * fam.multiplier(j) ** 2 for j in range(fam.j_max + 1))
    ratio = m / (1.0 + grid.kappa_sq) ** s
    ok = fam.tail() == 0
    return float(np.sqrt(ratio[ok].min())), float(np.sqrt(ratio[ok].max()))


def _sphere_points(n: int = 200) -> np.ndarray:
    i = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * i / n)
    theta = np.pi * (1 + 5 ** 0.5) * i
    return np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], axis=1)


def diff_seminorm(A: Field, eps: float, r=np.inf, report: bool = False):
    """First-difference seminorm ``|A|_{B^{2,r}_eps}``.

    ``||A_j(.+y) - A_j||^2 = 2(||A_j||^2 - Re R_j(y))`` with ``R_j`` the
    autocorrelation, obtained exactly on every lattice translation by one FFT.
    For ``r < inf`` the integral over ``|y| < L`` is a lattice sum, the ball of
    one cell volume around ``y = 0`` uses the second-order Taylor model, and
    ``|y| >= L`` uses the disjoint-support value ``2||A_j||^2``.  For
    ``r = inf`` the supremum is taken over lattice translations.  Vector
    fields combine their per-component seminorms in l2.
    """
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    r = parse_r(r)
    g = A.grid
    dv = g.cell_volume
    # lattice translations y, laid out to match the FFT index of R
    y1, y2, y3 = (np.fft.fftfreq(g.N, 1.0 / g.N) * g.spacing for _ in range(3))
    ry = np.sqrt(y1[:, None, None] ** 2 + y2[None, :, None] ** 2 + y3[None, None, :] ** 2)
    inside = (ry > 0) & (ry < g.L)
    r0 = g.spacing * (3.0 / (4.0 * np.pi)) ** (1.0 / 3.0)
    dirs = _sphere_points()
    k1, k2, k3 = g.kappas()
    per_comp = []
    for comp in A.values:
        ch = fftn(comp)
        pk = np.abs(ch) ** 2 * dv ** 2 / g.volume
        norm2 = float(pk.sum())
        # fftn of the power spectrum is the autocorrelation on lattice y
        R = fftn(pk).real
        D2 = np.maximum(2.0 * (norm2 - R), 0.0)
        if np.isinf(r):
            val = float((D2[inside] / ry[inside] ** (2 * eps)).max()) if np.any(inside) else 0.0
            val = max(val, 2.0 * norm2 / g.L ** (2 * eps))
            per_comp.append(val)
            continue
        body = float((D2[inside] ** (r / 2) / ry[inside] ** (3 + r * eps)).sum() * dv)
        H = np.empty((3, 3))
        ks = (k1, k2, k3)
        for a in range(3):
            for b in range(a, 3):
                H[a, b] = H[b, a] = float((ks[a] * ks[b] * pk).sum())
        quad = np.einsum("ia,ab,ib->i", dirs, H, dirs)
        ang = float(np.mean(np.maximum(quad, 0.0) ** (r / 2)))
        core = 4 * np.pi * ang * r0 ** (r * (1 - eps)) / (r * (1 - eps))
        tail = 4 * np.pi * (2.0 * norm2) ** (r / 2) * g.L ** (-r * eps) / (r * eps)
        per_comp.append((body + core + tail) ** (2.0 / r))
    value = float(np.sqrt(sum(per_comp)))
    if report:
        return value, {
            "value": value,
            "eps": eps,
            "r": "inf" if np.isinf(r) else r,
            "translations": int(inside.sum()),
            "core_radius": r0,
            "quadrature": "lattice translations (exact FFT autocorrelation)",
        }
    return value


def admissibility_check(pair) -> dict:
    """Check ``||A||_inf + |A|_{B^{2,r}_eps} + ||q||_inf <= M``."""
    a_inf = sup_norm(pair.A)
    semi = diff_seminorm(pair.A, pair.eps, pair.r)
    q_inf = sup_norm(pair.q)
    total = a_inf + semi + q_inf
    return {
        "A_sup": a_inf,
        "A_seminorm": semi,
        "q_sup": q_inf,
        "total": total,
        "M": pair.M,
        "pass": bool(total <= pair.M),
    }
