"""Potential pairs ``(A, q)`` supported in the cube Omega, and test-family generators."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .besov import parse_r, smooth_step
from .grid import Field, Grid, ifftn, load_field, make_grid, save_field, scalar_field, zeros


def cube_window(grid: Grid, half_width: float = 0.5, plateau: float = 0.6) -> np.ndarray:
    """Smooth tensor cutoff: 1 where all ``|x_i| <= plateau*half_width``, 0 outside the cube."""
    a = plateau * half_width
    out = np.ones((grid.N,) * 3)
    for x in grid.coords():
        out = out * smooth_step((half_width - np.abs(x)) / (half_width - a))
    return out


def ball_cutoff(grid: Grid, inner: float, outer: float) -> np.ndarray:
    """Radial cutoff: 1 on ``|x| <= inner``, 0 on ``|x| >= outer``."""
    return smooth_step((outer - grid.radius()) / (outer - inner))


def power_law_field(grid: Grid, eps: float, rng: np.random.Generator, k0: float = 1.0) -> np.ndarray:
    """Real Gaussian field with spectrum ``|xi|^-(3/2+eps)`` above ``k0``, unit sup norm."""
    kk = np.sqrt(grid.kappa_sq)
    amp = np.where(kk > 0, np.maximum(kk, k0) ** (-(1.5 + eps)), 0.0)
    coef = rng.standard_normal(kk.shape) + 1j * rng.standard_normal(kk.shape)
    f = ifftn(amp * coef).real
    return f / np.abs(f).max()


def rough_vector(grid: Grid, eps: float, seed: int, amplitude: float = 1.0,
                 half_width: float = 0.5) -> Field:
    """eps-regular vector potential, windowed smoothly to the cube ``[-hw, hw]^3``."""
    rng = np.random.default_rng(seed)
    w = cube_window(grid, half_width)
    comps = [amplitude * w * power_law_field(grid, eps, rng) for _ in range(3)]
    return Field(grid, np.stack(comps), 1)


def rough_scalar(grid: Grid, eps: float, seed: int, amplitude: float = 1.0,
                 half_width: float = 0.5) -> Field:
    rng = np.random.default_rng(seed)
    w = cube_window(grid, half_width)
    return scalar_field(grid, amplitude * w * power_law_field(grid, eps, rng))


def mode_vector(grid: Grid, xi, direction, amplitude: float = 1.0, half_width: float = 0.5) -> Field:
    """Windowed single Fourier mode ``amplitude * direction * cos(x.xi)``."""
    x1, x2, x3 = grid.coords()
    w = cube_window(grid, half_width)
    phase = np.cos(xi[0] * x1 + xi[1] * x2 + xi[2] * x3) * w
    return Field(grid, np.stack([amplitude * d * phase for d in direction]), 1)


def mode_scalar(grid: Grid, xi, amplitude: float = 1.0, half_width: float = 0.5) -> Field:
    x1, x2, x3 = grid.coords()
    w = cube_window(grid, half_width)
    return scalar_field(grid, amplitude * w * np.cos(xi[0] * x1 + xi[1] * x2 + xi[2] * x3))


def bump_scalar(grid: Grid, radius: float = 0.35, center=(0.0, 0.0, 0.0), amplitude: float = 1.0) -> Field:
    """Smooth compactly supported bump ``amplitude * exp(-1/(1-s^2))``, ``s = |x-c|/radius``."""
    x1, x2, x3 = grid.coords()
    s2 = ((x1 - center[0]) ** 2 + (x2 - center[1]) ** 2 + (x3 - center[2]) ** 2) / radius ** 2
    with np.errstate(divide="ignore", over="ignore"):
        v = np.where(s2 < 1, np.exp(-1.0 / np.maximum(1.0 - s2, 1e-300)), 0.0)
    return scalar_field(grid, amplitude * np.e * v)


@dataclass(eq=False)
class PotentialPair:
    """Magnetic and electric potentials supported in ``Omega = [-hw, hw]^3``."""

    A: Field
    q: Field
    half_width: float = 0.5
    M: float = 10.0
    eps: float = 0.5
    r: float = np.inf
    label: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.A.degree != 1 or self.q.degree != 0:
            raise ValueError("A must be a 1-form and q a scalar field")
        if self.A.grid != self.q.grid:
            raise ValueError("A and q live on different grids")
        if not 0 < self.eps < 1:
            raise ValueError("eps must lie in (0, 1)")
        if self.M < 1:
            raise ValueError("M must be at least 1")
        self.r = parse_r(self.r)
        if self.half_width >= self.grid.L:
            raise ValueError("Omega must lie strictly inside the box")
        outside = ~self.omega_mask(closed=True)
        for name, f in (("A", self.A), ("q", self.q)):
            if np.any(np.abs(f.values)[:, outside] > 0):
                raise ValueError(f"{name} does not vanish outside Omega")

    @property
    def grid(self) -> Grid:
        return self.A.grid

    def omega_mask(self, closed: bool = True) -> np.ndarray:
        x1, x2, x3 = self.grid.coords()
        cheb = np.maximum(np.maximum(np.abs(x1), np.abs(x2)), np.abs(x3))
        tol = 1e-9 * self.grid.spacing
        return cheb <= self.half_width + tol if closed else cheb < self.half_width - tol

    def conj(self) -> "PotentialPair":
        return PotentialPair(self.A.conj(), self.q.conj(), self.half_width, self.M, self.eps, self.r,
                             self.label + "*", dict(self.meta))

    def replace(self, A: Field | None = None, q: Field | None = None, label: str | None = None) -> "PotentialPair":
        return PotentialPair(self.A if A is None else A, self.q if q is None else q, self.half_width,
                             self.M, self.eps, self.r, self.label if label is None else label, dict(self.meta))

    def is_real(self) -> bool:
        return bool(np.all(self.A.values.imag == 0) and np.all(self.q.values.imag == 0))

    def fingerprint(self) -> str:
        import hashlib
        h = hashlib.sha256()
        h.update(np.array([self.grid.L, self.grid.N, self.half_width]).tobytes())
        h.update(np.ascontiguousarray(self.A.values).tobytes())
        h.update(np.ascontiguousarray(self.q.values).tobytes())
        return h.hexdigest()[:16]


def zero_pair(grid: Grid, **kw) -> PotentialPair:
    return PotentialPair(zeros(grid, 1), zeros(grid, 0), **kw)


def generated_pair(grid: Grid, eps: float, seed: int, amp_A: float = 0.5, amp_q: float = 0.5,
                   half_width: float = 0.5, M: float | None = None, r=np.inf, label: str = "") -> PotentialPair:
    """Admissible pair from the eps-regular family; ``M`` defaults to 1.1x the measured sum."""
    A = rough_vector(grid, eps, seed, amp_A, half_width) if amp_A else zeros(grid, 1)
    q = rough_scalar(grid, eps, seed + 7919, amp_q, half_width) if amp_q else zeros(grid, 0)
    pair = PotentialPair(A, q, half_width, M=1e9, eps=eps, r=r, label=label or f"rough-{seed}",
                         meta={"generator": "rough", "seed": seed, "amp_A": amp_A, "amp_q": amp_q})
    if M is None:
        from .besov import admissibility_check
        M = max(1.0, 1.1 * admissibility_check(pair)["total"])
    pair.M = float(M)
    return pair


def pair_from_dict(d: dict, base: Path | None = None) -> PotentialPair:
    """Build a pair from its JSON description (field files or a generator recipe)."""
    base = Path(base) if base is not None else Path(".")
    g = make_grid(d["grid"]["L"], d["grid"]["N"])
    hw = float(d.get("half_width", 0.5))
    eps = float(d.get("eps", 0.5))
    r = parse_r(d.get("r", "inf"))
    if "generator" in d:
        gen = d["generator"]
        pair = generated_pair(g, eps, int(gen.get("seed", 0)), float(gen.get("amp_A", 0.5)),
                              float(gen.get("amp_q", 0.5)), hw, d.get("M"), r, d.get("label", ""))
        scale = gen.get("scale")
        if scale is not None:
            pair = pair.replace(A=pair.A * float(scale[0]), q=pair.q * float(scale[1]))
        return pair
    A = load_field(base / d["A"]) if d.get("A") else zeros(g, 1)
    q = load_field(base / d["q"]) if d.get("q") else zeros(g, 0)
    if A.grid != g or q.grid != g:
        raise ValueError("field files do not match the declared grid")
    return PotentialPair(A, q, hw, float(d.get("M", 10.0)), eps, r, d.get("label", ""))


def load_pair(path) -> PotentialPair:
    path = Path(path)
    return pair_from_dict(json.loads(path.read_text()), path.parent)


def save_pair(path, pair: PotentialPair) -> None:
    """Write ``<stem>.json`` plus ``<stem>_A.cgof`` and ``<stem>_q.cgof`` beside it."""
    path = Path(path)
    a_name, q_name = f"{path.stem}_A.cgof", f"{path.stem}_q.cgof"
    save_field(path.parent / a_name, pair.A)
    save_field(path.parent / q_name, pair.q)
    d = {"grid": {"L": pair.grid.L, "N": pair.grid.N}, "half_width": pair.half_width, "M": pair.M,
         "eps": pair.eps, "r": "inf" if np.isinf(pair.r) else pair.r, "label": pair.label,
         "A": a_name, "q": q_name}
    path.write_text(json.dumps(d, indent=2))
