"""Periodic computational box, complex differential forms and spectral calculus.

Conventions
-----------
The box is ``[-L, L)^3`` sampled by ``N`` points per axis.  Node ``n`` sits at
``x_n = -L + n * (2L/N)``.  Fourier index ``k`` (wrapped to ``[-N/2, N/2)``)
carries the frequency ``kappa = (pi/L) * k``.

Internally the FFT uses numpy's sign, so ``d/dx_j`` is multiplication by
``+i kappa_j``.  The Fourier transform used for extraction,
``f_hat(xi) = integral f(x) exp(+i x.xi) dx``, is the FFT coefficient at
``kappa = -xi``; with that transform the derivative multiplier is ``-i xi``.
:func:`fourier_coefficient` evaluates ``f_hat`` directly.

Degree-1 forms are stored as vector fields ``(A_1, A_2, A_3)``.  Degree-2 forms
are stored by the components ``(1,2), (1,3), (2,3)``::

    d(psi)      = grad psi
    d(A)_{jk}   = d_j A_k - d_k A_j
    delta(A)    = -div A
    delta(F)_k  = -sum_j d_j F_{jk}     (F antisymmetric)

``delta`` is the exact L2 adjoint of ``d`` on the periodic box.  The Nyquist
index is dropped from every derivative so real fields stay real.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.fft as sfft

TWO_FORM_PAIRS = ((0, 1), (0, 2), (1, 2))
NCOMP = {0: 1, 1: 3, 2: 3}

CGOF_MAGIC = b"CGOF"
CGOF_VERSION = 1
_HEADER = struct.Struct("<4sIBId")

# FFT worker count; the CLI ``--threads`` flag sets it.
FFT_WORKERS = 1


def set_fft_workers(n: int) -> None:
    global FFT_WORKERS
    FFT_WORKERS = max(1, int(n))


def fftn(a: np.ndarray) -> np.ndarray:
    return sfft.fftn(a, axes=(-3, -2, -1), workers=FFT_WORKERS)


def ifftn(a: np.ndarray) -> np.ndarray:
    return sfft.ifftn(a, axes=(-3, -2, -1), workers=FFT_WORKERS)


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on ``[-L, L)^3`` with ``N`` points per axis."""

    L: float
    N: int

    def __post_init__(self):
        if not (self.L > 0 and np.isfinite(self.L)):
            raise ValueError(f"half width L must be positive, got {self.L}")
        if int(self.N) != self.N or self.N % 2 or not 8 <= self.N <= 256:
            raise ValueError(f"N must be an even integer in [8, 256], got {self.N}")

    @property
    def spacing(self) -> float:
        return 2.0 * self.L / self.N

    @property
    def cell_volume(self) -> float:
        return self.spacing ** 3

    @property
    def volume(self) -> float:
        return (2.0 * self.L) ** 3

    @property
    def freq_unit(self) -> float:
        return np.pi / self.L

    @property
    def nyquist(self) -> float:
        """Largest frequency representable along one axis."""
        return self.freq_unit * (self.N // 2)

    @cached_property
    def axis(self) -> np.ndarray:
        return -self.L + self.spacing * np.arange(self.N)

    @cached_property
    def index(self) -> np.ndarray:
        """Wrapped integer Fourier indices along one axis."""
        return np.fft.fftfreq(self.N, 1.0 / self.N)

    @cached_property
    def kappa_axis(self) -> np.ndarray:
        return self.freq_unit * self.index

    @cached_property
    def deriv_axis(self) -> np.ndarray:
        """Derivative multiplier ``i kappa`` with the Nyquist index removed."""
        m = 1j * self.kappa_axis
        m[self.N // 2] = 0.0
        return m

    def coords(self):
        """Broadcastable coordinate arrays ``(x1, x2, x3)``."""
        x = self.axis
        return x[:, None, None], x[None, :, None], x[None, None, :]

    def mesh(self) -> np.ndarray:
        """Full coordinate array of shape ``(3, N, N, N)``."""
        return np.stack(np.meshgrid(self.axis, self.axis, self.axis, indexing="ij"))

    def kappas(self):
        k = self.kappa_axis
        return k[:, None, None], k[None, :, None], k[None, None, :]

    def derivs(self):
        d = self.deriv_axis
        return d[:, None, None], d[None, :, None], d[None, None, :]

    @cached_property
    def kappa_sq(self) -> np.ndarray:
        k1, k2, k3 = self.kappas()
        return k1 ** 2 + k2 ** 2 + k3 ** 2

    def radius(self) -> np.ndarray:
        x1, x2, x3 = self.coords()
        return np.sqrt(x1 ** 2 + x2 ** 2 + x3 ** 2)

    def node_index(self, x: float) -> int:
        """Index of the node at coordinate ``x``; error if ``x`` is off-grid."""
        t = (x + self.L) / self.spacing
        n = int(round(t))
        if abs(t - n) > 1e-9 or not 0 <= n < self.N:
            raise ValueError(f"coordinate {x} is not a grid node")
        return n


def make_grid(L: float, N: int) -> Grid:
    """Build a periodic grid; ``N`` must be even with ``8 <= N <= 256``."""
    return Grid(float(L), int(N))


@dataclass(frozen=True, eq=False)
class Field:
    """Complex field of form degree 0, 1 or 2 on a grid.

    ``values`` has shape ``(ncomp, N, N, N)`` and is read-only.
    """

    grid: Grid
    values: np.ndarray
    degree: int

    def __post_init__(self):
        if self.degree not in NCOMP:
            raise ValueError(f"unsupported form degree {self.degree}")
        v = np.array(self.values, dtype=np.complex128, copy=True)
        shape = (NCOMP[self.degree],) + (self.grid.N,) * 3
        if v.shape != shape:
            v = v.reshape(shape)
        if not np.all(np.isfinite(v)):
            raise ValueError("field contains NaN or Inf")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def ncomp(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, i) -> np.ndarray:
        return self.values[i]

    def _check(self, other: "Field") -> None:
        if not isinstance(other, Field):
            raise TypeError("expected a Field")
        if other.grid != self.grid:
            raise ValueError("fields live on different grids")
        if other.degree != self.degree:
            raise ValueError("fields have different form degrees")

    def with_values(self, values) -> "Field":
        return Field(self.grid, values, self.degree)

    def __add__(self, other):
        self._check(other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other):
        self._check(other)
        return self.with_values(self.values - other.values)

    def __neg__(self):
        return self.with_values(-self.values)

    def __mul__(self, c):
        if isinstance(c, Field):
            if c.degree != 0 or c.grid != self.grid:
                raise ValueError("can only multiply by a scalar field on the same grid")
            return self.with_values(self.values * c.values[0])
        return self.with_values(self.values * c)

    __rmul__ = __mul__

    def conj(self) -> "Field":
        return self.with_values(np.conj(self.values))

    @property
    def real(self) -> np.ndarray:
        return self.values.real


def scalar_field(grid: Grid, values) -> Field:
    return Field(grid, np.asarray(values)[None], 0)


def vector_field(grid: Grid, components) -> Field:
    comps = [np.broadcast_to(c, (grid.N,) * 3) for c in components]
    return Field(grid, np.stack(comps), 1)


def two_form_field(grid: Grid, components) -> Field:
    comps = [np.broadcast_to(c, (grid.N,) * 3) for c in components]
    return Field(grid, np.stack(comps), 2)


def zeros(grid: Grid, degree: int) -> Field:
    return Field(grid, np.zeros((NCOMP[degree],) + (grid.N,) * 3), degree)


def _pair_index(j: int, k: int):
    """Storage slot and sign of ``F_{jk}`` for any ``j != k``."""
    if j < k:
        return TWO_FORM_PAIRS.index((j, k)), 1.0
    return TWO_FORM_PAIRS.index((k, j)), -1.0


def d_form(u: Field) -> Field:
    """Exterior derivative by spectral differentiation."""
    g = u.grid
    D = g.derivs()
    if u.degree == 0:
        uh = fftn(u.values[0])
        return Field(g, np.stack([ifftn(D[j] * uh) for j in range(3)]), 1)
    if u.degree == 1:
        uh = fftn(u.values)
        out = [ifftn(D[j] * uh[k] - D[k] * uh[j]) for j, k in TWO_FORM_PAIRS]
        return Field(g, np.stack(out), 2)
    raise ValueError("d_form accepts degree 0 or 1 only")


def delta_form(F: Field) -> Field:
    """Codifferential: the L2 adjoint of :func:`d_form` on the periodic box."""
    g = F.grid
    D = g.derivs()
    if F.degree == 1:
        Fh = fftn(F.values)
        return Field(g, -ifftn(D[0] * Fh[0] + D[1] * Fh[1] + D[2] * Fh[2])[None], 0)
    if F.degree == 2:
        Fh = fftn(F.values)
        out = []
        for k in range(3):
            acc = 0.0
            for j in range(3):
                if j == k:
                    continue
                slot, sign = _pair_index(j, k)
                acc = acc + sign * D[j] * Fh[slot]
            out.append(-ifftn(acc))
        return Field(g, np.stack(out), 1)
    raise ValueError("delta_form accepts degree 1 or 2 only")


def gradient(u: Field) -> Field:
    return d_form(u)


def divergence(A: Field) -> Field:
    return -delta_form(A)


def inner_product(u: Field, v: Field) -> complex:
    """Uniform quadrature of ``sum_components u * conj(v)`` over the box."""
    u._check(v)
    return complex(np.vdot(v.values, u.values) * u.grid.cell_volume)


def l2_norm(u: Field, mask: np.ndarray | None = None) -> float:
    a = np.abs(u.values) ** 2
    if mask is not None:
        a = a * mask
    return float(np.sqrt(a.sum() * u.grid.cell_volume))


def sup_norm(u: Field) -> float:
    """Pointwise maximum of the Euclidean norm over components."""
    return float(np.sqrt((np.abs(u.values) ** 2).sum(axis=0)).max())


def parseval_sum(u: Field) -> float:
    """``(2L)^-3 * sum |f_hat|^2`` over the dual lattice (equals ``||u||^2``)."""
    uh = fftn(u.values) * u.grid.cell_volume
    return float((np.abs(uh) ** 2).sum() / u.grid.volume)


def fourier_coefficient(u: Field, xi) -> np.ndarray:
    """``integral u(x) exp(+i x.xi) dx`` per component, by direct quadrature."""
    g = u.grid
    x1, x2, x3 = g.coords()
    e = (np.exp(1j * xi[0] * x1) * np.exp(1j * xi[1] * x2)) * np.exp(1j * xi[2] * x3)
    return np.array([np.sum(c * e) for c in u.values]) * g.cell_volume


def apply_multiplier(u: Field, m: np.ndarray) -> Field:
    """Apply the Fourier multiplier ``m(kappa)`` (numpy FFT index) componentwise."""
    return u.with_values(ifftn(m * fftn(u.values)))


def save_field(path, u: Field) -> None:
    """Write ``u`` in the CGOF binary format."""
    header = _HEADER.pack(CGOF_MAGIC, CGOF_VERSION, u.degree, u.grid.N, u.grid.L)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(u.values, dtype="<c16").tobytes())


def load_field(path) -> Field:
    """Read a CGOF file; truncation and header mismatches raise ``ValueError``."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated CGOF header")
    magic, version, kind, N, L = _HEADER.unpack_from(raw)
    if magic != CGOF_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != CGOF_VERSION:
        raise ValueError(f"{path}: unsupported CGOF version {version}")
    if kind not in NCOMP:
        raise ValueError(f"{path}: unknown field kind {kind}")
    grid = make_grid(L, N)
    count = NCOMP[kind] * N ** 3
    body = raw[_HEADER.size:]
    if len(body) != 16 * count:
        raise ValueError(f"{path}: truncated CGOF body ({len(body)} of {16 * count} bytes)")
    vals = np.frombuffer(body, dtype="<c16").reshape((NCOMP[kind],) + (N,) * 3)
    return Field(grid, vals, kind)
