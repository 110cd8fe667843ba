"""Finite-dimensional Cauchy data sets, trace norms and the pseudo-metric ``dist``.

An element of the surrogate Cauchy data set has trace ``sum_k c_k f_k`` and
Neumann functional with coefficients ``g_l = <N u, T f_l> = (F^T c)_l``.
Trace norms use the Gram matrix ``G`` of the H^1-minimal extensions, dual norms
use ``G^-1``; both are restricted to the span of the boundary basis.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve, cholesky, eigh, solve_triangular
from scipy.optimize import minimize_scalar

from .grid import _HEADER, CGOF_MAGIC, CGOF_VERSION, Field, zeros
from .forward import CubeDomain, ForwardOperator
from .potentials import PotentialPair

MATRIX_KIND = 3
GRAM_COND_LIMIT = 1e12


# ---------------------------------------------------------------- basis

def basis_modes(K: int) -> list[tuple[int, int, int]]:
    """First ``K`` cosine index triples ordered by total degree, then lexicographically."""
    out, s = [], 0
    while len(out) < K:
        shell = [(a, b, s - a - b) for a in range(s, -1, -1) for b in range(s - a, -1, -1)]
        out += sorted(shell)
        s += 1
    return out[:K]


def boundary_basis(dom: CubeDomain, K: int) -> np.ndarray:
    """Tensor cosines ``prod_j cos(k_j pi (x_j + hw) / (2 hw))`` on the cube nodes, shape ``(K, M, M, M)``."""
    hw = dom.half_width
    x = dom.coords()
    out = np.empty((K,) + dom.shape)
    for i, k in enumerate(basis_modes(K)):
        v = np.ones(dom.shape)
        for j in range(3):
            v = v * np.cos(k[j] * np.pi * (x[j] + hw) / (2 * hw))
        out[i] = v
    return out


def _h1_operator(pair: PotentialPair) -> ForwardOperator:
    """Forward operator of ``-Lap + 1``; its bilinear form is the H^1 inner product."""
    g = pair.grid
    ones = PotentialPair(zeros(g, 1), zeros(g, 0), pair.half_width, label="h1")
    q = ones.omega_mask(closed=True).astype(complex)
    return ForwardOperator(ones.replace(q=ones.q.with_values(q[None])), check_condition=False)


def h1_extensions(pair: PotentialPair, traces: np.ndarray):
    """H^1-minimal extensions of boundary data and the operator used."""
    op = _h1_operator(pair)
    return op.solve_many(traces.astype(complex)), op


# ---------------------------------------------------------------- data set

@dataclass(eq=False)
class CauchyDataApprox:
    grid_L: float
    grid_N: int
    half_width: float
    K: int
    gram: np.ndarray            # trace Gram matrix (real SPD)
    flux: np.ndarray            # flux[k, l] = <N u_k, T f_l>
    fingerprint: str
    label: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.gram = np.asarray(self.gram, dtype=float)
        self.flux = np.asarray(self.flux, dtype=complex)
        if self.gram.shape != (self.K, self.K) or self.flux.shape != (self.K, self.K):
            raise ValueError("matrix shapes do not match K")
        ev = np.linalg.eigvalsh(self.gram)
        if ev.min() <= 1e-12 * ev.max():
            raise ValueError(f"trace Gram matrix not positive definite (eigenvalues {ev.min():.3e}..{ev.max():.3e})")

    def compatible(self, other: "CauchyDataApprox") -> bool:
        return (self.grid_L, self.grid_N, self.half_width, self.K) == (
            other.grid_L, other.grid_N, other.half_width, other.K) and np.allclose(self.gram, other.gram,
                                                                                    rtol=1e-10, atol=0)


def assemble_cauchy(pair: PotentialPair, K: int = 50, label: str = "") -> CauchyDataApprox:
    """Solve ``L_{A,q} u_k = 0`` with trace ``f_k`` and record all flux pairings."""
    dom = CubeDomain(pair.grid, pair.half_width)
    f = boundary_basis(dom, K)
    ext, h1 = h1_extensions(pair, f)
    n = K
    E = ext.reshape(n, -1)
    gram = (E.conj() @ (h1.K @ E.T)).real
    gram = 0.5 * (gram + gram.T)
    op = ForwardOperator(pair)
    try:
        U = op.solve_many(f.astype(complex)).reshape(n, -1)
    except RuntimeError as exc:
        raise RuntimeError(f"forward solve failed for the boundary basis: {exc}") from exc
    flux = E @ (op.K @ U.T)         # flux[k, l] = v_l^T K u_k, transposed below
    flux = flux.T
    res = max(op.interior_residual(U[k].reshape(dom.shape)) for k in range(n))
    return CauchyDataApprox(pair.grid.L, pair.grid.N, pair.half_width, K, gram, flux, pair.fingerprint(),
                            label or pair.label, {"max_interior_residual": res, "condition": op.condition})


# ---------------------------------------------------------------- norms

def trace_norm(pair_or_dom, f: np.ndarray) -> float:
    """Quotient H^1 norm of boundary data, realized by the ``(-Lap + 1)`` extension."""
    pair = pair_or_dom
    dom = CubeDomain(pair.grid, pair.half_width)
    fv = dom.restrict(f)
    if not np.any(fv[dom.boundary]):
        return 0.0
    ext, op = h1_extensions(pair, fv[None])
    v = ext[0].ravel()
    return float(np.sqrt(max((v.conj() @ (op.K @ v)).real, 0.0)))


def h1_norm_on(pair: PotentialPair, u: np.ndarray) -> float:
    """Discrete H^1(Omega) norm with the same quadrature as the trace norm."""
    op = _h1_operator(pair)
    v = op.dom.restrict(u).ravel()
    return float(np.sqrt(max((v.conj() @ (op.K @ v)).real, 0.0)))


def gram_norm(gram: np.ndarray, c) -> float:
    c = np.asarray(c, dtype=complex)
    return float(np.sqrt(max((c.conj() @ gram @ c).real, 0.0)))


def trace_dual_norm(gram: np.ndarray, g) -> float:
    """``sqrt(g^H G^-1 g)``: dual norm of the functional with coefficients ``g``."""
    g = np.asarray(g, dtype=complex)
    if not np.any(g):
        return 0.0
    cond = np.linalg.cond(gram)
    if cond > GRAM_COND_LIMIT:
        raise ValueError(f"trace Gram matrix ill-conditioned (condition {cond:.3e})")
    x = cho_solve(cho_factor(gram), g)
    return float(np.sqrt(max((g.conj() @ x).real, 0.0)))


# ---------------------------------------------------------------- dist

class _Whitened:
    """Coordinates where the trace norm is Euclidean: ``y = R c``, ``G = R^T R``."""

    def __init__(self, gram: np.ndarray):
        self.R = cholesky(gram, lower=False)

    def norm_trace(self, c):
        return np.linalg.norm(self.R @ c)

    def dual(self, g):
        """Whitened functional ``R^-T g`` (its Euclidean norm is the dual norm)."""
        return solve_triangular(self.R, g, trans="T", lower=False)

    def to_c(self, y):
        return solve_triangular(self.R, y, lower=False)


class _OneWay:
    """``I(c) = inf_d ||c - d||_G + ||Fj^T c - Fk^T d||_{G^-1}`` for fixed ``(G, Fj, Fk)``.

    The sum of two Euclidean norms of affine maps is minimized on the path of
    weighted least-squares solutions ``d(t)``, ``t`` in (0, 1): the optimality
    condition is a reweighted normal equation.  With ``H = conj(Fk) G^-1 Fk^T``
    and the generalized eigenpairs ``H V = G V diag(lam)``, ``V^H G V = I``,
    ``d(t) = V (t alpha + (1-t) beta) / (t + (1-t) lam)`` costs O(K^2) per ``t``.
    The path is scanned, the best point refined by a bounded scalar search,
    and the endpoints ``d = c`` and ``Fk^T d = Fj^T c`` are included.
    """

    def __init__(self, W: _Whitened, Fj: np.ndarray, Fk: np.ndarray):
        self.W, self.Fj, self.Fk = W, Fj, Fk
        G = W.R.T @ W.R
        Qk = W.dual(Fk.T)                       # R^-T Fk^T
        H = Qk.conj().T @ Qk
        H = 0.5 * (H + H.conj().T)
        self.lam, self.V = eigh(H, G.astype(complex))
        self.lam = np.maximum(self.lam, 0.0)
        self.G = G
        self.Qj = W.dual(Fj.T)
        self.Qk = Qk
        self.ts = 1.0 / (1.0 + np.exp(-np.linspace(-20, 20, 81)))

    def objective(self, c, d) -> float:
        return float(np.linalg.norm(self.W.R @ (c - d)) + np.linalg.norm(self.Qj @ c - self.Qk @ d))

    def __call__(self, c: np.ndarray):
        V = self.V
        alpha = V.conj().T @ (self.G @ c)
        beta = V.conj().T @ (self.Qk.conj().T @ (self.Qj @ c))
        lam = self.lam

        def d_of(t):
            return V @ ((t * alpha + (1 - t) * beta) / (t + (1 - t) * lam))

        def f(t):
            return self.objective(c, d_of(t))

        cands = [(self.objective(c, c), c)]
        lsq = np.linalg.lstsq(self.Qk, self.Qj @ c, rcond=None)[0]
        cands.append((self.objective(c, lsq), lsq))
        vals = [f(t) for t in self.ts]
        i = int(np.argmin(vals))
        cands.append((vals[i], d_of(self.ts[i])))
        lo, hi = self.ts[max(i - 1, 0)], self.ts[min(i + 1, len(self.ts) - 1)]
        r = minimize_scalar(f, bounds=(lo, hi), method="bounded", options={"xatol": 1e-14})
        cands.append((float(r.fun), d_of(r.x)))
        return min(cands, key=lambda t: t[0])


def inner_inf(W: _Whitened, c: np.ndarray, Fj: np.ndarray, Fk: np.ndarray):
    """``inf_d ||c - d||_G + ||Fj^T c - Fk^T d||_{G^-1}`` and its minimizer."""
    return _OneWay(W, Fj, Fk)(c)


def _sup_one_way(W: _Whitened, Fj: np.ndarray, Fk: np.ndarray, starts: int = 8, iters: int = 60):
    K = Fj.shape[0]
    inf = _OneWay(W, Fj, Fk)
    D = W.dual((Fj - Fk).T) @ np.linalg.inv(W.R)     # whitened gap operator when d = c
    _, _, Vh = np.linalg.svd(D)
    seeds = [Vh[i].conj() for i in range(min(starts, K))]
    best_val, best_y, low_conf = -1.0, None, False

    def value(y):
        c = W.to_c(y)
        v, d = inf(c)
        return v, c, d

    for y in seeds:
        y = y / np.linalg.norm(y)
        v, c, d = value(y)
        step, done = 0.5, False
        for _ in range(iters):
            a = W.R @ (c - d)
            b = W.dual(Fj.T @ c - Fk.T @ d)
            na, nb = np.linalg.norm(a), np.linalg.norm(b)
            # Danskin: gradient of the objective in c at the fixed minimizer d
            grad_c = np.zeros(K, dtype=complex)
            if na > 0:
                grad_c += W.R.T @ a / na
            if nb > 0:
                grad_c += Fj.conj() @ solve_triangular(W.R, b, lower=False) / nb
            gy = W.dual(grad_c)
            gy = gy - (y.conj() @ gy).real * y
            if np.linalg.norm(gy) < 1e-12:
                done = True
                break
            while step > 1e-8:
                yn = y + step * gy / np.linalg.norm(gy)
                yn /= np.linalg.norm(yn)
                vn, cn, dn = value(yn)
                if vn > v:
                    y, v, c, d = yn, vn, cn, dn
                    step *= 1.5
                    break
                step *= 0.5
            else:
                done = True
                break
        if v > best_val:
            best_val, best_y, low_conf = v, y, not done
    return best_val, W.to_c(best_y), low_conf


@dataclass
class DistResult:
    value: float
    one_way: tuple
    maximizer: np.ndarray
    low_confidence: bool = False

    def __float__(self):
        return self.value


def dist_cauchy(C1: CauchyDataApprox, C2: CauchyDataApprox, starts: int = 8) -> DistResult:
    """Pseudo-metric between two surrogate Cauchy data sets (a lower bound for the true one)."""
    if not C1.compatible(C2):
        raise ValueError("Cauchy data sets use different grids or boundary bases")
    W = _Whitened(C1.gram)
    if np.array_equal(C1.flux, C2.flux):
        return DistResult(0.0, (0.0, 0.0), np.zeros(C1.K, dtype=complex))
    v12, c12, l12 = _sup_one_way(W, C1.flux, C2.flux, starts)
    v21, c21, l21 = _sup_one_way(W, C2.flux, C1.flux, starts)
    if v12 >= v21:
        return DistResult(v12, (v12, v21), c12, l12)
    return DistResult(v21, (v12, v21), c21, l21)


def gauge_invariance_check(pair: PotentialPair, phi: Field, grad_phi: Field | None = None,
                           K: int = 50) -> dict:
    """``dist(C_{A,q}, C_{A+grad phi,q})``; ``phi`` must vanish on the faces of Omega."""
    dom = CubeDomain(pair.grid, pair.half_width)
    pv = dom.restrict(phi)
    scale = max(float(np.abs(phi.values).max()), 1e-300)
    if np.abs(pv[dom.boundary]).max() > 1e-12 * scale:
        raise ValueError("gauge function must vanish on the boundary of Omega")
    if grad_phi is None:
        from .grid import gradient
        grad_phi = gradient(phi)
    mask = pair.omega_mask(closed=True)
    gp = grad_phi.with_values(grad_phi.values * mask[None])
    gauged = pair.replace(A=pair.A + gp, label=pair.label + "+grad")
    C1 = assemble_cauchy(pair, K)
    C2 = assemble_cauchy(gauged, K)
    d = dist_cauchy(C1, C2)
    return {"dist": d.value, "one_way": list(d.one_way), "K": K, "N": pair.grid.N,
            "low_confidence": d.low_confidence}


# ---------------------------------------------------------------- persistence

def save_matrix(path, m: np.ndarray) -> None:
    m = np.asarray(m, dtype=complex)
    rows, cols = m.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CGOF_MAGIC, CGOF_VERSION, MATRIX_KIND, rows, float(cols)))
        fh.write(np.ascontiguousarray(m, dtype="<c16").tobytes())


def load_matrix(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated CGOF header")
    magic, version, kind, rows, cols = _HEADER.unpack_from(raw)
    if magic != CGOF_MAGIC or version != CGOF_VERSION or kind != MATRIX_KIND:
        raise ValueError(f"{path}: not a CGOF matrix blob")
    cols = int(cols)
    body = raw[_HEADER.size:]
    if len(body) != rows * cols * 16:
        raise ValueError(f"{path}: truncated CGOF matrix body")
    return np.frombuffer(body, dtype="<c16").reshape(rows, cols).copy()


def save_cauchy(path, C: CauchyDataApprox) -> None:
    """JSON header ``<stem>.json`` plus ``<stem>_gram.cgof`` and ``<stem>_flux.cgof``."""
    path = Path(path)
    gname, fname = f"{path.stem}_gram.cgof", f"{path.stem}_flux.cgof"
    save_matrix(path.parent / gname, C.gram)
    save_matrix(path.parent / fname, C.flux)
    d = {"grid": {"L": C.grid_L, "N": C.grid_N}, "half_width": C.half_width, "K": C.K,
         "fingerprint": C.fingerprint, "label": C.label, "gram": gname, "flux": fname, "meta": C.meta}
    path.write_text(json.dumps(d, indent=2))


def load_cauchy(path, expect_fingerprint: str | None = None) -> CauchyDataApprox:
    path = Path(path)
    d = json.loads(path.read_text())
    if expect_fingerprint is not None and d["fingerprint"] != expect_fingerprint:
        raise ValueError(f"fingerprint mismatch: file has {d['fingerprint']}, expected {expect_fingerprint}")
    gram = load_matrix(path.parent / d["gram"]).real
    flux = load_matrix(path.parent / d["flux"])
    return CauchyDataApprox(d["grid"]["L"], d["grid"]["N"], d["half_width"], d["K"], gram, flux,
                            d["fingerprint"], d.get("label", ""), d.get("meta", {}))
