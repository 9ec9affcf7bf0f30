"""Discrete differential operators and the algebraic kernel of the vectorial
p-Laplacian: Jacobians, Hessians, D^{1,2}u, cutoffs and the monotonicity gap.

Fields are stored as arrays of shape ``(N, *grid.shape)``.  Nodal Jacobians
come in shape ``(N, n, *grid.shape)`` and nodal Hessians in
``(N, n, n, *grid.shape)``.  |Du| is always the full Frobenius norm over all
components and directions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geometry import Grid, corner_reduce


@dataclass(eq=False)
class GridField:
    """Nodal vector field u = (u^1, ..., u^N) on a grid.

    Values at OUTSIDE nodes are kept at zero; boundary nodes hold the
    Dirichlet data.
    """

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == self.grid.n:
            self.values = self.values[None]
        if self.values.shape[1:] != self.grid.shape:
            raise ValueError(f"field shape {self.values.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(self.values[:, self.grid.in_domain])):
            raise ValueError("field has non-finite values at in-domain nodes")

    @property
    def N(self) -> int:
        return self.values.shape[0]

    @classmethod
    def from_function(cls, grid: Grid, func) -> "GridField":
        """Sample ``func(x) -> sequence of N arrays`` at in-domain nodes."""
        x = grid.coords()
        vals = np.array([np.broadcast_to(v, grid.shape) for v in func(x)], dtype=float)
        vals[:, ~grid.in_domain] = 0.0
        return cls(grid, vals)

    def copy(self) -> "GridField":
        return GridField(self.grid, self.values.copy())


@dataclass(eq=False)
class JacobianField:
    grid: Grid
    du: np.ndarray          # (N, n, *shape); NaN where undefined
    norm: np.ndarray        # |Du| Frobenius, (*shape)


@dataclass(eq=False)
class HessianField:
    grid: Grid
    d2u: np.ndarray         # (N, n, n, *shape); NaN off the interior
    norm: np.ndarray        # ||D^2 u||
    d12: np.ndarray         # D^{1,2}u, (n, *shape)


def _shift(a, axis, k):
    """a shifted so that out[i] = a[i + k] along ``axis`` (edges padded with NaN)."""
    out = np.full_like(a, np.nan)
    src = [slice(None)] * a.ndim
    dst = [slice(None)] * a.ndim
    if k > 0:
        src[axis], dst[axis] = slice(k, None), slice(None, -k)
    else:
        src[axis], dst[axis] = slice(None, k), slice(-k, None)
    out[tuple(dst)] = a[tuple(src)]
    return out


def jacobian(u: GridField) -> JacobianField:
    """Nodal Du.

    Central differences at interior nodes; at boundary nodes a one-sided
    second-order difference into the domain (first order if only one
    in-domain neighbour exists on that side).
    """
    g = u.grid
    h = g.h
    inside = g.in_domain
    vals = np.where(inside, u.values, np.nan)
    du = np.full((u.N, g.n) + g.shape, np.nan)
    for k in range(g.n):
        ax = k + 1
        p1, m1 = _shift(vals, ax, 1), _shift(vals, ax, -1)
        p2, m2 = _shift(vals, ax, 2), _shift(vals, ax, -2)
        central = (p1 - m1) / (2 * h)
        fwd2 = (-3 * vals + 4 * p1 - p2) / (2 * h)
        bwd2 = (3 * vals - 4 * m1 + m2) / (2 * h)
        fwd1 = (p1 - vals) / h
        bwd1 = (vals - m1) / h
        est = central
        for cand in (fwd2, bwd2, fwd1, bwd1):
            est = np.where(np.isnan(est), cand, est)
        du[:, k] = est
    du[:, :, ~inside] = np.nan
    norm = np.sqrt(np.sum(du ** 2, axis=(0, 1)))
    return JacobianField(g, du, norm)


def hessian(u: GridField, jac: Optional[JacobianField] = None) -> HessianField:
    """Second differences at interior nodes; mixed terms from the 4-point cross stencil."""
    g = u.grid
    h = g.h
    vals = np.where(g.in_domain, u.values, np.nan)
    d2 = np.full((u.N, g.n, g.n) + g.shape, np.nan)
    for j in range(g.n):
        aj = j + 1
        d2[:, j, j] = (_shift(vals, aj, 1) - 2 * vals + _shift(vals, aj, -1)) / h ** 2
        for k in range(j + 1, g.n):
            ak = k + 1
            pp = _shift(_shift(vals, aj, 1), ak, 1)
            pm = _shift(_shift(vals, aj, 1), ak, -1)
            mp = _shift(_shift(vals, aj, -1), ak, 1)
            mm = _shift(_shift(vals, aj, -1), ak, -1)
            d2[:, j, k] = d2[:, k, j] = (pp - pm - mp + mm) / (4 * h ** 2)
    d2[..., ~g.interior] = np.nan
    norm = np.sqrt(np.sum(d2 ** 2, axis=(0, 1, 2)))
    if jac is None:
        jac = jacobian(u)
    # D^{1,2}u_i = sum_{l,j} u^l_j u^l_{ji}
    d12 = np.einsum("lj...,lji...->i...", jac.du, d2)
    return HessianField(g, d2, norm, d12)


def cell_gradient(a: np.ndarray, h: float) -> np.ndarray:
    """Cell-centre gradient of a nodal scalar array: the 2^(n-1) edge
    differences along each axis, averaged.  Shape ``(n, *cell_shape)``."""
    n = a.ndim
    out = []
    for k in range(n):
        d = np.diff(a, axis=k) / h
        for m in range(n):
            if m != k:
                lo = [slice(None)] * n
                hi = [slice(None)] * n
                lo[m], hi[m] = slice(None, -1), slice(1, None)
                d = 0.5 * (d[tuple(lo)] + d[tuple(hi)])
        out.append(d)
    return np.array(out)


def cell_jacobian(u: GridField) -> np.ndarray:
    """Du at cell centres: average of the 2^n corner one-sided differences.

    Shape ``(N, n, *cell_shape)``.  Exact for affine fields, and at the cell
    centre also for quadratics.
    """
    return np.array([cell_gradient(c, u.grid.h) for c in u.values])


def cell_average(nodal: np.ndarray, n: int) -> np.ndarray:
    """Average a nodal array (trailing n axes are spatial) over cell corners."""
    lead = nodal.shape[:-n]
    flat = nodal.reshape((-1,) + nodal.shape[-n:])
    res = []
    for a in flat:
        res.append(corner_reduce(a, np.add) / 2 ** n)
    return np.array(res).reshape(lead + res[0].shape)


def frobenius(m: np.ndarray, axes=(0, 1)) -> np.ndarray:
    return np.sqrt(np.sum(m ** 2, axis=axes))


# -- cutoffs ---------------------------------------------------------------

def cutoff_G(t, m):
    """0 on [0, 1/m], 2t - 2/m on (1/m, 2/m), t on [2/m, inf)."""
    t = np.asarray(t, dtype=float)
    if m <= 0:
        raise ValueError("m must be positive")
    if np.any(t < 0):
        raise ValueError("cutoff_G needs t >= 0")
    out = np.where(t <= 1.0 / m, 0.0, np.where(t < 2.0 / m, 2.0 * t - 2.0 / m, t))
    return out[()] if out.ndim == 0 else out


def cutoff_H(t, m, gamma=0.0):
    """G_{1/m}(t) / t^(gamma+1)."""
    t = np.asarray(t, dtype=float)
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    if np.any(t <= 0):
        raise ValueError("cutoff_H needs t > 0")
    out = cutoff_G(t, m) / t ** (gamma + 1.0)
    return out[()] if np.ndim(out) == 0 else out


# -- monotonicity inequality -----------------------------------------------

class DegeneratePairError(ValueError):
    """Raised when eta == eta', where the gap ratio is undefined."""


@dataclass(frozen=True)
class InequalityWitness:
    p: float
    eta: np.ndarray
    eta_prime: np.ndarray
    lhs: float
    ratio: float


def _stress(a, p, axes):
    nrm = np.sqrt(np.sum(a ** 2, axis=axes, keepdims=True))
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(nrm > 0, nrm ** (p - 2), 0.0)
    return w * a


def gap_ratios(eta, eta_prime, p):
    """Vectorised monotonicity gap over a batch of matrix pairs.

    ``eta`` and ``eta_prime`` have shape ``(batch, q, r)``.  Returns
    ``(lhs, ratio)``; the convention |0|^{p-2} 0 = 0 is used, and ratio is NaN
    for coincident pairs.
    """
    eta = np.asarray(eta, dtype=float)
    eta_prime = np.asarray(eta_prime, dtype=float)
    axes = tuple(range(1, eta.ndim))
    diff = eta - eta_prime
    lhs = np.sum((_stress(eta, p, axes) - _stress(eta_prime, p, axes)) * diff, axis=axes)
    n1 = np.sqrt(np.sum(eta ** 2, axis=axes))
    n2 = np.sqrt(np.sum(eta_prime ** 2, axis=axes))
    d2 = np.sum(diff ** 2, axis=axes)
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = (n1 + n2) ** (p - 2) * d2
        ratio = np.where(d2 > 0, lhs / denom, np.nan)
    return lhs, ratio


def monotonicity_gap(eta, eta_prime, p: float) -> InequalityWitness:
    """LHS (|a|^{p-2}a - |b|^{p-2}b):(a - b) and its ratio to (|a|+|b|)^{p-2}|a-b|^2."""
    if p <= 1:
        raise ValueError("p must be > 1")
    a = np.atleast_2d(np.asarray(eta, dtype=float))
    b = np.atleast_2d(np.asarray(eta_prime, dtype=float))
    if a.shape != b.shape:
        raise ValueError("eta and eta' must have the same shape")
    if not np.any(a) and not np.any(b):
        raise ValueError("eta and eta' are both zero")
    if np.array_equal(a, b):
        raise DegeneratePairError("eta == eta': ratio undefined")
    lhs, ratio = gap_ratios(a[None], b[None], p)
    return InequalityWitness(p, a, b, float(lhs[0]), float(ratio[0]))


def sample_pairs(rng: np.random.Generator, count: int, shape=(2, 2)):
    """Random matrix pairs at mixed scales, with near-parallel and antipodal pairs mixed in."""
    q, r = shape
    base = rng.standard_normal((count, q, r))
    scale = 10.0 ** rng.uniform(-3, 3, size=(count, 1, 1))
    eta = base * scale
    other = rng.standard_normal((count, q, r)) * 10.0 ** rng.uniform(-3, 3, size=(count, 1, 1))
    kind = rng.integers(0, 4, size=count)
    # near-parallel: same direction, different length
    t = rng.uniform(0.0, 2.0, size=(count, 1, 1))
    par = eta * t + 1e-6 * scale * rng.standard_normal((count, q, r))
    # antipodal: opposite direction
    anti = -eta * rng.uniform(0.1, 10.0, size=(count, 1, 1))
    zero = np.zeros_like(eta)
    eta_prime = np.where((kind == 0)[:, None, None], other,
                         np.where((kind == 1)[:, None, None], par,
                                  np.where((kind == 2)[:, None, None], anti, zero)))
    return eta, eta_prime


def estimate_Cp(p: float, samples: int = 10_000, seed: int = 0, shape=(2, 2)) -> float:
    """Smallest observed gap ratio: an upper bound on the sharp constant C_p."""
    if p <= 1:
        raise ValueError("p must be > 1")
    if samples < 1000:
        raise ValueError("need at least 1000 samples")
    rng = np.random.default_rng(seed)
    eta, eta_prime = sample_pairs(rng, samples, shape)
    # forced pairs: the scalar antipodal pair and an exact rescaling
    forced_a = np.zeros((3,) + shape)
    forced_b = np.zeros((3,) + shape)
    forced_a[0, 0, 0], forced_b[0, 0, 0] = 1.0, -1.0
    forced_a[1, 0, 0], forced_b[1, 0, 0] = 1.0, 0.0
    forced_a[2, 0, 0], forced_b[2, 0, 0] = 1.0, 1e-3
    eta = np.concatenate([forced_a, eta])
    eta_prime = np.concatenate([forced_b, eta_prime])
    _, ratio = gap_ratios(eta, eta_prime, p)
    return float(np.nanmin(ratio))
