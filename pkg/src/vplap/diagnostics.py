"""Regularity diagnostics on solved fields.

All integrals are cell sums over the interior subdomain: cells whose
corners are all interior nodes and whose centre lies at least ``margin``
inside the domain (measured with the domain's level function).  Integrands
live at cell centres, so the pole weight |x - y|^{-gamma} is always finite
for a pole y at a grid node.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .calculus import GridField, cell_average, cell_gradient, cell_jacobian, cutoff_H, hessian
from .geometry import Domain, Grid
from .solver import energy_operator, stress_field


@dataclass(frozen=True)
class DiagnosticParams:
    alpha: float = 0.0
    gamma: float = 0.0
    sigma: float = 1.0
    s: Optional[float] = None
    pole: tuple = (0.0, 0.0)
    tau: Optional[float] = None
    eta_crit: Optional[float] = None
    margin: float = 0.1
    # cutoff parameter m of the pole weight; None couples it to eps as m = 1/eps
    cutoff_m: Optional[float] = None
    exclude_critical: bool = False


def sigma_threshold(p: float) -> float:
    """Upper bound for admissible inverse-gradient exponents."""
    return 2 * p - 3 if p <= 2 else p - 1


def admissibility(params: DiagnosticParams, p: float, n: int) -> dict:
    """Flags (not errors) for the parameter ranges the regularity estimates need."""
    flags = {}
    if p <= 2:
        ok = 0 <= params.alpha < p - 1
        rng = f"0 <= alpha < p-1 = {p - 1:g}"
    else:
        ok = 0 <= params.alpha < 1
        rng = "0 <= alpha < 1"
    flags["alpha"] = {"admissible": ok, "rule": rng}
    if n == 2:
        flags["gamma"] = {"admissible": params.gamma == 0, "rule": "gamma = 0 required for n = 2"}
    else:
        flags["gamma"] = {"admissible": 0 <= params.gamma < n - 2, "rule": "gamma < n-2 required"}
    thr = sigma_threshold(p)
    if thr <= 0:
        flags["sigma"] = {"admissible": False, "threshold": thr,
                          "rule": f"sigma < {thr:g}: no admissible positive sigma"}
    else:
        flags["sigma"] = {"admissible": params.sigma < thr, "threshold": thr,
                          "rule": f"sigma < {thr:g}"}
    if params.s is not None:
        flags["s"] = {"admissible": 0 < params.s < n - params.gamma,
                      "rule": f"0 < s < n - gamma = {n - params.gamma:g}"}
    return flags


# -- subdomain and weights ---------------------------------------------------

def subdomain_cells(grid: Grid, margin: float) -> np.ndarray:
    centers = grid.cell_centers()
    inner = grid.domain.level(centers) <= -margin
    return grid.full_cells & inner


def _check_pole(grid: Grid, pole, margin) -> np.ndarray:
    idx = grid.nearest_node(pole)
    y = np.array([a[i] for a, i in zip(grid.axes, idx)])
    if not grid.interior[idx] or grid.domain.level(y.reshape(-1, 1))[0] > -margin + 1e-12:
        raise ValueError(f"pole {tuple(pole)} is outside the interior subdomain (margin {margin})")
    return y


def pole_weight(grid: Grid, pole, gamma: float, m: Optional[float], margin: float) -> np.ndarray:
    if gamma == 0 and m is None:
        return np.ones(grid.cell_centers().shape[1:])
    y = _check_pole(grid, pole, margin)
    c = grid.cell_centers()
    dist = np.sqrt(np.sum((c - y.reshape((-1,) + (1,) * grid.n)) ** 2, axis=0))
    if m is None or not math.isfinite(m):
        return dist ** (-gamma)
    return cutoff_H(dist, m, gamma)


def _coupled_m(params: DiagnosticParams, eps: float) -> Optional[float]:
    if params.cutoff_m is not None:
        return params.cutoff_m
    return 1.0 / eps if eps > 0 else None


def _cell_grad_norm(u: GridField) -> np.ndarray:
    J = cell_jacobian(u)
    return np.sqrt(np.sum(J ** 2, axis=(0, 1)))


# -- integrals ---------------------------------------------------------------

def weighted_d2_integral(u: GridField, p: float, eps: float, params: DiagnosticParams) -> float:
    """Cell sum of (eps + |Du|^2)^{(p-2-alpha)/2} ||D^2u||^2 |x-y|^{-gamma} h^n."""
    g = u.grid
    cells = subdomain_cells(g, params.margin)
    w = pole_weight(g, params.pole, params.gamma, _coupled_m(params, eps), params.margin)
    hes = hessian(u)
    d2 = cell_average(hes.d2u, g.n)
    d2sq = np.sum(d2 ** 2, axis=(0, 1, 2))
    du = _cell_grad_norm(u)
    with np.errstate(divide="ignore", invalid="ignore"):
        base = (eps + du ** 2) ** ((p - 2 - params.alpha) / 2)
        integrand = np.where(d2sq == 0, 0.0, base * d2sq) * w
    if params.exclude_critical and params.eta_crit is not None:
        cells = cells & (du >= params.eta_crit)
    return float(np.sum(integrand[cells])) * g.h ** g.n


def source_lower_bound(spec, grid: Grid, u: Optional[GridField] = None) -> tuple:
    """(component, min value) of the component with the largest minimum over interior nodes."""
    x = grid.coords()
    vals = u.values if u is not None else np.zeros((spec.N,) + grid.shape)
    f = spec.eval_source(x, vals)[:, grid.interior]
    mins = f.min(axis=1)
    i = int(np.argmax(mins))
    return i, float(mins[i])


def inverse_gradient_integral(u: GridField, eps: float, params: DiagnosticParams,
                              spec=None) -> float:
    """Cell sum of (eps + |Du|^2)^{-sigma/2} |x-y|^{-gamma} h^n.

    When ``spec`` is given, the positivity of some source component is
    checked by sampling and a warning is issued if it fails.
    """
    g = u.grid
    if spec is not None:
        comp, fmin = source_lower_bound(spec, g, u)
        tau = params.tau if params.tau is not None else 0.0
        if not (fmin > 0 and fmin >= tau):
            warnings.warn(f"no source component bounded below by tau > 0 (best: f^{comp + 1} >= {fmin:g})",
                          stacklevel=2)
    cells = subdomain_cells(g, params.margin)
    w = pole_weight(g, params.pole, params.gamma, _coupled_m(params, eps), params.margin)
    du = _cell_grad_norm(u)
    with np.errstate(divide="ignore"):
        integrand = (eps + du ** 2) ** (-params.sigma / 2) * w
    return float(np.sum(integrand[cells])) * g.h ** g.n


def critical_set_measure(u: GridField, eta_crit: float, margin: float = 0.0) -> float:
    """h^n times the number of subdomain cells with |Du| < eta_crit."""
    g = u.grid
    cells = subdomain_cells(g, margin)
    du = _cell_grad_norm(u)
    return float(np.count_nonzero(cells & (du < eta_crit))) * g.h ** g.n


def stress_w12_norm(u: GridField, eps: float, eta: float, margin: float,
                    p: Optional[float] = None) -> float:
    """Cell sum of squared difference quotients of the stress V_{eps,eta}."""
    if p is not None and p <= 1.5:
        warnings.warn(f"p = {p:g} <= 3/2: no W^{{1,2}} bound is expected for the stress", stacklevel=2)
    g = u.grid
    V = stress_field(u, eta, eps)
    comps = V.reshape((-1,) + g.shape)
    comps = np.where(g.in_domain, comps, 0.0)
    cells = subdomain_cells(g, margin)
    total = 0.0
    for comp in comps:
        dv = cell_gradient(comp, g.h)
        sq = np.sum(dv ** 2, axis=0)
        total += float(np.sum(sq[cells]))
    return total * g.h ** g.n


# -- weighted Poincare ---------------------------------------------------------

def two_star(t: float, n: int, gamma: float = 0.0) -> float:
    """Critical exponent 2*(t) with 1/2* = 1/2 - 1/n + (1/t)(1/2 - gamma/(2n)).

    Returns ``math.inf`` when the reciprocal is not positive.
    """
    if t <= 1:
        raise ValueError("t must be > 1")
    if n >= 3 and not gamma < n - 2:
        raise ValueError("gamma < n-2 required")
    if n == 2 and gamma != 0:
        raise ValueError("gamma = 0 required for n = 2")
    recip = 0.5 - 1.0 / n + (1.0 / t) * (0.5 - gamma / (2.0 * n))
    if recip <= 0:
        return math.inf
    return 1.0 / recip


class EigenIterationError(RuntimeError):
    def __init__(self, msg, residual):
        super().__init__(f"{msg} (residual {residual:.3e})")
        self.residual = residual


def smallest_generalized_eigenpair(K, M, tol: float = 1e-10, max_iter: int = 500):
    """Smallest eigenpair of K x = mu M x (K, M symmetric positive definite) by inverse iteration."""
    lu = spla.splu(sp.csc_matrix(K))
    x = np.ones(K.shape[0])
    mu = np.inf
    res = np.inf
    for it in range(1, max_iter + 1):
        y = lu.solve(M @ x)
        y /= math.sqrt(float(y @ (M @ y)))
        Ky = K @ y
        mu = float(y @ Ky)
        r = Ky - mu * (M @ y)
        res = float(np.linalg.norm(r) / max(np.linalg.norm(Ky), 1e-300))
        x = y
        if res < tol:
            return mu, x, it, res
    raise EigenIterationError("inverse iteration did not converge", res)


@dataclass
class PoincareResult:
    constant: float
    mu_min: float
    iterations: int
    residual: float
    measure: float
    weight_condition: float
    weight_condition_raw: float
    q: int = 2

    def to_dict(self):
        return asdict(self)


def weighted_stiffness(u: GridField, p: float, eps: float, nodes: np.ndarray):
    """Stiffness and lumped mass matrices of w -> int (eps+|Du|^2)^{(p-2)/2} |grad w|^2 on ``nodes``."""
    g = u.grid
    op = energy_operator(g)
    G = op.gradients(u.values)
    s = np.sum(G ** 2, axis=(0, 2))
    W = (eps + s) ** ((p - 2) / 2)
    idx = np.flatnonzero(nodes.ravel())
    Bs = op.B[:, idx].tocsr()
    K = op.weight * (Bs.T @ sp.diags(np.repeat(W, g.n)) @ Bs)
    M = sp.identity(len(idx), format="csr") * g.h ** g.n
    touched = np.asarray(abs(Bs).sum(axis=1)).ravel().reshape(-1, g.n).sum(axis=1) > 0
    return K.tocsc(), M, W, s, touched


def poincare_constant(u: GridField, p: float, subregion: Domain, eps: float = 0.0,
                      q: int = 2, tol: float = 1e-10) -> PoincareResult:
    """C_S = 1 / sqrt(mu_min), mu_min the smallest weighted Rayleigh quotient over
    fields vanishing outside ``subregion``."""
    if q != 2:
        raise ValueError("only q = 2 is supported")
    g = u.grid
    inside = subregion.indicator(g.coords()) == 2
    nodes = inside & g.interior
    if not np.any(nodes):
        raise ValueError("subregion contains no interior nodes")
    if np.any(inside & ~g.interior):
        raise ValueError("subregion is not strictly inside the domain")
    K, M, W, s, touched = weighted_stiffness(u, p, eps, nodes)
    mu, _, its, res = smallest_generalized_eigenpair(K, M, tol=tol)
    Wt = W[touched]
    with np.errstate(divide="ignore"):
        raw = np.sqrt(s[touched]) ** (p - 2) if p != 2 else np.ones_like(Wt)
    cond_raw = float(raw.max() / raw.min()) if raw.min() > 0 and np.all(np.isfinite(raw)) else math.inf
    return PoincareResult(1.0 / math.sqrt(mu), mu, its, res,
                          float(np.count_nonzero(nodes)) * g.h ** g.n,
                          float(Wt.max() / Wt.min()), cond_raw)


# -- refinement trends ---------------------------------------------------------

@dataclass
class TrendVerdict:
    resolutions: list
    values: list
    classification: str
    exponent: float
    rules: str = ("bounded: last three values within 20% of their median; "
                  "growing: monotone increase with fitted exponent > 0.2")

    def to_dict(self):
        return asdict(self)


def fit_exponent(resolutions: Sequence[float], values: Sequence[float]) -> float:
    """Least-squares slope of log(value) against log(resolution)."""
    r = np.asarray(resolutions, dtype=float)
    v = np.asarray(values, dtype=float)
    if len(v) < 2 or np.any(v <= 0) or not np.all(np.isfinite(v)):
        return float("nan")
    return float(np.polyfit(np.log(r), np.log(v), 1)[0])


def classify_trend(resolutions: Sequence[float], values: Sequence[float]) -> TrendVerdict:
    vals = [float(v) for v in values]
    res = [int(r) for r in resolutions]
    expo = fit_exponent(res, vals)
    cls = "inconclusive"
    if len(vals) >= 2 and all(b > a for a, b in zip(vals, vals[1:])) and expo > 0.2:
        cls = "growing"
    elif len(vals) >= 3 and all(np.isfinite(vals[-3:])):
        med = float(np.median(vals[-3:]))
        if all(abs(v - med) <= 0.2 * abs(med) for v in vals[-3:]):
            cls = "bounded"
    return TrendVerdict(res, vals, cls, expo)


def uniformity_factor(values: Sequence[float]) -> float:
    """max / median of a quantity over poles."""
    v = np.asarray(values, dtype=float)
    return float(v.max() / np.median(v))
