"""Moving-plane verification on computed solutions.

The sweep certifies the conclusion (symmetry about {x1 = 0} and
monotonicity in x1 on the left half) rather than re-running the proof.
Planes sit at half-grid positions so every reflection lands on a node.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .calculus import GridField, cell_jacobian
from .geometry import INTERIOR, Grid, cap, reflection_indices

PASS, FAIL, NA = "pass", "fail", "not-applicable"


class ReflectionError(ValueError):
    pass


class ComparisonPreconditionError(ValueError):
    def __init__(self, msg, witness):
        super().__init__(f"{msg} at node {witness}")
        self.witness = witness


def reflect_field(u: GridField, lam: float) -> tuple:
    """u_lam(x) = u(2 lam - x1, x').

    Returns ``(values, valid)``: reflected values on the full grid (NaN where
    the reflection leaves the bounding box) and the mask of nodes where the
    reflection lands on an in-domain node.  Values outside the domain are
    taken as zero (the Dirichlet extension).
    """
    g = u.grid
    idx = reflection_indices(g, lam)
    ok = idx >= 0
    vals = np.full_like(u.values, np.nan)
    vals[:, ok] = u.values[:, idx[ok]]
    valid = np.zeros(g.shape, bool)
    valid[ok] = g.in_domain[idx[ok]]
    c = cap(g, lam).nodes
    if np.any(c & ~valid):
        if g.domain.symmetric_x1 and lam <= 0:
            raise ReflectionError(f"cap node reflected outside the domain at lambda={lam}")
    return vals, valid


# -- hypotheses on f -------------------------------------------------------------

@dataclass
class Verdict:
    status: str
    value: Optional[float] = None
    witness: Optional[dict] = None
    note: str = ""


@dataclass
class HypothesisReport:
    lipschitz: list
    cooperative: Verdict
    nonnegative: Verdict
    positive_component: Verdict
    x1_monotone: Verdict
    evenness_defect: float
    samples: int

    def to_dict(self):
        return asdict(self)


def _witness(x, t, i, **extra):
    d = {"x": [float(v) for v in x[:, i]], "u": [float(v) for v in t[:, i]]}
    d.update({k: (float(v) if isinstance(v, (float, np.floating)) else int(v)) for k, v in extra.items()})
    return d


def check_hypotheses(spec, samples: int = 2000, seed: int = 0, value_max: float = 1.0,
                     delta: float = 1e-6, tol: float = 1e-9) -> HypothesisReport:
    """Sampled checks of the structural assumptions on f(x, u).

    Points x are drawn uniformly from the domain (rejection from the bounding
    box) and values u from [0, value_max]^N.
    """
    if samples < 1000:
        raise ValueError("need at least 1000 samples")
    rng = np.random.default_rng(seed)
    dom = spec.domain
    N = spec.N
    pts = []
    while sum(p.shape[1] for p in pts) < samples:
        cand = np.array([rng.uniform(lo, hi, size=4 * samples) for lo, hi in zip(dom.lower, dom.upper)])
        pts.append(cand[:, dom.level(cand) < 0])
    x = np.concatenate(pts, axis=1)[:, :samples]
    t = rng.uniform(0.0, value_max, size=(N, samples))

    def f(xx, tt):
        try:
            return spec.eval_source(xx, tt)
        except Exception as exc:  # surface the first failing sample
            for i in range(xx.shape[1]):
                try:
                    spec.eval_source(xx[:, i:i + 1], tt[:, i:i + 1])
                except Exception:
                    raise RuntimeError(f"f evaluation failed at x={xx[:, i]}, u={tt[:, i]}") from exc
            raise

    f0 = f(x, t)
    # derivative quotients d f^l / d t_k
    dq = np.empty((N, N, samples))
    for k in range(N):
        tk = t.copy()
        tk[k] += delta
        dq[:, k] = (f(x, tk) - f0) / delta
    lipschitz = [float(np.max(np.abs(dq[l]))) for l in range(N)]

    if N == 1:
        coop = Verdict(NA, note="scalar problem")
    else:
        off = dq.copy()
        for l in range(N):
            off[l, l] = np.inf
        l, k, i = np.unravel_index(np.argmin(off), off.shape)
        m = float(off[l, k, i])
        if m >= -tol:
            coop = Verdict(PASS, m)
        else:
            coop = Verdict(FAIL, m, _witness(x, t, i, component=l, variable=k, quotient=m))

    i = np.unravel_index(np.argmin(f0), f0.shape)
    fmin = float(f0[i])
    nonneg = Verdict(PASS, fmin) if fmin >= -tol else Verdict(FAIL, fmin, _witness(x, t, i[1], component=i[0], value=fmin))

    mins = f0.min(axis=1)
    best = int(np.argmax(mins))
    if mins[best] > 0:
        positive = Verdict(PASS, float(mins[best]), note=f"component {best + 1}, tau estimate {mins[best]:g}")
    else:
        j = int(np.argmin(f0[best]))
        positive = Verdict(FAIL, float(mins[best]), _witness(x, t, j, component=best, value=float(mins[best])))

    # strict increase in x1 on {x1 < 0}: compare f at (x1, x') and (y1, x') with x1 < y1 < 0
    left = x[0] < 0
    if not np.any(left):
        mono = Verdict(NA, note="no samples with x1 < 0")
    else:
        xl = x[:, left]
        tl = t[:, left]
        y = xl.copy()
        y[0] = xl[0] * rng.uniform(0.0, 1.0, size=xl.shape[1])
        inside = dom.level(y) < 0
        diff = f(y, tl) - f(xl, tl)
        diff = diff[:, inside]
        if diff.size == 0:
            mono = Verdict(NA, note="no comparable pairs")
        else:
            c, j = np.unravel_index(np.argmin(diff), diff.shape)
            dmin = float(diff[c, j])
            if dmin > 0:
                mono = Verdict(PASS, dmin)
            else:
                xi = xl[:, inside][:, j]
                w = {"x": [float(v) for v in xi], "y1": float(y[0, inside][j]),
                     "u": [float(v) for v in tl[:, inside][:, j]], "component": int(c), "difference": dmin}
                note = "strictly decreasing" if dmin < -tol else "not strictly increasing"
                mono = Verdict(FAIL, dmin, w, note)

    xm = x.copy()
    xm[0] = -xm[0]
    even = float(np.max(np.abs(f(xm, t) - f0)))
    return HypothesisReport(lipschitz, coop, nonneg, positive, mono, even, samples)


# -- comparison in small regions -------------------------------------------------

@dataclass
class ComparisonCertificate:
    violation: float
    pairing: float
    region_measure: float
    sign_coherence_defect: float
    tol: float
    passed: bool

    def to_dict(self):
        return asdict(self)


def _stress_cells(J, p):
    nrm = np.sqrt(np.sum(J ** 2, axis=(0, 1)))
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(nrm > 0, nrm ** (p - 2), 0.0)
    return w * J


def sign_coherence(diff: np.ndarray, region: np.ndarray) -> float:
    """max over region nodes and i != j of ((u^i - v^i)(u^j - v^j))^-."""
    N = diff.shape[0]
    worst = 0.0
    for i in range(N):
        for j in range(i + 1, N):
            prod = diff[i][region] * diff[j][region]
            if prod.size:
                worst = max(worst, float(np.max(-prod)))
    return worst


def region_boundary(grid: Grid, region: np.ndarray) -> np.ndarray:
    """Nodes outside ``region`` that are axis neighbours of a region node."""
    out = np.zeros_like(region)
    for k in range(grid.n):
        out[tuple(slice(1, None) if a == k else slice(None) for a in range(grid.n))] |= \
            region[tuple(slice(None, -1) if a == k else slice(None) for a in range(grid.n))]
        out[tuple(slice(None, -1) if a == k else slice(None) for a in range(grid.n))] |= \
            region[tuple(slice(1, None) if a == k else slice(None) for a in range(grid.n))]
    return out & ~region


def weak_comparison_check(u: GridField, v, region: np.ndarray, p: float,
                          tol: float = 1e-7) -> ComparisonCertificate:
    """Check u <= v on ``region`` given u <= v on its discrete boundary.

    ``v`` is a GridField or an array of nodal values (NaN allowed away from
    the region and its boundary).  The certificate carries the pairing
    int (|Du|^{p-2}Du - |Dv|^{p-2}Dv) : D(u-v)^+ over cells touching the
    region, which the monotonicity inequality keeps nonnegative.
    """
    g = u.grid
    vv = v.values if isinstance(v, GridField) else np.asarray(v, dtype=float)
    bnd = region_boundary(g, region)
    diff = u.values - vv
    bad = bnd & np.any(diff > tol, axis=0)
    if np.any(bad):
        w = tuple(int(i) for i in np.argwhere(bad)[0])
        raise ComparisonPreconditionError("u > v on the region boundary", w)
    pos = np.where(region, np.maximum(np.nan_to_num(diff), 0.0), 0.0)
    violation = float(pos.max()) if pos.size else 0.0
    support = region | bnd
    vfill = np.where(support, np.nan_to_num(vv), u.values)
    Ju = cell_jacobian(u)
    Jv = cell_jacobian(GridField(g, vfill))
    Jw = cell_jacobian(GridField(g, pos))
    cells = np.zeros(Ju.shape[2:], bool)
    for corner in np.ndindex(*(2,) * g.n):
        sl = tuple(slice(c, c + s - 1) for c, s in zip(corner, g.shape))
        cells |= region[sl]
    integrand = np.sum((_stress_cells(Ju, p) - _stress_cells(Jv, p)) * Jw, axis=(0, 1))
    pairing = float(np.sum(integrand[cells])) * g.h ** g.n
    sc = sign_coherence(np.nan_to_num(diff), region)
    measure = float(np.count_nonzero(region)) * g.h ** g.n
    return ComparisonCertificate(violation, pairing, measure, sc, tol,
                                 violation <= tol and pairing >= -tol)


# -- moving plane sweep ------------------------------------------------------------

@dataclass
class MovingPlaneReport:
    lambdas: list
    violations: list
    sign_defects: list
    lambda_bar: float
    a: float
    step: float
    coincidence_fraction: Optional[float]
    symmetry_defect: float
    monotonicity_defect: float
    tol: float
    mirrored: bool = False
    caveats: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


class AsymmetricDomainError(ValueError):
    pass


def symmetry_defect(u: GridField) -> float:
    g = u.grid
    mirror = u.values[:, ::-1]
    both = g.in_domain & g.in_domain[::-1]
    return float(np.max(np.abs(u.values - mirror)[:, both])) if np.any(both) else 0.0


def monotonicity_defect(u: GridField) -> float:
    """max of (u(x) - u(x + h e1))^+ over interior x with x1 + h <= 0."""
    g = u.grid
    x1 = g.axes[0]
    ok = (x1[:-1] + g.h <= 1e-12 * g.h)
    pair = g.interior[:-1] & g.interior[1:]
    pair &= ok.reshape((-1,) + (1,) * (g.n - 1))
    d = u.values[:, :-1] - u.values[:, 1:]
    return float(max(0.0, np.max(d[:, pair]))) if np.any(pair) else 0.0


def _mirror(u: GridField) -> GridField:
    return GridField(u.grid, u.values[:, ::-1].copy())


def moving_plane_sweep(u: GridField, spec=None, tol: float = 1e-7, mirrored: bool = False,
                       hypotheses: Optional[HypothesisReport] = None) -> MovingPlaneReport:
    """Sweep lambda from a to 0 in steps of h/2 comparing u with u_lambda on each cap."""
    g = u.grid
    if not g.domain.symmetric_x1 or not np.array_equal(g.in_domain, g.in_domain[::-1]):
        raise AsymmetricDomainError("moving-plane sweep needs a domain symmetric in x1")
    if mirrored:
        u = _mirror(u)
    caveats = []
    if hypotheses is not None:
        for name in ("cooperative", "nonnegative", "positive_component", "x1_monotone"):
            vd = getattr(hypotheses, name)
            if vd.status == FAIL:
                caveats.append(f"hypothesis '{name}' failed ({vd.note or vd.value}); certificate is not-applicable")
    elif spec is not None:
        caveats.append("hypotheses not checked")
    a, _ = g.x1_range
    step = g.h / 2
    k_max = int(round(-a / step))
    lambdas, viols, signs = [], [], []
    lam_bar = a
    ok_so_far = True
    for k in range(k_max + 1):
        lam = a + k * step
        c = cap(g, lam).nodes
        if not np.any(c):
            viol, sd = 0.0, 0.0
        else:
            vals, _ = reflect_field(u, lam)
            diff = u.values - vals
            viol = float(max(0.0, np.max(diff[:, c])))
            sd = sign_coherence(diff, c)
        lambdas.append(lam)
        viols.append(viol)
        signs.append(sd)
        if ok_so_far and viol <= tol:
            lam_bar = lam
        else:
            ok_so_far = False
    cb = cap(g, lam_bar).nodes
    if np.any(cb):
        vals, _ = reflect_field(u, lam_bar)
        close = np.all(np.abs(u.values - vals) < tol, axis=0) & cb
        coinc = float(np.count_nonzero(close)) / float(np.count_nonzero(cb))
    else:
        coinc = None
    return MovingPlaneReport(lambdas, viols, signs, float(lam_bar), float(a), float(step), coinc,
                             symmetry_defect(u), monotonicity_defect(u), tol, mirrored, caveats)


def sweep_violation_at_zero(u: GridField) -> tuple:
    """(left-to-right, mirrored) violation at lambda = 0."""
    out = []
    for w in (u, _mirror(u)):
        c = cap(w.grid, 0.0).nodes
        vals, _ = reflect_field(w, 0.0)
        out.append(float(max(0.0, np.max((w.values - vals)[:, c]))) if np.any(c) else 0.0)
    return tuple(out)


def thin_cap_check(u: GridField, p: float, width_cells: int = 2, tol: float = 1e-7) -> ComparisonCertificate:
    """Weak comparison of u against u_lambda on the cap of width ``width_cells`` * h at the left end."""
    g = u.grid
    a, _ = g.x1_range
    lam = a + width_cells * g.h
    region = cap(g, lam).nodes & (g.mask == INTERIOR)
    vals, _ = reflect_field(u, lam)
    return weak_comparison_check(u, vals, region, p, tol)


def fitted_order(hs, defects, floor: float) -> float:
    """Slope of log(defect) against log(h), using only defects above ``floor``.

    Returns inf when fewer than two defects clear the floor: the field is
    symmetric to solver accuracy at every resolution and no rate is visible.
    """
    pts = [(h, d) for h, d in zip(hs, defects) if d > floor]
    if len(pts) < 2:
        return math.inf
    return float(np.polyfit(np.log([h for h, _ in pts]), np.log([d for _, d in pts]), 1)[0])
