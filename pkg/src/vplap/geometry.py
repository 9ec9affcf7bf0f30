"""Masked uniform Cartesian grids, reflections and moving-plane caps.

A domain is a bounding box plus a level function that is negative inside.
Grid nodes are classified as

    INTERIOR  -- level < 0 and not on the edge of the bounding box,
    BOUNDARY  -- not interior, but sharing a cell with an interior node
                 (Dirichlet data lives here),
    OUTSIDE   -- everything else.

For curved domains the boundary layer sits just outside the true boundary,
so the boundary treatment is first order in h.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import ndimage

OUTSIDE, BOUNDARY, INTERIOR = 0, 1, 2

# relative slack used when comparing coordinates against level sets / planes
_GEOM_TOL = 1e-10


@dataclass(frozen=True)
class Domain:
    """Box-bounded domain given by a level function (negative inside).

    ``level`` takes an array of shape ``(n, ...)`` of coordinates and returns
    the level values with shape ``(...)``.  For the built-in shapes the level
    is (or approximates) a signed distance, which is what interior margins
    are measured in.
    """

    name: str
    lower: tuple
    upper: tuple
    level: Callable[[np.ndarray], np.ndarray] = field(compare=False)
    symmetric_x1: bool = False

    def __post_init__(self):
        if len(self.lower) != len(self.upper):
            raise ValueError("lower/upper dimension mismatch")
        if len(self.lower) < 1:
            raise ValueError("domain needs at least one dimension")
        for lo, hi in zip(self.lower, self.upper):
            if not hi > lo:
                raise ValueError(f"degenerate bounding box extent [{lo}, {hi}]")

    @property
    def n(self) -> int:
        return len(self.lower)

    def indicator(self, x: np.ndarray) -> np.ndarray:
        """Pointwise classification: 2 inside, 1 on the boundary, 0 outside."""
        lev = np.asarray(self.level(np.asarray(x, dtype=float)))
        scale = max(hi - lo for lo, hi in zip(self.lower, self.upper))
        tol = _GEOM_TOL * scale
        out = np.full(lev.shape, OUTSIDE, dtype=np.int8)
        out[np.abs(lev) <= tol] = BOUNDARY
        out[lev < -tol] = INTERIOR
        return out


def box(lower: Sequence[float], upper: Sequence[float]) -> Domain:
    lower = tuple(float(v) for v in lower)
    upper = tuple(float(v) for v in upper)
    c = np.array([(a + b) / 2 for a, b in zip(lower, upper)])
    half = np.array([(b - a) / 2 for a, b in zip(lower, upper)])

    def level(x):
        x = np.asarray(x, dtype=float)
        shape = (-1,) + (1,) * (x.ndim - 1)
        return np.max(np.abs(x - c.reshape(shape)) - half.reshape(shape), axis=0)

    return Domain("box", lower, upper, level, symmetric_x1=abs(c[0]) < 1e-14)


def ball(radius: float = 1.0, n: int = 2) -> Domain:
    """Disk (n=2) or ball centred at the origin."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    r = float(radius)

    def level(x):
        return np.sqrt(np.sum(np.asarray(x, dtype=float) ** 2, axis=0)) - r

    return Domain("ball", (-r,) * n, (r,) * n, level, symmetric_x1=True)


def disk(radius: float = 1.0) -> Domain:
    return ball(radius, 2)


def ellipse(semi_axes: Sequence[float]) -> Domain:
    """Axis-aligned ellipse/ellipsoid centred at the origin.

    The level is the normalised radius minus one, scaled by the smallest
    semi-axis; it is a signed distance only for circles.
    """
    ax = np.array([float(a) for a in semi_axes])
    if np.any(ax <= 0):
        raise ValueError("semi-axes must be positive")
    shape_scale = float(ax.min())

    def level(x):
        x = np.asarray(x, dtype=float)
        shape = (-1,) + (1,) * (x.ndim - 1)
        rho = np.sqrt(np.sum((x / ax.reshape(shape)) ** 2, axis=0))
        return (rho - 1.0) * shape_scale

    return Domain("ellipse", tuple(-ax), tuple(ax), level, symmetric_x1=True)


def from_level(level, lower, upper, symmetric_x1=False, name="expression") -> Domain:
    return Domain(name, tuple(float(v) for v in lower), tuple(float(v) for v in upper),
                  level, symmetric_x1=symmetric_x1)


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform node grid over a domain's bounding box with a node mask."""

    domain: Domain
    h: float
    axes: tuple            # per-axis 1-D coordinate arrays
    mask: np.ndarray       # int8, OUTSIDE/BOUNDARY/INTERIOR per node

    @property
    def n(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple:
        return self.mask.shape

    @property
    def interior(self) -> np.ndarray:
        return self.mask == INTERIOR

    @property
    def boundary(self) -> np.ndarray:
        return self.mask == BOUNDARY

    @property
    def in_domain(self) -> np.ndarray:
        return self.mask != OUTSIDE

    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``(n, *shape)``."""
        return np.array(np.meshgrid(*self.axes, indexing="ij"))

    def cell_centers(self) -> np.ndarray:
        mids = [0.5 * (a[1:] + a[:-1]) for a in self.axes]
        return np.array(np.meshgrid(*mids, indexing="ij"))

    @property
    def active_cells(self) -> np.ndarray:
        """Cells with at least one interior corner; all their corners are in the domain."""
        return corner_reduce(self.interior, np.logical_or)

    @property
    def full_cells(self) -> np.ndarray:
        """Cells whose corners are all interior nodes."""
        return corner_reduce(self.interior, np.logical_and)

    @property
    def cell_measure(self) -> float:
        """Discrete domain measure used by the energy: active cells times h^n."""
        return float(np.count_nonzero(self.active_cells)) * self.h ** self.n

    @property
    def x1_range(self) -> tuple:
        """(a, b): smallest and largest x1 over interior nodes."""
        idx = np.nonzero(np.any(self.interior.reshape(self.shape[0], -1), axis=1))[0]
        x1 = self.axes[0]
        return float(x1[idx[0]]), float(x1[idx[-1]])

    def nearest_node(self, point: Sequence[float]) -> tuple:
        return tuple(int(np.clip(round((p - a[0]) / self.h), 0, len(a) - 1))
                     for p, a in zip(point, self.axes))


def corner_reduce(nodal: np.ndarray, op) -> np.ndarray:
    """Combine a nodal array over the 2^n corners of every cell."""
    out = None
    for corner in np.ndindex(*(2,) * nodal.ndim):
        sl = tuple(slice(c, c + s - 1) for c, s in zip(corner, nodal.shape))
        out = nodal[sl].copy() if out is None else op(out, nodal[sl])
    return out


def build_grid(domain: Domain, resolution: int) -> Grid:
    """Grid with ``resolution`` nodes along the longest bounding-box axis.

    Shorter axes get as many nodes as fit at the same spacing; if the extent
    is not a multiple of h the axis is widened symmetrically.
    """
    if int(resolution) != resolution or resolution < 5:
        raise ValueError(f"resolution must be an integer >= 5, got {resolution}")
    resolution = int(resolution)
    extents = [hi - lo for lo, hi in zip(domain.lower, domain.upper)]
    h = max(extents) / (resolution - 1)
    axes = []
    for lo, hi, ext in zip(domain.lower, domain.upper, extents):
        cells = int(np.ceil(ext / h - 1e-9))
        pad = 0.5 * (cells * h - ext)
        axes.append(lo - pad + h * np.arange(cells + 1))
    coords = np.array(np.meshgrid(*axes, indexing="ij"))
    ind = domain.indicator(coords)

    interior = ind == INTERIOR
    edge = np.zeros_like(interior)
    for k in range(len(axes)):
        sl = [slice(None)] * len(axes)
        sl[k] = 0
        edge[tuple(sl)] = True
        sl[k] = -1
        edge[tuple(sl)] = True
    interior &= ~edge
    near = ndimage.binary_dilation(interior, structure=np.ones((3,) * len(axes), bool))
    mask = np.full(interior.shape, OUTSIDE, dtype=np.int8)
    mask[near] = BOUNDARY
    mask[interior] = INTERIOR
    mask.setflags(write=False)
    return Grid(domain, float(h), tuple(axes), mask)


def _aligned_shift(grid: Grid, lam: float) -> int:
    """Index offset s with reflected index i' = s - i, checking half-grid alignment."""
    s = (2.0 * lam - 2.0 * grid.axes[0][0]) / grid.h
    si = int(round(s))
    if abs(s - si) > 1e-7:
        raise ValueError(f"lambda={lam} is not aligned to the half grid (h={grid.h})")
    return si


def reflect_index(grid: Grid, node: Sequence[int], lam: float) -> Optional[tuple]:
    """Index of R_lam(node) = (2 lam - x1, x2, ...), or None if it leaves the box."""
    i1 = _aligned_shift(grid, lam) - int(node[0])
    if not 0 <= i1 < grid.shape[0]:
        return None
    return (i1,) + tuple(int(i) for i in node[1:])


def reflection_indices(grid: Grid, lam: float) -> np.ndarray:
    """Reflected x1-index for every x1-index (-1 where it leaves the box)."""
    s = _aligned_shift(grid, lam)
    i = s - np.arange(grid.shape[0])
    i[(i < 0) | (i >= grid.shape[0])] = -1
    return i


@dataclass(frozen=True, eq=False)
class CapRegion:
    lam: float
    nodes: np.ndarray      # bool mask over grid nodes
    measure: float

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.nodes))


def cap(grid: Grid, lam: float) -> CapRegion:
    """Interior nodes with x1 < lam."""
    x1 = grid.axes[0]
    left = x1 < lam - _GEOM_TOL * grid.h
    shape = (-1,) + (1,) * (grid.n - 1)
    nodes = grid.interior & left.reshape(shape)
    nodes.setflags(write=False)
    return CapRegion(float(lam), nodes, float(np.count_nonzero(nodes)) * grid.h ** grid.n)
