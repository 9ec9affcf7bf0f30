"""Vectorial p-Laplace Dirichlet solver with eps-regularisation and a verification harness."""

__version__ = "0.1.0"

from .calculus import GridField  # noqa: E402
from .geometry import Domain, Grid, ball, box, build_grid, disk, ellipse  # noqa: E402
from .solver import ProblemSpec, SolverConfig, SolverReport, constant_source, solve  # noqa: E402

__all__ = [
    "Domain", "Grid", "GridField", "ProblemSpec", "SolverConfig", "SolverReport",
    "ball", "box", "build_grid", "constant_source", "disk", "ellipse", "solve",
]
