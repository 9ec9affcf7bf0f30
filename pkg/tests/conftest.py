import functools
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from vplap.expr import compile_vector  # noqa: E402
from vplap.geometry import disk  # noqa: E402
from vplap.solver import ProblemSpec, SolverConfig, solve  # noqa: E402

CONFIG = SolverConfig()
ROOT = Path(__file__).resolve().parents[1]


def disk_problem(p, f="1", N=1):
    src, dep = compile_vector(f, 2, N, N)
    return ProblemSpec(disk(1.0), N, p, src, dep, label=f"disk p={p} f={f}")


@functools.lru_cache(maxsize=None)
def solved_disk(p, res, f="1"):
    """Session-wide cache: each (p, resolution, f) disk problem is solved once."""
    rep = solve(disk_problem(p, f), CONFIG, res)
    assert rep.converged, rep.status
    return rep


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def configs_dir():
    return ROOT / "configs"


# One line per acceptance criterion, filled in by test_acceptance.py.
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[key])
