import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import solved_disk
from vplap.calculus import GridField
from vplap.expr import compile_vector
from vplap.geometry import box, build_grid, cap, disk, from_level
from vplap.solver import ProblemSpec
from vplap.symmetry import (FAIL, NA, PASS, AsymmetricDomainError, ComparisonPreconditionError,
                            check_hypotheses, moving_plane_sweep, reflect_field, region_boundary,
                            sweep_violation_at_zero, thin_cap_check, weak_comparison_check)

G = build_grid(disk(), 33)


def fn(func, g=G):
    return GridField.from_function(g, func)


def spec(f, N, domain=None):
    src, dep = compile_vector(f, 2, N, N)
    return ProblemSpec(domain or disk(), N, 2.0, src, dep)


# -- reflection ------------------------------------------------------------------

def test_reflect_even_field_is_fixed():
    u = fn(lambda x: (1 - x[0] ** 2 - x[1] ** 2)[None])
    vals, _ = reflect_field(u, 0.0)
    c = cap(G, 0.0).nodes
    assert np.array_equal(vals[:, c], u.values[:, c])


def test_reflect_linear_field():
    u = fn(lambda x: x[0:1])
    vals, _ = reflect_field(u, 0.0)
    c = cap(G, 0.0).nodes
    x1 = G.coords()[0]
    assert np.allclose(vals[0][c], -x1[c])
    assert np.all(u.values[0][c] <= vals[0][c])


def test_reflect_quadratic_about_shifted_plane():
    g = build_grid(box([-1, -1], [1, 1]), 9)
    u = fn(lambda x: x[0:1] ** 2, g)
    vals, valid = reflect_field(u, -0.25)
    c = cap(g, -0.25).nodes & valid
    x1 = g.coords()[0]
    assert np.allclose(vals[0][c], (-0.5 - x1[c]) ** 2)


@given(st.integers(0, 32))
@settings(max_examples=20, deadline=None)
def test_reflect_twice_is_identity(k):
    a, _ = G.x1_range
    lam = a + k * G.h / 2
    u = fn(lambda x: (np.sin(3 * x[0]) + x[1])[None])
    once, ok = reflect_field(u, lam)
    c = cap(G, lam).nodes & ok
    twice, _ = reflect_field(GridField(G, np.where(G.in_domain, np.nan_to_num(once), 0.0)), lam)
    assert np.allclose(twice[:, c], u.values[:, c])


# -- hypotheses ------------------------------------------------------------------

def test_cooperative_system_passes():
    rep = check_hypotheses(spec("u2; u1", 2))
    assert rep.cooperative.status == PASS
    assert rep.lipschitz == pytest.approx([1.0, 1.0], abs=1e-6)


def test_competitive_system_fails_with_witness():
    rep = check_hypotheses(spec("-u2; u1", 2))
    assert rep.cooperative.status == FAIL
    w = rep.cooperative.witness
    assert w["component"] == 0 and w["variable"] == 1 and w["quotient"] < 0
    assert len(w["x"]) == 2 and len(w["u"]) == 2


def test_decreasing_source_fails_monotonicity():
    rep = check_hypotheses(spec("1 + x1^2; 1", 2))
    assert rep.x1_monotone.status == FAIL
    assert rep.x1_monotone.note == "strictly decreasing"
    assert rep.x1_monotone.witness["x"][0] < 0


def test_increasing_even_source_passes():
    rep = check_hypotheses(spec("2 - x1^2", 1))
    assert rep.x1_monotone.status == PASS
    assert rep.positive_component.status == PASS
    assert rep.cooperative.status == NA
    assert rep.evenness_defect < 1e-12


def test_autonomous_source_is_not_strict():
    rep = check_hypotheses(spec("1", 1))
    assert rep.x1_monotone.status == FAIL and rep.x1_monotone.note == "not strictly increasing"


def test_negative_source_fails_nonnegativity():
    rep = check_hypotheses(spec("u1 - 0.5", 1))
    assert rep.nonnegative.status == FAIL and rep.nonnegative.witness is not None


def test_hypotheses_need_enough_samples():
    with pytest.raises(ValueError):
        check_hypotheses(spec("1", 1), samples=10)


def test_source_failure_surfaces_point():
    def bad(x, u):
        if x.shape[1] == 1 and x[0, 0] > 0.5:
            raise ZeroDivisionError
        if x.shape[1] > 1:
            raise ZeroDivisionError
        return np.ones((1,) + x.shape[1:])
    s = ProblemSpec(disk(), 1, 2.0, bad)
    with pytest.raises(RuntimeError, match="f evaluation failed at x="):
        check_hypotheses(s)


# -- weak comparison ---------------------------------------------------------------

def test_comparison_identical_and_shifted():
    u = fn(lambda x: (1 - x[0] ** 2 - x[1] ** 2)[None])
    region = cap(G, -0.3).nodes
    c = weak_comparison_check(u, u, region, 3.0)
    assert c.violation == 0 and c.pairing == 0 and c.passed
    c = weak_comparison_check(u, GridField(G, u.values + 1), region, 3.0)
    assert c.violation == 0 and c.passed


def test_comparison_precondition_witness():
    u = fn(lambda x: (1 + 0 * x[0])[None])
    v = fn(lambda x: (0 * x[0])[None])
    with pytest.raises(ComparisonPreconditionError) as exc:
        weak_comparison_check(u, v, cap(G, -0.3).nodes, 2.0)
    assert len(exc.value.witness) == 2


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_pairing_nonnegative_on_random_pairs(p):
    rng = np.random.default_rng(int(10 * p))
    region = cap(G, -0.2).nodes
    bnd = region_boundary(G, region)
    for _ in range(50):
        a = np.where(G.in_domain, rng.standard_normal((2,) + G.shape), 0.0)
        b = np.where(G.in_domain, rng.standard_normal((2,) + G.shape), 0.0)
        b = np.where(bnd, np.maximum(a, b), b)
        c = weak_comparison_check(GridField(G, a), GridField(G, b), region, p, tol=1e-7)
        assert c.pairing >= -1e-7


def test_thin_cap_on_solved_problems():
    for p in (2.0, 3.0):
        u = solved_disk(p, 65).field
        cert = thin_cap_check(u, p)
        assert cert.passed and cert.violation <= 1e-7
        assert cert.region_measure > 0


# -- sweep ----------------------------------------------------------------------------

def test_sweep_even_field():
    u = fn(lambda x: (1 - x[0] ** 2 - x[1] ** 2)[None])
    rep = moving_plane_sweep(u)
    assert rep.lambda_bar == 0.0
    assert rep.symmetry_defect == 0.0 and rep.monotonicity_defect == 0.0
    assert rep.violations[0] == 0.0
    assert all(v == 0 for v in rep.violations)


def test_sweep_shifted_parabola():
    u = fn(lambda x: ((x[0] - 0.1) ** 2)[None])
    rep = moving_plane_sweep(u)
    x1 = G.coords()[0]
    both = G.in_domain & G.in_domain[::-1]
    brute = np.max(np.abs((x1 - 0.1) ** 2 - (-x1 - 0.1) ** 2)[both])
    assert rep.symmetry_defect == pytest.approx(brute, rel=1e-12)
    assert rep.lambda_bar < 0
    assert -1 <= rep.a <= rep.lambda_bar


def test_sweep_symmetry_iff_zero_violation_both_ways():
    for func in (lambda x: (1 - x[0] ** 2)[None], lambda x: (1 - (x[0] - 0.05) ** 2)[None],
                 lambda x: (x[0] ** 3)[None]):
        u = fn(func)
        rep = moving_plane_sweep(u)
        left, right = sweep_violation_at_zero(u)
        assert (rep.symmetry_defect <= 1e-12) == (max(left, right) <= 1e-12)


@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3))
@settings(max_examples=30, deadline=None)
def test_zero_violations_imply_monotone(coef):
    a, b, c = coef
    u = fn(lambda x: (-(x[0] ** 2) * (1 + abs(a)) + b * x[1] + c * x[1] ** 2)[None])
    rep = moving_plane_sweep(u, tol=1e-12)
    if all(v <= 1e-12 for v in rep.violations):
        assert rep.monotonicity_defect <= 1e-12


def test_asymmetric_domain_rejected():
    lopsided = from_level(lambda x: np.maximum(np.abs(x[0] - 0.2), np.abs(x[1])) - 0.7,
                          (-1, -1), (1, 1), symmetric_x1=False)
    g = build_grid(lopsided, 17)
    with pytest.raises(AsymmetricDomainError):
        moving_plane_sweep(GridField(g, np.zeros((1,) + g.shape)))


def test_caveat_when_hypotheses_fail():
    rep_h = check_hypotheses(spec("1", 1))
    u = solved_disk(3.0, 33).field
    rep = moving_plane_sweep(u, spec("1", 1), hypotheses=rep_h)
    assert any("x1_monotone" in c for c in rep.caveats)


@pytest.mark.parametrize("p", [2.0, 3.0])
def test_solved_disk_is_symmetric(p):
    for res in (33, 65):
        u = solved_disk(p, res).field
        rep = moving_plane_sweep(u, tol=1e-7)
        assert abs(rep.lambda_bar) <= rep.step
        assert rep.symmetry_defect <= u.grid.h
        assert rep.coincidence_fraction is not None
