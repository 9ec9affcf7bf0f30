import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vplap.expr import ExpressionError, compile_expression, compile_vector, tokenize

VARS = ["x1", "x2", "u1"]


def ev(text, **env):
    env = {"x1": 0.3, "x2": -1.5, "u1": 2.0, **env}
    return compile_expression(text, VARS)(**env)


@pytest.mark.parametrize("text,expected", [
    ("1 + 2 * 3", 7),
    ("(1 + 2) * 3", 9),
    ("2 ^ 3 ^ 2", 512),
    ("2 ** 3", 8),
    ("-2 ^ 2", -4),
    ("2 ^ -1", 0.5),
    ("8 / 4 / 2", 1),
    ("1 - 2 - 3", -4),
    ("--3", 3),
    ("+4", 4),
    ("1e-3 * 1000", 1),
    (".5 + 2.", 2.5),
    ("2.5E2", 250),
    ("min(3, 1, 2)", 1),
    ("max(-1, x2)", -1),
    ("abs(x2)", 1.5),
    ("exp(0) + cos(0) + sin(0)", 2),
    ("pi", math.pi),
    ("x1 * u1", 0.6),
])
def test_evaluation(text, expected):
    assert ev(text) == pytest.approx(expected, rel=1e-15)


def test_vectorised_over_arrays():
    x = np.linspace(-1, 1, 7)
    out = compile_expression("max(x1, 0)^2 + 1", ["x1"])(x1=x)
    assert np.allclose(out, np.maximum(x, 0) ** 2 + 1)


@pytest.mark.parametrize("text,pos", [
    ("1 + y", 4),
    ("foo(1)", 0),
    ("1 +", 3),
    ("(1 + 2", 6),
    ("1 $ 2", 2),
    ("1 2", 2),
    ("min(1)", 0),
    ("exp(1, 2)", 0),
])
def test_errors_report_position(text, pos):
    with pytest.raises(ExpressionError) as exc:
        compile_expression(text, VARS)
    assert exc.value.pos == pos
    assert f"position {pos}" in str(exc.value)


def test_empty_expression():
    with pytest.raises(ExpressionError):
        compile_expression("   ", VARS)


def test_tokens_carry_positions():
    toks = tokenize("x1 +  2.5")
    assert [t[2] for t in toks] == [0, 3, 6, 9]


def test_compile_vector():
    f, dep = compile_vector("1 + u2; x1 * u1", 2, 2, 2)
    assert dep
    x = np.zeros((2, 3))
    x[0] = [1, 2, 3]
    u = np.ones((2, 3))
    assert np.allclose(f(x, u), [[2, 2, 2], [1, 2, 3]])
    g, dep = compile_vector("3", 2, 2, 1)
    assert not dep and g(x).shape == (1, 3)
    with pytest.raises(ExpressionError):
        compile_vector("1; 2", 2, 1, 1)
    with pytest.raises(ExpressionError):
        compile_vector("u1", 2, 1, 1, allow_u=False)


# Random trees rendered twice: once in the config language, once as Python.
leaf = st.one_of(
    st.integers(0, 9).map(lambda k: (str(k), str(k))),
    st.sampled_from(["x1", "x2"]).map(lambda v: (v, v)),
)


def combine(children):
    binop = st.tuples(children, st.sampled_from(["+", "-", "*"]), children).map(
        lambda t: (f"({t[0][0]} {t[1]} {t[2][0]})", f"({t[0][1]} {t[1]} {t[2][1]})"))
    neg = children.map(lambda c: (f"-{c[0]}", f"(-{c[1]})"))
    call = st.tuples(st.sampled_from(["sin", "cos", "abs"]), children).map(
        lambda t: (f"{t[0]}({t[1][0]})", f"{'abs' if t[0] == 'abs' else 'math.' + t[0]}({t[1][1]})"))
    mm = st.tuples(st.sampled_from(["min", "max"]), children, children).map(
        lambda t: (f"{t[0]}({t[1][0]}, {t[2][0]})", f"{t[0]}({t[1][1]}, {t[2][1]})"))
    sq = children.map(lambda c: (f"({c[0]})^2", f"(({c[1]})**2)"))
    return st.one_of(binop, neg, call, mm, sq)


trees = st.recursive(leaf, combine, max_leaves=12)


@given(trees, st.floats(-2, 2), st.floats(-2, 2))
@settings(max_examples=300)
def test_matches_python_evaluation(tree, x1, x2):
    ours, py = tree
    expected = eval(py, {"math": math, "abs": abs, "min": min, "max": max}, {"x1": x1, "x2": x2})
    got = float(compile_expression(ours, ["x1", "x2"])(x1=x1, x2=x2))
    if math.isfinite(expected):
        assert got == pytest.approx(expected, rel=1e-12, abs=1e-12)
