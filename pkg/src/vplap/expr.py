"""Small arithmetic-expression language for config-defined fields.

Grammar (``^`` and ``**`` are both power, right associative)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('+' | '-') unary | power
    power  := atom (('^' | '**') unary)?
    atom   := NUMBER | NAME | NAME '(' expr (',' expr)* ')' | '(' expr ')'

Whitelisted functions: exp, sin, cos, abs, min, max.  The only constant is
``pi``.  Everything else must be one of the declared variable names.
Evaluation is vectorised over numpy arrays.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterable

import numpy as np

FUNCTIONS = {
    "exp": (np.exp, 1),
    "sin": (np.sin, 1),
    "cos": (np.cos, 1),
    "abs": (np.abs, 1),
    "min": (np.minimum, -1),
    "max": (np.maximum, -1),
}
CONSTANTS = {"pi": math.pi}

_TOKEN = re.compile(r"\s*(?:(\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)|([A-Za-z_][A-Za-z_0-9]*)|(\*\*|[-+*/^(),]))")


class ExpressionError(ValueError):
    def __init__(self, msg, text="", pos=None):
        where = f" at position {pos}" if pos is not None else ""
        super().__init__(f"{msg}{where} in expression {text!r}" if text else msg)
        self.pos = pos


def tokenize(text: str) -> list:
    toks = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            at = len(text) - len(text[pos:].lstrip())
            raise ExpressionError(f"unexpected character {text[at]!r}", text, at)
        num, name, op = m.groups()
        start = m.start(m.lastindex)
        if num is not None:
            toks.append(("num", float(num), start))
        elif name is not None:
            toks.append(("name", name, start))
        else:
            toks.append(("op", op, start))
        pos = m.end()
    toks.append(("end", None, len(text)))
    return toks


# AST nodes are tuples: ('num', v) ('var', name) ('neg', a) ('bin', op, a, b) ('call', f, args)

class _Parser:
    def __init__(self, text, variables):
        self.text = text
        self.toks = tokenize(text)
        self.i = 0
        self.variables = set(variables)

    def peek(self):
        return self.toks[self.i]

    def take(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, op):
        tok = self.take()
        if tok[0] != "op" or tok[1] != op:
            raise ExpressionError(f"expected {op!r}", self.text, tok[2])

    def parse(self):
        node = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise ExpressionError(f"unexpected token {tok[1]!r}", self.text, tok[2])
        return node

    def expr(self):
        node = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            node = ("bin", op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[0] == "op" and self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            node = ("bin", op, node, self.unary())
        return node

    def unary(self):
        tok = self.peek()
        if tok[0] == "op" and tok[1] in "+-":
            self.take()
            inner = self.unary()
            return ("neg", inner) if tok[1] == "-" else inner
        return self.power()

    def power(self):
        base = self.atom()
        tok = self.peek()
        if tok[0] == "op" and tok[1] in ("^", "**"):
            self.take()
            return ("bin", "^", base, self.unary())
        return base

    def atom(self):
        kind, val, pos = self.take()
        if kind == "num":
            return ("num", val)
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect(")")
            return node
        if kind == "name":
            nxt = self.peek()
            if nxt[0] == "op" and nxt[1] == "(":
                if val not in FUNCTIONS:
                    raise ExpressionError(f"unknown function {val!r}", self.text, pos)
                self.take()
                args = [self.expr()]
                while self.peek()[0] == "op" and self.peek()[1] == ",":
                    self.take()
                    args.append(self.expr())
                self.expect(")")
                arity = FUNCTIONS[val][1]
                if arity > 0 and len(args) != arity:
                    raise ExpressionError(f"{val} takes {arity} argument(s)", self.text, pos)
                if arity < 0 and len(args) < 2:
                    raise ExpressionError(f"{val} needs at least 2 arguments", self.text, pos)
                return ("call", val, args)
            if val in CONSTANTS:
                return ("num", CONSTANTS[val])
            if val not in self.variables:
                raise ExpressionError(f"unknown name {val!r}", self.text, pos)
            return ("var", val)
        if kind == "end":
            raise ExpressionError("unexpected end of input", self.text, pos)
        raise ExpressionError(f"unexpected token {val!r}", self.text, pos)


def _eval(node, env):
    kind = node[0]
    if kind == "num":
        return node[1]
    if kind == "var":
        return env[node[1]]
    if kind == "neg":
        return -_eval(node[1], env)
    if kind == "bin":
        a = _eval(node[2], env)
        b = _eval(node[3], env)
        op = node[1]
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        if op == "*":
            return a * b
        if op == "/":
            return np.divide(a, b)
        return np.power(np.asarray(a, dtype=float), b)
    if kind == "call":
        fn, _ = FUNCTIONS[node[1]]
        args = [_eval(a, env) for a in node[2]]
        out = args[0]
        if len(args) == 1:
            return fn(out)
        for a in args[1:]:
            out = fn(out, a)
        return out
    raise AssertionError(kind)


def _names(node):
    if node[0] == "var":
        yield node[1]
    elif node[0] == "neg":
        yield from _names(node[1])
    elif node[0] == "bin":
        yield from _names(node[2])
        yield from _names(node[3])
    elif node[0] == "call":
        for a in node[2]:
            yield from _names(a)


@dataclass(frozen=True)
class Expression:
    text: str
    tree: tuple
    variables: frozenset

    @property
    def used(self) -> frozenset:
        return frozenset(_names(self.tree))

    def __call__(self, **env):
        with np.errstate(all="ignore"):
            return _eval(self.tree, env)


def compile_expression(text: str, variables: Iterable[str]) -> Expression:
    variables = frozenset(variables)
    if not text.strip():
        raise ExpressionError("empty expression")
    return Expression(text, _Parser(text, variables).parse(), variables)


def coordinate_names(n: int) -> list:
    return [f"x{i + 1}" for i in range(n)]


def value_names(N: int) -> list:
    return [f"u{i + 1}" for i in range(N)]


def compile_vector(text: str, n: int, N: int, components: int, allow_u: bool = True):
    """Compile ``components`` expressions separated by ';' into f(x, u) -> array.

    Returns ``(func, depends_on_u)``.
    """
    parts = [s for s in text.split(";")]
    if len(parts) != components:
        raise ExpressionError(f"expected {components} ';'-separated component(s), got {len(parts)}", text)
    names = coordinate_names(n) + (value_names(N) if allow_u else [])
    exprs = [compile_expression(p, names) for p in parts]
    depends = any(e.used & set(value_names(N)) for e in exprs)

    def func(x, u=None):
        env = {f"x{i + 1}": x[i] for i in range(n)}
        if allow_u:
            vals = u if u is not None else np.zeros((N,) + np.shape(x)[1:])
            env.update({f"u{i + 1}": vals[i] for i in range(N)})
        shape = np.shape(x)[1:]
        return np.array([np.broadcast_to(np.asarray(e(**env), dtype=float), shape) for e in exprs])

    return func, bool(depends)
