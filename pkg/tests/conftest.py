"""Shared oracles: random expression trees evaluated by jets and by mpmath."""

import math

import mpmath
import numpy as np
import pytest

from daffpinn import jets as J

UNARY = ("tanh", "sin", "cos", "exp")
BINARY = ("add", "sub", "mul", "scale")


def random_expression(rng, depth=3):
    """Nested tuple over the leaves 'x', 'y' and the supported primitives."""
    if depth == 0 or rng.random() < 0.2:
        return "x" if rng.random() < 0.5 else "y"
    if rng.random() < 0.45:
        return (str(rng.choice(UNARY)), random_expression(rng, depth - 1))
    op = str(rng.choice(BINARY))
    if op == "scale":
        return ("scale", random_expression(rng, depth - 1), float(rng.uniform(-1.5, 1.5)))
    return (op, random_expression(rng, depth - 1), random_expression(rng, depth - 1))


def eval_jet(expr, jx, jy):
    if expr == "x":
        return jx
    if expr == "y":
        return jy
    op = expr[0]
    if op in UNARY:
        return J.jet_compose(op, eval_jet(expr[1], jx, jy))
    if op == "scale":
        return J.jet_arith("scale", eval_jet(expr[1], jx, jy), expr[2])
    return J.jet_arith(op, eval_jet(expr[1], jx, jy), eval_jet(expr[2], jx, jy))


_MP = {"tanh": mpmath.tanh, "sin": mpmath.sin, "cos": mpmath.cos, "exp": mpmath.exp}


def eval_mp(expr, x, y):
    if expr == "x":
        return x
    if expr == "y":
        return y
    op = expr[0]
    if op in UNARY:
        return _MP[op](eval_mp(expr[1], x, y))
    a = eval_mp(expr[1], x, y)
    if op == "scale":
        return a * expr[2]
    b = eval_mp(expr[2], x, y)
    return {"add": a + b, "sub": a - b, "mul": a * b}[op]


def fd_partial(fn, x, y, a, b, dps=40):
    """Mixed partial by extended-precision central differences."""
    with mpmath.workdps(dps):
        return float(mpmath.diff(lambda u, v: fn(u, v), (mpmath.mpf(x), mpmath.mpf(y)), (a, b)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def rel_err(got, want, floor=1e-12):
    return abs(got - want) / max(abs(want), floor)


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance PASS/FAIL lines at the end of the run."""
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)


__all__ = ["random_expression", "eval_jet", "eval_mp", "fd_partial", "rel_err", "math"]
