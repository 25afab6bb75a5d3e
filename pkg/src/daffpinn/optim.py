"""First-order and limited-memory quasi-Newton optimizers on flat or named parameters."""

from __future__ import annotations

import logging
import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import line_search

log = logging.getLogger(__name__)


class NonFiniteError(FloatingPointError):
    pass


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state, lr):
    """One bias-corrected Adam update of a name -> array mapping."""
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {k}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    out = {}
    for k, p in params.items():
        g = grads[k]
        m = b1 * state.m.get(k, 0.0) + (1.0 - b1) * g
        v = b2 * state.v.get(k, 0.0) + (1.0 - b2) * g * g
        state.m[k], state.v[k] = m, v
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        out[k] = p - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return out


@dataclass
class LBFGSState:
    memory: int = 20
    pairs: deque = None
    f: float | None = None
    g: np.ndarray | None = None
    fallbacks: int = 0

    def __post_init__(self):
        if self.memory < 1:
            raise ValueError("L-BFGS memory must be >= 1")
        if self.pairs is None:
            self.pairs = deque(maxlen=self.memory)


def _two_loop(g, pairs):
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    if pairs:
        s, y, _ = pairs[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return -q


def _backtrack(fun, x, f, g, d, c1=1e-4, shrink=0.5, max_halvings=40):
    slope = g @ d
    t = 1.0
    for _ in range(max_halvings):
        xn = x + t * d
        fn, gn = fun(xn)
        if np.isfinite(fn) and fn <= f + c1 * t * slope:
            return xn, fn, gn
        t *= shrink
    return None


def _wolfe(fun, x, f, g, d):
    """Strong-Wolfe step via scipy; evaluations are cached so each point costs one call."""
    cache = {}

    def ev(z):
        key = z.tobytes()
        if key not in cache:
            cache[key] = fun(z)
        return cache[key]

    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            t = line_search(lambda z: ev(z)[0], lambda z: ev(z)[1], x, d, gfk=g, old_fval=f, c2=0.9)[0]
    except (FloatingPointError, ValueError):
        return None
    if t is None or not np.isfinite(t) or t <= 0:
        return None
    xn = x + t * d
    fn, gn = ev(xn)
    if not np.isfinite(fn) or fn > f:
        return None
    return xn, fn, gn


def lbfgs_step(x, fun, state):
    """One L-BFGS iteration with a strong-Wolfe line search (Armijo backtracking as fallback).

    ``fun(x) -> (loss, grad)``.  Returns the new point; the loss never
    increases.  If the quasi-Newton direction fails the line search a
    steepest-descent step is tried; if that fails too the point is kept.
    """
    x = np.asarray(x, dtype=float)
    if state.f is None:
        state.f, state.g = fun(x)
    f, g = state.f, state.g
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise NonFiniteError("non-finite loss or gradient")
    if not np.any(g):
        return x
    d = _two_loop(g, state.pairs)
    if not (g @ d < 0):
        d = -g
    found = _wolfe(fun, x, f, g, d) or _backtrack(fun, x, f, g, d)
    if found is None:
        log.warning("L-BFGS line search failed; falling back to steepest descent")
        state.fallbacks += 1
        state.pairs.clear()
        gn2 = g @ g
        found = _backtrack(fun, x, f, g, -g / np.sqrt(gn2))
        if found is None:
            return x
    xn, fn, gn = found
    s, y = xn - x, gn - g
    sy = s @ y
    if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
        state.pairs.append((s, y, 1.0 / sy))
    state.f, state.g = fn, gn
    return xn


def lbfgs_minimize(x, fun, iterations, memory=20, gtol=0.0):
    state = LBFGSState(memory)
    for _ in range(iterations):
        xn = lbfgs_step(x, fun, state)
        if np.array_equal(xn, x) or np.linalg.norm(state.g) <= gtol:
            x = xn
            break
        x = xn
    return x, state
