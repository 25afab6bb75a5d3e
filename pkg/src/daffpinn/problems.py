"""Benchmark PDEs: simply supported Kirchhoff-Love plate and 2-D Helmholtz.

Edge numbering follows each benchmark's own convention:

* Kirchhoff on [0,a] x [0,b]: 1 is x = 0, 2 is y = 0, 3 is x = a, 4 is y = b.
* Helmholtz on [-1,1]^2:      1 is y = -1, 2 is y = 1, 3 is x = -1, 4 is x = 1.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from daffpinn.jets import JetError
from daffpinn import tape as T

EDGE_TOL = 1e-12


class ProblemError(ValueError):
    pass


@dataclass
class CollocationBatch:
    interior: np.ndarray
    boundary: dict

    @property
    def n_interior(self):
        return len(self.interior)

    @property
    def n_boundary(self):
        return sum(len(p) for p in self.boundary.values())


class _Rectangle:
    """Shared geometry helpers for axis-aligned rectangular domains."""

    def edge_of(self, edge):
        return self.edges[edge]

    def on_edge(self, edge, x, y):
        axis, coord = self.edges[edge]
        val = x if axis == "x" else y
        return np.all(np.abs(np.asarray(val) - coord) <= EDGE_TOL)

    def edge_points(self, edge, s):
        """Map s in [0, 1] onto ``edge``."""
        axis, coord = self.edges[edge]
        x0, x1, y0, y1 = self.domain
        if axis == "x":
            return np.full_like(s, coord), y0 + s * (y1 - y0)
        return x0 + s * (x1 - x0), np.full_like(s, coord)

    def grid(self, n):
        x0, x1, y0, y1 = self.domain
        xs = np.linspace(x0, x1, n)
        ys = np.linspace(y0, y1, n)
        return np.meshgrid(xs, ys, indexing="xy")

    @property
    def daff_extents(self):
        x0, x1, y0, y1 = self.domain
        return (x1 - x0, y1 - y0)

    @property
    def daff_origin(self):
        return (self.domain[0], self.domain[2])


@dataclass(frozen=True)
class KirchhoffSpec(_Rectangle):
    E: float = 1.0
    h_t: float = 0.1
    nu: float = 0.3
    f0: float = 1.0
    a: float = 1.0
    b: float = 1.0
    name: str = field(default="kirchhoff", init=False)

    def __post_init__(self):
        if not (0.0 <= self.nu < 0.5):
            raise ProblemError(f"Poisson ratio must lie in [0, 0.5), got {self.nu}")
        if not (self.E > 0 and self.h_t > 0 and self.a > 0 and self.b > 0):
            raise ProblemError("E, h_t, a and b must be positive")

    jet_order = 4
    boundary_order = 2

    @property
    def D(self):
        return self.E * self.h_t ** 3 / (12.0 * (1.0 - self.nu))

    @property
    def domain(self):
        return (0.0, self.a, 0.0, self.b)

    @property
    def edges(self):
        return {1: ("x", 0.0), 2: ("y", 0.0), 3: ("x", self.a), 4: ("y", self.b)}

    @property
    def amplitude(self):
        return self.f0 / (self.D * math.pi ** 4 * (1.0 / self.a ** 2 + 1.0 / self.b ** 2) ** 2)

    def forcing(self, x, y):
        return self.f0 * np.sin(x * math.pi / self.a) * np.sin(y * math.pi / self.b)

    def analytic(self, x, y):
        return self.amplitude * np.sin(math.pi * x / self.a) * np.sin(math.pi * y / self.b)

    def residual(self, u, x, y):
        return kirchhoff_residual(self, u, (x, y))

    def boundary_terms(self, u_by_edge, pts_by_edge):
        """Loss groups: b1 = bending moments on all edges, b2 = displacement."""
        moments, disps = [], []
        for edge in sorted(u_by_edge):
            x, y = pts_by_edge[edge]
            disp, moment = kirchhoff_bc_residuals(self, u_by_edge[edge], (x, y), edge)
            moments.append(moment)
            disps.append(disp)
        return {"L_b1": _concat_mean_square(moments), "L_b2": _concat_mean_square(disps)}

    def params(self):
        return {"name": self.name, **{k: v for k, v in asdict(self).items() if k != "name"}}


@dataclass(frozen=True)
class HelmholtzSpec(_Rectangle):
    k: float = 1.0
    n1: int = 4
    n2: int = 1
    name: str = field(default="helmholtz", init=False)

    jet_order = 2
    boundary_order = 2

    def __post_init__(self):
        if self.n1 < 1 or self.n2 < 1:
            raise ProblemError("harmonics n1, n2 must be >= 1")

    @property
    def domain(self):
        return (-1.0, 1.0, -1.0, 1.0)

    @property
    def edges(self):
        return {1: ("y", -1.0), 2: ("y", 1.0), 3: ("x", -1.0), 4: ("x", 1.0)}

    def forcing(self, x, y):
        c = -(self.n1 * math.pi) ** 2 - (self.n2 * math.pi) ** 2 + self.k ** 2
        return c * np.sin(self.n1 * math.pi * x) * np.sin(self.n2 * math.pi * y)

    def analytic(self, x, y):
        return np.sin(self.n1 * math.pi * x) * np.sin(self.n2 * math.pi * y)

    def residual(self, u, x, y):
        return helmholtz_residual(self, u, (x, y))

    def boundary_terms(self, u_by_edge, pts_by_edge):
        return {f"L_b{e}": T.mean(T.square(u_by_edge[e].value)) for e in sorted(u_by_edge)}

    def params(self):
        return {"name": self.name, **{k: v for k, v in asdict(self).items() if k != "name"}}


def _concat_mean_square(parts):
    return T.mean(T.square(T.concat(parts, axis=0)))


def make_problem(cfg):
    cfg = dict(cfg)
    name = cfg.pop("name", None)
    if name == "kirchhoff":
        return KirchhoffSpec(**cfg)
    if name == "helmholtz":
        return HelmholtzSpec(**cfg)
    raise ProblemError(f"unknown problem {name!r}; expected 'kirchhoff' or 'helmholtz'")


# -- residual operators -------------------------------------------------------


def kirchhoff_residual(spec, u, point):
    if u.order < 4:
        raise JetError("the biharmonic residual needs a jet of order 4")
    x, y = point
    return u.biharmonic() - spec.forcing(x, y) / spec.D


def kirchhoff_bc_residuals(spec, u, point, edge):
    """(displacement, bending moment) on a plate edge."""
    x, y = point
    if not spec.on_edge(edge, x, y):
        raise ProblemError(f"point(s) not on edge {edge}")
    uxx, uyy = u.partial(2, 0), u.partial(0, 2)
    if edge in (1, 3):
        moment = (uxx + spec.nu * uyy) * (-spec.D)
    else:
        moment = (uxx * spec.nu + uyy) * (-spec.D)
    return u.value, moment


def helmholtz_residual(spec, u, point):
    x, y = point
    return u.laplacian() + u.value * spec.k ** 2 - spec.forcing(x, y)


def analytic_solution(problem, point):
    return problem.analytic(*point)


def mean_square(residual):
    """Mean squared residual; also serves initial-condition terms."""
    return T.mean(T.square(residual))


# -- sampling and validation ----------------------------------------------------


def sample_collocation(problem, total, seed=0):
    """3/4 uniform interior points, 1/4 split evenly over the four edges."""
    if total % 4 or total <= 0:
        raise ProblemError(f"collocation total must be a positive multiple of 4, got {total}")
    n_b = total // 4
    if n_b % 4:
        raise ProblemError(f"boundary share {n_b} must split evenly over four edges")
    rng = np.random.default_rng(seed)
    x0, x1, y0, y1 = problem.domain
    n_r = total - n_b
    interior = np.column_stack([x0 + (x1 - x0) * rng.random(n_r), y0 + (y1 - y0) * rng.random(n_r)])
    boundary = {}
    for e in sorted(problem.edges):
        boundary[e] = np.column_stack(problem.edge_points(e, rng.random(n_b // 4)))
    return CollocationBatch(interior, boundary)


def validation_grid_mse(model, problem, grid_n=64):
    """MSE of ``model(x, y)`` against the analytic solution on a boundary-inclusive lattice."""
    if grid_n < 2:
        raise ProblemError("grid_n must be >= 2")
    X, Y = problem.grid(grid_n)
    pred = np.asarray(model(X.ravel(), Y.ravel())).reshape(X.shape)
    return float(np.mean((pred - problem.analytic(X, Y)) ** 2))


def boundary_max_abs(model, problem, n=1000, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for e in problem.edges:
        x, y = problem.edge_points(e, rng.random(n // 4))
        worst = max(worst, float(np.max(np.abs(model(x, y)))))
    return worst
