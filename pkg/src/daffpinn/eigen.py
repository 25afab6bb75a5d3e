"""Finite-difference Laplace eigenfeatures on gridded 2-D domains.

The grid is a lattice of spacing ``h`` anchored at ``origin``; node (i, j)
sits at (origin_x + i h, origin_y + j h).  ``mask`` marks the unknowns.  With
Dirichlet conditions every node outside the mask is held at zero; with
Neumann conditions links to nodes outside the mask are dropped (graph
Laplacian), which imposes a zero normal flux.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import RectBivariateSpline

from daffpinn.jets import Jet, JetError

RESIDUAL_TOL = 1e-8


class EigenError(RuntimeError):
    pass


@dataclass
class GridSpec:
    mask: np.ndarray
    h: float
    bc_kind: str = "dirichlet"
    origin: tuple = (0.0, 0.0)

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if not self.h > 0:
            raise EigenError("grid step must be positive")
        if self.mask.ndim != 2 or not self.mask.any():
            raise EigenError("mask needs at least one interior point")
        if self.bc_kind not in ("dirichlet", "neumann"):
            raise EigenError(f"unknown boundary treatment {self.bc_kind!r}")

    @classmethod
    def rectangle(cls, n, a=1.0, b=None, bc_kind="dirichlet"):
        """``n`` interior points per side of [0,a] x [0,a] (h = a / (n + 1)).

        Nodes include the boundary ring; the mask covers the n x n interior
        for Dirichlet and every node for Neumann.
        """
        if b is not None and b != a:
            raise EigenError("rectangle() builds square lattices; pass a mask for other shapes")
        h = a / (n + 1)
        mask = np.zeros((n + 2, n + 2), dtype=bool)
        if bc_kind == "dirichlet":
            mask[1:-1, 1:-1] = True
        else:
            mask[:, :] = True
        return cls(mask, h, bc_kind)

    @property
    def n(self):
        return self.mask.shape[0]

    @property
    def N(self):
        return int(self.mask.sum())

    def node_coords(self):
        ny, nx = self.mask.shape
        xs = self.origin[0] + self.h * np.arange(nx)
        ys = self.origin[1] + self.h * np.arange(ny)
        return xs, ys


@dataclass
class EigenMode:
    eigenvalue: float
    vector: np.ndarray
    index: int


def build_laplacian(grid):
    """Sparse symmetric 5-point discretization of -Laplace on the masked nodes."""
    mask = grid.mask
    ids = -np.ones(mask.shape, dtype=np.int64)
    ids[mask] = np.arange(grid.N)
    inv_h2 = 1.0 / grid.h ** 2
    rows, cols, vals = [], [], []
    diag = np.zeros(grid.N)
    ny, nx = mask.shape
    for dj, di in ((0, 1), (0, -1), (1, 0), (-1, 0)):
        src = np.argwhere(mask)
        nb = src + np.array([dj, di])
        inside = (nb[:, 0] >= 0) & (nb[:, 0] < ny) & (nb[:, 1] >= 0) & (nb[:, 1] < nx)
        nb_in_mask = np.zeros(len(src), dtype=bool)
        nb_in_mask[inside] = mask[nb[inside, 0], nb[inside, 1]]
        src_id = ids[src[:, 0], src[:, 1]]
        if grid.bc_kind == "dirichlet":
            diag += inv_h2
        else:
            diag[src_id[nb_in_mask]] += inv_h2
        rows.append(src_id[nb_in_mask])
        cols.append(ids[nb[nb_in_mask, 0], nb[nb_in_mask, 1]])
        vals.append(np.full(int(nb_in_mask.sum()), -inv_h2))
    rows.append(np.arange(grid.N))
    cols.append(np.arange(grid.N))
    vals.append(diag)
    L = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(grid.N, grid.N)).tocsr()
    L.sum_duplicates()
    return L


def _sign_convention(v):
    nz = np.flatnonzero(np.abs(v) > 1e-14 * np.max(np.abs(v)))
    return -v if nz.size and v[nz[0]] < 0 else v


def smallest_eigenpairs(L, k, seed=0, tol=RESIDUAL_TOL, maxiter=None):
    """``k`` smallest eigenpairs of a symmetric positive semi-definite matrix.

    Shift-invert Lanczos around a small negative shift; the start vector is
    drawn from ``seed`` so results are reproducible.  Raises when the
    residual contract ||L v - lam v|| <= tol ||v|| is not met.
    """
    N = L.shape[0]
    if not 1 <= k <= N:
        raise EigenError(f"k must be in 1..{N}, got {k}")
    if N <= max(2 * k + 1, 20):
        w, V = np.linalg.eigh(L.toarray())
        w, V = w[:k], V[:, :k]
    else:
        rng = np.random.default_rng(seed)
        v0 = rng.standard_normal(N)
        scale = abs(L.diagonal()).max()
        shift = -1e-3 * scale / N
        try:
            w, V = spla.eigsh(L, k=k, sigma=shift, which="LM", v0=v0, tol=0,
                              maxiter=maxiter)
        except spla.ArpackNoConvergence as exc:
            raise EigenError(f"eigensolver did not converge: {exc}") from exc
        order = np.argsort(w)
        w, V = w[order], V[:, order]
    modes = []
    for i in range(k):
        v = _sign_convention(V[:, i] / np.linalg.norm(V[:, i]))
        res = np.linalg.norm(L @ v - w[i] * v)
        if res > tol * max(1.0, abs(w[i])):
            raise EigenError(f"mode {i} residual {res:.3e} exceeds tolerance")
        modes.append(EigenMode(float(w[i]), v, i))
    return modes


def dirichlet_square_eigenvalue(m, n, h):
    """Closed-form eigenvalue of the 5-point Dirichlet Laplacian on the unit square."""
    return (2.0 / h ** 2) * (2.0 - math.cos(m * math.pi * h) - math.cos(n * math.pi * h))


# -- numeric DaFF bank ------------------------------------------------------------


@dataclass
class NumericDaFFBank:
    """Eigenmodes interpolated with bicubic splines; usable up to order-2 jets."""

    grid: GridSpec
    eigenvalues: np.ndarray
    fields: np.ndarray          # (k, ny, nx) full-lattice values, zero outside mask
    scale: np.ndarray
    kind: str = field(default="daff_numeric", init=False)

    def __post_init__(self):
        xs, ys = self.grid.node_coords()
        self._splines = [RectBivariateSpline(xs, ys, f.T, kx=3, ky=3, s=0) for f in self.fields]

    @property
    def dim(self):
        return len(self.eigenvalues)

    def feature_keys(self):
        return [{"feature": i, "mode": i, "eigenvalue": float(lam)}
                for i, lam in enumerate(self.eigenvalues)]

    def _check_inside(self, x, y):
        xs, ys = self.grid.node_coords()
        h = self.grid.h
        tol = 1e-9 * h
        if (np.any(x < xs[0] - tol) or np.any(x > xs[-1] + tol)
                or np.any(y < ys[0] - tol) or np.any(y > ys[-1] + tol)):
            raise EigenError("query outside the gridded domain")
        i = np.clip(np.floor((x - xs[0]) / h + 1e-9).astype(int), 0, len(xs) - 2)
        j = np.clip(np.floor((y - ys[0]) / h + 1e-9).astype(int), 0, len(ys) - 2)
        m = self.grid.mask
        near = m[j, i] | m[j, i + 1] | m[j + 1, i] | m[j + 1, i + 1]
        if not np.all(near):
            raise EigenError("query outside the mask")

    def partials(self, x, y):
        """Dict (a, b) -> array (points, modes) of spline partials up to order 2."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        self._check_inside(x, y)
        out = {}
        for a, b in ((0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)):
            cols = [s.ev(x, y, dx=a, dy=b) for s in self._splines]
            out[(a, b)] = np.stack(cols, axis=-1) * self.scale
        return out

    def encode(self, point_jets):
        xj, yj = point_jets
        if xj.order != 2:
            raise JetError("numeric eigenfeatures support order-2 jets only")
        p = self.partials(np.asarray(xj.value), np.asarray(yj.value))
        hx = xj.nilpotent()[..., None]
        hy = yj.nilpotent()[..., None]
        out = (hx.scale(p[(1, 0)]) + hy.scale(p[(0, 1)])
               + (hx * hx).scale(0.5 * p[(2, 0)]) + (hx * hy).scale(p[(1, 1)])
               + (hy * hy).scale(0.5 * p[(0, 2)])).add_value(p[(0, 0)])
        from daffpinn.encoders import Encoding

        return Encoding(values=out.value, jets=Jet(out.coeffs, 2), bank_kind=self.kind)

    def to_dict(self):
        return {
            "kind": self.kind,
            "h": self.grid.h,
            "bc_kind": self.grid.bc_kind,
            "origin": list(self.grid.origin),
            "mask": self.grid.mask.astype(int).tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "scale": self.scale.tolist(),
            "fields": self.fields.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        grid = GridSpec(np.asarray(d["mask"], dtype=bool), float(d["h"]), d["bc_kind"],
                        tuple(d.get("origin", (0.0, 0.0))))
        return cls(grid, np.asarray(d["eigenvalues"], dtype=float),
                   np.asarray(d["fields"], dtype=float), np.asarray(d["scale"], dtype=float))


def mode_to_bank(modes, grid, normalize="max"):
    """Numeric eigenfeature encoder; ``normalize='max'`` rescales each mode to max |phi| = 1."""
    if not modes:
        raise EigenError("no modes given")
    fields = np.zeros((len(modes),) + grid.mask.shape)
    for i, m in enumerate(modes):
        fields[i][grid.mask] = m.vector
    if normalize == "max":
        scale = 1.0 / np.abs(fields).reshape(len(modes), -1).max(axis=1)
    else:
        scale = np.ones(len(modes))
    return NumericDaFFBank(grid, np.array([m.eigenvalue for m in modes]), fields, scale)


# -- mode file ----------------------------------------------------------------------


def write_mode_file(path, modes, grid):
    """Header (n, h, bc_kind, origin, mask) plus eigenvalues and row-major mode values."""
    doc = {
        "format": "daffpinn-modes/1",
        "n": grid.n,
        "h": grid.h,
        "bc_kind": grid.bc_kind,
        "origin": list(grid.origin),
        "mask": grid.mask.astype(int).tolist(),
        "eigenvalues": [m.eigenvalue for m in modes],
        "modes": [m.vector.tolist() for m in modes],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def read_mode_file(path):
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != "daffpinn-modes/1":
        raise EigenError(f"{path}: not a mode file")
    grid = GridSpec(np.asarray(doc["mask"], dtype=bool), float(doc["h"]), doc["bc_kind"],
                    tuple(doc["origin"]))
    modes = [EigenMode(float(lam), np.asarray(v, dtype=float), i)
             for i, (lam, v) in enumerate(zip(doc["eigenvalues"], doc["modes"]))]
    return modes, grid
