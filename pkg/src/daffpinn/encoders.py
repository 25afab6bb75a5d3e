"""Positional encodings of (x, y): identity, random Fourier and domain-aware Fourier.

DaFF component types are numbered as follows (the numbering is fixed here so
that configurations are reproducible):

    1 = sin * sin   (vanishes on all four edges)
    2 = sin * cos   (free at y = 0 and y = b)
    3 = cos * sin   (free at x = 0 and x = a)
    4 = cos * cos

Negative harmonic indices flip the sign of the frequency, so sin(-m pi x / a)
is the phase-inverted copy of the m-th harmonic; eigenvalues depend on m**2
only.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from daffpinn.jets import Jet, jet_seed
from daffpinn import jets as J
from daffpinn import tape as T

COMP_FACTORS = {1: ("sin", "sin"), 2: ("sin", "cos"), 3: ("cos", "sin"), 4: ("cos", "cos")}
EDGES = ("x0", "xa", "y0", "yb")


class EncoderError(ValueError):
    pass


@dataclass
class Encoding:
    """Encoded features: ``values`` is ``jets.value`` (shape points x features)."""

    values: np.ndarray
    jets: Jet | None
    bank_kind: str

    @property
    def dim(self):
        return self.values.shape[-1]


def _stack_features(jets_list, order):
    coeffs = np.concatenate([j.coeffs for j in jets_list], axis=-1)
    return Jet(coeffs, order)


def _encoding(jet, kind):
    return Encoding(values=jet.value, jets=jet, bank_kind=kind)


# -- identity -------------------------------------------------------------------


@dataclass(frozen=True)
class IdentityBank:
    kind: str = field(default="identity", init=False)

    @property
    def dim(self):
        return 2

    def encode(self, point_jets):
        return identity_encode(point_jets)

    def feature_keys(self):
        return [{"feature": 0, "coordinate": "x"}, {"feature": 1, "coordinate": "y"}]

    def to_dict(self):
        return {"kind": "identity"}


def identity_encode(point_jets):
    x, y = point_jets
    return _encoding(_stack_features([x[..., None], y[..., None]], x.order), "identity")


# -- random Fourier features ----------------------------------------------------


@dataclass(frozen=True)
class RFFBank:
    """Gaussian frequency rows; block j has variance ``sigma2[j]``."""

    rows: np.ndarray
    sigma2: tuple
    features_per_block: int
    seed: int
    kind: str = field(default="rff", init=False)

    @property
    def n_features(self):
        return self.rows.shape[0]

    @property
    def dim(self):
        return 2 * self.n_features

    def block_of(self, j):
        return j // self.features_per_block

    def encode(self, point_jets):
        return rff_encode(self, point_jets)

    def feature_keys(self):
        keys = []
        for kind in ("cos", "sin"):
            for j, (bx, by) in enumerate(self.rows):
                keys.append({"component": kind, "row": j, "block": self.block_of(j),
                             "sigma2": self.sigma2[self.block_of(j)], "b_x": bx, "b_y": by})
        return keys

    def to_dict(self):
        return {
            "kind": "rff",
            "sigma2": list(self.sigma2),
            "features_per_block": self.features_per_block,
            "seed": self.seed,
            "rows": self.rows.tolist(),
        }


def rff_sample(sigma_schedule, features_per_block, input_dim=2, seed=0):
    sigma_schedule = tuple(float(s) for s in sigma_schedule)
    if not sigma_schedule:
        raise EncoderError("empty variance schedule")
    if any(not (s > 0) for s in sigma_schedule):
        raise EncoderError(f"variances must be positive, got {sigma_schedule}")
    if features_per_block < 1:
        raise EncoderError("features_per_block must be >= 1")
    rng = np.random.default_rng(seed)
    blocks = [rng.normal(0.0, math.sqrt(s2), size=(features_per_block, input_dim))
              for s2 in sigma_schedule]
    return RFFBank(np.vstack(blocks), sigma_schedule, int(features_per_block), int(seed))


def rff_arguments(bank, point_jets):
    x, y = point_jets
    bx, by = bank.rows[:, 0], bank.rows[:, 1]
    return x[..., None].scale(bx) + y[..., None].scale(by)


def rff_encode(bank, point_jets):
    arg = rff_arguments(bank, point_jets)
    return _encoding(_stack_features([J.cos(arg), J.sin(arg)], arg.order), "rff")


# -- domain-aware Fourier features -----------------------------------------------


@dataclass(frozen=True)
class DaFFBank:
    """Analytic Laplace eigenfunctions of the rectangle [0,a] x [0,b].

    ``origin`` is the lower-left corner of the physical domain; points are
    shifted onto the reference rectangle before evaluation.
    """

    entries: tuple
    a: float
    b: float
    origin: tuple = (0.0, 0.0)
    kind: str = field(default="daff", init=False)

    @property
    def dim(self):
        return len(self.entries)

    @property
    def eigenvalues(self):
        return np.array([math.pi ** 2 * ((m / self.a) ** 2 + (n / self.b) ** 2)
                         for _, m, n in self.entries])

    def encode(self, point_jets):
        return daff_encode(self, point_jets)

    def feature_keys(self):
        return [{"feature": i, "comp": c, "m": m, "n": n}
                for i, (c, m, n) in enumerate(self.entries)]

    def to_dict(self):
        return {
            "kind": "daff",
            "entries": [list(e) for e in self.entries],
            "a": self.a,
            "b": self.b,
            "origin": list(self.origin),
        }


def daff_build(comp_types, mn_values, extents, origin=(0.0, 0.0)):
    """One entry per comp type and ordered (m, n) pair drawn from ``mn_values``."""
    comp_types = list(comp_types)
    mn_values = list(mn_values)
    if not comp_types or not mn_values:
        raise EncoderError("comp_types and mn_values must be non-empty")
    bad = [c for c in comp_types if c not in COMP_FACTORS]
    if bad:
        raise EncoderError(f"unknown DaFF component types {bad}; expected 1..4")
    a, b = (float(e) for e in extents)
    if not (a > 0 and b > 0):
        raise EncoderError(f"extents must be positive, got {(a, b)}")
    entries = tuple((int(c), int(m), int(n))
                    for c in comp_types for m, n in itertools.product(mn_values, repeat=2))
    return DaFFBank(entries, a, b, tuple(float(o) for o in origin))


def daff_encode(bank, point_jets):
    x, y = point_jets
    xr = x - bank.origin[0] if bank.origin[0] else x
    yr = y - bank.origin[1] if bank.origin[1] else y
    comps = np.array([e[0] for e in bank.entries])
    m = np.array([e[1] for e in bank.entries], dtype=float)
    n = np.array([e[2] for e in bank.entries], dtype=float)
    ax = xr[..., None].scale(m * (math.pi / bank.a))
    ay = yr[..., None].scale(n * (math.pi / bank.b))
    # phases in half-turns keep sin(k pi) exactly zero on the edges
    tx = np.asarray(T.value_of(xr.value))[..., None] * m / bank.a
    ty = np.asarray(T.value_of(yr.value))[..., None] * n / bank.b
    sx, cx = J.sincos_turns(ax, tx)
    sy, cy = J.sincos_turns(ay, ty)
    use_sin_x = np.isin(comps, (1, 2))
    use_sin_y = np.isin(comps, (1, 3))
    fx = Jet(np.where(use_sin_x, sx.coeffs, cx.coeffs), x.order)
    fy = Jet(np.where(use_sin_y, sy.coeffs, cy.coeffs), x.order)
    return _encoding(fx * fy, "daff")


def edge_points(bank, edge, count=1000, seed=0):
    """Uniform random points on one edge of the reference rectangle (physical coords)."""
    rng = np.random.default_rng(seed)
    s = rng.random(count)
    x0, y0 = bank.origin
    if edge == "x0":
        pts = (np.zeros(count), s * bank.b)
    elif edge == "xa":
        pts = (np.full(count, bank.a), s * bank.b)
    elif edge == "y0":
        pts = (s * bank.a, np.zeros(count))
    elif edge == "yb":
        pts = (s * bank.a, np.full(count, bank.b))
    else:
        raise EncoderError(f"unknown edge {edge!r}; expected one of {EDGES}")
    return pts[0] + x0, pts[1] + y0


def daff_derivative_check(bank, k, edge, count=200, seed=0):
    """Max |d^k phi / dn^k| over sampled points of ``edge`` (n = edge normal)."""
    if not 0 <= k <= 4:
        raise EncoderError("derivative order must be in 0..4")
    x, y = edge_points(bank, edge, count, seed)
    enc = daff_encode(bank, jet_seed(x, y, 4))
    normal_x = edge in ("x0", "xa")
    d = enc.jets.partial(k, 0) if normal_x else enc.jets.partial(0, k)
    return float(np.max(np.abs(d)))


# -- serialization ----------------------------------------------------------------


def bank_from_dict(d):
    kind = d.get("kind")
    if kind == "identity":
        return IdentityBank()
    if kind == "rff":
        bank = rff_sample(d["sigma2"], d["features_per_block"], 2, d["seed"])
        if "rows" in d and not np.array_equal(bank.rows, np.asarray(d["rows"], dtype=float)):
            raise EncoderError("stored RFF rows do not match the regenerated bank")
        return bank
    if kind == "daff":
        return DaFFBank(tuple(tuple(int(v) for v in e) for e in d["entries"]),
                        float(d["a"]), float(d["b"]), tuple(d.get("origin", (0.0, 0.0))))
    if kind == "daff_numeric":
        from daffpinn.eigen import NumericDaFFBank

        return NumericDaFFBank.from_dict(d)
    raise EncoderError(f"unknown encoder kind {kind!r}")


def encode_values(bank, x, y):
    """Value-only encoding, identical to ``bank.encode(...).values``."""
    return bank.encode(jet_seed(x, y, 2)).values
