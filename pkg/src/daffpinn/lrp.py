"""Layer-wise relevance propagation (epsilon rule) over recorded activation traces.

Relevance at the output is seeded with the signed model output.  Through a
dense layer ``f_j = sum_i g_i w_ji / sqrt(d) + b_j`` it is redistributed as

    R_i = sum_j z_ij / (eps + sum_i z_ij + b_j) * R_j,    z_ij = g_i w_ji / sqrt(d)

and the bias share ``b_j / (eps + ...) * R_j`` is kept aside as bias
relevance.  Activations are passed through unchanged.  At a skip merge
``f = main + g_s`` the relevance is split by the absolute ratio of the two
branches before either is propagated further.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import dataclasses
from dataclasses import dataclass

import numpy as np

from daffpinn import network as N
from daffpinn.encoders import encode_values

log = logging.getLogger(__name__)

DEFAULT_EPS = 1e-9


class LRPError(ValueError):
    pass


@dataclass
class RelevanceVector:
    values: np.ndarray          # (points, d_layer)
    layer: int
    eps: float
    bias: np.ndarray            # (points,) relevance absorbed by biases
    absorbed_merges: int = 0    # merge entries where both branches were zero

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise LRPError("non-finite relevance")


def split_skip(R_merge, act_skip, act_main, eps=DEFAULT_EPS):
    """Ratio split of merge relevance into (skip branch, main branch)."""
    R_merge, act_skip, act_main = (np.asarray(a, dtype=float) for a in (R_merge, act_skip, act_main))
    if not (R_merge.shape == act_skip.shape == act_main.shape):
        raise LRPError(f"shape mismatch {R_merge.shape}, {act_skip.shape}, {act_main.shape}")
    s, m = np.abs(act_skip), np.abs(act_main)
    den = s + m + eps
    return R_merge * s / den, R_merge * m / den


def _dense_backward(R, g, w, bias, eps):
    """Epsilon-rule redistribution through one dense layer."""
    scale = 1.0 / math.sqrt(g.shape[-1])
    z = g[:, None, :] * (w[None, :, :] * scale)          # (P, out, in)
    den = z.sum(axis=-1) + eps
    if bias is not None:
        den = den + bias
    ratio = R / den                                       # (P, out)
    R_in = np.einsum("po,poi->pi", ratio, z)
    b_rel = (ratio * bias).sum(axis=-1) if bias is not None else np.zeros(len(R))
    return R_in, b_rel


def lrp_backward(trace, params, eps=DEFAULT_EPS):
    """Input-layer relevances for every point of ``trace``."""
    if not eps > 0:
        raise LRPError("eps must be positive")
    L = params.layers
    if len(trace.layers) != L + 1:
        raise LRPError(f"trace has {len(trace.layers)} layers, parameters describe {L + 1}")
    for h, rec in enumerate(trace.layers):
        w = np.asarray(params.weights[h])
        if rec.act.shape[-1] != w.shape[0] or trace.activation(h).shape[-1] != w.shape[1]:
            raise LRPError(f"layer {h + 1} of the trace does not match the parameters")
    out = trace.output
    pts = out.shape[0] if out.ndim else 1
    acts = [np.atleast_2d(trace.activation(h)) for h in range(L + 2)]
    R = {h: np.zeros_like(acts[h]) for h in range(L + 1)}
    bias = np.zeros(pts)
    absorbed = 0
    # output layer: the relevance of the single output neuron is the output itself
    R_top = np.atleast_1d(out)[:, None]
    top = L + 1
    for h in range(top, 0, -1):
        rec = trace.layers[h - 1]
        R_here = R_top if h == top else R[h]
        if rec.skip_source is not None:
            skip = np.atleast_2d(rec.skip)
            main = np.atleast_2d(rec.main)
            R_s, R_here = split_skip(R_here, skip, main, eps)
            absorbed += int(np.sum((skip == 0) & (main == 0) & (R_here == 0) & (R_s == 0)))
            R[rec.skip_source] = R[rec.skip_source] + R_s
        b = None if rec.bias is None else np.asarray(rec.bias)
        R_in, b_rel = _dense_backward(R_here, acts[h - 1], np.asarray(params.weights[h - 1]), b, eps)
        R[h - 1] = R[h - 1] + R_in
        bias += b_rel
    return RelevanceVector(R[0], 0, eps, bias, absorbed)


def conservation_audit(input_relevances, output_value, eps=DEFAULT_EPS):
    """Relative defect |sum R - output| / max(|output|, 1e-30), per point."""
    R = np.asarray(input_relevances, dtype=float)
    total = R.sum(axis=-1)
    out = np.asarray(output_value, dtype=float)
    return np.abs(total - out) / np.maximum(np.abs(out), 1e-30)


def explain_points(params, bank, x, y, eps=DEFAULT_EPS):
    """Forward-record then propagate; returns (output, RelevanceVector)."""
    out, trace = N.forward_record(params, encode_values(bank, np.ravel(x), np.ravel(y)))
    return out, lrp_backward(trace, params, eps)


def audit_points(params, bank, x, y, eps=DEFAULT_EPS):
    """Per-point conservation defect, measured against output minus bias absorption."""
    out, rel = explain_points(params, bank, x, y, eps)
    return conservation_audit(rel.values, out - rel.bias, eps)


# -- reports ---------------------------------------------------------------------------


@dataclass
class RelevanceReport:
    kind: str
    eps: float
    points: np.ndarray                  # (P, 2)
    output: np.ndarray                  # (P,)
    relevance: np.ndarray               # (P, d_in)
    bias: np.ndarray                    # (P,)
    defect: np.ndarray                  # (P,)
    feature_keys: list
    field: np.ndarray | None = None     # (grid_n, grid_n) coordinate field
    threshold: float | None = None
    grid_n: int = 0
    groups: dict = dataclasses.field(default_factory=dict)
    per_feature: list = dataclasses.field(default_factory=list)

    def summary(self):
        return {
            "kind": self.kind,
            "eps": self.eps,
            "threshold": self.threshold,
            "grid_n": self.grid_n,
            "points": int(len(self.output)),
            "max_defect": float(np.max(self.defect)) if len(self.defect) else 0.0,
            "mean_bias_relevance": float(np.mean(self.bias)) if len(self.bias) else 0.0,
            "groups": self.groups,
            "features": self.per_feature,
        }

    def write_points_csv(self, path):
        names = [_feature_name(k) for k in self.feature_keys]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            head = ["x", "y", "output"] + [f"R_{n}" for n in names] + ["bias_relevance", "defect"]
            if self.field is not None:
                head.append("field")
            w.writerow(head)
            flat = self.field.ravel() if self.field is not None else None
            for i in range(len(self.output)):
                row = [repr(float(self.points[i, 0])), repr(float(self.points[i, 1])),
                       repr(float(self.output[i]))]
                row += [repr(float(v)) for v in self.relevance[i]]
                row += [repr(float(self.bias[i])), repr(float(self.defect[i]))]
                if flat is not None:
                    row.append(repr(float(flat[i])))
                w.writerow(row)

    def write_summary(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2)

    def write_field_grid(self, path):
        """Plain whitespace grid: one row per y value, x increasing left to right."""
        if self.field is None:
            raise LRPError("report has no coordinate field")
        np.savetxt(path, self.field, fmt="%.17g")


def _feature_name(key):
    if "component" in key:
        return f"{key['component']}{key['row']}"
    if "comp" in key:
        return f"c{key['comp']}_m{key['m']}_n{key['n']}"
    if "coordinate" in key:
        return key["coordinate"]
    return f"f{key.get('feature', key.get('mode'))}"


def _lattice(domain, grid_n):
    if grid_n < 2:
        raise LRPError("grid_n must be >= 2")
    x0, x1, y0, y1 = domain
    X, Y = np.meshgrid(np.linspace(x0, x1, grid_n), np.linspace(y0, y1, grid_n), indexing="xy")
    return X, Y


def _report(params, bank, domain, grid_n, eps, kind):
    X, Y = _lattice(domain, grid_n)
    out, rel = explain_points(params, bank, X.ravel(), Y.ravel(), eps)
    defect = conservation_audit(rel.values, out - rel.bias, eps)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    return RelevanceReport(kind, eps, pts, out, rel.values, rel.bias, defect,
                           bank.feature_keys(), grid_n=grid_n), X.shape


def coordinate_field(params, bank, domain, grid_n=64, eps=DEFAULT_EPS, threshold=None):
    """Signed field R_x - R_y on a lattice (positive where x dominates)."""
    if bank.kind != "identity":
        raise LRPError(f"coordinate fields need an identity-encoded model, got {bank.kind!r}")
    rep, shape = _report(params, bank, domain, grid_n, eps, "field")
    raw = (rep.relevance[:, 0] - rep.relevance[:, 1]).reshape(shape)
    if threshold is not None:
        if not threshold > 0:
            raise LRPError("threshold must be positive")
        raw = np.clip(raw, -threshold, threshold)
    rep.field = raw
    rep.threshold = threshold
    absR = np.abs(rep.relevance)
    rep.groups = {"x": float(absR[:, 0].mean()), "y": float(absR[:, 1].mean())}
    rep.per_feature = [{"coordinate": "x", "mean_abs_R": rep.groups["x"]},
                       {"coordinate": "y", "mean_abs_R": rep.groups["y"]}]
    return rep


def rff_coordinate_split(relevance, rows, points, eps=DEFAULT_EPS):
    """Share each RFF relevance between x and y by |b_k x_k| in the phase b.x.

    Returns an array (P, features, 2).
    """
    n = rows.shape[0]
    contrib = np.abs(points[:, None, :] * rows[None, :, :])          # (P, rows, 2)
    share = contrib / (contrib.sum(axis=-1, keepdims=True) + eps)
    share = np.concatenate([share, share], axis=1)                    # cos block then sin block
    assert share.shape[1] == 2 * n
    return relevance[:, :, None] * share


def feature_attribution(params, bank, domain, grid_n=64, eps=DEFAULT_EPS):
    """Mean |R| per encoded feature plus group means over the lattice."""
    if bank.kind == "identity":
        raise LRPError("feature attribution needs an RFF or DaFF encoded model")
    rep, _ = _report(params, bank, domain, grid_n, eps, "features")
    absR = np.abs(rep.relevance)
    mean_abs = absR.mean(axis=0)
    keys = bank.feature_keys()
    per = []
    for k, v in zip(keys, mean_abs):
        d = {kk: (float(vv) if isinstance(vv, (float, np.floating)) else vv) for kk, vv in k.items()}
        d["mean_abs_R"] = float(v)
        per.append(d)
    groups = {}
    if bank.kind == "rff":
        split = np.abs(rff_coordinate_split(rep.relevance, bank.rows, rep.points, eps))
        mean_split = split.mean(axis=0)                               # (features, 2)
        n = bank.n_features
        for comp, sl in (("cos", slice(0, n)), ("sin", slice(n, 2 * n))):
            groups[comp] = float(mean_abs[sl].mean())
            for c, coord in enumerate(("x", "y")):
                groups[f"{comp}_{coord}"] = float(mean_split[sl, c].mean())
        for d, (mx, my) in zip(per, mean_split):
            d["mean_abs_R_x"], d["mean_abs_R_y"] = float(mx), float(my)
    elif bank.kind == "daff":
        for key in ("comp", "m", "n"):
            for val in sorted({k[key] for k in keys}):
                sel = [i for i, k in enumerate(keys) if k[key] == val]
                groups[f"{key}={val}"] = float(mean_abs[sel].mean())
        for mn in sorted({(k["m"], k["n"]) for k in keys}):
            sel = [i for i, k in enumerate(keys) if (k["m"], k["n"]) == mn]
            groups[f"mn={mn[0]},{mn[1]}"] = float(mean_abs[sel].sum())
    else:
        groups["all"] = float(mean_abs.mean())
    rep.groups = groups
    rep.per_feature = per
    return rep
