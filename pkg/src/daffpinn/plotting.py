"""Figures for training reports, relevance products and eigenmodes.

Everything renders off-screen (Agg) to PNG files.  Coordinate fields can
also be written as 8-bit binary PGM images, which need no plotting stack.
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

GOLDEN = (math.sqrt(5) - 1.0) / 2.0


def _figure(width=6.4, height=None, ncols=1, nrows=1):
    height = height or width * GOLDEN
    fig, axes = plt.subplots(nrows, ncols, figsize=(width, height), squeeze=False)
    for ax in axes.ravel():
        ax.spines["right"].set_visible(False)
        ax.spines["top"].set_visible(False)
    return fig, axes


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_loss_curves(report, path):
    """Loss terms and validation MSE over epochs; balancer weights below if any."""
    recs = report.records
    epochs = np.array([r["epoch"] for r in recs])
    has_w = bool(report.weight_names)
    fig, axes = _figure(7.0, 6.0 if has_w else None, nrows=2 if has_w else 1)
    ax = axes[0, 0]
    for name in report.term_names:
        ax.semilogy(epochs, [max(r[name], 1e-300) for r in recs], lw=1, label=name)
    val = np.array([r["val_mse"] for r in recs], dtype=float)
    ok = np.isfinite(val)
    ax.semilogy(epochs[ok], val[ok], "k.-", ms=4, lw=0.8, label="validation MSE")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend(frameon=False, fontsize=8)
    if has_w:
        ax = axes[1, 0]
        for name in report.weight_names:
            ax.plot(epochs, [r[name] for r in recs], lw=1, label=name)
        ax.set_xlabel("epoch")
        ax.set_ylabel("weight")
        ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)


def plot_field(field, domain, path, threshold=None, title="R_x - R_y"):
    """Diverging colour map of a signed lattice field (rows = y)."""
    fig, axes = _figure(5.0, 4.2)
    ax = axes[0, 0]
    lim = threshold if threshold is not None else float(np.max(np.abs(field))) or 1.0
    x0, x1, y0, y1 = domain
    im = ax.imshow(field, origin="lower", extent=(x0, x1, y0, y1), cmap="RdBu_r",
                   vmin=-lim, vmax=lim, aspect="equal")
    fig.colorbar(im, ax=ax)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_title(title)
    return _save(fig, path)


def plot_solution(values, domain, path, title="u"):
    fig, axes = _figure(5.0, 4.2)
    ax = axes[0, 0]
    x0, x1, y0, y1 = domain
    im = ax.imshow(values, origin="lower", extent=(x0, x1, y0, y1), cmap="viridis", aspect="equal")
    fig.colorbar(im, ax=ax)
    ax.set_title(title)
    return _save(fig, path)


def plot_rff_scatter(per_feature, path):
    """Mean |R| of each RFF against its b components, cos and sin marked separately."""
    fig, axes = _figure(9.0, 3.6, ncols=2)
    for c, coord in enumerate(("x", "y")):
        ax = axes[0, c]
        for comp, marker in (("cos", "o"), ("sin", "^")):
            sel = [f for f in per_feature if f["component"] == comp]
            b = [f[f"b_{coord}"] for f in sel]
            r = [f.get(f"mean_abs_R_{coord}", f["mean_abs_R"]) for f in sel]
            ax.scatter(b, r, s=14, marker=marker, label=comp, alpha=0.8)
        ax.set_xlabel(f"b ({coord} component)")
        ax.set_ylabel("mean |R|")
        ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)


def plot_daff_bars(per_feature, path):
    """Mean |R| per DaFF entry, grouped by component type."""
    labels = [f"{f['comp']}:({f['m']},{f['n']})" for f in per_feature]
    vals = [f["mean_abs_R"] for f in per_feature]
    comps = [f["comp"] for f in per_feature]
    fig, axes = _figure(max(5.0, 0.35 * len(vals)), 3.6)
    ax = axes[0, 0]
    colors = [plt.cm.tab10(c - 1) for c in comps]
    ax.bar(range(len(vals)), vals, color=colors)
    ax.set_xticks(range(len(vals)))
    ax.set_xticklabels(labels, rotation=90, fontsize=7)
    ax.set_ylabel("mean |R|")
    return _save(fig, path)


def plot_modes(modes, grid, path, count=6):
    """The first few eigenmodes on their lattice."""
    count = min(count, len(modes))
    ncols = min(3, count)
    nrows = int(math.ceil(count / ncols))
    fig, axes = _figure(3.0 * ncols, 2.8 * nrows, ncols=ncols, nrows=nrows)
    for ax in axes.ravel()[count:]:
        ax.axis("off")
    for ax, m in zip(axes.ravel(), modes[:count]):
        f = np.zeros(grid.mask.shape)
        f[grid.mask] = m.vector
        ax.imshow(f, origin="lower", cmap="RdBu_r")
        ax.set_title(f"lambda = {m.eigenvalue:.4g}", fontsize=8)
        ax.set_xticks([])
        ax.set_yticks([])
    return _save(fig, path)


def write_pgm(field, path, lo=None, hi=None):
    """Binary 8-bit PGM; rows are written top (largest y) first."""
    f = np.asarray(field, dtype=float)
    lo = float(np.min(f)) if lo is None else lo
    hi = float(np.max(f)) if hi is None else hi
    span = hi - lo if hi > lo else 1.0
    img = np.clip(np.rint((f - lo) / span * 255.0), 0, 255).astype(np.uint8)[::-1]
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(img.tobytes())
    return path


def read_pgm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)
