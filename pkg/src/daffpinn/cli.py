"""Command-line harness: train, search, eigs, explain, validate, export.

Every command writes into a run directory below the output root (``--out-dir``,
else ``$DAFFPINN_OUT``, else ``./runs``) and leaves a ``manifest.json`` that
records the inputs, the produced files and their SHA-256 digests.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from daffpinn import eigen as G
from daffpinn import lrp
from daffpinn import network as N
from daffpinn import plotting
from daffpinn import problems as P
from daffpinn import trainer as TR

log = logging.getLogger("daffpinn")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4
OUT_ENV = "DAFFPINN_OUT"
MANIFEST = "manifest.json"


class NumericalFailure(RuntimeError):
    pass


# -- helpers -----------------------------------------------------------------------


def canonical(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def content_hash(obj):
    return hashlib.sha256(canonical(obj).encode()).hexdigest()


def file_hash(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def out_root(args):
    return args.out_dir or os.environ.get(OUT_ENV) or "runs"


def read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise TR.ConfigError([(str(path), f"not valid JSON: {exc}")]) from None


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, default=_json_default)
    return path


def _json_default(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"cannot serialize {type(v).__name__}")


def write_manifest(run_dir, kind, run_id, inputs, files, wall_time, extra=None):
    """Manifest with relative file paths and their digests."""
    entries = {}
    for name, path in files.items():
        rel = os.path.relpath(path, run_dir)
        entries[name] = {"path": rel, "sha256": file_hash(path)}
    doc = {"format": "daffpinn-manifest/1", "kind": kind, "run_id": run_id,
           "inputs": inputs, "input_hash": content_hash(inputs), "files": entries,
           "wall_time": wall_time}
    if extra:
        doc.update(extra)
    return write_json(os.path.join(run_dir, MANIFEST), doc)


def load_manifest(path):
    if os.path.isdir(path):
        path = os.path.join(path, MANIFEST)
    doc = read_json(path)
    if doc.get("format") != "daffpinn-manifest/1":
        raise TR.ConfigError([(path, "not a run manifest")])
    return doc, os.path.dirname(os.path.abspath(path))


def verify_manifest(path):
    """List of problems (empty when every file exists and matches its digest)."""
    doc, run_dir = load_manifest(path)
    bad = []
    for name, e in doc["files"].items():
        p = os.path.join(run_dir, e["path"])
        if not os.path.exists(p):
            bad.append(f"{name}: missing {e['path']}")
        elif file_hash(p) != e["sha256"]:
            bad.append(f"{name}: digest mismatch")
    if content_hash(doc["inputs"]) != doc["input_hash"]:
        bad.append("inputs: digest mismatch")
    return bad


def _checkpoint_of(doc, run_dir):
    entry = doc["files"].get("checkpoint")
    if entry is None:
        raise FileNotFoundError("manifest has no checkpoint entry")
    path = os.path.join(run_dir, entry["path"])
    if not os.path.exists(path):
        raise FileNotFoundError(f"checkpoint {path} is missing")
    params, bank, meta = N.load_checkpoint(path)
    cfg = TR.merge_config(doc["inputs"]["config"])
    return params, bank, TR.build_problem(cfg), cfg


# -- train -------------------------------------------------------------------------------


def run_training(cfg, run_dir, figures=True):
    """Train one config into ``run_dir``; returns (manifest path, report)."""
    cfg = TR.merge_config(cfg)
    TR.validate_config(cfg)
    os.makedirs(run_dir, exist_ok=True)
    report = TR.train(cfg)
    files = {"config": write_json(os.path.join(run_dir, "config.json"), cfg)}
    ckpt = os.path.join(run_dir, "checkpoint.json")
    N.save_checkpoint(ckpt, report.best_params, report.bank,
                      {"best_epoch": report.best_epoch, "best_val_mse": report.best_val_mse})
    files["checkpoint"] = ckpt
    final = os.path.join(run_dir, "final_checkpoint.json")
    N.save_checkpoint(final, report.final_params, report.bank, {"epoch": report.final_record().get("epoch")})
    files["final_checkpoint"] = final
    files["history"] = os.path.join(run_dir, "history.csv")
    report.write_csv(files["history"])
    files["summary"] = os.path.join(run_dir, "summary.json")
    summary = report.summary()
    summary["problem"] = cfg["problem"]
    write_json(files["summary"], summary)
    if figures and report.records:
        files["loss_figure"] = plotting.plot_loss_curves(report, os.path.join(run_dir, "loss.png"))
    run_id = os.path.basename(os.path.normpath(run_dir))
    man = write_manifest(run_dir, "train", run_id, {"config": cfg}, files, report.wall_time)
    return man, report


def run_id_for(cfg):
    return "run-" + content_hash(TR.merge_config(cfg))[:12]


def cmd_train(args):
    cfg = read_json(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    run_dir = os.path.join(out_root(args), run_id_for(cfg))
    man, report = run_training(cfg, run_dir, figures=not args.no_figures)
    print(canonical({"manifest": man, **_brief(report)}))
    if report.stop_reason == "non_finite":
        raise NumericalFailure(report.diagnostic)
    return EXIT_OK


def _brief(report):
    s = report.summary()
    return {"stop_reason": s["stop_reason"], "epochs": s["epochs"],
            "best_val_mse": s["best_val_mse"], "final_total": s["final"]["total"]}


# -- search --------------------------------------------------------------------------


def set_path(cfg, dotted, value):
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value


class SearchSpace:
    """Cartesian grid of candidate values keyed by dotted config paths."""

    def __init__(self, space, budget, seed=0):
        if not space:
            raise TR.ConfigError([("space", "no hyperparameters given")])
        self.keys = sorted(space)
        self.values = [list(space[k]) for k in self.keys]
        for k, v in zip(self.keys, self.values):
            if not v:
                raise TR.ConfigError([(f"space.{k}", "empty candidate list")])
        self.size = math.prod(len(v) for v in self.values)
        if not isinstance(budget, int) or budget < 1:
            raise TR.ConfigError([("budget", "must be a positive integer")])
        if budget > self.size:
            raise TR.ConfigError([("budget", f"{budget} exceeds the space size {self.size}")])
        self.budget = budget
        self.seed = seed

    def decode(self, index):
        out = {}
        for k, v in zip(reversed(self.keys), reversed(self.values)):
            index, r = divmod(index, len(v))
            out[k] = v[r]
        return {k: out[k] for k in self.keys}

    def sample(self):
        """Distinct grid points; trial seeds are spawned from the master seed."""
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, 0]))
        picks = rng.choice(self.size, size=self.budget, replace=False)
        seeds = np.random.SeedSequence([self.seed, 1]).spawn(self.budget)
        return [(i, int(p), self.decode(int(p)), int(s.generate_state(1)[0]))
                for i, (p, s) in enumerate(zip(picks, seeds))]


def _trial(job):
    trial_id, base, choice, seed, run_dir = job
    cfg = copy.deepcopy(base)
    for k, v in choice.items():
        set_path(cfg, k, v)
    cfg["seed"] = seed
    t0 = time.perf_counter()
    try:
        man, report = run_training(cfg, run_dir, figures=False)
        return {"trial": trial_id, "params": choice, "seed": seed, "manifest": man,
                "best_val_mse": report.best_val_mse, "final_total": report.final_record().get("total"),
                "stop_reason": report.stop_reason, "wall_time": report.wall_time}
    except (TR.ConfigError, P.ProblemError) as exc:
        return {"trial": trial_id, "params": choice, "seed": seed, "manifest": None,
                "best_val_mse": math.inf, "final_total": math.nan, "stop_reason": f"config: {exc}",
                "wall_time": time.perf_counter() - t0}


def run_search(spec, out_dir, workers=1):
    base = spec.get("base", {})
    space = SearchSpace(spec.get("space", {}), spec.get("budget", 1), spec.get("seed", 0))
    sid = "search-" + content_hash(spec)[:12]
    root = os.path.join(out_dir, sid)
    os.makedirs(root, exist_ok=True)
    jobs = [(i, base, choice, seed, os.path.join(root, f"trial-{i:03d}"))
            for i, _, choice, seed in space.sample()]
    t0 = time.perf_counter()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_trial, jobs))
    else:
        results = [_trial(j) for j in jobs]
    results.sort(key=lambda r: r["trial"])
    ranked = sorted(results, key=lambda r: (r["best_val_mse"], r["trial"]))
    table = os.path.join(root, "trials.csv")
    with open(table, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rank", "trial", *space.keys, "seed", "best_val_mse", "final_total",
                    "stop_reason", "wall_time", "best"])
        for rank, r in enumerate(ranked, 1):
            w.writerow([rank, r["trial"], *[json.dumps(r["params"][k]) for k in space.keys],
                        r["seed"], repr(float(r["best_val_mse"])), repr(float(r["final_total"])),
                        r["stop_reason"], f"{r['wall_time']:.3f}", "*" if rank == 1 else ""])
    summary = write_json(os.path.join(root, "search_summary.json"), {
        "space_size": space.size, "budget": space.budget, "master_seed": space.seed,
        "best": ranked[0], "trials": results})
    files = {"table": table, "summary": summary}
    man = write_manifest(root, "search", sid, {"search": spec}, files, time.perf_counter() - t0)
    return man, ranked


def cmd_search(args):
    spec = read_json(args.config)
    if args.seed is not None:
        spec["seed"] = args.seed
    man, ranked = run_search(spec, out_root(args), args.workers)
    print(canonical({"manifest": man, "best_trial": ranked[0]["trial"],
                     "best_val_mse": ranked[0]["best_val_mse"]}))
    return EXIT_OK


# -- eigs ------------------------------------------------------------------------------


def grid_from_config(gc, grid_n=None):
    n = grid_n or gc.get("n", 128)
    if "mask" in gc:
        mask = np.asarray(gc["mask"], dtype=bool)
        return G.GridSpec(mask, float(gc["h"]), gc.get("bc_kind", "dirichlet"),
                          tuple(gc.get("origin", (0.0, 0.0))))
    return G.GridSpec.rectangle(int(n), float(gc.get("extent", 1.0)),
                                bc_kind=gc.get("bc_kind", "dirichlet"))


def run_eigs(gc, out_dir, grid_n=None, seed=0, figures=True):
    try:
        grid = grid_from_config(gc, grid_n)
    except G.EigenError as exc:
        raise TR.ConfigError([("grid", str(exc))]) from None
    k = int(gc.get("k", 32))
    if k > grid.N:
        raise TR.ConfigError([("k", f"{k} modes requested from {grid.N} unknowns")])
    inputs = {"grid": gc, "grid_n": grid_n, "seed": seed}
    rid = "eigs-" + content_hash(inputs)[:12]
    run_dir = os.path.join(out_dir, rid)
    os.makedirs(run_dir, exist_ok=True)
    t0 = time.perf_counter()
    modes = G.smallest_eigenpairs(G.build_laplacian(grid), k, seed=seed)
    files = {"modes": os.path.join(run_dir, "modes.json")}
    G.write_mode_file(files["modes"], modes, grid)
    files["eigenvalues"] = os.path.join(run_dir, "eigenvalues.csv")
    with open(files["eigenvalues"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "eigenvalue"])
        for m in modes:
            w.writerow([m.index, repr(m.eigenvalue)])
    if figures:
        files["modes_figure"] = plotting.plot_modes(modes, grid, os.path.join(run_dir, "modes.png"))
    man = write_manifest(run_dir, "eigs", rid, inputs, files, time.perf_counter() - t0)
    return man, modes


def cmd_eigs(args):
    gc = read_json(args.config)
    man, modes = run_eigs(gc, out_root(args), args.grid_n, args.seed or 0, not args.no_figures)
    print(canonical({"manifest": man, "k": len(modes), "lambda_1": modes[0].eigenvalue}))
    return EXIT_OK


# -- explain -------------------------------------------------------------------------


def run_explain(manifest, mode, out_dir=None, eps=lrp.DEFAULT_EPS, threshold=None, grid_n=64,
                figures=True):
    doc, run_dir = load_manifest(manifest)
    params, bank, problem, _ = _checkpoint_of(doc, run_dir)
    target = os.path.join(out_dir or run_dir, f"explain-{mode}")
    t0 = time.perf_counter()
    if mode == "field":
        rep = lrp.coordinate_field(params, bank, problem.domain, grid_n, eps, threshold)
    elif mode == "features":
        rep = lrp.feature_attribution(params, bank, problem.domain, grid_n, eps)
    else:
        raise TR.ConfigError([("mode", f"unknown explain mode {mode!r}")])
    os.makedirs(target, exist_ok=True)
    files = {"points": os.path.join(target, "relevance_points.csv"),
             "summary": os.path.join(target, "relevance_summary.json")}
    rep.write_points_csv(files["points"])
    rep.write_summary(files["summary"])
    if mode == "field":
        files["grid"] = os.path.join(target, "field.txt")
        rep.write_field_grid(files["grid"])
        lim = threshold if threshold is not None else float(np.max(np.abs(rep.field))) or 1.0
        files["image"] = plotting.write_pgm(rep.field, os.path.join(target, "field.pgm"), -lim, lim)
        if figures:
            files["figure"] = plotting.plot_field(rep.field, problem.domain,
                                                  os.path.join(target, "field.png"), threshold)
    elif figures:
        path = os.path.join(target, "features.png")
        if bank.kind == "rff":
            files["figure"] = plotting.plot_rff_scatter(rep.per_feature, path)
        elif bank.kind == "daff":
            files["figure"] = plotting.plot_daff_bars(rep.per_feature, path)
    inputs = {"manifest": doc["input_hash"], "mode": mode, "eps": eps, "threshold": threshold,
              "grid_n": grid_n}
    man = write_manifest(target, "explain", f"explain-{mode}", inputs, files, time.perf_counter() - t0)
    return man, rep


def cmd_explain(args):
    eps = args.eps if args.eps is not None else lrp.DEFAULT_EPS
    man, rep = run_explain(args.manifest, args.mode, args.out_dir, eps, args.threshold,
                           args.grid_n or 64, not args.no_figures)
    print(canonical({"manifest": man, "groups": rep.groups, "max_defect": float(np.max(rep.defect))}))
    return EXIT_OK


# -- validate and export -------------------------------------------------------------


def run_validate(manifest, grid_n=64):
    doc, run_dir = load_manifest(manifest)
    params, bank, problem, _ = _checkpoint_of(doc, run_dir)

    def model(x, y):
        return N.predict(params, bank, x, y)

    rec = {"grid_n": grid_n, "val_mse": P.validation_grid_mse(model, problem, grid_n),
           "boundary_max_abs": P.boundary_max_abs(model, problem, 1000)}
    doc.setdefault("validations", [])
    if rec not in doc["validations"]:
        doc["validations"].append(rec)
    write_json(os.path.join(run_dir, MANIFEST), doc)
    return rec


def cmd_validate(args):
    rec = run_validate(args.manifest, args.grid_n or 64)
    print(canonical(rec))
    if not math.isfinite(rec["val_mse"]):
        raise NumericalFailure("validation MSE is not finite")
    return EXIT_OK


def run_export(manifest, out_dir=None, grid_n=64, figures=True):
    """Solution and error lattices as CSV, PGM and (optionally) PNG."""
    doc, run_dir = load_manifest(manifest)
    params, bank, problem, _ = _checkpoint_of(doc, run_dir)
    target = os.path.join(out_dir or run_dir, "export")
    os.makedirs(target, exist_ok=True)
    X, Y = problem.grid(grid_n)
    U = N.predict(params, bank, X.ravel(), Y.ravel()).reshape(X.shape)
    A = problem.analytic(X, Y)
    files = {"grid": os.path.join(target, "solution.csv")}
    with open(files["grid"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "u", "u_exact", "error"])
        for x, y, u, a in zip(X.ravel(), Y.ravel(), U.ravel(), A.ravel()):
            w.writerow([repr(float(x)), repr(float(y)), repr(float(u)), repr(float(a)), repr(float(u - a))])
    files["solution_image"] = plotting.write_pgm(U, os.path.join(target, "solution.pgm"))
    files["error_image"] = plotting.write_pgm(np.abs(U - A), os.path.join(target, "error.pgm"))
    if figures:
        files["solution_figure"] = plotting.plot_solution(U, problem.domain,
                                                          os.path.join(target, "solution.png"))
        files["error_figure"] = plotting.plot_solution(np.abs(U - A), problem.domain,
                                                       os.path.join(target, "error.png"), "|u - u_exact|")
        hist = doc["files"].get("history")
        if hist is not None:
            files["history"] = os.path.join(run_dir, hist["path"])
    inputs = {"manifest": doc["input_hash"], "grid_n": grid_n}
    man = write_manifest(target, "export", "export", inputs, files, 0.0)
    return man


def cmd_export(args):
    man = run_export(args.manifest, args.out_dir, args.grid_n or 64, not args.no_figures)
    print(canonical({"manifest": man}))
    return EXIT_OK


# -- entry point ---------------------------------------------------------------------


def build_parser():
    ap = argparse.ArgumentParser(prog="daffpinn", description=__doc__.splitlines()[0])
    ap.add_argument("--log-level", default="WARNING")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config=False, manifest=False):
        if config:
            p.add_argument("--config", required=True, help="JSON input file")
        if manifest:
            p.add_argument("manifest", help="run manifest (file or run directory)")
        p.add_argument("--out-dir", default=None, help=f"output root (default ${OUT_ENV} or ./runs)")
        p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
        return p

    p = common(sub.add_parser("train", help="train one configuration"), config=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)
    p = common(sub.add_parser("search", help="random search over a hyperparameter grid"), config=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_search)
    p = common(sub.add_parser("eigs", help="numerical Laplace eigenmodes"), config=True)
    p.add_argument("--grid-n", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_eigs)
    p = common(sub.add_parser("explain", help="relevance propagation on a trained run"), manifest=True)
    p.add_argument("--mode", choices=("field", "features"), required=True)
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--grid-n", type=int, default=None)
    p.set_defaults(func=cmd_explain)
    p = common(sub.add_parser("validate", help="validation MSE and boundary error"), manifest=True)
    p.add_argument("--grid-n", type=int, default=None)
    p.set_defaults(func=cmd_validate)
    p = common(sub.add_parser("export", help="solution lattices and figures"), manifest=True)
    p.add_argument("--grid-n", type=int, default=None)
    p.set_defaults(func=cmd_export)
    return ap


def _fail(code, kind, message, problems=None):
    doc = {"error": kind, "message": message}
    if problems:
        doc["problems"] = [{"key": k, "message": m} for k, m in problems]
    print(canonical(doc), file=sys.stderr)
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING))
    try:
        return args.func(args)
    except TR.ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", str(exc), exc.problems)
    except (lrp.LRPError, P.ProblemError, N.NetworkError) as exc:
        return _fail(EXIT_CONFIG, "config", str(exc))
    except (NumericalFailure, G.EigenError, FloatingPointError) as exc:
        return _fail(EXIT_NUMERIC, "numerical", str(exc))
    except OSError as exc:
        return _fail(EXIT_IO, "io", str(exc))


if __name__ == "__main__":
    sys.exit(main())
