"""Composite PINN loss, optimization schedule and per-epoch reporting."""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from daffpinn import encoders as E
from daffpinn import network as N
from daffpinn import problems as P
from daffpinn import tape as T
from daffpinn.balancing import BalancerState, relobralo_step
from daffpinn.jets import jet_seed
from daffpinn.optim import AdamState, NonFiniteError, adam_step, lbfgs_step, LBFGSState

log = logging.getLogger(__name__)

IMPROVE_RTOL = 1e-12
SINGLE_TERM_KINDS = ("daff", "daff_numeric")

DEFAULT_CONFIG = {
    "problem": {"name": "helmholtz"},
    "encoder": {"kind": "identity"},
    "network": {"layers": 3, "units": 64, "use_bias": None, "skip_plan": "default"},
    "optimizer": {
        "lr": 1e-3,
        "epochs": 50000,
        "patience": 2000,
        "decay": 0.1,
        "stop_patience": 4001,
        "lbfgs_steps": 0,
        "lbfgs_memory": 20,
        "resample_every": 1,
        "lbfgs_resample_every": 0,
    },
    "balancer": {"enabled": True, "alpha": 0.999, "tau": 1.0, "rho": 0.999},
    "batch": 512,
    "seed": 0,
    "validation": {"grid_n": 64, "every": 100},
}


class ConfigError(ValueError):
    """Invalid run configuration; ``problems`` lists (key, message) pairs."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(f"{k}: {m}" for k, m in self.problems))


# -- loss assembly ----------------------------------------------------------------


@dataclass
class LossBreakdown:
    terms: dict
    weights: dict
    total: float

    @property
    def names(self):
        return list(self.terms)

    @property
    def unweighted(self):
        return float(sum(self.terms.values()))


def single_term(bank):
    return bank.kind in SINGLE_TERM_KINDS


def term_names(problem, bank):
    if single_term(bank):
        return ["L_r"]
    if isinstance(problem, P.KirchhoffSpec):
        return ["L_r", "L_b1", "L_b2"]
    return ["L_r"] + [f"L_b{e}" for e in sorted(problem.edges)]


class LossProgram:
    """Loss of one collocation batch; the input encodings are computed once."""

    def __init__(self, problem, bank, batch):
        if batch.n_interior == 0:
            raise P.ProblemError("batch has no interior points for the residual term")
        self.problem = problem
        self.bank = bank
        self.names = term_names(problem, bank)
        xi, yi = batch.interior[:, 0], batch.interior[:, 1]
        self.interior = (xi, yi)
        self.enc_r = bank.encode(jet_seed(xi, yi, problem.jet_order))
        self.forcing_points = (xi, yi)
        self.edges = {}
        if len(self.names) > 1:
            for e, pts in batch.boundary.items():
                if len(pts) == 0:
                    raise P.ProblemError(f"edge {e} has no points for an active boundary term")
                x, y = pts[:, 0], pts[:, 1]
                self.edges[e] = ((x, y), bank.encode(jet_seed(x, y, problem.boundary_order)))

    def terms(self, params):
        """Recorded (or plain) mean-square terms, keyed by name."""
        u = N.forward(params, self.enc_r)
        out = {"L_r": P.mean_square(self.problem.residual(u, *self.interior))}
        if self.edges:
            u_edge = {e: N.forward(params, enc) for e, (_, enc) in self.edges.items()}
            pts = {e: p for e, (p, _) in self.edges.items()}
            out.update(self.problem.boundary_terms(u_edge, pts))
        return {k: out[k] for k in self.names}

    def evaluate(self, params, weights=None, grad=True):
        """LossBreakdown and (optionally) gradients keyed like ``params.named()``."""
        weights = weights or {k: 1.0 for k in self.names}
        if not grad:
            terms = {k: float(v) for k, v in self.terms(params).items()}
            total = _weighted_total(terms, weights)
            return LossBreakdown(terms, dict(weights), float(total)), None
        tape = T.ParamTape()
        rec = params.record(tape)
        terms = self.terms(rec)
        total = None
        for k in self.names:
            t = terms[k] * float(weights[k])
            total = t if total is None else total + t
        tape.set_root(T.reshape(total, ()))
        grads = T.grad_params(tape)
        vals = {k: float(T.value_of(v)) for k, v in terms.items()}
        return LossBreakdown(vals, dict(weights), float(T.value_of(total))), grads


def _weighted_total(terms, weights):
    total = None
    for k, v in terms.items():
        t = v * float(weights[k])
        total = t if total is None else total + t
    return total


def assemble_loss(problem, model, batch, weights=None):
    """LossBreakdown of ``model = (params, bank)`` on a collocation batch."""
    params, bank = model
    bd, _ = LossProgram(problem, bank, batch).evaluate(params, weights, grad=False)
    return bd


def initial_condition_loss(u_jet, target):
    """Mean square of u(x, t0) - u0(x) at initial-time points."""
    return P.mean_square(u_jet.value - target)


# -- configuration ------------------------------------------------------------------


def merge_config(cfg):
    """Defaults overlaid with ``cfg`` (one level of nesting)."""
    out = copy.deepcopy(DEFAULT_CONFIG)
    for k, v in (cfg or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = {**out[k], **v}
        else:
            out[k] = v
    return out


def validate_config(cfg):
    """Raise ConfigError listing every offending key."""
    bad = []
    known = set(DEFAULT_CONFIG) | {"name"}
    for k in cfg:
        if k not in known:
            bad.append((k, "unknown key"))
    prob = cfg.get("problem", {})
    if prob.get("name") not in ("kirchhoff", "helmholtz"):
        bad.append(("problem.name", f"expected 'kirchhoff' or 'helmholtz', got {prob.get('name')!r}"))
    enc = cfg.get("encoder", {})
    kind = enc.get("kind")
    if kind not in ("identity", "rff", "daff", "daff_numeric"):
        bad.append(("encoder.kind", f"unknown encoder {kind!r}"))
    if kind == "rff":
        s2 = enc.get("sigma2")
        if not s2 or any(not isinstance(v, (int, float)) or v <= 0 for v in s2):
            bad.append(("encoder.sigma2", "needs a non-empty list of positive variances"))
    if kind == "daff":
        if not enc.get("comp"):
            bad.append(("encoder.comp", "needs a non-empty list of component types"))
        elif any(c not in (1, 2, 3, 4) for c in enc["comp"]):
            bad.append(("encoder.comp", "component types must be in 1..4"))
        if not enc.get("mn"):
            bad.append(("encoder.mn", "needs a non-empty list of harmonic indices"))
    if kind == "daff_numeric" and not enc.get("mode_file"):
        bad.append(("encoder.mode_file", "path to a mode file is required"))
    net = cfg.get("network", {})
    for key in ("layers", "units"):
        v = net.get(key)
        if not isinstance(v, int) or v < 1:
            bad.append((f"network.{key}", f"must be a positive integer, got {v!r}"))
    opt = cfg.get("optimizer", {})
    for key in ("lr", "decay"):
        v = opt.get(key)
        if not isinstance(v, (int, float)) or not v > 0:
            bad.append((f"optimizer.{key}", f"must be positive, got {v!r}"))
    for key in ("epochs", "patience", "stop_patience", "lbfgs_steps", "lbfgs_memory",
                "resample_every", "lbfgs_resample_every"):
        v = opt.get(key)
        if not isinstance(v, int) or v < 0:
            bad.append((f"optimizer.{key}", f"must be a non-negative integer, got {v!r}"))
    b = cfg.get("batch")
    if not isinstance(b, int) or b <= 0 or b % 16:
        bad.append(("batch", f"must be a positive multiple of 16, got {b!r}"))
    if not isinstance(cfg.get("seed"), int):
        bad.append(("seed", "must be an integer"))
    val = cfg.get("validation", {})
    if not isinstance(val.get("grid_n"), int) or val["grid_n"] < 2:
        bad.append(("validation.grid_n", "must be an integer >= 2"))
    if not isinstance(val.get("every"), int) or val["every"] < 1:
        bad.append(("validation.every", "must be a positive integer"))
    if bad:
        raise ConfigError(bad)


def build_problem(cfg):
    try:
        return P.make_problem(cfg["problem"])
    except TypeError as exc:
        raise ConfigError([("problem", str(exc))]) from None
    except P.ProblemError as exc:
        raise ConfigError([("problem", str(exc))]) from None


def seed_streams(master):
    """Named child seeds derived from one master seed."""
    ss = np.random.SeedSequence(master)
    kids = ss.spawn(4)
    names = ("encoder", "network", "collocation", "balancer")
    return {n: int(k.generate_state(1)[0]) for n, k in zip(names, kids)}


def batch_seed(base, step):
    """Collocation seed for the ``step``-th resampling (0 = initial batch)."""
    if step == 0:
        return base
    return int(np.random.SeedSequence([base, step]).generate_state(1)[0])


def build_bank(cfg, problem, seeds):
    enc = cfg["encoder"]
    kind = enc["kind"]
    if kind == "identity":
        return E.IdentityBank()
    if kind == "rff":
        fpb = enc.get("features_per_block", cfg["network"]["units"])
        return E.rff_sample(enc["sigma2"], fpb, 2, enc.get("seed", seeds["encoder"]))
    if kind == "daff":
        return E.daff_build(enc["comp"], enc["mn"], problem.daff_extents, problem.daff_origin)
    from daffpinn.eigen import mode_to_bank, read_mode_file

    modes, grid = read_mode_file(enc["mode_file"])
    k = enc.get("k", len(modes))
    return mode_to_bank(modes[:k], grid)


def build_model(cfg, problem, seeds):
    bank = build_bank(cfg, problem, seeds)
    net = cfg["network"]
    use_bias = net.get("use_bias")
    if use_bias is None:
        use_bias = bank.kind not in SINGLE_TERM_KINDS
    params = N.init_params(net["layers"], net["units"], bank.dim, seed=seeds["network"],
                           use_bias=use_bias, skip_plan=net.get("skip_plan", "default"))
    return params, bank


# -- training -----------------------------------------------------------------------


@dataclass
class TrainReport:
    config: dict
    term_names: list
    records: list = field(default_factory=list)
    stop_reason: str = "epoch_cap"
    diagnostic: str = ""
    best_val_mse: float = math.inf
    best_epoch: int = 0
    best_params: object = None
    final_params: object = None
    bank: object = None
    balancer_updates: int = 0
    wall_time: float = 0.0

    @property
    def weight_names(self):
        return [f"w_{k}" for k in self.term_names] if len(self.term_names) > 1 else []

    @property
    def columns(self):
        return (["epoch", "phase"] + self.term_names + self.weight_names
                + ["total", "lr", "val_mse", "wall_time"])

    def final_record(self):
        return self.records[-1] if self.records else {}

    def summary(self):
        last = self.final_record()
        return {
            "stop_reason": self.stop_reason,
            "diagnostic": self.diagnostic,
            "epochs": last.get("epoch", 0),
            "terms": self.term_names,
            "final": {k: last.get(k) for k in self.term_names + ["total"]},
            "best_val_mse": self.best_val_mse,
            "best_epoch": self.best_epoch,
            "balancer_updates": self.balancer_updates,
            "n_params": self.final_params.n_params() if self.final_params else 0,
            "input_dim": self.bank.dim if self.bank is not None else 0,
            "wall_time": self.wall_time,
        }

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=self.columns)
            w.writeheader()
            for r in self.records:
                w.writerow({k: r.get(k, "") for k in self.columns})

    def write_summary(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2)

    def loss_trajectory(self):
        return [r["total"] for r in self.records]


def _validate(params, bank, problem, grid_n):
    return P.validation_grid_mse(lambda x, y: N.predict(params, bank, x, y), problem, grid_n)


def train(config, progress=None):
    """Run one configuration; returns a TrainReport.

    Schedule: Adam epochs with lr decay and early stopping on the unweighted
    training loss, then an optional L-BFGS phase with the balancer weights
    frozen.  The collocation batch is redrawn every ``resample_every`` Adam
    epochs and every ``lbfgs_resample_every`` quasi-Newton steps (0 keeps
    the batch fixed).
    """
    cfg = merge_config(config)
    validate_config(cfg)
    problem = build_problem(cfg)
    seeds = seed_streams(cfg["seed"])
    params, bank = build_model(cfg, problem, seeds)
    batch = P.sample_collocation(problem, cfg["batch"], seeds["collocation"])
    program = LossProgram(problem, bank, batch)
    names = program.names
    opt = cfg["optimizer"]
    bal_cfg = cfg["balancer"]
    use_balancer = len(names) > 1 and bal_cfg.get("enabled", True)
    state = None
    if use_balancer:
        state = BalancerState(len(names), alpha=bal_cfg["alpha"], tau=bal_cfg["tau"],
                              rho=bal_cfg["rho"], seed=seeds["balancer"])
    weights = {k: 1.0 for k in names}
    report = TrainReport(cfg, names, bank=bank)
    grid_n = cfg["validation"]["grid_n"]
    every = cfg["validation"]["every"]
    lr = float(opt["lr"])
    adam = AdamState()
    best_loss, best_loss_epoch, last_decay = math.inf, 0, 0
    t0 = time.perf_counter()
    epoch = 0

    def record(phase, bd, lr_now, check_val):
        nonlocal params
        row = {"epoch": epoch, "phase": phase, "total": bd.total, "lr": lr_now}
        row.update(bd.terms)
        if len(names) > 1:
            row.update({f"w_{k}": bd.weights[k] for k in names})
        row["val_mse"] = math.nan
        if check_val:
            v = _validate(params, bank, problem, grid_n)
            row["val_mse"] = v
            if v <= report.best_val_mse:
                report.best_val_mse, report.best_epoch = v, epoch
                report.best_params = params
        row["wall_time"] = time.perf_counter() - t0
        report.records.append(row)
        if progress:
            progress(row)

    def fail(msg):
        report.stop_reason = "non_finite"
        report.diagnostic = msg
        log.error("training stopped: %s", msg)

    n_adam = opt["epochs"]
    every_r = opt["resample_every"]
    draws = 0

    def fresh_program():
        nonlocal draws
        draws += 1
        b = P.sample_collocation(problem, cfg["batch"], batch_seed(seeds["collocation"], draws))
        return LossProgram(problem, bank, b)

    stopped = False
    for epoch in range(1, n_adam + 1):
        if every_r and epoch > 1 and (epoch - 1) % every_r == 0:
            program = fresh_program()
        bd, grads = program.evaluate(params, weights)
        if not all(math.isfinite(v) for v in bd.terms.values()):
            fail(f"non-finite loss at epoch {epoch}: {bd.terms}")
            record("adam", bd, lr, False)
            stopped = True
            break
        monitored = bd.unweighted
        if monitored < best_loss * (1.0 - IMPROVE_RTOL):
            best_loss, best_loss_epoch = monitored, epoch
        stall = epoch - max(best_loss_epoch, last_decay)
        if stall >= opt["patience"] and epoch - best_loss_epoch < opt["stop_patience"]:
            lr *= opt["decay"]
            last_decay = epoch
        if epoch - best_loss_epoch >= opt["stop_patience"]:
            report.stop_reason = "early_stop"
            record("adam", bd, lr, True)
            stopped = True
            break
        record("adam", bd, lr, epoch == 1 or epoch % every == 0)
        try:
            params = params.with_values(adam_step(params.named(), grads, adam, lr))
        except NonFiniteError as exc:
            fail(f"epoch {epoch}: {exc}")
            stopped = True
            break
        if use_balancer:
            weights = dict(zip(names, relobralo_step(state, [bd.terms[k] for k in names])))
            report.balancer_updates += 1

    if not stopped and opt["lbfgs_steps"]:
        frozen = dict(weights)

        def fun(vec):
            p = params.from_flat(vec)
            bd, g = program.evaluate(p, frozen)
            return bd.total, np.concatenate([np.ravel(g[k]) for k in p.named()])

        lstate = LBFGSState(opt["lbfgs_memory"])
        x = params.flat()
        every_q = opt["lbfgs_resample_every"]
        for i in range(opt["lbfgs_steps"]):
            epoch += 1
            if every_q and i and i % every_q == 0:
                program = fresh_program()
                lstate = LBFGSState(opt["lbfgs_memory"])
            try:
                xn = lbfgs_step(x, fun, lstate)
            except NonFiniteError as exc:
                fail(f"quasi-Newton step {i + 1}: {exc}")
                break
            params = params.from_flat(xn)
            bd, _ = program.evaluate(params, frozen, grad=False)
            last = i + 1 == opt["lbfgs_steps"] or np.array_equal(xn, x)
            record("lbfgs", bd, 0.0, last or epoch % every == 0)
            if np.array_equal(xn, x):
                report.stop_reason = "converged"
                break
            x = xn

    if report.records and math.isnan(report.records[-1]["val_mse"]) and report.stop_reason != "non_finite":
        v = _validate(params, bank, problem, grid_n)
        report.records[-1]["val_mse"] = v
        if v <= report.best_val_mse:
            report.best_val_mse, report.best_epoch, report.best_params = v, epoch, params
    report.final_params = params
    if report.best_params is None:
        report.best_params = params
    report.wall_time = time.perf_counter() - t0
    return report
