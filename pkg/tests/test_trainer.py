import math

import numpy as np
import pytest

from daffpinn import problems as P
from daffpinn import trainer as TR


def tiny(**over):
    cfg = {"problem": {"name": "helmholtz"}, "encoder": {"kind": "identity"},
           "network": {"layers": 2, "units": 8}, "optimizer": {"epochs": 20},
           "batch": 64, "validation": {"grid_n": 8, "every": 5}}
    for k, v in over.items():
        if isinstance(v, dict):
            cfg[k] = {**cfg.get(k, {}), **v}
        else:
            cfg[k] = v
    return cfg


class TestConfig:
    def test_all_problems_listed(self):
        with pytest.raises(TR.ConfigError) as err:
            TR.validate_config(TR.merge_config({"batch": 30, "network": {"units": 0}, "bogus": 1}))
        keys = {k for k, _ in err.value.problems}
        assert {"batch", "network.units", "bogus"} <= keys

    @pytest.mark.parametrize("enc", [{"kind": "rff", "sigma2": []}, {"kind": "daff", "comp": [7], "mn": [1]},
                                     {"kind": "daff_numeric"}, {"kind": "chebyshev"}])
    def test_bad_encoder(self, enc):
        with pytest.raises(TR.ConfigError):
            TR.validate_config(TR.merge_config({"encoder": enc}))

    def test_bad_problem_parameter(self):
        with pytest.raises(TR.ConfigError):
            TR.build_problem(TR.merge_config({"problem": {"name": "kirchhoff", "nu": 0.7}}))

    def test_seed_streams_distinct_and_stable(self):
        a, b = TR.seed_streams(3), TR.seed_streams(3)
        assert a == b and len(set(a.values())) == 4
        assert TR.seed_streams(4) != a


class TestTerms:
    def test_helmholtz_terms(self):
        r = TR.train(tiny())
        assert r.term_names == ["L_r", "L_b1", "L_b2", "L_b3", "L_b4"]
        assert r.balancer_updates == 20

    def test_daff_single_term(self):
        r = TR.train(tiny(encoder={"kind": "daff", "comp": [1], "mn": [1, 2]}))
        assert r.term_names == ["L_r"]
        assert r.balancer_updates == 0
        assert r.weight_names == []
        assert not r.best_params.use_bias

    def test_loss_matches_hand_assembly(self):
        cfg = TR.merge_config(tiny())
        problem = TR.build_problem(cfg)
        seeds = TR.seed_streams(0)
        params, bank = TR.build_model(cfg, problem, seeds)
        batch = P.sample_collocation(problem, 64, 0)
        bd = TR.assemble_loss(problem, (params, bank), batch)
        from daffpinn import network as N
        xi, yi = batch.interior.T
        from daffpinn.jets import jet_seed
        u = N.forward(params, bank.encode(jet_seed(xi, yi, 2)))
        r = u.laplacian() + u.value - problem.forcing(xi, yi)
        assert bd.terms["L_r"] == pytest.approx(np.mean(r ** 2), rel=1e-12)
        x, y = batch.boundary[3].T
        assert bd.terms["L_b3"] == pytest.approx(np.mean(N.predict(params, bank, x, y) ** 2), rel=1e-12)

    def test_gradient_matches_differences(self):
        cfg = TR.merge_config(tiny())
        problem = TR.build_problem(cfg)
        params, bank = TR.build_model(cfg, problem, TR.seed_streams(0))
        prog = TR.LossProgram(problem, bank, P.sample_collocation(problem, 64, 1))
        w = {k: 0.5 + i for i, k in enumerate(prog.names)}
        _, g = prog.evaluate(params, w)
        named = params.named()
        h = 1e-6
        for k in ("W0", "b1"):
            up, dn = dict(named), dict(named)
            up[k] = named[k] + h * (np.arange(named[k].size).reshape(named[k].shape) == 2)
            dn[k] = named[k] - h * (np.arange(named[k].size).reshape(named[k].shape) == 2)
            fd = (prog.evaluate(params.with_values(up), w, False)[0].total
                  - prog.evaluate(params.with_values(dn), w, False)[0].total) / (2 * h)
            assert g[k].ravel()[2] == pytest.approx(fd, rel=1e-5, abs=1e-7)


class TestSchedule:
    def test_deterministic(self):
        a, b = TR.train(tiny()), TR.train(tiny())
        assert a.loss_trajectory() == b.loss_trajectory()
        assert a.best_val_mse == b.best_val_mse

    def test_seed_changes_run(self):
        assert TR.train(tiny()).loss_trajectory() != TR.train(tiny(seed=1)).loss_trajectory()

    def test_lr_decay_and_early_stop(self):
        # lr 0 never improves after epoch 1: decay at epoch 1 + patience, stop at 1 + stop_patience
        r = TR.train(tiny(optimizer={"lr": 1e-300, "patience": 3, "stop_patience": 8, "epochs": 50,
                                     "resample_every": 0}))
        lrs = [row["lr"] for row in r.records]
        assert r.stop_reason == "early_stop"
        assert r.records[-1]["epoch"] == 9
        assert lrs[2] == 1e-300 and lrs[3] == pytest.approx(1e-301)

    def test_lbfgs_phase_recorded(self):
        r = TR.train(tiny(optimizer={"epochs": 5, "lbfgs_steps": 4}))
        phases = [row["phase"] for row in r.records]
        assert phases.count("adam") == 5 and phases.count("lbfgs") <= 4
        assert math.isfinite(r.records[-1]["val_mse"])

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_reported(self):
        r = TR.train(tiny(optimizer={"lr": 1e300}))
        assert r.stop_reason == "non_finite"
        assert r.diagnostic

    def test_csv_columns(self, tmp_path):
        r = TR.train(tiny())
        path = tmp_path / "h.csv"
        r.write_csv(path)
        head = path.read_text().splitlines()[0].split(",")
        assert head[:3] == ["epoch", "phase", "L_r"] and "w_L_b4" in head and head[-1] == "wall_time"
        assert len(path.read_text().splitlines()) == 21
