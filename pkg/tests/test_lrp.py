import math

import numpy as np
import pytest

from daffpinn import encoders as E
from daffpinn import lrp
from daffpinn import network as N


def linear_params(w_out, w_hidden=None):
    """Identity-activation net; with biases off the relevances are the linear terms."""
    if w_hidden is None:
        return N.NetworkParams([np.eye(2) * math.sqrt(2), np.array([w_out])], None, (), "identity")
    return N.NetworkParams([w_hidden, np.array([w_out])], None, (), "identity")


class TestEpsilonRule:
    def test_linear_network_contributions(self):
        p = linear_params([1.0, -3.0])
        g = np.array([[0.5, 0.25]])
        out, trace = N.forward_record(p, g)
        R = lrp.lrp_backward(trace, p, 1e-12).values
        # each input's share is its own term w_i x_i / sqrt(2)
        np.testing.assert_allclose(R[0], [0.5 / math.sqrt(2), -0.75 / math.sqrt(2)], rtol=1e-10)

    def test_bias_column(self):
        p = N.NetworkParams([np.eye(2) * math.sqrt(2), np.array([[1.0, 1.0]])],
                            [np.zeros(2), np.array([0.5])], (), "identity")
        out, trace = N.forward_record(p, np.array([[1.0, 2.0]]))
        rel = lrp.lrp_backward(trace, p, 1e-12)
        assert rel.values.sum() + rel.bias[0] == pytest.approx(out[0], rel=1e-10)
        assert rel.bias[0] == pytest.approx(0.5, rel=1e-10)

    def test_skip_split_by_ratio(self):
        Rs, Rm = lrp.split_skip(np.array([6.0]), np.array([-1.0]), np.array([2.0]), eps=0.0)
        assert Rs[0] == pytest.approx(2.0) and Rm[0] == pytest.approx(4.0)

    def test_skip_split_shape_mismatch(self):
        with pytest.raises(lrp.LRPError):
            lrp.split_skip(np.ones(2), np.ones(3), np.ones(2))

    def test_eps_must_be_positive(self):
        p = linear_params([1.0, 1.0])
        _, trace = N.forward_record(p, np.ones((1, 2)))
        with pytest.raises(lrp.LRPError):
            lrp.lrp_backward(trace, p, 0.0)


class TestConservation:
    @pytest.mark.parametrize("kind", ["identity", "rff", "daff"])
    def test_biasless_sum_matches_output(self, kind):
        bank = {"identity": E.IdentityBank(), "rff": E.rff_sample([1, 2], 8, seed=1),
                "daff": E.daff_build([1, 2], [1, 2], (1.0, 1.0))}[kind]
        p = N.init_params(3, 16, bank.dim, seed=2, use_bias=False)
        rng = np.random.default_rng(3)
        x, y = rng.uniform(0.05, 0.95, 50), rng.uniform(0.05, 0.95, 50)
        out, rel = lrp.explain_points(p, bank, x, y, 1e-9)
        # leak per point is bounded by a few eps-sized terms per layer
        assert np.max(np.abs(rel.values.sum(axis=1) - out)) < 1e-6
        assert np.all(rel.bias == 0)

    def test_defect_shrinks_with_eps(self):
        bank = E.rff_sample([1, 4], 8, seed=5)
        p = N.init_params(3, 16, bank.dim, seed=6, use_bias=False)
        rng = np.random.default_rng(7)
        x, y = rng.uniform(0, 1, 30), rng.uniform(0, 1, 30)
        d = [lrp.audit_points(p, bank, x, y, eps) for eps in (1e-6, 1e-7, 1e-8, 1e-9)]
        for a, b in zip(d, d[1:]):
            assert np.all(b <= a + 1e-12)


class TestReports:
    def test_field_is_identity_only(self):
        bank = E.rff_sample([1], 4)
        p = N.init_params(1, 4, bank.dim)
        with pytest.raises(lrp.LRPError):
            lrp.coordinate_field(p, bank, (0, 1, 0, 1), 8)

    def test_field_threshold_clips(self):
        p = N.init_params(2, 8, 2, seed=1, use_bias=False)
        p.weights = [w * 20 for w in p.weights]
        rep = lrp.coordinate_field(p, E.IdentityBank(), (-1, 1, -1, 1), 12, threshold=0.5)
        assert rep.field.shape == (12, 12)
        assert np.max(np.abs(rep.field)) <= 0.5

    def test_field_orientation(self):
        # u = x only: R_x - R_y = u, positive in the x > 0 half
        p = linear_params([1.0, 0.0])
        rep = lrp.coordinate_field(p, E.IdentityBank(), (-1, 1, -1, 1), 5)
        assert np.all(rep.field[:, -1] > 0) and np.all(rep.field[:, 0] < 0)

    def test_rff_groups(self):
        bank = E.rff_sample([1, 2], 6, seed=0)
        p = N.init_params(2, 8, bank.dim, seed=0, use_bias=False)
        rep = lrp.feature_attribution(p, bank, (-1, 1, -1, 1), 8)
        for key in ("cos", "sin", "cos_x", "cos_y", "sin_x", "sin_y"):
            assert rep.groups[key] >= 0
        assert rep.groups["cos_x"] + rep.groups["cos_y"] == pytest.approx(rep.groups["cos"], rel=1e-6)

    def test_rff_split_shares(self):
        rows = np.array([[1.0, 3.0]])
        R = np.array([[4.0, 8.0]])
        split = lrp.rff_coordinate_split(R, rows, np.array([[1.0, 1.0]]), eps=0.0)
        np.testing.assert_allclose(split[0], [[1.0, 3.0], [2.0, 6.0]])

    def test_daff_groups(self):
        bank = E.daff_build([1, 3], [1, 2], (1.0, 1.0))
        p = N.init_params(2, 8, bank.dim, seed=0, use_bias=False)
        rep = lrp.feature_attribution(p, bank, (0, 1, 0, 1), 8)
        assert {"comp=1", "comp=3", "m=1", "n=2", "mn=1,2"} <= set(rep.groups)

    def test_csv_and_summary(self, tmp_path):
        p = N.init_params(1, 4, 2, seed=0)
        rep = lrp.coordinate_field(p, E.IdentityBank(), (0, 1, 0, 1), 4, threshold=1.0)
        rep.write_points_csv(tmp_path / "pts.csv")
        rep.write_summary(tmp_path / "s.json")
        rep.write_field_grid(tmp_path / "f.txt")
        rows = (tmp_path / "pts.csv").read_text().splitlines()
        assert rows[0].split(",")[:3] == ["x", "y", "output"] and len(rows) == 17
        np.testing.assert_array_equal(np.loadtxt(tmp_path / "f.txt"), rep.field)
