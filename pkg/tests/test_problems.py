import math

import numpy as np
import pytest

from daffpinn import jets as J
from daffpinn import problems as P


def kirchhoff_oracle_jet(spec, x, y, order=4):
    jx, jy = J.jet_seed(x, y, order)
    return (J.sin(jx.scale(math.pi / spec.a)) * J.sin(jy.scale(math.pi / spec.b))).scale(spec.amplitude)


def helmholtz_oracle_jet(spec, x, y):
    jx, jy = J.jet_seed(x, y, 2)
    return J.sin(jx.scale(spec.n1 * math.pi)) * J.sin(jy.scale(spec.n2 * math.pi))


class TestKirchhoff:
    def test_flexural_stiffness(self):
        spec = P.KirchhoffSpec(E=2.0, h_t=0.2, nu=0.25)
        assert spec.D == pytest.approx(2.0 * 0.008 / (12 * 0.75), rel=1e-15)

    @pytest.mark.parametrize("a,b", [(1.0, 1.0), (2.0, 0.5)])
    def test_oracle_residuals(self, a, b):
        spec = P.KirchhoffSpec(a=a, b=b)
        rng = np.random.default_rng(0)
        x, y = rng.uniform(0, a, 1000), rng.uniform(0, b, 1000)
        r = spec.residual(kirchhoff_oracle_jet(spec, x, y), x, y)
        assert np.max(np.abs(r)) < 1e-8 * spec.f0 / spec.D
        for edge in spec.edges:
            ex, ey = spec.edge_points(edge, rng.random(250))
            disp, moment = P.kirchhoff_bc_residuals(spec, kirchhoff_oracle_jet(spec, ex, ey, 2), (ex, ey), edge)
            assert np.max(np.abs(disp)) < 1e-12
            assert np.max(np.abs(moment)) < 1e-12

    def test_order_two_rejected(self):
        spec = P.KirchhoffSpec()
        with pytest.raises(J.JetError):
            spec.residual(kirchhoff_oracle_jet(spec, 0.5, 0.5, 2), 0.5, 0.5)

    def test_point_off_edge(self):
        spec = P.KirchhoffSpec()
        u = kirchhoff_oracle_jet(spec, 0.5, 0.5, 2)
        with pytest.raises(P.ProblemError):
            P.kirchhoff_bc_residuals(spec, u, (np.array([0.5]), np.array([0.5])), 1)

    @pytest.mark.parametrize("kw", [dict(nu=0.5), dict(nu=-0.1), dict(E=0.0), dict(a=-1.0)])
    def test_bad_parameters(self, kw):
        with pytest.raises(P.ProblemError):
            P.KirchhoffSpec(**kw)


class TestHelmholtz:
    @pytest.mark.parametrize("k,n1,n2", [(1.0, 4, 1), (3.0, 2, 5)])
    def test_oracle_residuals(self, k, n1, n2):
        spec = P.HelmholtzSpec(k=k, n1=n1, n2=n2)
        rng = np.random.default_rng(1)
        x, y = rng.uniform(-1, 1, 1000), rng.uniform(-1, 1, 1000)
        r = spec.residual(helmholtz_oracle_jet(spec, x, y), x, y)
        scale = (n1 * math.pi) ** 2 + (n2 * math.pi) ** 2
        assert np.max(np.abs(r)) < 1e-8 * scale
        for edge in spec.edges:
            ex, ey = spec.edge_points(edge, rng.random(250))
            assert np.max(np.abs(spec.analytic(ex, ey))) < 1e-8

    def test_edge_numbering(self):
        spec = P.HelmholtzSpec()
        assert spec.edges == {1: ("y", -1.0), 2: ("y", 1.0), 3: ("x", -1.0), 4: ("x", 1.0)}

    def test_bad_harmonic(self):
        with pytest.raises(P.ProblemError):
            P.HelmholtzSpec(n1=0)


class TestSampling:
    def test_split(self):
        spec = P.HelmholtzSpec()
        batch = P.sample_collocation(spec, 512, seed=3)
        assert batch.n_interior == 384
        assert sorted(batch.boundary) == [1, 2, 3, 4]
        for e, pts in batch.boundary.items():
            assert len(pts) == 32
            axis, val = spec.edges[e]
            assert np.all(pts[:, 0 if axis == "x" else 1] == val)

    def test_deterministic(self):
        spec = P.KirchhoffSpec()
        a, b = P.sample_collocation(spec, 64, 9), P.sample_collocation(spec, 64, 9)
        np.testing.assert_array_equal(a.interior, b.interior)

    @pytest.mark.parametrize("total", [0, 30, 40])
    def test_bad_total(self, total):
        with pytest.raises(P.ProblemError):
            P.sample_collocation(P.HelmholtzSpec(), total)


def test_validation_mse_of_exact_model_is_zero():
    spec = P.HelmholtzSpec()
    assert P.validation_grid_mse(spec.analytic, spec, 32) == 0.0
    assert P.validation_grid_mse(lambda x, y: spec.analytic(x, y) + 0.1, spec, 32) == pytest.approx(0.01)


def test_make_problem():
    assert P.make_problem({"name": "kirchhoff", "nu": 0.2}).nu == 0.2
    with pytest.raises(P.ProblemError):
        P.make_problem({"name": "poisson"})


class TestDocumentedExamples:
    def test_moment_of_x_squared(self):
        spec = P.KirchhoffSpec()
        x, y = np.zeros(3), np.array([0.1, 0.5, 0.9])
        jx, _ = J.jet_seed(x, y, 2)
        _, moment = P.kirchhoff_bc_residuals(spec, jx * jx, (x, y), 1)
        np.testing.assert_allclose(moment, -2 * spec.D, rtol=1e-15)

    def test_zero_field_residual_is_minus_forcing(self):
        spec = P.HelmholtzSpec()
        x, y = np.array([0.3]), np.array([-0.2])
        u = J.Jet.zeros(2, (1,))
        np.testing.assert_allclose(spec.residual(u, x, y), -spec.forcing(x, y))

    def test_poisson_limit(self):
        spec = P.HelmholtzSpec(k=0.0)
        rng = np.random.default_rng(4)
        x, y = rng.uniform(-1, 1, 200), rng.uniform(-1, 1, 200)
        assert np.max(np.abs(spec.residual(helmholtz_oracle_jet(spec, x, y), x, y))) < 1e-9 * 17 * np.pi ** 2

    def test_helmholtz_peak(self):
        spec = P.HelmholtzSpec()
        assert spec.analytic(0.5 / 4, 0.5) == pytest.approx(1.0, rel=1e-15)

    def test_plate_centre_is_amplitude(self):
        spec = P.KirchhoffSpec()
        assert spec.analytic(0.5, 0.5) == pytest.approx(spec.amplitude, rel=1e-15)
        assert spec.amplitude == pytest.approx(1.0 / (spec.D * np.pi ** 4 * 4), rel=1e-15)

    def test_large_batch_split(self):
        batch = P.sample_collocation(P.KirchhoffSpec(), 2048, 0)
        assert batch.n_interior == 1536 and all(len(v) == 128 for v in batch.boundary.values())

    def test_zero_model_lattice_mean(self):
        spec = P.HelmholtzSpec()
        assert P.validation_grid_mse(lambda x, y: 0 * x, spec, 257) == pytest.approx(0.25, rel=1e-2)

    @pytest.mark.parametrize("alpha", [0.0, 2.5, -1.0])
    def test_residual_linearity(self, alpha):
        spec = P.HelmholtzSpec()
        x, y = np.array([0.2, 0.7]), np.array([-0.4, 0.1])
        u = helmholtz_oracle_jet(spec, x, y)
        lhs = spec.residual(u.scale(alpha), x, y) - alpha * spec.residual(u, x, y)
        np.testing.assert_allclose(lhs, (alpha - 1) * spec.forcing(x, y), atol=1e-10)
