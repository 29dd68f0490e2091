"""Truth models against brute-force index evaluators, surrogate
identifiability, RK4 order, skill and Lyapunov diagnostics."""
import numpy as np
import pytest

from lenkf.dynamics import (Integrator, L96iModel, ML96Model, SurrogateParams,
                            climatological_std, default_ml96_forcing,
                            forecast_skill, identifying_params_1d,
                            identifying_params_2d, integrate, lyapunov_spectrum,
                            monomial_count, monomial_terms, rk4_step,
                            surrogate_tendency)


def brute_l96i(x, forcing):
    """Index-by-index evaluation of the cyclic advection formula."""
    n = x.size
    out = np.empty(n)
    for i in range(n):
        out[i] = (x[(i + 1) % n] - x[(i - 2) % n]) * x[(i - 1) % n] - x[i] + forcing[i]
    return out


def brute_ml96(x, forcing):
    """Per-component evaluation with explicit vertical coupling."""
    n_v, n_h = forcing.shape
    grid = x.reshape(n_v, n_h)

    def gamma(v, h):
        if 1 <= v <= n_v - 1:
            return grid[v, h] - grid[v - 1, h]
        return 0.0

    out = np.empty_like(grid)
    for v in range(n_v):
        for h in range(n_h):
            adv = (grid[v, (h + 1) % n_h] - grid[v, (h - 2) % n_h]) * grid[v, (h - 1) % n_h]
            out[v, h] = adv - grid[v, h] + forcing[v, h] \
                + gamma(v + 1, h) - gamma(v, h)
    return out.reshape(-1)


class TestL96i:
    def test_uniform_state_leaves_only_forcing_anomaly(self):
        model = L96iModel()
        x = np.full(40, 8.0)
        expected = np.cos(2.0 * np.pi * np.arange(1, 41) / 40.0)
        np.testing.assert_allclose(model.tendency(x), expected, atol=1e-12)

    def test_zero_state_gives_forcing(self):
        model = L96iModel()
        np.testing.assert_array_equal(model.tendency(np.zeros(40)), model.forcing)

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        model = L96iModel()
        x = rng.standard_normal(40) * 3
        np.testing.assert_allclose(model.tendency(x), brute_l96i(x, model.forcing),
                                   atol=1e-13)

    def test_column_vectorisation_bitwise(self):
        rng = np.random.default_rng(11)
        model = L96iModel()
        cols = rng.standard_normal((40, 6)) * 3
        batch = model.tendency(cols)
        for j in range(6):
            np.testing.assert_array_equal(batch[:, j], model.tendency(cols[:, j]))


class TestML96:
    def test_default_forcing_profile(self):
        f = default_ml96_forcing()
        assert f.shape == (32, 40)
        np.testing.assert_allclose(f[0], 8.0)
        np.testing.assert_allclose(f[-1], 4.0)
        np.testing.assert_allclose(np.diff(f[:, 0]), np.diff(f[:, 0])[0])

    def test_uniform_layers_reduce_to_coupling(self):
        model = ML96Model(n_v=4, n_h=6)
        c = np.array([1.0, 3.0, -2.0, 0.5])
        x = np.repeat(c, 6)
        got = model.tendency(x).reshape(4, 6)
        gam = np.zeros(5)
        gam[1:4] = c[1:] - c[:-1]
        expected = (-c + model.forcing[:, 0] + gam[1:] - gam[:-1])
        np.testing.assert_allclose(got, expected[:, None] * np.ones((1, 6)), atol=1e-13)

    def test_single_layer_is_ring_model(self):
        model = ML96Model(n_v=1, n_h=40, forcing=default_l96i_like())
        ring = L96iModel(n_x=40, forcing=model.forcing[0])
        rng = np.random.default_rng(4)
        x = rng.standard_normal(40) * 2
        np.testing.assert_array_equal(model.tendency(x), ring.tendency(x))

    @pytest.mark.parametrize("seed", range(2))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        model = ML96Model(n_v=5, n_h=8)
        x = rng.standard_normal(40) * 3
        np.testing.assert_allclose(model.tendency(x), brute_ml96(x, model.forcing),
                                   atol=1e-13)


def default_l96i_like():
    return np.full((1, 40), 8.0)


class TestSurrogate:
    def test_term_count(self):
        assert monomial_count(2) == 17
        assert len(monomial_terms(2)) == 17
        # closed form (3/2)(L+1)(L+2) - 1
        for L in (1, 2, 3):
            assert monomial_count(L) == 3 * (L + 1) * (L + 2) // 2 - 1

    def test_zero_coefficients_zero_tendency(self):
        params = SurrogateParams(stencil=2, coeffs=np.zeros(17),
                                 forcing=np.zeros(12), grid=(12,))
        np.testing.assert_array_equal(
            surrogate_tendency(np.linspace(-1, 1, 12), params), np.zeros(12))

    def test_identifying_matches_truth_exactly(self):
        model = L96iModel()
        params = identifying_params_1d(model)
        assert set(np.unique(params.coeffs)) <= {-1.0, 0.0, 1.0}
        rng = np.random.default_rng(0)
        for _ in range(50):
            x = rng.standard_normal(40) * 4
            np.testing.assert_array_equal(params.tendency(x), model.tendency(x))

    def test_identifying_matches_truth_2d(self):
        model = ML96Model(n_v=6, n_h=10)
        params = identifying_params_2d(model)
        rng = np.random.default_rng(1)
        x = rng.standard_normal(60) * 3
        np.testing.assert_array_equal(params.tendency(x), model.tendency(x))

    def test_quadratic_matrix_layout(self):
        params = identifying_params_1d(L96iModel())
        mat = params.quadratic_matrix
        # row l, column L+m
        assert mat[1, 0] == -1.0        # l=1, m=-2
        assert mat[2, 1] == 1.0         # l=2, m=-1
        assert np.count_nonzero(mat) == 2
        assert params.linear[2] == -1.0

    def test_identifiability_property(self):
        # max abs difference over many random states
        model = L96iModel()
        params = identifying_params_1d(model)
        rng = np.random.default_rng(2)
        xs = rng.standard_normal((40, 1000)) * 5
        diff = np.abs(params.tendency(xs) - model.tendency(xs))
        assert diff.max() <= 1e-12

    def test_per_member_coefficients_broadcast(self):
        model = L96iModel(n_x=10)
        params = identifying_params_1d(model)
        rng = np.random.default_rng(3)
        x = rng.standard_normal((10, 4))
        coeffs = np.repeat(params.coeffs[:, None], 4, axis=1)
        forcing = np.repeat(params.forcing[:, None], 4, axis=1)
        from lenkf.dynamics import surrogate_tendency_1d
        got = surrogate_tendency_1d(x, coeffs, forcing)
        np.testing.assert_array_equal(got, model.tendency(x))

    def test_translation_equivariance(self):
        # rotating state and forcing together rotates the tendency
        rng = np.random.default_rng(9)
        x = rng.standard_normal(24)
        f = rng.standard_normal(24)
        params = SurrogateParams(stencil=2, coeffs=rng.standard_normal(17),
                                 forcing=f, grid=(24,))
        rolled = SurrogateParams(stencil=2, coeffs=params.coeffs,
                                 forcing=np.roll(f, 3), grid=(24,))
        np.testing.assert_allclose(np.roll(params.tendency(x), 3),
                                   rolled.tendency(np.roll(x, 3)), atol=1e-13)


class TestRk4:
    def test_zero_tendency_identity(self):
        x = np.array([1.0, 2.0])
        np.testing.assert_array_equal(rk4_step(lambda s: np.zeros_like(s), x, 0.1), x)

    def test_scalar_decay_matches_closed_form(self):
        # one step of dx/dt = -x equals the degree-4 Taylor polynomial of exp(-h)
        h = 0.05
        expected = 1.0 - h + h**2 / 2 - h**3 / 6 + h**4 / 24
        got = rk4_step(lambda s: -s, np.array([1.0]), h)[0]
        assert abs(got - expected) < 1e-15

    def test_fourth_order_convergence(self):
        model = L96iModel()
        rng = np.random.default_rng(6)
        x0 = integrate(model.tendency, model.equilibrium_state()
                       + 0.01 * rng.standard_normal(40), 500, 0.05)
        fine = integrate(model.tendency, x0, 3200, 1.0 / 3200)
        errs = []
        for steps in (100, 200, 400):
            coarse = integrate(model.tendency, x0, steps, 1.0 / steps)
            errs.append(np.linalg.norm(coarse - fine))
        orders = [np.log2(errs[i] / errs[i + 1]) for i in range(2)]
        assert min(orders) >= 3.8

    def test_integrator_wrapper(self):
        integ = Integrator(dt=0.05)
        x = np.array([1.0])
        np.testing.assert_array_equal(integ.step(lambda s: -s, x),
                                      rk4_step(lambda s: -s, x, 0.05))
        with pytest.raises(ValueError):
            Integrator(dt=-1.0)

    def test_nan_propagates(self):
        out = rk4_step(lambda s: np.full_like(s, np.nan), np.ones(3), 0.05)
        assert np.isnan(out).all()


class TestForecastSkill:
    def test_zero_sigma_is_exact(self):
        model = L96iModel()
        params = identifying_params_1d(model)
        res = forecast_skill(params, model, lead_time=0.5, trials=3,
                             block="coeffs", sigma=0.0,
                             rng=np.random.default_rng(0), clim=3.6)
        assert res.nrmse == 0.0 and res.diverged_trials == 0

    def test_deterministic_replay(self):
        model = L96iModel()
        params = identifying_params_1d(model)
        kw = dict(lead_time=0.5, trials=2, block="forcing", sigma=0.2, clim=3.6)
        a = forecast_skill(params, model, rng=np.random.default_rng(5), **kw)
        b = forecast_skill(params, model, rng=np.random.default_rng(5), **kw)
        assert a == b

    def test_coefficient_perturbation_hurts_more(self):
        model = L96iModel()
        params = identifying_params_1d(model)
        clim = climatological_std(model, 0.05, steps=2000, spinup=500)[1]
        kw = dict(lead_time=0.5, trials=40, sigma=0.2, clim=clim)
        on_a = forecast_skill(params, model, block="coeffs",
                              rng=np.random.default_rng(1), **kw)
        on_f = forecast_skill(params, model, block="forcing",
                              rng=np.random.default_rng(1), **kw)
        assert on_a.nrmse > on_f.nrmse


class TestLyapunov:
    def test_pure_decay(self):
        class Decay:
            n_x = 3

            def tendency(self, x):
                return -x

            def equilibrium_state(self):
                return np.ones(3)

        exps = lyapunov_spectrum(Decay(), n_exponents=2, steps=200, dt=0.05,
                                 spinup=10, x0=np.ones(3))
        np.testing.assert_allclose(exps, -1.0, atol=1e-3)

    def test_l96i_leading_exponent_positive(self):
        exps = lyapunov_spectrum(L96iModel(), n_exponents=3, steps=1500, dt=0.05)
        assert exps[0] > 1.0


class TestClimatology:
    def test_l96_variability_scale(self):
        std, mean = climatological_std(L96iModel(), steps=4000, spinup=500)
        assert std.shape == (40,)
        assert 3.0 < mean < 4.5
