import math

import numpy as np
import pytest
from scipy.special import ndtr
from scipy.stats import kendalltau, kstest

from mobsynth.copula import (EmpiricalMargin, KernelPairCopula, VineModel,
                             default_trunc_level, h_forward, h_inverse,
                             margin_fit, pair_fit, pseudo_observations,
                             sklar_logpdf, vine_fit)
from mobsynth.errors import DomainError, InsufficientDataError


def gaussian_copula_sample(rho, n, seed):
    rng = np.random.default_rng(seed)
    z = rng.multivariate_normal([0.0, 0.0], [[1.0, rho], [rho, 1.0]], size=n)
    return ndtr(z[:, 0]), ndtr(z[:, 1])


class TestEmpiricalMargin:
    def test_pit_at_sample_atoms(self):
        m = EmpiricalMargin([3.0, 1.0, 2.0])
        # sorted sample gets ranks 1..n over n+1
        assert m.pit(1.0) == pytest.approx(0.25)
        assert m.pit(2.0) == pytest.approx(0.50)
        assert m.pit(3.0) == pytest.approx(0.75)

    def test_pit_clamps_outside_range(self):
        m = EmpiricalMargin(np.arange(9.0))
        assert m.pit(-100.0) == pytest.approx(0.1)
        assert m.pit(+100.0) == pytest.approx(0.9)

    def test_quantile_inverts_pit(self):
        rng = np.random.default_rng(0)
        sample = rng.normal(size=400)
        m = margin_fit(sample)
        x = np.linspace(sample.min(), sample.max(), 101)
        back = m.quantile(m.pit(x))
        assert np.allclose(back, x, atol=1e-12)

    def test_quantile_domain(self):
        m = EmpiricalMargin([0.0, 1.0])
        with pytest.raises(DomainError):
            m.quantile(0.0)
        with pytest.raises(DomainError):
            m.quantile(1.0)

    def test_too_small_sample(self):
        with pytest.raises(InsufficientDataError):
            EmpiricalMargin([1.0])

    def test_non_finite_rejected(self):
        with pytest.raises(DomainError):
            EmpiricalMargin([0.0, np.nan, 1.0])

    def test_pit_is_uniform_on_continuous_data(self):
        rng = np.random.default_rng(1)
        sample = rng.gamma(2.0, size=3000)
        m = margin_fit(sample)
        p = kstest(m.pit(sample), "uniform").pvalue
        assert p > 0.01


class TestPseudoObservations:
    def test_simple_ranks(self):
        u = pseudo_observations(np.array([10.0, 30.0, 20.0]))
        assert u.tolist() == [0.25, 0.75, 0.5]

    def test_columns_independent_and_bounded(self):
        rng = np.random.default_rng(2)
        data = rng.normal(size=(50, 3))
        u = pseudo_observations(data)
        assert np.all((u > 0) & (u < 1))
        for j in range(3):
            assert sorted(u[:, j]) == pytest.approx(
                (np.arange(1, 51) / 51).tolist())


class TestKernelPairCopula:
    def test_fit_validation(self):
        u = np.linspace(0.1, 0.9, 20)
        with pytest.raises(InsufficientDataError):
            KernelPairCopula.fit(u[:5], u[:5])
        with pytest.raises(DomainError):
            KernelPairCopula.fit(np.append(u, 0.0), np.append(u, 0.5))

    def test_independence_density_near_one(self):
        u, v = gaussian_copula_sample(0.0, 4000, seed=3)
        c = pair_fit(u, v)
        grid = np.linspace(0.15, 0.85, 7)
        uu, vv = np.meshgrid(grid, grid)
        dens = c.density(uu.ravel(), vv.ravel())
        assert np.all(np.abs(dens - 1.0) < 0.25)

    def test_independence_h_is_identity(self):
        u, v = gaussian_copula_sample(0.0, 4000, seed=4)
        c = pair_fit(u, v)
        grid = np.linspace(0.1, 0.9, 9)
        uu, vv = np.meshgrid(grid, grid)
        h = c.h_u_given_v(uu.ravel(), vv.ravel())
        assert np.max(np.abs(h - uu.ravel())) < 0.06

    @pytest.mark.parametrize("rho", [0.3, 0.8])
    def test_kendall_tau_matches_gaussian(self, rho):
        u, v = gaussian_copula_sample(rho, 8000, seed=5)
        c = pair_fit(u, v)
        tau_target = 2.0 / math.pi * math.asin(rho)
        tau = c.kendall_tau(4000, np.random.default_rng(6))
        assert abs(tau - tau_target) < 0.05

    def test_h_inverse_roundtrip(self):
        u, v = gaussian_copula_sample(0.8, 3000, seed=7)
        c = pair_fit(u, v)
        rng = np.random.default_rng(8)
        p = rng.uniform(0.001, 0.999, size=500)
        cond = rng.uniform(0.01, 0.99, size=500)
        uu = c.h_inverse_u_given_v(p, cond)
        assert np.max(np.abs(c.h_u_given_v(uu, cond) - p)) < 1e-8
        vv = c.h_inverse_v_given_u(p, cond)
        assert np.max(np.abs(c.h_v_given_u(vv, cond) - p)) < 1e-8

    def test_h_is_monotone(self):
        u, v = gaussian_copula_sample(0.5, 2000, seed=9)
        c = pair_fit(u, v)
        us = np.linspace(0.01, 0.99, 50)
        h = c.h_u_given_v(us, np.full(50, 0.3))
        assert np.all(np.diff(h) > 0)

    def test_density_integrates_to_one_in_u(self):
        # integral over u of c(u, v) is the conditional total mass, i.e. 1
        u, v = gaussian_copula_sample(0.6, 3000, seed=10)
        c = pair_fit(u, v)
        us = np.linspace(0.0005, 0.9995, 2001)
        for cond in (0.25, 0.5, 0.8):
            total = np.trapezoid(c.density(us, np.full_like(us, cond)), us)
            assert abs(total - 1.0) < 0.05

    def test_sample_pit_uniform(self):
        u, v = gaussian_copula_sample(0.8, 3000, seed=11)
        c = pair_fit(u, v)
        us, vs = c.sample(3000, np.random.default_rng(12))
        assert kstest(vs, "uniform").pvalue > 0.01
        assert kstest(us, "uniform").pvalue > 0.01

    def test_module_level_h_helpers(self):
        u, v = gaussian_copula_sample(0.4, 1500, seed=13)
        c = pair_fit(u, v)
        p = np.array([0.2, 0.6])
        cond = np.array([0.3, 0.7])
        uu = h_inverse(c, p, cond)
        assert np.allclose(h_forward(c, uu, cond), p, atol=1e-8)

    def test_sklar_logpdf_finite_inside_support(self):
        rng = np.random.default_rng(14)
        x = rng.normal(size=1500)
        y = 0.7 * x + 0.3 * rng.normal(size=1500)
        mx, my = margin_fit(x), margin_fit(y)
        c = pair_fit(*pseudo_observations(np.column_stack([x, y])).T)
        lp = sklar_logpdf(mx, my, c, x[:50], y[:50])
        assert np.all(np.isfinite(lp))


class TestVine:
    def _ar1_data(self, n, phi, seed, d=4):
        rng = np.random.default_rng(seed)
        x = np.empty(n + d)
        x[0] = rng.normal()
        for i in range(1, n + d):
            x[i] = phi * x[i - 1] + math.sqrt(1 - phi * phi) * rng.normal()
        return np.column_stack([x[k:n + k] for k in range(d)])

    def test_default_trunc_level(self):
        assert default_trunc_level(2) == 1
        assert default_trunc_level(4) == 3
        assert default_trunc_level(6) == 3
        assert default_trunc_level(10) == 3

    def test_fit_validation(self):
        with pytest.raises(InsufficientDataError):
            vine_fit(np.random.default_rng(0).normal(size=(50, 3)))
        data = np.random.default_rng(0).normal(size=(200, 3))
        data[:, 1] = 4.2
        with pytest.raises(DomainError):
            vine_fit(data)

    def test_joint_sample_recovers_lag_correlation(self):
        phi = 0.7
        data = self._ar1_data(4000, phi, seed=15)
        model = vine_fit(data, max_scores=400)
        out = model.sample(4000, np.random.default_rng(16))
        got = np.corrcoef(out[:, 0], out[:, 1])[0, 1]
        assert abs(got - phi) < 0.08
        got2 = np.corrcoef(out[:, 0], out[:, 2])[0, 1]
        assert abs(got2 - phi ** 2) < 0.1

    def test_conditional_sample_tracks_ar1(self):
        # E[x_d | x_{d-1} = c] = phi * c for the AR(1) oracle
        phi = 0.7
        data = self._ar1_data(4000, phi, seed=17)
        model = vine_fit(data, max_scores=400)
        rng = np.random.default_rng(18)
        for c in (-1.0, 0.0, 1.5):
            draws = model.conditional_sample([0.0, phi * c, c][-3:], rng, size=400)
            assert abs(np.mean(draws) - phi * c) < 0.15

    def test_conditional_sample_under_independence_is_marginal(self):
        # explicit independence vine: conditional sampling must reproduce the
        # last margin exactly, whatever the conditioning point
        rng = np.random.default_rng(19)
        data = rng.normal(size=(500, 3))
        margins = [margin_fit(data[:, j]) for j in range(3)]
        model = VineModel(margins, trees=[])
        draws = model.conditional_sample([2.0, -2.0], np.random.default_rng(20), size=2000)
        p = kstest(margins[2].pit(draws), "uniform").pvalue
        assert p > 0.01

    def test_conditional_sample_shape_checks(self):
        data = np.random.default_rng(21).normal(size=(300, 3))
        model = vine_fit(data, max_scores=200)
        with pytest.raises(DomainError):
            model.conditional_sample([0.0], np.random.default_rng(0), size=4)

    def test_truncation_drops_deep_trees(self):
        data = self._ar1_data(800, 0.5, seed=22, d=6)
        model = vine_fit(data, max_scores=200)
        assert model.depth == 3
        assert model.dim == 6

    def test_payload_roundtrip(self):
        data = self._ar1_data(500, 0.6, seed=23)
        model = vine_fit(data, max_scores=150)
        payload = model.to_payload()
        rebuilt = VineModel(
            [EmpiricalMargin(s) for s in payload["margins"]],
            [[None if e is None else KernelPairCopula(e["scores"], e["bandwidth"])
              for e in level] for level in payload["trees"]],
            window=payload["window"],
            var_names=payload["var_names"],
        )
        rng_a, rng_b = np.random.default_rng(24), np.random.default_rng(24)
        a = model.sample(50, rng_a)
        b = rebuilt.sample(50, rng_b)
        assert np.array_equal(a, b)
