"""Tests for the scalar spike-and-slab prior computations.

Frozen reference values were computed with adaptive quadrature of
int phi(w) exp(-E w^2/2 + h w) w^k dw (scipy.integrate.quad over the whole
line, tolerance ~1e-12) independently of the closed forms under test.
"""

import numpy as np
import pytest

from ecreg.errors import ConfigError, IntegrabilityViolation, RangeError
from ecreg.priors import (
    PriorSpec,
    bernoulli_gauss,
    bernoulli_uniform,
    invert_mean,
    moments,
)


class TestPriorSpec:
    def test_helper_constructors(self):
        bg = bernoulli_gauss(0.3, 10.0)
        assert bg.rho == 0.3
        assert bg.sigma_w2 == 10.0
        bu = bernoulli_uniform(0.3)
        assert bu.sigma_w2 is None

    def test_rho_out_of_range_rejected(self):
        with pytest.raises(ConfigError):
            bernoulli_gauss(1.5, 1.0)
        with pytest.raises(ConfigError):
            bernoulli_uniform(-0.1)

    def test_gauss_family_requires_positive_slab_variance(self):
        with pytest.raises(ConfigError):
            bernoulli_gauss(0.5, 0.0)
        with pytest.raises(ConfigError):
            PriorSpec("bernoulli_gauss", 0.5, None)

    def test_unknown_family_rejected(self):
        with pytest.raises(ConfigError):
            PriorSpec("laplace", 0.5, 1.0)

    def test_min_tilt(self):
        assert bernoulli_gauss(0.5, 4.0).min_tilt() == -0.25
        assert bernoulli_uniform(0.5).min_tilt() == 0.0


class TestMomentsFrozenValues:
    """Point values frozen from the quadrature oracle."""

    def test_bernoulli_gauss_point(self):
        mom = moments(bernoulli_gauss(0.5, 10.0), 1.0, 1.0)
        np.testing.assert_allclose(mom.log_partition, -0.30447685893382376,
                                   rtol=1e-12)
        np.testing.assert_allclose(mom.mean, 0.29276568983562473, rtol=1e-12)
        np.testing.assert_allclose(mom.second_moment, 0.5589163169589211,
                                   rtol=1e-11)
        np.testing.assert_allclose(mom.inclusion_prob, 0.3220422588191876,
                                   rtol=1e-11)

    def test_bernoulli_gauss_negative_field(self):
        mom = moments(bernoulli_gauss(0.2, 4.0), -3.0, 0.5)
        np.testing.assert_allclose(mom.log_partition, 3.8582834477848706,
                                   rtol=1e-12)
        np.testing.assert_allclose(mom.mean, -3.932466576316699, rtol=1e-11)
        np.testing.assert_allclose(mom.second_moment, 17.040688497372365,
                                   rtol=1e-11)
        np.testing.assert_allclose(mom.inclusion_prob, 0.9831166440791748,
                                   rtol=1e-11)

    def test_bernoulli_uniform_point(self):
        mom = moments(bernoulli_uniform(0.3), 1.5, 2.0)
        np.testing.assert_allclose(mom.log_partition, 0.49055720954513543,
                                   rtol=1e-12)
        np.testing.assert_allclose(mom.mean, 0.42855030780147385, rtol=1e-11)
        np.testing.assert_allclose(mom.second_moment, 0.607112936052088,
                                   rtol=1e-11)
        np.testing.assert_allclose(mom.inclusion_prob, 0.571400410401965,
                                   rtol=1e-11)

    def test_bernoulli_uniform_negative_field(self):
        mom = moments(bernoulli_uniform(0.7), -0.4, 0.25)
        np.testing.assert_allclose(mom.log_partition, 1.6356369699827455,
                                   rtol=1e-12)
        np.testing.assert_allclose(mom.mean, -1.506482448624982, rtol=1e-11)
        np.testing.assert_allclose(mom.second_moment, 6.176578039362422,
                                   rtol=1e-11)
        np.testing.assert_allclose(mom.inclusion_prob, 0.9415515303906128,
                                   rtol=1e-11)


class TestMomentsStructure:
    def test_pure_gaussian_reduces_to_linear_mean(self):
        # rho = 1, sigma_w2 = 1, E = 1, h = 2: mean = h*s2/(1+E*s2) = 1
        mom = moments(bernoulli_gauss(1.0, 1.0), 2.0, 1.0)
        np.testing.assert_allclose(mom.mean, 1.0, rtol=1e-14)
        assert mom.inclusion_prob == 1.0

    def test_zero_field_gives_zero_mean(self):
        for prior in (bernoulli_gauss(0.4, 3.0), bernoulli_uniform(0.4)):
            mom = moments(prior, 0.0, 1.7)
            assert mom.mean == 0.0

    def test_pure_spike_degenerates(self):
        mom = moments(bernoulli_gauss(0.0, 3.0), 5.0, 1.0)
        assert mom.mean == 0.0
        assert mom.second_moment == 0.0
        assert mom.inclusion_prob == 0.0
        assert mom.log_partition == 0.0

    def test_inclusion_prob_bounds(self):
        rng = np.random.default_rng(11)
        h = rng.uniform(-30.0, 30.0, size=200)
        for prior in (bernoulli_gauss(0.3, 5.0), bernoulli_uniform(0.3)):
            pi = moments(prior, h, 2.0).inclusion_prob
            assert np.all(pi >= 0.0)
            assert np.all(pi <= 1.0)

    def test_posterior_variance_positive(self):
        rng = np.random.default_rng(12)
        h = rng.uniform(-20.0, 20.0, size=200)
        for prior in (bernoulli_gauss(0.3, 5.0), bernoulli_uniform(0.3)):
            mom = moments(prior, h, 1.3)
            assert np.all(mom.variance > 0.0)
            assert np.all(mom.second_moment - mom.mean**2 > 0.0)

    def test_vectorized_matches_scalar(self):
        prior = bernoulli_gauss(0.25, 7.0)
        h = np.linspace(-8.0, 8.0, 17)
        vec = moments(prior, h, 0.9)
        for i, hi in enumerate(h):
            one = moments(prior, float(hi), 0.9)
            np.testing.assert_allclose(vec.mean[i], one.mean, rtol=1e-15)
            np.testing.assert_allclose(vec.log_partition[i], one.log_partition,
                                       rtol=1e-15)

    def test_large_field_stays_finite(self):
        # h^2/(2E) would overflow a naive exponential
        for prior in (bernoulli_gauss(0.5, 10.0), bernoulli_uniform(0.5)):
            mom = moments(prior, 1e4, 0.5)
            assert np.isfinite(mom.log_partition)
            assert np.isfinite(mom.mean)
            assert np.isfinite(mom.second_moment)

    def test_flat_slab_requires_positive_tilt(self):
        prior = bernoulli_uniform(0.5)
        with pytest.raises(IntegrabilityViolation):
            moments(prior, 1.0, 0.0)
        with pytest.raises(IntegrabilityViolation):
            moments(prior, 1.0, -1.0)

    def test_gauss_slab_tilt_boundary(self):
        prior = bernoulli_gauss(0.5, 2.0)
        with pytest.raises(IntegrabilityViolation):
            moments(prior, 1.0, -0.5)
        mom = moments(prior, 1.0, -0.25)  # still integrable above -1/sigma_w2
        assert np.isfinite(mom.log_partition)


class TestMomentsDerivatives:
    """log_partition generates the moments: d/dh -> mean, -2 d/dE -> second."""

    def _fd_checks(self, prior, h, E):
        step = 1e-6
        up = moments(prior, h + step, E)
        down = moments(prior, h - step, E)
        d_dh = (up.log_partition - down.log_partition) / (2.0 * step)
        here = moments(prior, h, E)
        np.testing.assert_allclose(d_dh, here.mean, rtol=1e-5, atol=1e-9)
        up_e = moments(prior, h, E + step)
        down_e = moments(prior, h, E - step)
        d_de = -2.0 * (up_e.log_partition - down_e.log_partition) / (2.0 * step)
        np.testing.assert_allclose(d_de, here.second_moment, rtol=1e-5,
                                   atol=1e-9)
        d_mean = (up.mean - down.mean) / (2.0 * step)
        np.testing.assert_allclose(d_mean, here.variance, rtol=1e-5, atol=1e-9)

    def test_bernoulli_gauss(self):
        h = np.linspace(-6.0, 6.0, 25)
        for E in (0.1, 1.0, 10.0):
            self._fd_checks(bernoulli_gauss(0.35, 5.0), h, E)

    def test_bernoulli_uniform(self):
        h = np.linspace(-6.0, 6.0, 25)
        for E in (0.1, 1.0, 10.0):
            self._fd_checks(bernoulli_uniform(0.35), h, E)

    def test_mean_strictly_increasing_in_field(self):
        rng = np.random.default_rng(21)
        for prior in (bernoulli_gauss(0.15, 8.0), bernoulli_uniform(0.15)):
            for _ in range(50):
                a, b = np.sort(rng.uniform(-25.0, 25.0, size=2))
                if a == b:
                    continue
                ma = moments(prior, a, 1.4).mean
                mb = moments(prior, b, 1.4).mean
                assert mb > ma


class TestInvertMean:
    def test_zero_target_gives_zero_field(self):
        assert invert_mean(bernoulli_gauss(0.5, 2.0), 0.0, 1.0) == 0.0
        assert invert_mean(bernoulli_uniform(0.5), 0.0, 1.0) == 0.0

    def test_pure_gaussian_linear_inverse(self):
        # rho = 1, sigma_w2 = 1, E = 1: mean = h/2, so m = 1 gives h = 2
        h = invert_mean(bernoulli_gauss(1.0, 1.0), 1.0, 1.0)
        np.testing.assert_allclose(h, 2.0, rtol=1e-12)

    def test_frozen_oracle_bernoulli_gauss(self):
        h = invert_mean(bernoulli_gauss(0.5, 10.0), 0.5, 1.0)
        np.testing.assert_allclose(h, 1.3483231631264359, rtol=1e-10)

    def test_frozen_oracle_bernoulli_uniform(self):
        h = invert_mean(bernoulli_uniform(0.3), -1.2, 2.0)
        np.testing.assert_allclose(h, -2.827903414581056, rtol=1e-10)

    def test_residual_contract(self):
        # returned h reproduces the target mean to 1e-12*max(1, |m|)
        prior = bernoulli_gauss(0.3, 10.0)
        for m_target in (0.5, -2.0, 7.5, 1e-4):
            h = invert_mean(prior, m_target, 2.0)
            back = float(moments(prior, h, 2.0).mean)
            assert abs(back - m_target) <= 1e-12 * max(1.0, abs(m_target))

    def test_roundtrip_over_field_grid(self):
        h_grid = np.linspace(-20.0, 20.0, 81)
        for prior in (bernoulli_gauss(0.3, 10.0), bernoulli_uniform(0.3)):
            for E in (0.1, 1.0, 10.0):
                m = moments(prior, h_grid, E).mean
                h_back = invert_mean(prior, m, E)
                m_back = moments(prior, h_back, E).mean
                np.testing.assert_allclose(m_back, m, atol=1e-10, rtol=1e-10)

    def test_vectorized_targets(self):
        prior = bernoulli_uniform(0.4)
        targets = np.array([-3.0, -0.2, 0.0, 0.4, 5.0])
        h = invert_mean(prior, targets, 1.5)
        back = moments(prior, h, 1.5).mean
        np.testing.assert_allclose(back, targets, atol=1e-12, rtol=1e-12)

    def test_warm_start_agrees_with_cold(self):
        prior = bernoulli_gauss(0.2, 6.0)
        cold = invert_mean(prior, 1.25, 0.8)
        warm = invert_mean(prior, 1.25, 0.8, h0=cold * 1.05)
        np.testing.assert_allclose(warm, cold, rtol=1e-10)

    def test_pure_spike_rejects_nonzero_target(self):
        with pytest.raises(RangeError):
            invert_mean(bernoulli_gauss(0.0, 1.0), 0.3, 1.0)
        assert invert_mean(bernoulli_gauss(0.0, 1.0), 0.0, 1.0) == 0.0

    def test_invalid_tilt_rejected(self):
        with pytest.raises(IntegrabilityViolation):
            invert_mean(bernoulli_uniform(0.5), 0.3, -2.0)
