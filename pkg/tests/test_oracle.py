import numpy as np
import pytest

from dmi.observation import MaskOperator, ObservationSet, build_mask, observe
from dmi.oracle import map_tikhonov, posterior_gaussian, sequential_filter
from dmi.priors import GaussianPrior
from dmi.sampler import generate_obs_sequence
from dmi.scene import GridMap
from dmi.schedule import make_ddpm_schedule


def make_obs(y, indices, dims, sigma):
    mask = MaskOperator(dims=dims, observed=np.asarray(indices))
    return ObservationSet(mask=mask, y=np.asarray(y, dtype=float), sigma=sigma)


class TestPosteriorGaussian:
    def test_unit_conjugate_case(self):
        prior = GaussianPrior(mean=np.zeros((2, 2)), var=np.ones((2, 2)))
        obs = make_obs([1.0], [0], (2, 2), sigma=1.0)
        post = posterior_gaussian(prior, obs)
        assert post.mean[0, 0] == pytest.approx(0.5)
        assert post.var[0, 0] == pytest.approx(0.5)

    def test_observation_at_prior_mean_untouched_mean(self):
        prior = GaussianPrior(mean=np.full((2, 2), 0.3), var=np.ones((2, 2)))
        obs = make_obs([0.3], [2], (2, 2), sigma=0.5)
        post = posterior_gaussian(prior, obs)
        assert post.mean[1, 0] == pytest.approx(0.3)

    def test_unobserved_cells_keep_prior(self):
        prior = GaussianPrior(mean=np.full((2, 2), 0.7), var=np.full((2, 2), 0.2))
        obs = make_obs([0.0], [1], (2, 2), sigma=0.1)
        post = posterior_gaussian(prior, obs)
        assert post.mean[1, 0] == 0.7 and post.var[1, 0] == 0.2
        assert post.mean[1, 1] == 0.7 and post.var[1, 1] == 0.2

    def test_hard_constraint_sentinel(self):
        prior = GaussianPrior(mean=np.zeros((2, 2)), var=np.ones((2, 2)))
        obs = make_obs([0.65], [3], (2, 2), sigma=0.0)
        post = posterior_gaussian(prior, obs)
        assert post.mean[1, 1] == 0.65
        assert post.var[1, 1] == 0.0

    def test_variance_never_increases(self):
        rng = np.random.default_rng(0)
        for k in range(20):
            prior = GaussianPrior(
                mean=rng.uniform(size=(4, 4)), var=rng.uniform(0.05, 1.0, (4, 4))
            )
            mask = build_mask("random_pixel", 0.5, (4, 4), seed=k)
            obs = observe(GridMap(4, 4, rng.uniform(size=(4, 4))), mask, 0.1, seed=k)
            post = posterior_gaussian(prior, obs)
            assert (post.var <= prior.var + 1e-15).all()


class TestMapTikhonov:
    def test_noiseless_reproduces_observations(self):
        prior = GaussianPrior(mean=np.zeros((3, 3)), var=np.full((3, 3), 0.5))
        obs = make_obs([0.2, 0.8], [1, 5], (3, 3), sigma=0.0)
        est = map_tikhonov(prior, obs)
        assert est.ravel()[1] == pytest.approx(0.2)
        assert est.ravel()[5] == pytest.approx(0.8)

    def test_unit_case_matches_posterior_mean(self):
        prior = GaussianPrior(mean=np.zeros((2, 2)), var=np.ones((2, 2)))
        obs = make_obs([1.0], [0], (2, 2), sigma=1.0)
        assert map_tikhonov(prior, obs)[0, 0] == pytest.approx(0.5)

    def test_unobserved_cells_zero(self):
        prior = GaussianPrior(mean=np.zeros((2, 2)), var=np.ones((2, 2)))
        obs = make_obs([1.0], [0], (2, 2), sigma=0.3)
        est = map_tikhonov(prior, obs)
        assert (est.ravel()[1:] == 0.0).all()

    def test_equals_posterior_mean_on_random_instances(self):
        # MAP = posterior mean for Gaussians (zero-mean prior), 100 cases.
        rng = np.random.default_rng(1)
        for k in range(100):
            var = rng.uniform(0.05, 2.0, (5, 5))
            prior = GaussianPrior(mean=np.zeros((5, 5)), var=var)
            mask = build_mask("random_pixel", rng.uniform(0, 0.9), (5, 5), seed=k)
            y = rng.standard_normal(mask.d)
            obs = ObservationSet(mask=mask, y=y, sigma=float(rng.uniform(0.01, 0.5)))
            post = posterior_gaussian(prior, obs)
            est = map_tikhonov(prior, obs)
            np.testing.assert_allclose(est, post.mean, atol=1e-10)


class TestSequentialFilter:
    def test_no_observations_gives_diffusion_marginals(self):
        sch = make_ddpm_schedule(12)
        prior = GaussianPrior(mean=np.full((3, 3), 0.4), var=np.full((3, 3), 0.09))
        mask = MaskOperator(dims=(3, 3), observed=np.array([], dtype=np.int64))
        obs = ObservationSet(mask=mask, y=np.zeros(0), sigma=0.1)
        obs_seq = generate_obs_sequence(obs, sch, seed=0)
        states = sequential_filter(obs_seq, prior, sch)
        for t in range(13):
            np.testing.assert_allclose(states[t].mean, sch.c[t] * prior.mean, atol=1e-12)
            np.testing.assert_allclose(
                states[t].var, sch.c[t] ** 2 * prior.var + sch.d[t] ** 2, atol=1e-12
            )

    def test_noiseless_full_mask_identifies_truth(self):
        sch = make_ddpm_schedule(10)
        rng = np.random.default_rng(2)
        truth = rng.uniform(0.2, 0.8, (3, 3))
        prior = GaussianPrior(mean=np.full((3, 3), 0.5), var=np.full((3, 3), 0.25))
        mask = build_mask("random_pixel", 0.0, (3, 3), seed=0)
        obs = observe(GridMap(3, 3, truth), mask, 0.0, seed=1)
        obs_seq = generate_obs_sequence(obs, sch, seed=3)
        states = sequential_filter(obs_seq, prior, sch)
        np.testing.assert_allclose(states[0].mean, truth, atol=1e-9)
        np.testing.assert_allclose(states[0].var, 0.0, atol=1e-12)

    def test_single_cell_hand_kalman(self):
        # Independent 3-step Kalman recursion on a single cell, N = 2.
        sch = make_ddpm_schedule(2, beta_min=0.75, beta_max=0.75)
        m0, s2, sigma = 0.3, 0.5, 0.2
        prior = GaussianPrior(mean=np.full((1, 1), m0), var=np.full((1, 1), s2))
        mask = MaskOperator(dims=(1, 1), observed=np.array([0]))
        obs = ObservationSet(mask=mask, y=np.array([0.9]), sigma=sigma)
        obs_seq = generate_obs_sequence(obs, sch, seed=4)
        y = obs_seq.y[:, 0]
        a, b, c, d = sch.a, sch.b, sch.c, sch.d

        # Hand recursion: init at t=2 with the diffused prior, then update,
        # then for t = 1, 0: predict through the exact reverse conditional
        # and update with the noise-shared likelihood.
        g = lambda t: c[t] ** 2 * s2 + d[t] ** 2
        mean, var = c[2] * m0, g(2)
        lv = (c[2] * sigma) ** 2
        var_u = 1 / (1 / var + 1 / lv)
        mean = var_u * (mean / var + y[2] / lv)
        var = var_u
        hand = {2: (mean, var)}
        for t in (1, 0):
            f = a[t + 1] * g(t) / g(t + 1)
            e = c[t] * m0 * b[t + 1] ** 2 / g(t + 1)
            q = b[t + 1] ** 2 * g(t) / g(t + 1)
            mean = f * mean + e
            var = f**2 * var + q
            lv = (c[t] * sigma) ** 2
            var_u = 1 / (1 / var + 1 / lv)
            mean = var_u * (mean / var + y[t] / lv)
            var = var_u
            hand[t] = (mean, var)

        states = sequential_filter(obs_seq, prior, sch)
        for t in (2, 1, 0):
            assert states[t].mean[0, 0] == pytest.approx(hand[t][0], abs=1e-10)
            assert states[t].var[0, 0] == pytest.approx(hand[t][1], abs=1e-10)

    def test_collapsed_to_static_posterior(self):
        # Updating only at t = 0 must reproduce posterior_gaussian.
        sch = make_ddpm_schedule(15)
        rng = np.random.default_rng(5)
        prior = GaussianPrior(
            mean=rng.uniform(size=(4, 4)), var=rng.uniform(0.05, 0.4, (4, 4))
        )
        mask = build_mask("random_pixel", 0.5, (4, 4), seed=6)
        obs = observe(GridMap(4, 4, rng.uniform(size=(4, 4))), mask, 0.1, seed=7)
        obs_seq = generate_obs_sequence(obs, sch, seed=8)
        states = sequential_filter(obs_seq, prior, sch, update_steps={0})
        static = posterior_gaussian(prior, obs)
        np.testing.assert_allclose(states[0].mean, static.mean, atol=1e-10)
        np.testing.assert_allclose(states[0].var, static.var, atol=1e-10)

    def test_non_ddpm_rejected(self):
        from dmi.schedule import make_ddm_schedule

        sch = make_ddpm_schedule(6)
        prior = GaussianPrior(mean=np.zeros((2, 2)), var=np.ones((2, 2)))
        mask = build_mask("random_pixel", 0.0, (2, 2), seed=0)
        obs = observe(GridMap(2, 2, np.zeros((2, 2))), mask, 0.1, seed=0)
        obs_seq = generate_obs_sequence(obs, sch, seed=0)
        with pytest.raises(ValueError):
            sequential_filter(obs_seq, prior, make_ddm_schedule(6))
