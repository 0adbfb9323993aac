import numpy as np
import pytest

from dmi.baselines import (
    VariogramModel,
    fit_variogram,
    idw_interpolate,
    kriging_interpolate,
)
from dmi.observation import MaskOperator, ObservationSet, build_mask, observe
from dmi.scene import GridMap


def make_obs(y, indices, dims, sigma=0.0):
    mask = MaskOperator(dims=dims, observed=np.asarray(indices))
    return ObservationSet(mask=mask, y=np.asarray(y, dtype=float), sigma=sigma)


class TestIdw:
    def test_single_observation_constant_map(self):
        obs = make_obs([0.37], [5], (4, 4))
        grid = idw_interpolate(obs, (4, 4))
        np.testing.assert_allclose(grid.values, 0.37)

    def test_exact_at_observed_location(self):
        obs = make_obs([0.2, 0.9], [0, 15], (4, 4))
        grid = idw_interpolate(obs, (4, 4))
        assert grid.values.ravel()[0] == pytest.approx(0.2)
        assert grid.values.ravel()[15] == pytest.approx(0.9)

    def test_equidistant_pair_averages(self):
        # Target (0, 1) sits exactly between observations at (0, 0) and (0, 2).
        obs = make_obs([0.2, 0.6], [0, 2], (5, 1))
        for power in (1.0, 2.0, 3.5):
            grid = idw_interpolate(obs, (5, 1), power=power)
            assert grid.values[0, 1] == pytest.approx(0.4)

    def test_output_clamped(self):
        obs = make_obs([1.5, -0.5], [0, 3], (2, 2), sigma=0.5)
        grid = idw_interpolate(obs, (2, 2))
        assert grid.values.min() >= 0.0 and grid.values.max() <= 1.0

    def test_empty_rejected(self):
        obs = make_obs([], [], (4, 4))
        with pytest.raises(ValueError):
            idw_interpolate(obs, (4, 4))


class TestKriging:
    def default_model(self):
        return VariogramModel(nugget=0.0, sill=0.1, range_=4.0)

    def test_exact_at_observed_locations(self):
        rng = np.random.default_rng(0)
        mask = build_mask("random_pixel", 0.7, (8, 8), seed=1)
        truth = GridMap(8, 8, rng.uniform(size=(8, 8)))
        obs = observe(truth, mask, 0.0, seed=2)
        grid = kriging_interpolate(obs, (8, 8), self.default_model())
        np.testing.assert_allclose(grid.values.ravel()[mask.observed], obs.y, atol=1e-12)

    def test_constant_field_constant_prediction(self):
        obs = make_obs([0.42] * 6, [0, 9, 18, 27, 36, 45], (8, 8))
        grid = kriging_interpolate(obs, (8, 8), self.default_model())
        np.testing.assert_allclose(grid.values, 0.42, atol=1e-8)

    def test_three_point_line_hand_system(self):
        # Observations on a line at x = 0, 2, 5; prediction at x = 1.
        # Independent solve of the 4x4 ordinary-kriging system in-test.
        model = VariogramModel(nugget=0.01, sill=0.2, range_=3.0)
        xs = np.array([0.0, 2.0, 5.0])
        target = 1.0
        gamma = lambda h: 0.01 + (0.2 - 0.01) * (1 - np.exp(-np.abs(h) / 3.0))
        a = np.ones((4, 4))
        a[3, 3] = 0.0
        for i in range(3):
            for j in range(3):
                a[i, j] = gamma(xs[i] - xs[j])
        rhs = np.append(gamma(xs - target), 1.0)
        hand = np.linalg.solve(a, rhs)

        obs = make_obs([0.3, 0.5, 0.8], [0, 2, 5], (8, 1))
        grid = kriging_interpolate(obs, (8, 1), model, max_neighbors=3)
        expect = float(hand[:3] @ np.array([0.3, 0.5, 0.8]))
        assert grid.values[0, 1] == pytest.approx(expect, abs=1e-8)

    def test_weights_sum_via_constant_shift_invariance(self):
        # Lagrange constraint -> prediction of (y + const) shifts by const,
        # which pins the weight sums to 1 within solver tolerance.
        rng = np.random.default_rng(3)
        mask = build_mask("random_pixel", 0.8, (8, 8), seed=4)
        y = rng.uniform(0.1, 0.5, mask.d)
        model = self.default_model()
        g1 = kriging_interpolate(
            ObservationSet(mask=mask, y=y, sigma=0.0), (8, 8), model
        )
        g2 = kriging_interpolate(
            ObservationSet(mask=mask, y=y + 0.3, sigma=0.0), (8, 8), model
        )
        np.testing.assert_allclose(g2.values, g1.values + 0.3, atol=1e-8)

    def test_singular_system_falls_back_to_idw(self):
        # sill == nugget makes the variogram flat and the system singular.
        model = VariogramModel(nugget=0.0, sill=0.0, range_=2.0)
        obs = make_obs([0.2, 0.6], [0, 3], (2, 2))
        stats = {}
        grid = kriging_interpolate(obs, (2, 2), model, max_neighbors=2, stats=stats)
        assert stats["fallback_count"] == 2
        assert np.isfinite(grid.values).all()

    def test_minimum_observations(self):
        with pytest.raises(ValueError):
            kriging_interpolate(make_obs([0.5], [0], (4, 4)), (4, 4), self.default_model())


class TestFitVariogram:
    def test_white_noise_sill_near_variance(self):
        rng = np.random.default_rng(5)
        mask = build_mask("random_pixel", 0.0, (16, 16), seed=0)
        vals = 0.5 + 0.1 * rng.standard_normal(256)
        obs = ObservationSet(mask=mask, y=vals, sigma=0.0)
        model = fit_variogram(obs)
        sample_var = float(np.var(vals))
        assert abs(model.sill - sample_var) <= 0.2 * sample_var

    def test_constant_field_sill_near_zero(self):
        mask = build_mask("random_pixel", 0.0, (8, 8), seed=0)
        obs = ObservationSet(mask=mask, y=np.full(64, 0.4), sigma=0.0)
        model = fit_variogram(obs)
        assert model.sill <= 1e-6

    def test_deterministic(self):
        rng = np.random.default_rng(6)
        mask = build_mask("random_pixel", 0.5, (16, 16), seed=1)
        obs = ObservationSet(mask=mask, y=rng.uniform(size=mask.d), sigma=0.0)
        a = fit_variogram(obs)
        b = fit_variogram(obs)
        assert (a.nugget, a.sill, a.range_) == (b.nugget, b.sill, b.range_)

    def test_minimum_count_enforced(self):
        obs = make_obs(np.full(10, 0.5), list(range(10)), (8, 8))
        with pytest.raises(ValueError):
            fit_variogram(obs)

    def test_model_validation(self):
        with pytest.raises(ValueError):
            VariogramModel(nugget=0.5, sill=0.2, range_=1.0)
        with pytest.raises(ValueError):
            VariogramModel(nugget=0.0, sill=0.2, range_=0.0)
