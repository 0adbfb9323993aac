import math

import numpy as np
import pytest

from dmi.metrics import (
    CSV_HEADER,
    MetricsConfig,
    building_region,
    evaluate_run,
    nmse,
    psnr,
    region_metrics,
    report_from_csv_row,
    report_to_csv_row,
    rmse,
    spe,
    srq_region,
    ssim,
)
from dmi.scene import GridMap, Scene, generate_scene, simulate_pathloss


def rand_grid(shape, seed=0, lo=0.0, hi=1.0):
    return np.random.default_rng(seed).uniform(lo, hi, shape)


class TestPsnr:
    def test_identical_inputs_infinite(self):
        a = rand_grid((8, 8))
        assert psnr(a, a) == math.inf

    def test_known_mse(self):
        # MSE = 0.01 with MAX = 1 -> 20 dB exactly.
        a = np.zeros((10, 10))
        b = np.full((10, 10), 0.1)
        assert psnr(a, b) == pytest.approx(20.0, abs=1e-12)

    def test_symmetric(self):
        a, b = rand_grid((6, 6), 1), rand_grid((6, 6), 2)
        assert psnr(a, b) == psnr(b, a)

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((4, 4)), np.zeros((5, 5)))


class TestSsim:
    def test_identical_inputs_one(self):
        a = rand_grid((12, 12), 3)
        assert ssim(a, a) == pytest.approx(1.0, abs=1e-14)

    def test_equal_constants_one(self):
        a = np.full((9, 9), 0.4)
        assert ssim(a, a.copy()) == pytest.approx(1.0)

    def test_constant_offset_hand_formula(self):
        # y = x + delta has sigma_x = sigma_y = sigma_xy per window, so the
        # windowed formula reduces to the luminance term; evaluate it
        # independently window by window.
        a = rand_grid((10, 10), 4, lo=0.2, hi=0.6)
        delta = 0.1
        b = a + delta
        cfg = MetricsConfig()

        half = cfg.ssim_window // 2
        x = np.arange(-half, half + 1, dtype=float)
        k = np.exp(-0.5 * (x / cfg.ssim_sigma) ** 2)
        w = np.outer(k, k)
        w /= w.sum()
        vals = []
        for r in range(10 - cfg.ssim_window + 1):
            for c in range(10 - cfg.ssim_window + 1):
                win = a[r : r + 7, c : c + 7]
                mu_x = float((win * w).sum())
                mu_y = mu_x + delta
                var = float((w * (win - mu_x) ** 2).sum())
                num = (2 * mu_x * mu_y + cfg.ssim_c1) * (2 * var + cfg.ssim_c2)
                den = (mu_x**2 + mu_y**2 + cfg.ssim_c1) * (2 * var + cfg.ssim_c2)
                vals.append(num / den)
        assert ssim(a, b) == pytest.approx(float(np.mean(vals)), abs=1e-12)

    def test_range(self):
        a, b = rand_grid((16, 16), 5), rand_grid((16, 16), 6)
        v = ssim(a, b)
        assert -1.0 <= v <= 1.0

    def test_too_small_grid(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((5, 5)), np.zeros((5, 5)))


class TestNmseRmse:
    def test_nmse_perfect_zero(self):
        a = rand_grid((6, 6), 7, lo=0.1)
        assert nmse(a, a) == 0.0

    def test_nmse_zero_prediction_is_one(self):
        a = rand_grid((6, 6), 8, lo=0.1)
        assert nmse(a, np.zeros_like(a)) == pytest.approx(1.0)

    def test_nmse_double_prediction_is_one(self):
        a = rand_grid((6, 6), 9, lo=0.1)
        assert nmse(a, 2 * a) == pytest.approx(1.0)

    def test_nmse_all_zero_truth_rejected(self):
        with pytest.raises(ValueError):
            nmse(np.zeros((4, 4)), np.ones((4, 4)))

    def test_rmse_perfect_and_constant_error(self):
        a = rand_grid((5, 5), 10)
        assert rmse(a, a) == 0.0
        assert rmse(a, a + 0.1) == pytest.approx(0.1)

    def test_psnr_rmse_identity(self):
        a, b = rand_grid((8, 8), 11), rand_grid((8, 8), 12)
        r = rmse(a, b)
        assert psnr(a, b) == pytest.approx(20 * math.log10(1.0 / r), rel=1e-12)


class TestSpe:
    def scene(self):
        return generate_scene(32, 32, 4, seed=7)

    def test_truth_map_zero_error(self):
        scn = self.scene()
        grid = simulate_pathloss(scn)
        assert spe(grid, scn) == 0.0

    def test_planted_offset_three(self):
        scn = generate_scene(32, 32, 0, seed=1)
        # put tx away from edges for the planted peaks
        scn = Scene(width=32, height=32, buildings=scn.buildings, tx=(15, 15))
        vals = np.zeros((32, 32))
        vals[15, 18] = 1.0
        assert spe(GridMap(32, 32, vals), scn) == pytest.approx(3.0)

    def test_three_four_five_triangle(self):
        scn = generate_scene(32, 32, 0, seed=1)
        scn = Scene(width=32, height=32, buildings=scn.buildings, tx=(15, 15))
        vals = np.zeros((32, 32))
        vals[18, 19] = 1.0
        assert spe(GridMap(32, 32, vals), scn) == pytest.approx(5.0)

    def test_tie_breaks_to_smallest_linear_index(self):
        scn = generate_scene(32, 32, 0, seed=1)
        scn = Scene(width=32, height=32, buildings=scn.buildings, tx=(0, 0))
        vals = np.zeros((32, 32))
        vals[0, 0] = 1.0
        vals[5, 5] = 1.0
        assert spe(GridMap(32, 32, vals), scn) == 0.0

    def test_building_cells_excluded(self):
        buildings = np.zeros((32, 32), dtype=np.uint8)
        buildings[10, 10] = 1
        scn = Scene(width=32, height=32, buildings=buildings, tx=(12, 10))
        vals = np.zeros((32, 32))
        vals[10, 10] = 1.0  # max inside a building must be ignored
        vals[12, 10] = 0.5
        assert spe(GridMap(32, 32, vals), scn) == 0.0


class TestRegions:
    def test_srq_region_count_brute_force(self):
        cfg = MetricsConfig()
        scn = generate_scene(32, 32, 0, seed=2)
        region = srq_region(scn, cfg.srq_radius)
        r0, c0 = scn.tx
        count = 0
        for r in range(32):
            for c in range(32):
                if abs(r - r0) <= cfg.srq_radius and abs(c - c0) <= cfg.srq_radius:
                    count += 1
        assert region.sum() == count

    def test_building_region_no_buildings(self):
        scn = generate_scene(16, 16, 0, seed=0)
        assert building_region(scn, 3).sum() == 0

    def test_building_region_single_cell_radius_one(self):
        buildings = np.zeros((16, 16), dtype=np.uint8)
        buildings[8, 8] = 1
        scn = Scene(width=16, height=16, buildings=buildings, tx=(0, 0))
        region = building_region(scn, 1)
        assert region.sum() == 8
        expect = {(7, 7), (7, 8), (7, 9), (8, 7), (8, 9), (9, 7), (9, 8), (9, 9)}
        assert set(zip(*np.nonzero(region))) == expect

    def test_building_region_radius_zero_empty(self):
        buildings = np.zeros((16, 16), dtype=np.uint8)
        buildings[4:8, 4:8] = 1
        scn = Scene(width=16, height=16, buildings=buildings, tx=(0, 0))
        assert building_region(scn, 0).sum() == 0

    def test_region_metrics_full_grid_equals_global(self):
        a, b = rand_grid((16, 16), 13), rand_grid((16, 16), 14)
        full = np.ones((16, 16), bool)
        out = region_metrics(a, b, full)
        assert out["psnr"] == pytest.approx(psnr(a, b), abs=1e-12)
        assert out["rmse"] == pytest.approx(rmse(b, a), abs=1e-12)
        assert out["nmse"] == pytest.approx(nmse(b, a), abs=1e-12)
        assert out["ssim"] == pytest.approx(ssim(a, b), abs=1e-12)

    def test_region_perfect_with_garbage_outside(self):
        truth = rand_grid((16, 16), 15)
        recon = rand_grid((16, 16), 16)
        region = np.zeros((16, 16), bool)
        region[4:12, 4:12] = True
        recon[region] = truth[region]
        out = region_metrics(recon, truth, region)
        assert out["psnr"] == math.inf

    def test_empty_region_rejected(self):
        with pytest.raises(ValueError):
            region_metrics(np.zeros((8, 8)), np.zeros((8, 8)), np.zeros((8, 8), bool))


class TestEvaluateRun:
    def test_perfect_reconstruction_sentinels(self):
        scn = generate_scene(32, 32, 3, seed=4)
        grid = simulate_pathloss(scn)
        report = evaluate_run(grid, grid, scn)
        assert report.psnr == math.inf
        assert report.ssim == pytest.approx(1.0, abs=1e-12)
        assert report.nmse == 0.0
        assert report.rmse == 0.0
        assert report.spe == 0.0
        assert report.srq_psnr == math.inf

    def test_metadata_echoed(self):
        scn = generate_scene(32, 32, 3, seed=4)
        grid = simulate_pathloss(scn)
        md = {"method": "idw", "mask_rate": 0.8, "sigma": 0.01, "aware": True,
              "seed": 17, "wall_time_s": 1.25}
        report = evaluate_run(grid, grid, scn, MetricsConfig(), md)
        assert report.metadata == md

    def test_csv_round_trip(self):
        scn = generate_scene(32, 32, 3, seed=4)
        truth = simulate_pathloss(scn)
        recon = GridMap(32, 32, np.clip(truth.values + 0.05, 0, 1))
        md = {"method": "diffusion", "mask_rate": 0.7, "sigma": 0.05,
              "aware": False, "seed": 3, "wall_time_s": 2.5}
        report = evaluate_run(recon, truth, scn, MetricsConfig(), md)
        row = report_to_csv_row(report)
        assert len(row.split(",")) == len(CSV_HEADER.split(","))
        back = report_from_csv_row(row)
        assert back.psnr == pytest.approx(report.psnr)
        assert back.ssim == pytest.approx(report.ssim)
        assert back.spe == pytest.approx(report.spe)
        assert back.metadata["method"] == "diffusion"
        assert back.metadata["aware"] is False
        assert back.metadata["seed"] == 3

    def test_infinite_psnr_serializes_as_inf(self):
        scn = generate_scene(32, 32, 3, seed=4)
        grid = simulate_pathloss(scn)
        report = evaluate_run(grid, grid, scn, MetricsConfig(), {"method": "x"})
        row = report_to_csv_row(report)
        assert ",inf," in row
        back = report_from_csv_row(row)
        assert back.psnr == math.inf

    def test_no_building_scene_bia_nan(self):
        scn = generate_scene(32, 32, 0, seed=5)
        grid = simulate_pathloss(scn)
        report = evaluate_run(grid, grid, scn)
        assert math.isnan(report.bia_psnr)
        row = report_to_csv_row(report)
        assert math.isnan(report_from_csv_row(row).bia_psnr)
