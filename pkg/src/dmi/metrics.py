"""Evaluation metrics: PSNR, SSIM, NMSE, RMSE, source-position error, and
region-restricted variants near the source (SRQ) and around buildings (BIA).

PSNR of a perfect match is a +inf sentinel, serialized as the string "inf"
in the CSV schema.  SSIM uses sliding 7x7 Gaussian windows (std 1.5) with
mean pooling over all fully-interior window positions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .scene import Scene

__all__ = [
    "MetricsConfig",
    "MetricsReport",
    "psnr",
    "ssim",
    "nmse",
    "rmse",
    "spe",
    "region_metrics",
    "building_region",
    "srq_region",
    "evaluate_run",
    "report_to_csv_row",
    "report_from_csv_row",
    "CSV_HEADER",
]


@dataclass(frozen=True)
class MetricsConfig:
    max_value: float = 1.0
    ssim_window: int = 7
    ssim_sigma: float = 1.5
    srq_radius: int = 8
    bia_radius: int = 3

    @property
    def ssim_c1(self) -> float:
        return (0.01 * self.max_value) ** 2

    @property
    def ssim_c2(self) -> float:
        return (0.03 * self.max_value) ** 2


@dataclass
class MetricsReport:
    psnr: float
    ssim: float
    nmse: float
    rmse: float
    spe: float
    srq_psnr: float
    srq_ssim: float
    bia_psnr: float
    bia_ssim: float
    metadata: dict = field(default_factory=dict)


CSV_HEADER = (
    "method,mask_rate,sigma,aware,seed,psnr,ssim,nmse,rmse,spe,"
    "srq_psnr,srq_ssim,bia_psnr,bia_ssim,wall_time_s"
)


def _check_dims(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")


def psnr(a: np.ndarray, b: np.ndarray, cfg: MetricsConfig = MetricsConfig()) -> float:
    """10 log10(MAX^2 / MSE); +inf when the inputs match exactly."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    _check_dims(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(cfg.max_value**2 / mse)


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    half = size // 2
    x = np.arange(-half, half + 1, dtype=float)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    k2 = np.outer(k, k)
    return k2 / k2.sum()


def _windows(x: np.ndarray, size: int) -> np.ndarray:
    return np.lib.stride_tricks.sliding_window_view(x, (size, size))


def ssim(a: np.ndarray, b: np.ndarray, cfg: MetricsConfig = MetricsConfig()) -> float:
    """Mean structural similarity over sliding Gaussian-weighted windows."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    _check_dims(a, b)
    size = cfg.ssim_window
    if a.shape[0] < size or a.shape[1] < size:
        raise ValueError(f"grid smaller than the {size}x{size} SSIM window")
    w = _gaussian_kernel(size, cfg.ssim_sigma)

    wa = _windows(a, size)
    wb = _windows(b, size)
    mu_a = np.einsum("ijkl,kl->ij", wa, w)
    mu_b = np.einsum("ijkl,kl->ij", wb, w)
    da = wa - mu_a[:, :, None, None]
    db = wb - mu_b[:, :, None, None]
    var_a = np.einsum("ijkl,kl->ij", da**2, w)
    var_b = np.einsum("ijkl,kl->ij", db**2, w)
    cov = np.einsum("ijkl,kl->ij", da * db, w)

    c1, c2 = cfg.ssim_c1, cfg.ssim_c2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def nmse(truth: np.ndarray, pred: np.ndarray) -> float:
    """sum((x - xhat)^2) / sum(x^2); normalized by the truth, so asymmetric."""
    truth, pred = np.asarray(truth, float), np.asarray(pred, float)
    _check_dims(truth, pred)
    denom = float(np.sum(truth**2))
    if denom == 0.0:
        raise ValueError("NMSE undefined for all-zero truth")
    return float(np.sum((truth - pred) ** 2)) / denom


def rmse(truth: np.ndarray, pred: np.ndarray) -> float:
    truth, pred = np.asarray(truth, float), np.asarray(pred, float)
    _check_dims(truth, pred)
    return float(np.sqrt(np.mean((truth - pred) ** 2)))


def spe(recon, scene: Scene) -> float:
    """Euclidean distance (pixels) from the predicted source to the true one.

    The predicted source is the argmax of the reconstruction over
    non-building cells; ties break to the smallest linear index.
    """
    values = np.asarray(getattr(recon, "values", recon), float)
    masked = np.where(scene.buildings == 1, -np.inf, values)
    flat_idx = int(np.argmax(masked))
    r, c = divmod(flat_idx, scene.width)
    return float(np.hypot(r - scene.tx[0], c - scene.tx[1]))


def srq_region(scene: Scene, radius: int) -> np.ndarray:
    """Boolean mask of the (2r+1)^2 square around the true source, clipped."""
    region = np.zeros((scene.height, scene.width), dtype=bool)
    r0 = max(scene.tx[0] - radius, 0)
    r1 = min(scene.tx[0] + radius + 1, scene.height)
    c0 = max(scene.tx[1] - radius, 0)
    c1 = min(scene.tx[1] + radius + 1, scene.width)
    region[r0:r1, c0:c1] = True
    return region


def building_region(scene: Scene, radius: int) -> np.ndarray:
    """Non-building cells within Chebyshev distance `radius` of a building."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    b = scene.buildings == 1
    if not b.any() or radius == 0:
        return np.zeros_like(b, dtype=bool)
    dilated = b.copy()
    for dr in range(-radius, radius + 1):
        for dc in range(-radius, radius + 1):
            shifted = np.zeros_like(b)
            src_r = slice(max(0, -dr), b.shape[0] - max(0, dr))
            dst_r = slice(max(0, dr), b.shape[0] - max(0, -dr))
            src_c = slice(max(0, -dc), b.shape[1] - max(0, dc))
            dst_c = slice(max(0, dc), b.shape[1] - max(0, -dc))
            shifted[dst_r, dst_c] = b[src_r, src_c]
            dilated |= shifted
    return dilated & ~b


def region_metrics(
    recon: np.ndarray,
    truth: np.ndarray,
    region: np.ndarray,
    cfg: MetricsConfig = MetricsConfig(),
) -> dict:
    """Metrics restricted to a cell set.

    PSNR/NMSE/RMSE run over exactly the region cells; SSIM runs over windows
    fully inside the region's bounding box (NaN when the box is smaller than
    the window).
    """
    recon, truth = np.asarray(recon, float), np.asarray(truth, float)
    region = np.asarray(region, bool)
    if not region.any():
        raise ValueError("region is empty")
    rv, tv = recon[region], truth[region]

    mse = float(np.mean((rv - tv) ** 2))
    out = {
        "psnr": math.inf if mse == 0.0 else 10.0 * math.log10(cfg.max_value**2 / mse),
        "rmse": math.sqrt(mse),
        "nmse": float(np.sum((tv - rv) ** 2)) / float(np.sum(tv**2))
        if np.sum(tv**2) > 0
        else math.nan,
    }
    rows, cols = np.nonzero(region)
    r0, r1 = rows.min(), rows.max() + 1
    c0, c1 = cols.min(), cols.max() + 1
    if r1 - r0 >= cfg.ssim_window and c1 - c0 >= cfg.ssim_window:
        out["ssim"] = ssim(recon[r0:r1, c0:c1], truth[r0:r1, c0:c1], cfg)
    else:
        out["ssim"] = math.nan
    return out


def evaluate_run(
    recon,
    truth,
    scene: Scene,
    cfg: MetricsConfig = MetricsConfig(),
    metadata: dict | None = None,
) -> MetricsReport:
    """Full report: global metrics, SPE, SRQ around the true source, BIA."""
    rv = np.asarray(getattr(recon, "values", recon), float)
    tv = np.asarray(getattr(truth, "values", truth), float)
    _check_dims(rv, tv)

    srq = region_metrics(rv, tv, srq_region(scene, cfg.srq_radius), cfg)
    bia_mask = building_region(scene, cfg.bia_radius)
    if bia_mask.any():
        bia = region_metrics(rv, tv, bia_mask, cfg)
    else:
        bia = {"psnr": math.nan, "ssim": math.nan}

    return MetricsReport(
        psnr=psnr(rv, tv, cfg),
        ssim=ssim(rv, tv, cfg),
        nmse=nmse(tv, rv),
        rmse=rmse(tv, rv),
        spe=spe(rv, scene),
        srq_psnr=srq["psnr"],
        srq_ssim=srq["ssim"],
        bia_psnr=bia["psnr"],
        bia_ssim=bia["ssim"],
        metadata=dict(metadata or {}),
    )


def _fmt(x: float) -> str:
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if math.isnan(x):
        return "nan"
    return repr(float(x))


def report_to_csv_row(report: MetricsReport) -> str:
    md = report.metadata
    fields = [
        str(md.get("method", "")),
        _fmt(float(md.get("mask_rate", math.nan))),
        _fmt(float(md.get("sigma", math.nan))),
        str(int(bool(md.get("aware", False)))),
        str(int(md.get("seed", 0))),
        _fmt(report.psnr),
        _fmt(report.ssim),
        _fmt(report.nmse),
        _fmt(report.rmse),
        _fmt(report.spe),
        _fmt(report.srq_psnr),
        _fmt(report.srq_ssim),
        _fmt(report.bia_psnr),
        _fmt(report.bia_ssim),
        _fmt(float(md.get("wall_time_s", 0.0))),
    ]
    return ",".join(fields)


def report_from_csv_row(row: str) -> MetricsReport:
    parts = row.strip().split(",")
    names = CSV_HEADER.split(",")
    if len(parts) != len(names):
        raise ValueError(f"expected {len(names)} fields, got {len(parts)}")
    vals = dict(zip(names, parts))
    md = {
        "method": vals["method"],
        "mask_rate": float(vals["mask_rate"]),
        "sigma": float(vals["sigma"]),
        "aware": bool(int(vals["aware"])),
        "seed": int(vals["seed"]),
        "wall_time_s": float(vals["wall_time_s"]),
    }
    return MetricsReport(
        psnr=float(vals["psnr"]),
        ssim=float(vals["ssim"]),
        nmse=float(vals["nmse"]),
        rmse=float(vals["rmse"]),
        spe=float(vals["spe"]),
        srq_psnr=float(vals["srq_psnr"]),
        srq_ssim=float(vals["srq_ssim"]),
        bia_psnr=float(vals["bia_psnr"]),
        bia_ssim=float(vals["bia_ssim"]),
        metadata=md,
    )
