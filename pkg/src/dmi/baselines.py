"""Classical interpolation baselines: inverse-distance weighting and local
ordinary kriging with an exponential variogram.

Kriging solves, per unobserved cell, the ordinary-kriging system over the
nearest observations (Lagrange-constrained so weights sum to 1); singular
local systems fall back to IDW for that cell.  Observed cells keep their
measured value in both interpolators and outputs are clamped to [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares
from scipy.spatial import cKDTree

from .observation import ObservationSet
from .scene import GridMap

__all__ = [
    "VariogramModel",
    "idw_interpolate",
    "kriging_interpolate",
    "fit_variogram",
]


@dataclass(frozen=True)
class VariogramModel:
    """Exponential semivariogram gamma(h) = nugget + (sill - nugget)(1 - e^(-h/range))."""

    nugget: float
    sill: float
    range_: float
    kind: str = "exponential"

    def __post_init__(self):
        if not (self.sill >= self.nugget >= 0.0):
            raise ValueError("need sill >= nugget >= 0")
        if self.range_ <= 0:
            raise ValueError("range_ must be > 0")

    def __call__(self, h: np.ndarray) -> np.ndarray:
        h = np.asarray(h, dtype=float)
        return self.nugget + (self.sill - self.nugget) * (1.0 - np.exp(-h / self.range_))


def _obs_coords(obs: ObservationSet) -> np.ndarray:
    width = obs.mask.dims[0]
    idx = obs.mask.observed
    return np.column_stack([idx // width, idx % width]).astype(float)


def idw_interpolate(obs: ObservationSet, dims: tuple[int, int], power: float = 2.0) -> GridMap:
    """Inverse-distance weighting with exponent `power`."""
    if obs.mask.d == 0:
        raise ValueError("need at least one observation")
    if power <= 0:
        raise ValueError("power must be > 0")
    width, height = dims
    pts = _obs_coords(obs)

    rows, cols = np.indices((height, width))
    targets = np.column_stack([rows.ravel(), cols.ravel()]).astype(float)
    est = np.empty(height * width)
    for start in range(0, targets.shape[0], 1024):  # chunked to bound memory
        chunk = targets[start : start + 1024]
        d = np.sqrt(((chunk[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2))
        with np.errstate(divide="ignore", invalid="ignore"):
            w = d ** (-power)
            est[start : start + 1024] = (w @ obs.y) / w.sum(axis=1)

    out = est.reshape(height, width)
    out.ravel()[obs.mask.observed] = obs.y  # exact at observed locations
    return GridMap(width=width, height=height, values=np.clip(out, 0.0, 1.0))


def kriging_interpolate(
    obs: ObservationSet,
    dims: tuple[int, int],
    model: VariogramModel,
    max_neighbors: int = 16,
    stats: dict | None = None,
) -> GridMap:
    """Local ordinary kriging over the `max_neighbors` nearest observations.

    When a `stats` dict is supplied, the number of singular-system IDW
    fallbacks is recorded under "fallback_count".
    """
    if obs.mask.d < 2:
        raise ValueError("kriging needs at least 2 observations")
    if max_neighbors < 2:
        raise ValueError("max_neighbors must be >= 2")
    width, height = dims
    pts = _obs_coords(obs)
    tree = cKDTree(pts)
    k = min(max_neighbors, obs.mask.d)

    out = np.zeros(height * width)
    out[obs.mask.observed] = obs.y
    unobserved = np.setdiff1d(np.arange(height * width), obs.mask.observed)
    if stats is not None:
        stats["fallback_count"] = 0
    if unobserved.size == 0:
        return GridMap(width=width, height=height, values=np.clip(out.reshape(height, width), 0, 1))

    targets = np.column_stack([unobserved // width, unobserved % width]).astype(float)
    dists, nbr = tree.query(targets, k=k)
    if k == 1:
        dists, nbr = dists[:, None], nbr[:, None]

    # Pairwise neighbor distances per target cell, batched.
    p = pts[nbr]  # (n, k, 2)
    gap = np.sqrt(((p[:, :, None, :] - p[:, None, :, :]) ** 2).sum(axis=3))
    gamma_nn = model(gap)  # (n, k, k)
    gamma_t = model(dists)  # (n, k)

    n = unobserved.size
    a_mat = np.ones((n, k + 1, k + 1))
    a_mat[:, :k, :k] = gamma_nn
    a_mat[:, k, k] = 0.0
    rhs = np.concatenate([gamma_t, np.ones((n, 1))], axis=1)

    est = np.empty(n)
    try:
        sol = np.linalg.solve(a_mat, rhs[:, :, None])[:, :, 0]
        ok = np.isfinite(sol).all(axis=1)
    except np.linalg.LinAlgError:
        sol = np.full((n, k + 1), np.nan)
        ok = np.zeros(n, dtype=bool)
        for i in range(n):
            try:
                sol[i] = np.linalg.solve(a_mat[i], rhs[i])
                ok[i] = np.isfinite(sol[i]).all()
            except np.linalg.LinAlgError:
                pass

    vals = obs.y[nbr]  # (n, k)
    est[ok] = np.sum(sol[ok, :k] * vals[ok], axis=1)
    if (~ok).any():
        # Singular local systems: inverse-distance fallback for those cells.
        if stats is not None:
            stats["fallback_count"] = int((~ok).sum())
        bad = np.where(~ok)[0]
        with np.errstate(divide="ignore"):
            w = dists[bad] ** -2.0
        w[~np.isfinite(w)] = 0.0
        est[bad] = np.sum(w * vals[bad], axis=1) / np.maximum(w.sum(axis=1), 1e-300)

    out[unobserved] = est
    return GridMap(width=width, height=height, values=np.clip(out.reshape(height, width), 0, 1))


def fit_variogram(obs: ObservationSet, n_bins: int = 12) -> VariogramModel:
    """Least-squares exponential fit to the empirical semivariogram.

    Pairs are subsampled deterministically when the observation count is
    large.  Degenerate fits fall back to (nugget 0, sill = sample variance,
    range = grid_width / 4).
    """
    if obs.mask.d < 20:
        raise ValueError("variogram fitting needs at least 20 observations")
    pts = _obs_coords(obs)
    vals = obs.y
    width = obs.mask.dims[0]

    if obs.mask.d > 400:
        keep = np.random.default_rng(0).choice(obs.mask.d, size=400, replace=False)
        keep.sort()
        pts, vals = pts[keep], vals[keep]

    iu = np.triu_indices(len(vals), k=1)
    h = np.sqrt(((pts[iu[0]] - pts[iu[1]]) ** 2).sum(axis=1))
    sq = 0.5 * (vals[iu[0]] - vals[iu[1]]) ** 2

    edges = np.linspace(0.0, h.max(), n_bins + 1)
    centers, gammas = [], []
    for i in range(n_bins):
        sel = (h > edges[i]) & (h <= edges[i + 1])
        if sel.sum() >= 5:
            centers.append(0.5 * (edges[i] + edges[i + 1]))
            gammas.append(sq[sel].mean())
    sample_var = float(np.var(vals))
    default = VariogramModel(
        nugget=0.0, sill=max(sample_var, 1e-12), range_=max(width / 4.0, 1e-6)
    )
    if len(centers) < 3:
        return default

    centers = np.asarray(centers)
    gammas = np.asarray(gammas)

    def residual(p):
        nug, sill, rng_ = p
        return nug + (sill - nug) * (1.0 - np.exp(-centers / rng_)) - gammas

    x0 = np.array([gammas[0] * 0.5, max(gammas.max(), 1e-12), max(centers.mean(), 1.0)])
    try:
        res = least_squares(
            residual,
            x0,
            bounds=([0.0, 1e-12, 1e-6], [np.inf, np.inf, np.inf]),
            max_nfev=200,
        )
        nug, sill, rng_ = res.x
        if not np.isfinite(res.x).all() or sill < nug:
            return default
        return VariogramModel(nugget=float(nug), sill=float(sill), range_=float(rng_))
    except Exception:
        return default
