"""Mask operators and noisy sparse observations of a grid.

The selection matrix A is never materialized: it is a sorted list of
row-major cell indices, so A x is a gather and A^T v is a scatter.
Observation noise may be homogeneous (one sigma) or per-entry (used by the
scenario-aware augmentation, which appends near-hard zero-valued
pseudo-observations at building cells).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .scene import GridMap, Scene

__all__ = [
    "MaskOperator",
    "ObservationSet",
    "build_mask",
    "apply_mask",
    "adjoint_embed",
    "observe",
    "augment_aware",
    "write_observation",
    "read_observation",
]

STRATEGIES = ("random_pixel", "structured")


@dataclass(frozen=True)
class MaskOperator:
    """Selection operator over a (width, height) grid.

    `observed` holds sorted, unique row-major linear indices of the cells
    the operator keeps.
    """

    dims: tuple[int, int]
    observed: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.observed, dtype=np.int64)
        object.__setattr__(self, "observed", idx)
        n_cells = self.dims[0] * self.dims[1]
        if idx.size and (idx[0] < 0 or idx[-1] >= n_cells):
            raise ValueError("observed indices out of range")
        if idx.size and (np.diff(idx) <= 0).any():
            raise ValueError("observed indices must be sorted and unique")

    @property
    def d(self) -> int:
        return int(self.observed.size)

    @property
    def n_cells(self) -> int:
        return self.dims[0] * self.dims[1]


@dataclass(frozen=True)
class ObservationSet:
    """Noisy values at the observed cells: y = A x + n.

    `sigma` is the nominal measurement noise std; `sigmas`, when set, gives a
    per-entry std vector (same length as y) that overrides it, which is how
    the aware augmentation carries its near-hard pseudo-observations.
    """

    mask: MaskOperator
    y: np.ndarray
    sigma: float
    strategy: str = "random_pixel"
    mask_rate: float = 0.0
    aware: bool = False
    sigmas: np.ndarray | None = field(default=None)

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        object.__setattr__(self, "y", y)
        if y.shape != (self.mask.d,):
            raise ValueError("y length must match number of observed indices")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.sigmas is not None:
            s = np.asarray(self.sigmas, dtype=float)
            if s.shape != (self.mask.d,):
                raise ValueError("sigmas length must match y")
            if (s < 0).any():
                raise ValueError("per-entry sigmas must be >= 0")
            object.__setattr__(self, "sigmas", s)

    def entry_sigmas(self) -> np.ndarray:
        """Per-entry noise std vector (broadcast of the scalar when unset)."""
        if self.sigmas is not None:
            return self.sigmas
        return np.full(self.mask.d, self.sigma)


def build_mask(
    strategy: str,
    mask_rate: float,
    dims: tuple[int, int],
    seed,
    scene: Scene | None = None,
) -> MaskOperator:
    """Build a selection mask keeping a (1 - mask_rate) fraction of cells.

    random_pixel keeps floor((1 - mask_rate) * n_cells) cells uniformly
    without replacement.  structured keeps a regular sub-lattice whose stride
    makes the kept fraction closest to 1 - mask_rate (ties favor the smaller
    stride).  `scene` is accepted for signature parity with aware workflows
    and is unused by both strategies.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    if not 0.0 <= mask_rate < 1.0:
        raise ValueError(f"mask_rate must be in [0, 1), got {mask_rate}")
    width, height = dims
    n_cells = width * height

    if strategy == "random_pixel":
        n_keep = int(np.floor((1.0 - mask_rate) * n_cells))
        if n_keep == 0:
            raise ValueError("mask keeps zero cells")
        rng = np.random.default_rng(seed)
        idx = rng.choice(n_cells, size=n_keep, replace=False)
        return MaskOperator(dims=dims, observed=np.sort(idx))

    target = 1.0 - mask_rate
    best_stride, best_err = 1, np.inf
    for stride in range(1, max(width, height) + 1):
        kept = int(np.ceil(height / stride)) * int(np.ceil(width / stride))
        err = abs(kept / n_cells - target)
        if err < best_err - 1e-15:
            best_stride, best_err = stride, err
    rows = np.arange(0, height, best_stride)
    cols = np.arange(0, width, best_stride)
    idx = (rows[:, None] * width + cols[None, :]).ravel()
    if idx.size == 0:
        raise ValueError("mask keeps zero cells")
    return MaskOperator(dims=dims, observed=np.sort(idx))


def apply_mask(mask: MaskOperator, x: np.ndarray) -> np.ndarray:
    """Gather x at the observed indices (the product A x)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (mask.dims[1], mask.dims[0]):
        raise ValueError(f"grid shape {x.shape} does not match mask dims {mask.dims}")
    return x.ravel()[mask.observed]


def adjoint_embed(mask: MaskOperator, v: np.ndarray) -> np.ndarray:
    """Scatter v back onto the grid (the product A^T v), zero elsewhere."""
    v = np.asarray(v, dtype=float)
    if v.shape != (mask.d,):
        raise ValueError(f"vector length {v.shape} does not match mask size {mask.d}")
    grid = np.zeros(mask.n_cells)
    grid[mask.observed] = v
    return grid.reshape(mask.dims[1], mask.dims[0])


def observe(truth: GridMap, mask: MaskOperator, sigma: float, seed) -> ObservationSet:
    """Sample y = A x + sigma * g with g i.i.d. standard normal from seed."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    clean = apply_mask(mask, truth.values)
    if sigma == 0.0:
        y = clean
    else:
        rng = np.random.default_rng(seed)
        y = clean + sigma * rng.standard_normal(mask.d)
    rate = 1.0 - mask.d / mask.n_cells
    return ObservationSet(mask=mask, y=y, sigma=sigma, mask_rate=rate)


def augment_aware(
    obs: ObservationSet, scene: Scene, aware_sigma: float = 1e-3
) -> ObservationSet:
    """Append zero-valued pseudo-observations at unobserved building cells.

    Coarse environment knowledge enters as extra observations: every
    building-interior cell not already observed is added with value 0 and
    per-entry std `aware_sigma` (a near-hard constraint, strictly positive
    so the same Gaussian machinery handles aware and unaware modes).
    """
    if (scene.width, scene.height) != obs.mask.dims:
        raise ValueError("scene dims do not match observation dims")

    building_idx = np.flatnonzero(scene.buildings.ravel() == 1)
    extra = np.setdiff1d(building_idx, obs.mask.observed, assume_unique=True)
    if extra.size == 0:
        return replace(obs, aware=True)

    merged = np.concatenate([obs.mask.observed, extra])
    order = np.argsort(merged, kind="stable")
    y = np.concatenate([obs.y, np.zeros(extra.size)])[order]
    sigmas = np.concatenate(
        [obs.entry_sigmas(), np.full(extra.size, aware_sigma)]
    )[order]
    mask = MaskOperator(dims=obs.mask.dims, observed=merged[order])
    return ObservationSet(
        mask=mask,
        y=y,
        sigma=obs.sigma,
        strategy=obs.strategy,
        mask_rate=obs.mask_rate,
        aware=True,
        sigmas=sigmas,
    )


def write_observation(path, obs: ObservationSet) -> None:
    """Serialize an observation set to the JSON interchange format."""
    payload = {
        "dims": list(obs.mask.dims),
        "strategy": obs.strategy,
        "mask_rate": obs.mask_rate,
        "sigma": obs.sigma,
        "aware": obs.aware,
        "indices": obs.mask.observed.tolist(),
        "values": obs.y.tolist(),
    }
    if obs.sigmas is not None:
        payload["sigmas"] = obs.sigmas.tolist()
    with open(path, "w") as f:
        json.dump(payload, f)


def read_observation(path) -> ObservationSet:
    with open(path) as f:
        payload = json.load(f)
    mask = MaskOperator(
        dims=tuple(payload["dims"]), observed=np.asarray(payload["indices"])
    )
    return ObservationSet(
        mask=mask,
        y=np.asarray(payload["values"], dtype=float),
        sigma=float(payload["sigma"]),
        strategy=payload["strategy"],
        mask_rate=float(payload["mask_rate"]),
        aware=bool(payload["aware"]),
        sigmas=np.asarray(payload["sigmas"], dtype=float) if "sigmas" in payload else None,
    )
