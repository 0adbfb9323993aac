"""Synthetic scenes and ground-truth pathloss maps.

A scene is a set of axis-aligned rectangular buildings plus a transmitter
cell.  Ground truth is a log-distance decay from the transmitter with a
per-wall attenuation for every building boundary crossed along the discrete
ray, clamped to [0, 1] and zeroed inside building interiors.  Distances are
measured in grid-normalized units (pixels / max(width, height)) so the
default decay constant produces a full-range map regardless of grid size.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "SimParams",
    "Scene",
    "GridMap",
    "PlacementError",
    "generate_scene",
    "simulate_pathloss",
    "generate_dataset",
    "write_grid",
    "read_grid",
    "write_scene",
    "read_scene",
]

GRID_MAGIC = b"DMI1"


class PlacementError(RuntimeError):
    """Raised when building placement fails within the retry budget."""


@dataclass(frozen=True)
class SimParams:
    pathloss_exponent: float = 2.2
    wall_attenuation: float = 0.12
    floor_value: float = 0.0

    def __post_init__(self):
        if self.pathloss_exponent <= 0:
            raise ValueError("pathloss_exponent must be > 0")
        if self.wall_attenuation < 0:
            raise ValueError("wall_attenuation must be >= 0")


@dataclass(frozen=True)
class Scene:
    width: int
    height: int
    buildings: np.ndarray  # uint8 grid, 1 = building interior
    tx: tuple[int, int]  # (row, col)
    params: SimParams = field(default_factory=SimParams)

    def __post_init__(self):
        b = np.asarray(self.buildings, dtype=np.uint8)
        object.__setattr__(self, "buildings", b)
        if b.shape != (self.height, self.width):
            raise ValueError("buildings grid must be height x width")
        if not np.isin(b, (0, 1)).all():
            raise ValueError("buildings must be 0/1")
        r, c = self.tx
        if not (0 <= r < self.height and 0 <= c < self.width):
            raise ValueError("tx outside grid")
        if b[r, c] != 0:
            raise ValueError("tx must lie on a non-building cell")


@dataclass(frozen=True)
class GridMap:
    width: int
    height: int
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", v)
        if v.shape != (self.height, self.width):
            raise ValueError("values grid must be height x width")
        if v.size and (v.min() < 0.0 or v.max() > 1.0):
            raise ValueError("grid values must lie in [0, 1]")


def generate_scene(
    width: int,
    height: int,
    n_buildings: int,
    seed,
    params: SimParams | None = None,
    max_tries: int = 200,
) -> Scene:
    """Place n_buildings random axis-aligned rectangles around a transmitter.

    Rectangles that would cover the transmitter cell or push total coverage
    to 50% of the grid are rejected and retried; exhausting the per-building
    retry budget raises PlacementError.
    """
    if width < 16 or height < 16:
        raise ValueError("grid must be at least 16x16")
    if n_buildings < 0:
        raise ValueError("n_buildings must be >= 0")
    params = params or SimParams()
    rng = np.random.default_rng(seed)

    tx = (int(rng.integers(height)), int(rng.integers(width)))
    buildings = np.zeros((height, width), dtype=np.uint8)
    max_cover = 0.5 * width * height

    for k in range(n_buildings):
        for attempt in range(max_tries):
            bw = int(rng.integers(3, max(4, width // 5)))
            bh = int(rng.integers(3, max(4, height // 5)))
            c0 = int(rng.integers(0, width - bw + 1))
            r0 = int(rng.integers(0, height - bh + 1))
            if r0 <= tx[0] < r0 + bh and c0 <= tx[1] < c0 + bw:
                continue
            trial = buildings.copy()
            trial[r0 : r0 + bh, c0 : c0 + bw] = 1
            if trial.sum() >= max_cover:
                continue
            buildings = trial
            break
        else:
            raise PlacementError(
                f"could not place building {k + 1}/{n_buildings} "
                f"within {max_tries} tries"
            )

    return Scene(width=width, height=height, buildings=buildings, tx=tx, params=params)


def _wall_crossings(buildings: np.ndarray, tx: tuple[int, int]) -> np.ndarray:
    """Count building-boundary crossings from tx to every cell.

    Walks the discrete line (uniform parametric stepping over n+1 cells,
    n = Chebyshev distance) from tx to each target and counts 0<->1
    transitions of the building flag.  Targets are batched by n so the walk
    is fully vectorized.
    """
    height, width = buildings.shape
    r0, c0 = tx
    rows, cols = np.indices((height, width))
    cheb = np.maximum(np.abs(rows - r0), np.abs(cols - c0))
    counts = np.zeros((height, width), dtype=np.int32)

    for n in range(1, int(cheb.max()) + 1):
        sel = cheb == n
        if not sel.any():
            continue
        tr = rows[sel].astype(float)
        tc = cols[sel].astype(float)
        tt = np.arange(n + 1) / n
        rr = np.rint(r0 + np.outer(tr - r0, tt)).astype(np.int64)
        cc = np.rint(c0 + np.outer(tc - c0, tt)).astype(np.int64)
        flags = buildings[rr, cc]
        counts[sel] = np.count_nonzero(np.diff(flags, axis=1), axis=1)
    return counts


def simulate_pathloss(scene: Scene) -> GridMap:
    """Log-distance decay with per-wall attenuation, zero inside buildings.

    value(c) = clamp(1 - k log10(1 + dist(tx, c)) - wall_attenuation * walls,
    floor, 1) with dist in grid-normalized units; building interiors are then
    forced to exactly 0.
    """
    p = scene.params
    height, width = scene.height, scene.width
    rows, cols = np.indices((height, width))
    scale = float(max(width, height))
    dist = np.hypot(rows - scene.tx[0], cols - scene.tx[1]) / scale

    walls = _wall_crossings(scene.buildings, scene.tx)
    raw = 1.0 - p.pathloss_exponent * np.log10(1.0 + dist) - p.wall_attenuation * walls
    values = np.clip(raw, p.floor_value, 1.0)
    values[scene.buildings == 1] = 0.0
    return GridMap(width=width, height=height, values=values)


# ---------------------------------------------------------------------------
# Binary grid / scene files and dataset generation
# ---------------------------------------------------------------------------


def write_grid(path, grid: GridMap) -> None:
    """Grid file: magic DMI1, u32le width/height, float32le row-major values."""
    with open(path, "wb") as f:
        f.write(GRID_MAGIC)
        f.write(struct.pack("<II", grid.width, grid.height))
        f.write(grid.values.astype("<f4").tobytes())


def read_grid(path) -> GridMap:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != GRID_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        width, height = struct.unpack("<II", f.read(8))
        data = np.frombuffer(f.read(4 * width * height), dtype="<f4")
    if data.size != width * height:
        raise ValueError(f"{path}: truncated grid payload")
    return GridMap(width=width, height=height, values=data.reshape(height, width).astype(float))


def write_scene(path, scene: Scene) -> None:
    """Scene file: DMI1 header, u8 building flags, then u32le tx row/col."""
    with open(path, "wb") as f:
        f.write(GRID_MAGIC)
        f.write(struct.pack("<II", scene.width, scene.height))
        f.write(scene.buildings.astype(np.uint8).tobytes())
        f.write(struct.pack("<II", scene.tx[0], scene.tx[1]))


def read_scene(path, params: SimParams | None = None) -> Scene:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != GRID_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        width, height = struct.unpack("<II", f.read(8))
        flags = np.frombuffer(f.read(width * height), dtype=np.uint8)
        tx = struct.unpack("<II", f.read(8))
    if flags.size != width * height:
        raise ValueError(f"{path}: truncated scene payload")
    return Scene(
        width=width,
        height=height,
        buildings=flags.reshape(height, width).copy(),
        tx=(int(tx[0]), int(tx[1])),
        params=params or SimParams(),
    )


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def generate_dataset(
    out_dir,
    n_train: int,
    n_test: int,
    width: int,
    height: int,
    n_buildings: int,
    seed: int,
    params: SimParams | None = None,
) -> dict:
    """Write (scene, map) pairs plus a checksum manifest.

    Train and test scenes come from disjoint per-map seed streams derived
    from (seed, split_tag, index), so splits never share terrain.  Returns
    the manifest dict (also written to manifest.json).
    """
    params = params or SimParams()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    files = []
    for split, count, tag in (("train", n_train, 0), ("test", n_test, 1)):
        for i in range(count):
            scene = generate_scene(
                width, height, n_buildings, seed=(seed, tag, i), params=params
            )
            grid = simulate_pathloss(scene)
            scene_path = out / f"{split}_{i:04d}.scene"
            grid_path = out / f"{split}_{i:04d}.grid"
            write_scene(scene_path, scene)
            write_grid(grid_path, grid)
            files.append(scene_path)
            files.append(grid_path)

    manifest = {
        "seed": seed,
        "n_train": n_train,
        "n_test": n_test,
        "width": width,
        "height": height,
        "n_buildings": n_buildings,
        "params": {
            "pathloss_exponent": params.pathloss_exponent,
            "wall_attenuation": params.wall_attenuation,
            "floor_value": params.floor_value,
        },
        "files": [
            {"name": p.name, "sha256": _sha256(p)} for p in sorted(files)
        ],
    }
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    return manifest
