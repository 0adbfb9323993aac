"""Command-line surface: dataset generation, prior training, reconstruction,
sweeps, CSV aggregation, oracle self-checks, and image export.

Configuration is a line-oriented ``key = value`` file with ``[section]``
headers; command-line ``--set section.key=value`` flags override file
values.  Exit codes: 0 success, 1 usage/config error, 2 partial sweep
failure, 3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import configparser
import io
import json
import os
import struct
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import baselines, metrics, observation, oracle, priors, sampler, scene, schedule

__all__ = [
    "RunConfig",
    "ConfigError",
    "parse_config",
    "dump_config",
    "run_sweep",
    "export_image",
    "aggregate_csv",
    "run_oracle_check",
    "main",
]


class ConfigError(ValueError):
    """Invalid or missing configuration; maps to exit code 1."""


@dataclass(frozen=True)
class RunConfig:
    # [grid]
    width: int = 64
    height: int = 64
    # [dataset]
    n_train: int = 200
    n_test: int = 20
    n_buildings: int = 8
    pathloss_exponent: float = 2.2
    wall_attenuation: float = 0.12
    floor_value: float = 0.0
    # [schedule]
    kind: str = "ddpm"
    steps: int = 200
    beta_min: float = 1e-4
    beta_max: float = -1.0  # -1 means the 0.02 * (1000 / steps) default
    # [sampler]
    ensemble: int = 10
    record_trace: bool = False
    # [observation]
    strategy: str = "random_pixel"
    mask_rate: float = 0.8
    sigma: float = 0.05
    aware: bool = False
    aware_sigma: float = -1.0  # -1 means auto: max(sigma, 1e-3)
    # [prior]
    variant: str = "learned"
    analytic_mean: float = 0.5
    analytic_var: float = 0.04
    # [train]
    epochs: int = 20
    batch: int = 16
    lr: float = 4e-3
    channels: int = 12
    # [sweep]
    mask_rates: tuple[float, ...] = (0.7, 0.8, 0.9)
    sigmas: tuple[float, ...] = (0.01, 0.05)
    aware_modes: str = "both"  # both | aware | unaware
    methods: tuple[str, ...] = ("diffusion", "idw", "kriging")
    reps: int = 3
    jobs: int = 1
    record_timing: bool = True
    # [run]
    seed: int = 0
    out: str = ""

    def make_schedule(self) -> schedule.NoiseSchedule:
        bmax = None if self.beta_max < 0 else self.beta_max
        if self.kind == "ddpm":
            return schedule.make_ddpm_schedule(self.steps, self.beta_min, bmax)
        return schedule.make_ddm_schedule(self.steps)

    def effective_aware_sigma(self, sigma: float) -> float:
        return max(sigma, 1e-3) if self.aware_sigma < 0 else self.aware_sigma

    def sim_params(self) -> scene.SimParams:
        return scene.SimParams(
            pathloss_exponent=self.pathloss_exponent,
            wall_attenuation=self.wall_attenuation,
            floor_value=self.floor_value,
        )


_SECTIONS: dict[str, tuple[str, ...]] = {
    "grid": ("width", "height"),
    "dataset": (
        "n_train",
        "n_test",
        "n_buildings",
        "pathloss_exponent",
        "wall_attenuation",
        "floor_value",
    ),
    "schedule": ("kind", "steps", "beta_min", "beta_max"),
    "sampler": ("ensemble", "record_trace"),
    "observation": ("strategy", "mask_rate", "sigma", "aware", "aware_sigma"),
    "prior": ("variant", "analytic_mean", "analytic_var"),
    "train": ("epochs", "batch", "lr", "channels"),
    "sweep": (
        "mask_rates",
        "sigmas",
        "aware_modes",
        "methods",
        "reps",
        "jobs",
        "record_timing",
    ),
    "run": ("seed", "out"),
}

_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(name: str, raw: str):
    ftype = _FIELD_TYPES[name]
    raw = raw.strip()
    try:
        if ftype == "int":
            return int(raw)
        if ftype == "float":
            return float(raw)
        if ftype == "bool":
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if ftype.startswith("tuple[float"):
            return tuple(float(v) for v in raw.split(",") if v.strip())
        if ftype.startswith("tuple[str"):
            return tuple(v.strip() for v in raw.split(",") if v.strip())
        return raw
    except ValueError as e:
        raise ConfigError(f"key {name!r}: {e}") from e


def _validate(cfg: RunConfig) -> RunConfig:
    if cfg.width < 16 or cfg.height < 16:
        raise ConfigError("grid.width/height must be >= 16")
    if cfg.kind not in ("ddpm", "ddm"):
        raise ConfigError(f"schedule.kind must be ddpm or ddm, got {cfg.kind!r}")
    if cfg.steps < 2:
        raise ConfigError("schedule.steps must be >= 2")
    if not (0 < cfg.beta_min < 1):
        raise ConfigError("schedule.beta_min must be in (0, 1)")
    if cfg.beta_max >= 0 and not (cfg.beta_min <= cfg.beta_max < 1):
        raise ConfigError("schedule.beta_max must satisfy beta_min <= beta_max < 1")
    if cfg.ensemble < 1:
        raise ConfigError("sampler.ensemble must be >= 1")
    if cfg.strategy not in observation.STRATEGIES:
        raise ConfigError(f"observation.strategy must be one of {observation.STRATEGIES}")
    if not (0 <= cfg.mask_rate < 1):
        raise ConfigError("observation.mask_rate must be in [0, 1)")
    if cfg.sigma < 0:
        raise ConfigError("observation.sigma must be >= 0")
    if cfg.variant not in ("learned", "analytic_gaussian"):
        raise ConfigError("prior.variant must be learned or analytic_gaussian")
    if cfg.analytic_var <= 0:
        raise ConfigError("prior.analytic_var must be > 0")
    if cfg.epochs < 1 or cfg.batch < 1 or cfg.channels < 1:
        raise ConfigError("train.epochs/batch/channels must be >= 1")
    if cfg.lr <= 0:
        raise ConfigError("train.lr must be > 0")
    for r in cfg.mask_rates:
        if not (0 <= r < 1):
            raise ConfigError("sweep.mask_rates entries must be in [0, 1)")
    for s in cfg.sigmas:
        if s < 0:
            raise ConfigError("sweep.sigmas entries must be >= 0")
    if cfg.aware_modes not in ("both", "aware", "unaware"):
        raise ConfigError("sweep.aware_modes must be both, aware, or unaware")
    for m in cfg.methods:
        if m not in ("diffusion", "idw", "kriging"):
            raise ConfigError(f"sweep.methods entry {m!r} unknown")
    if cfg.reps < 1:
        raise ConfigError("sweep.reps must be >= 1")
    if cfg.jobs < 1:
        raise ConfigError("sweep.jobs must be >= 1")
    return cfg


def parse_config(path: str | None = None, overrides: dict[str, str] | None = None) -> RunConfig:
    """Build a validated RunConfig from an INI-style file plus overrides.

    `overrides` maps "section.key" to raw string values and wins over the
    file.  Unknown sections or keys are rejected with the offending name.
    """
    values: dict[str, object] = {}
    if path is not None:
        if not Path(path).exists():
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        try:
            parser.read(path)
        except configparser.Error as e:
            raise ConfigError(f"config parse error: {e}") from e
        for section in parser.sections():
            if section not in _SECTIONS:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in parser.items(section):
                if key not in _SECTIONS[section]:
                    raise ConfigError(f"unknown key {key!r} in section [{section}]")
                values[key] = _parse_value(key, raw)
    for dotted, raw in (overrides or {}).items():
        if "." not in dotted:
            raise ConfigError(f"override {dotted!r} must be section.key=value")
        section, key = dotted.split(".", 1)
        if section not in _SECTIONS or key not in _SECTIONS[section]:
            raise ConfigError(f"unknown override key {dotted!r}")
        values[key] = _parse_value(key, raw)

    if "seed" not in values and "DMI_SEED" in os.environ:
        values["seed"] = _parse_value("seed", os.environ["DMI_SEED"])
    return _validate(RunConfig(**values))


def dump_config(cfg: RunConfig) -> str:
    """Serialize a RunConfig to the INI format (round-trips exactly)."""
    buf = io.StringIO()
    for section, keys in _SECTIONS.items():
        buf.write(f"[{section}]\n")
        for key in keys:
            v = getattr(cfg, key)
            if isinstance(v, tuple):
                v = ",".join(repr(x) if isinstance(x, float) else str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            buf.write(f"{key} = {v}\n")
        buf.write("\n")
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Image export
# ---------------------------------------------------------------------------

# Compact viridis-style anchor ramp, interpolated to a 256-entry LUT.
_VIRIDIS_ANCHORS = np.array(
    [
        (68, 1, 84),
        (71, 44, 122),
        (59, 81, 139),
        (44, 113, 142),
        (33, 144, 141),
        (39, 173, 129),
        (92, 200, 99),
        (170, 220, 50),
        (253, 231, 37),
    ],
    dtype=float,
)


def _viridis_lut() -> np.ndarray:
    xs = np.linspace(0, 255, len(_VIRIDIS_ANCHORS))
    lut = np.stack(
        [np.interp(np.arange(256), xs, _VIRIDIS_ANCHORS[:, c]) for c in range(3)],
        axis=1,
    )
    return np.rint(lut).astype(np.uint8)


def export_image(grid_path, out_path, colormap: str = "gray") -> None:
    """Write an 8-bit PGM (gray) or PPM (viridis LUT) of a grid file."""
    grid = scene.read_grid(grid_path)
    levels = np.rint(np.clip(grid.values, 0.0, 1.0) * 255).astype(np.uint8)
    if colormap == "gray":
        header = f"P5\n{grid.width} {grid.height}\n255\n".encode()
        payload = levels.tobytes()
    elif colormap == "viridis":
        header = f"P6\n{grid.width} {grid.height}\n255\n".encode()
        payload = _viridis_lut()[levels].tobytes()
    else:
        raise ConfigError(f"unknown colormap {colormap!r}")
    with open(out_path, "wb") as f:
        f.write(header)
        f.write(payload)


# ---------------------------------------------------------------------------
# Sweep
# ---------------------------------------------------------------------------


def _cell_seed(base: int, map_index: int, cond_index: int, rep: int) -> int:
    return int(np.random.SeedSequence([base, map_index, cond_index, rep]).generate_state(1)[0])


def _row_key(method: str, mask_rate: float, sigma: float, aware: bool, cell_seed: int) -> tuple:
    return (method, f"{mask_rate!r}", f"{sigma!r}", int(aware), cell_seed)


def _existing_keys(csv_path: Path) -> set[tuple]:
    keys: set[tuple] = set()
    if not csv_path.exists():
        return keys
    with open(csv_path) as f:
        header = f.readline()
        if header.strip() != metrics.CSV_HEADER:
            return keys
        for line in f:
            parts = line.strip().split(",")
            if len(parts) < 5:
                continue
            keys.add((parts[0], repr(float(parts[1])), repr(float(parts[2])), int(parts[3]), int(parts[4])))
    return keys


def _reconstruct_cell(
    cfg: RunConfig,
    truth: scene.GridMap,
    scn: scene.Scene,
    prior_handle: priors.PriorHandle,
    sch: schedule.NoiseSchedule,
    mask_rate: float,
    sigma: float,
    aware: bool,
    cell_seed: int,
    method: str,
) -> tuple[metrics.MetricsReport, scene.GridMap]:
    dims = (truth.width, truth.height)
    mask = observation.build_mask(cfg.strategy, mask_rate, dims, seed=(cell_seed, 10))
    obs = observation.observe(truth, mask, sigma, seed=(cell_seed, 11))
    t0 = time.perf_counter()
    if method == "diffusion":
        if aware:
            obs = observation.augment_aware(obs, scn, cfg.effective_aware_sigma(sigma))
        recon, _ = sampler.reconstruct(
            obs, prior_handle, sch, sampler.SamplerConfig(ensemble=cfg.ensemble, seed=cell_seed)
        )
    elif method == "idw":
        recon = baselines.idw_interpolate(obs, dims)
    elif method == "kriging":
        model = baselines.fit_variogram(obs)
        recon = baselines.kriging_interpolate(obs, dims, model)
    else:
        raise ValueError(f"unknown method {method!r}")
    wall = time.perf_counter() - t0 if cfg.record_timing else 0.0
    md = {
        "method": method,
        "mask_rate": mask_rate,
        "sigma": sigma,
        "aware": aware,
        "seed": cell_seed,
        "wall_time_s": wall,
    }
    report = metrics.evaluate_run(recon, truth, scn, metrics.MetricsConfig(), md)
    return report, recon


_WORKER_STATE: dict = {}


def _worker_init(cfg: RunConfig, dataset_dir: str, model_path: str | None):
    _WORKER_STATE["cfg"] = cfg
    _WORKER_STATE["sch"] = cfg.make_schedule()
    _WORKER_STATE["handle"] = _load_prior(cfg, model_path)
    _WORKER_STATE["dataset"] = dataset_dir


def _worker_run(task: tuple) -> tuple[tuple, str | None, str | None, bytes | None]:
    (map_name, mask_rate, sigma, aware, cell_seed, method, key) = task
    cfg: RunConfig = _WORKER_STATE["cfg"]
    root = Path(_WORKER_STATE["dataset"])
    try:
        truth = scene.read_grid(root / f"{map_name}.grid")
        scn = scene.read_scene(root / f"{map_name}.scene", cfg.sim_params())
        report, recon = _reconstruct_cell(
            cfg,
            truth,
            scn,
            _WORKER_STATE["handle"],
            _WORKER_STATE["sch"],
            mask_rate,
            sigma,
            aware,
            cell_seed,
            method,
        )
        buf = io.BytesIO()
        buf.write(recon.values.astype("<f4").tobytes())
        grid_name = f"recon_{map_name}_{method}_r{int(round(mask_rate * 100))}_s{sigma!r}_a{int(aware)}_{cell_seed}.grid"
        return key, metrics.report_to_csv_row(report), grid_name, buf.getvalue()
    except Exception as e:  # per-cell failures are logged and skipped
        return key, None, f"{type(e).__name__}: {e}", None


def _load_prior(cfg: RunConfig, model_path: str | None) -> priors.PriorHandle:
    if cfg.variant == "analytic_gaussian":
        mean = np.full((cfg.height, cfg.width), cfg.analytic_mean)
        var = np.full((cfg.height, cfg.width), cfg.analytic_var)
        return priors.analytic_handle(priors.GaussianPrior(mean=mean, var=var))
    if model_path is None:
        raise ConfigError("learned prior requires --model")
    model = priors.load_denoiser(model_path)
    if model.n_steps != cfg.steps:
        raise ConfigError(
            f"model was trained for {model.n_steps} steps but schedule.steps = {cfg.steps}"
        )
    return priors.learned_handle(model)


def run_sweep(cfg: RunConfig, dataset_dir: str, model_path: str | None = None) -> dict:
    """Run the (map, condition, rep) x method grid; append keyed CSV rows.

    Resumable: rows whose key already exists in the CSV are skipped.  Returns
    a summary dict with row and failure counts.
    """
    if not cfg.out:
        raise ConfigError("run.out is required for sweep")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    grids_dir = out / "grids"
    grids_dir.mkdir(exist_ok=True)
    csv_path = out / "metrics.csv"

    root = Path(dataset_dir)
    manifest = json.loads((root / "manifest.json").read_text())
    test_maps = [f"test_{i:04d}" for i in range(manifest["n_test"])]
    if not test_maps:
        raise ConfigError("dataset has no test maps")

    aware_opts = {"both": (False, True), "aware": (True,), "unaware": (False,)}[cfg.aware_modes]
    conditions = [
        (r, s, a) for r in cfg.mask_rates for s in cfg.sigmas for a in aware_opts
    ]

    tasks = []
    existing = _existing_keys(csv_path)
    for mi, map_name in enumerate(test_maps):
        for ci, (mask_rate, sigma, aware) in enumerate(conditions):
            for rep in range(cfg.reps):
                cell_seed = _cell_seed(cfg.seed, mi, ci, rep)
                for method in cfg.methods:
                    key = _row_key(method, mask_rate, sigma, aware, cell_seed)
                    if key in existing:
                        continue
                    tasks.append((map_name, mask_rate, sigma, aware, cell_seed, method, key))

    if not csv_path.exists():
        csv_path.write_text(metrics.CSV_HEADER + "\n")

    n_done, n_failed = 0, 0
    with open(csv_path, "a") as csv_file:

        def consume(result):
            nonlocal n_done, n_failed
            key, row, grid_name, payload = result
            if row is None:
                n_failed += 1
                print(f"[sweep] cell {key} failed: {grid_name}", file=sys.stderr)
                return
            csv_file.write(row + "\n")
            csv_file.flush()
            with open(grids_dir / grid_name, "wb") as f:
                f.write(scene.GRID_MAGIC)
                f.write(struct.pack("<II", cfg.width, cfg.height))
                f.write(payload)
            n_done += 1

        if cfg.jobs == 1:
            _worker_init(cfg, dataset_dir, model_path)
            for task in tasks:
                consume(_worker_run(task))
        else:
            import multiprocessing as mp

            ctx = mp.get_context("spawn")
            with ctx.Pool(
                cfg.jobs, initializer=_worker_init, initargs=(cfg, dataset_dir, model_path)
            ) as pool:
                for result in pool.imap(_worker_run, tasks):
                    consume(result)

    return {"rows_written": n_done, "failed": n_failed, "skipped": len(existing), "csv": str(csv_path)}


def aggregate_csv(csv_path) -> list[dict]:
    """Mean/std of each metric per (method, mask_rate, sigma, aware) group."""
    rows = []
    with open(csv_path) as f:
        header = f.readline().strip()
        if header != metrics.CSV_HEADER:
            raise ConfigError(f"{csv_path}: unexpected CSV header")
        for line in f:
            if line.strip():
                rows.append(metrics.report_from_csv_row(line))
    groups: dict[tuple, list[metrics.MetricsReport]] = {}
    for r in rows:
        key = (
            r.metadata["method"],
            r.metadata["mask_rate"],
            r.metadata["sigma"],
            r.metadata["aware"],
        )
        groups.setdefault(key, []).append(r)
    out = []
    for key in sorted(groups, key=lambda k: (k[0], k[1], k[2], k[3])):
        rs = groups[key]
        entry = {
            "method": key[0],
            "mask_rate": key[1],
            "sigma": key[2],
            "aware": key[3],
            "count": len(rs),
        }
        for name in ("psnr", "ssim", "nmse", "rmse", "spe"):
            vals = np.array([getattr(r, name) for r in rs], dtype=float)
            entry[f"{name}_mean"] = float(np.mean(vals))
            entry[f"{name}_std"] = float(np.std(vals))
        out.append(entry)
    return out


# ---------------------------------------------------------------------------
# Oracle self-check
# ---------------------------------------------------------------------------


def run_oracle_check(verbose: bool = True) -> bool:
    """Analytic-prior vs linear-oracle equivalence suite; prints pass/fail.

    This is the condensed in-CLI version of the acceptance correctness
    criteria: exact posterior vs MAP, weight normalization, and the
    mean-of-reconstructions vs closed-form posterior comparison.
    """
    results: list[tuple[str, bool, str]] = []

    w = h = 16
    rows, cols = np.indices((h, w))
    dist = np.hypot(rows - h / 2, cols - w / 2) / max(w, h)
    prior = priors.GaussianPrior(mean=0.6 - 0.28 * dist, var=np.full((h, w), 0.0025))
    handle = priors.analytic_handle(prior)
    sch = schedule.make_ddpm_schedule(100)
    rng = np.random.default_rng(123)
    truth = scene.GridMap(
        w, h, np.clip(prior.mean + np.sqrt(prior.var) * rng.standard_normal((h, w)), 0, 1)
    )
    mask = observation.build_mask("random_pixel", 0.8, (w, h), seed=7)
    obs = observation.observe(truth, mask, 0.05, seed=11)
    post = oracle.posterior_gaussian(prior, obs)

    zero_prior = priors.GaussianPrior(mean=np.zeros((h, w)), var=np.full((h, w), 0.0025))
    zero_obs = observation.observe(
        scene.GridMap(w, h, np.zeros((h, w))), mask, 0.05, seed=3
    )
    tik = oracle.map_tikhonov(zero_prior, zero_obs)
    pg = oracle.posterior_gaussian(zero_prior, zero_obs)
    err_map = float(np.abs(tik - pg.mean).max())
    results.append(("map-equals-posterior-mean", err_map < 1e-10, f"max abs {err_map:.2e}"))

    acc = np.zeros((h, w))
    n_rec = 200
    for k in range(n_rec):
        grid, _ = sampler.reconstruct(
            obs, handle, sch, sampler.SamplerConfig(ensemble=10, seed=1000 + k)
        )
        acc += grid.values
    rel = float(np.linalg.norm(acc / n_rec - post.mean) / np.linalg.norm(post.mean))
    results.append(("sampler-mean-vs-posterior", rel <= 0.05, f"rel L2 {rel:.4f}"))

    ens = sampler.propose_candidates(np.zeros((h, w)), 0.1, 16, seed=5, t=1)
    ens = sampler.weight_candidates(ens, obs.y, mask, float(sch.c[0]), obs.sigma)
    s = float(np.sum(ens.probs))
    results.append(("weight-normalization", abs(s - 1.0) < 1e-12, f"sum {s!r}"))

    ok = True
    for name, passed, detail in results:
        ok &= passed
        if verbose:
            print(f"[oracle-check] {'PASS' if passed else 'FAIL'} {name} ({detail})")
    return ok


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="INI config file")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override a config value (repeatable)")
    p.add_argument("--seed", type=int, help="override run.seed")
    p.add_argument("--out", help="override run.out")
    p.add_argument("--jobs", type=int, help="override sweep.jobs")


def _config_from_args(args) -> RunConfig:
    overrides: dict[str, str] = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set {item!r} must be SECTION.KEY=VALUE")
        dotted, raw = item.split("=", 1)
        overrides[dotted.strip()] = raw
    if args.seed is not None:
        overrides["run.seed"] = str(args.seed)
    if args.out is not None:
        overrides["run.out"] = args.out
    if getattr(args, "jobs", None) is not None:
        overrides["sweep.jobs"] = str(args.jobs)
    return parse_config(args.config, overrides)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="dmi", description="Diffusion-prior reconstruction of masked noisy grid maps"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-dataset", help="generate synthetic scenes and truth maps")
    _add_common(p)

    p = sub.add_parser("train-prior", help="train the denoiser prior on a dataset")
    _add_common(p)
    p.add_argument("--dataset", required=True)

    p = sub.add_parser("reconstruct", help="reconstruct one map from observations")
    _add_common(p)
    p.add_argument("--map", required=True, help="truth grid file")
    p.add_argument("--scene", help="scene file (required for aware mode)")
    p.add_argument("--obs", help="observation JSON (otherwise built from config)")
    p.add_argument("--model", help="denoiser model file for the learned prior")

    p = sub.add_parser("sweep", help="run the full evaluation sweep")
    _add_common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", help="denoiser model file for the learned prior")

    p = sub.add_parser("eval", help="aggregate a metrics CSV")
    p.add_argument("--csv", required=True)

    p = sub.add_parser("oracle-check", help="run the analytic-prior equivalence suite")

    p = sub.add_parser("export", help="export a grid file to PGM/PPM")
    p.add_argument("--grid", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--colormap", choices=("gray", "viridis"), default="gray")

    args = parser.parse_args(argv)

    try:
        if args.command == "gen-dataset":
            cfg = _config_from_args(args)
            if not cfg.out:
                raise ConfigError("run.out is required (use --out)")
            manifest = scene.generate_dataset(
                cfg.out,
                cfg.n_train,
                cfg.n_test,
                cfg.width,
                cfg.height,
                cfg.n_buildings,
                cfg.seed,
                cfg.sim_params(),
            )
            print(f"wrote {len(manifest['files'])} files to {cfg.out}")
            return 0

        if args.command == "train-prior":
            cfg = _config_from_args(args)
            if not cfg.out:
                raise ConfigError("run.out is required (use --out)")
            root = Path(args.dataset)
            manifest = json.loads((root / "manifest.json").read_text())
            maps = np.stack(
                [
                    scene.read_grid(root / f"train_{i:04d}.grid").values
                    for i in range(manifest["n_train"])
                ]
            )
            out = Path(cfg.out)
            out.mkdir(parents=True, exist_ok=True)
            tc = priors.TrainConfig(
                epochs=cfg.epochs,
                batch=cfg.batch,
                lr=cfg.lr,
                channels=cfg.channels,
                loss_csv=str(out / "train_loss.csv"),
            )
            model = priors.train_denoiser(maps, cfg.make_schedule(), tc, cfg.seed)
            priors.save_denoiser(out / "model.dmw", model)
            print(f"final loss {model.final_loss:.4f} -> {out / 'model.dmw'}")
            return 0

        if args.command == "reconstruct":
            cfg = _config_from_args(args)
            if not cfg.out:
                raise ConfigError("run.out is required (use --out)")
            truth = scene.read_grid(args.map)
            handle = _load_prior(cfg, args.model)
            sch = cfg.make_schedule()
            dims = (truth.width, truth.height)
            if args.obs:
                obs = observation.read_observation(args.obs)
            else:
                mask = observation.build_mask(cfg.strategy, cfg.mask_rate, dims, seed=(cfg.seed, 10))
                obs = observation.observe(truth, mask, cfg.sigma, seed=(cfg.seed, 11))
                if cfg.aware:
                    if not args.scene:
                        raise ConfigError("aware mode needs --scene")
                    scn = scene.read_scene(args.scene, cfg.sim_params())
                    obs = observation.augment_aware(obs, scn, cfg.effective_aware_sigma(cfg.sigma))
            t0 = time.perf_counter()
            recon, trace = sampler.reconstruct(
                obs,
                handle,
                sch,
                sampler.SamplerConfig(
                    ensemble=cfg.ensemble, seed=cfg.seed, record_trace=cfg.record_trace
                ),
            )
            elapsed = time.perf_counter() - t0
            out = Path(cfg.out)
            out.mkdir(parents=True, exist_ok=True)
            scene.write_grid(out / "recon.grid", recon)
            if cfg.record_trace:
                sampler.write_trace(out / "trace.csv", trace)
            (out / "run.json").write_text(
                json.dumps(
                    {
                        "seed": cfg.seed,
                        "ensemble": cfg.ensemble,
                        "steps": cfg.steps,
                        "mask_rate": cfg.mask_rate,
                        "sigma": cfg.sigma,
                        "aware": cfg.aware,
                        "wall_time_s": elapsed if cfg.record_timing else 0.0,
                    },
                    indent=1,
                )
            )
            print(f"wrote {out / 'recon.grid'}")
            return 0

        if args.command == "sweep":
            cfg = _config_from_args(args)
            summary = run_sweep(cfg, args.dataset, args.model)
            print(
                f"sweep: {summary['rows_written']} rows written, "
                f"{summary['failed']} failed -> {summary['csv']}"
            )
            return 2 if summary["failed"] else 0

        if args.command == "eval":
            table = aggregate_csv(args.csv)
            cols = ["method", "mask_rate", "sigma", "aware", "count", "psnr_mean", "psnr_std", "ssim_mean", "spe_mean"]
            print(",".join(cols))
            for entry in table:
                print(",".join(str(entry[c]) for c in cols))
            return 0

        if args.command == "oracle-check":
            return 0 if run_oracle_check() else 3

        if args.command == "export":
            export_image(args.grid, args.image, args.colormap)
            print(f"wrote {args.image}")
            return 0

    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1

    return 1


if __name__ == "__main__":
    sys.exit(main())
