import numpy as np
import pytest


@pytest.fixture(scope="session", autouse=True)
def single_threaded_torch():
    # Determinism contract: the suite runs single-threaded.
    try:
        import torch

        torch.set_num_threads(1)
    except ImportError:
        pass


@pytest.fixture(scope="session")
def acceptance_dataset(tmp_path_factory):
    """200 train + 20 test maps at 64x64 (the acceptance-scale dataset)."""
    from dmi.scene import generate_dataset

    out = tmp_path_factory.mktemp("acceptance_ds")
    generate_dataset(out, n_train=200, n_test=20, width=64, height=64,
                     n_buildings=8, seed=1)
    return out


@pytest.fixture(scope="session")
def trained_prior(acceptance_dataset, tmp_path_factory):
    """Denoiser trained on the acceptance dataset with default budget."""
    from dmi.cli import RunConfig
    from dmi.priors import TrainConfig, save_denoiser, train_denoiser
    from dmi.scene import read_grid

    cfg = RunConfig()
    maps = np.stack(
        [
            read_grid(acceptance_dataset / f"train_{i:04d}.grid").values
            for i in range(200)
        ]
    )
    schedule = cfg.make_schedule()
    model = train_denoiser(maps, schedule, TrainConfig(), seed=0)
    out = tmp_path_factory.mktemp("model")
    path = out / "model.dmw"
    save_denoiser(path, model)
    return {"model": model, "path": path, "schedule": schedule, "config": cfg}
