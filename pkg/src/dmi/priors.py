"""Pluggable priors for the diffusion sampler.

Two variants sit behind one interface:

* an analytic diagonal Gaussian prior whose diffused score is exact, which
  makes every sampler equation checkable against closed forms, and
* a small trained convolutional denoiser (epsilon-prediction) for the full
  pipeline on synthetic radio maps.

Conversions between epsilon and score parameterizations and Tweedie's
posterior-mean formula live here as explicit operations.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .schedule import NoiseSchedule

__all__ = [
    "GaussianPrior",
    "PriorHandle",
    "gaussian_score",
    "tweedie_x0",
    "epsilon_to_score",
    "score_to_epsilon",
    "denoiser_mean",
    "TrainConfig",
    "TrainingDiverged",
    "train_denoiser",
    "save_denoiser",
    "load_denoiser",
    "analytic_handle",
    "learned_handle",
]

MODEL_MAGIC = b"DMW1"


@dataclass(frozen=True)
class GaussianPrior:
    """Diagonal Gaussian N(mean, diag(var)) over grid cells."""

    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mean, dtype=float)
        v = np.asarray(self.var, dtype=float)
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "var", np.broadcast_to(v, m.shape).copy())
        if (self.var <= 0).any():
            raise ValueError("prior variance must be > 0 element-wise")


@dataclass(frozen=True)
class PriorHandle:
    """Uniform score/denoiser interface over the two prior variants."""

    variant: str  # "analytic_gaussian" | "learned"
    prior: object

    def __post_init__(self):
        if self.variant not in ("analytic_gaussian", "learned"):
            raise ValueError(f"unknown prior variant {self.variant!r}")

    def epsilon(self, x_t: np.ndarray, t: int, schedule: NoiseSchedule) -> np.ndarray:
        """Predicted noise for the current state at step t."""
        if self.variant == "analytic_gaussian":
            return score_to_epsilon(schedule, gaussian_score(self.prior, x_t, t, schedule), t)
        return self.prior.predict_epsilon(x_t, t)


def analytic_handle(prior: GaussianPrior) -> PriorHandle:
    return PriorHandle(variant="analytic_gaussian", prior=prior)


def learned_handle(model) -> PriorHandle:
    return PriorHandle(variant="learned", prior=model)


def gaussian_score(
    prior: GaussianPrior, x_t: np.ndarray, t: int, schedule: NoiseSchedule
) -> np.ndarray:
    """Exact score of the diffused Gaussian prior at step t.

    The diffused marginal is N(c_t m, c_t^2 var + d_t^2) per cell, so the
    score is -(x_t - c_t m) / (c_t^2 var + d_t^2).
    """
    if schedule.kind != "ddpm":
        raise ValueError("gaussian_score requires a ddpm schedule")
    c_t, d_t = schedule.c[t], schedule.d[t]
    marg_var = c_t**2 * prior.var + d_t**2
    return -(np.asarray(x_t, dtype=float) - c_t * prior.mean) / marg_var


def tweedie_x0(
    schedule: NoiseSchedule, x_t: np.ndarray, t: int, score: np.ndarray
) -> np.ndarray:
    """Posterior mean of x_0 given x_t: (x_t + d_t^2 score) / c_t."""
    c_t = schedule.c[t]
    if c_t == 0:
        raise ValueError("tweedie_x0 undefined when c_t = 0")
    return (np.asarray(x_t, dtype=float) + schedule.d[t] ** 2 * np.asarray(score)) / c_t


def epsilon_to_score(schedule: NoiseSchedule, eps: np.ndarray, t: int) -> np.ndarray:
    """score = -eps / d_t."""
    d_t = schedule.d[t]
    if d_t == 0:
        raise ValueError("epsilon/score conversion undefined at d_t = 0")
    return -np.asarray(eps, dtype=float) / d_t


def score_to_epsilon(schedule: NoiseSchedule, score: np.ndarray, t: int) -> np.ndarray:
    """eps = -score * d_t (inverse of epsilon_to_score)."""
    d_t = schedule.d[t]
    if d_t == 0:
        raise ValueError("epsilon/score conversion undefined at d_t = 0")
    return -np.asarray(score, dtype=float) * d_t


def denoiser_mean(
    prior: PriorHandle, x_t: np.ndarray, t: int, schedule: NoiseSchedule
) -> np.ndarray:
    """Ancestral reverse mean mu = (x_t - (b_t^2 / d_t) eps_hat) / a_t.

    For the analytic Gaussian prior (exact score) this equals the exact
    conditional mean E[x_{t-1} | x_t] of the reversed chain.
    """
    if t < 1:
        raise ValueError("denoiser_mean requires t >= 1")
    eps_hat = prior.epsilon(x_t, t, schedule)
    a_t, b_t, d_t = schedule.a[t], schedule.b[t], schedule.d[t]
    return (np.asarray(x_t, dtype=float) - (b_t**2 / d_t) * eps_hat) / a_t


# ---------------------------------------------------------------------------
# Learned denoiser (torch): small conv encoder-decoder, epsilon-prediction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch: int = 16
    lr: float = 4e-3
    channels: int = 12
    loss_csv: str | None = None


class TrainingDiverged(RuntimeError):
    """Raised when the training loss becomes non-finite."""


def _torch():
    import torch

    return torch


def _build_net(channels: int, n_steps: int):
    """Three-level conv encoder-decoder with sinusoidal step embedding."""
    torch = _torch()
    nn = torch.nn

    class StepEmbed(nn.Module):
        def __init__(self, dim):
            super().__init__()
            self.dim = dim
            self.proj = nn.Sequential(nn.Linear(dim, dim), nn.SiLU(), nn.Linear(dim, dim))

        def forward(self, t):
            half = self.dim // 2
            freqs = torch.exp(
                -np.log(10000.0) * torch.arange(half, dtype=torch.float32) / half
            )
            ang = t[:, None].float() * freqs[None, :]
            emb = torch.cat([torch.sin(ang), torch.cos(ang)], dim=1)
            return self.proj(emb)

    class Block(nn.Module):
        # Pre-activation residual block: the identity path keeps a linear
        # route for the input (and its DC component) through the network,
        # which the reverse chain needs for stability.
        def __init__(self, cin, cout, emb_dim):
            super().__init__()
            self.norm1 = nn.GroupNorm(4, cin) if cin >= 4 else nn.Identity()
            self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
            self.norm2 = nn.GroupNorm(4, cout)
            self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
            self.emb = nn.Linear(emb_dim, cout)
            self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()
            self.act = nn.SiLU()

        def forward(self, x, e):
            h = self.conv1(self.act(self.norm1(x)) if not isinstance(self.norm1, nn.Identity) else x)
            h = h + self.emb(e)[:, :, None, None]
            h = self.conv2(self.act(self.norm2(h)))
            return h + self.skip(x)

    class Denoiser(nn.Module):
        def __init__(self):
            super().__init__()
            ch = channels
            self.embed = StepEmbed(4 * ch)
            self.enc1 = Block(1, ch, 4 * ch)
            self.down1 = nn.Conv2d(ch, 2 * ch, 4, stride=2, padding=1)
            self.enc2 = Block(2 * ch, 2 * ch, 4 * ch)
            self.down2 = nn.Conv2d(2 * ch, 4 * ch, 4, stride=2, padding=1)
            self.mid = Block(4 * ch, 4 * ch, 4 * ch)
            self.up2 = nn.ConvTranspose2d(4 * ch, 2 * ch, 4, stride=2, padding=1)
            self.dec2 = Block(4 * ch, 2 * ch, 4 * ch)
            self.up1 = nn.ConvTranspose2d(2 * ch, ch, 4, stride=2, padding=1)
            self.dec1 = Block(2 * ch, ch, 4 * ch)
            self.out = nn.Conv2d(ch, 1, 1)
            # Zero-init output so a fresh model predicts eps = 0 exactly,
            # giving the analytic initial loss of 1.0 per dimension.
            nn.init.zeros_(self.out.weight)
            nn.init.zeros_(self.out.bias)

        def forward(self, x, t):
            e = self.embed(t)
            h1 = self.enc1(x, e)
            h2 = self.enc2(self.down1(h1), e)
            hm = self.mid(self.down2(h2), e)
            u2 = self.dec2(torch.cat([self.up2(hm), h2], dim=1), e)
            u1 = self.dec1(torch.cat([self.up1(u2), h1], dim=1), e)
            return self.out(u1)

    net = Denoiser()
    net.n_steps = n_steps
    net.channels = channels
    return net


class DenoiserModel:
    """Trained epsilon-prediction network wrapped for numpy callers."""

    def __init__(self, net, n_steps: int, channels: int, final_loss: float = float("nan")):
        self.net = net
        self.n_steps = n_steps
        self.channels = channels
        self.final_loss = final_loss
        self.loss_history: list[float] = []

    def predict_epsilon(self, x_t: np.ndarray, t: int) -> np.ndarray:
        torch = _torch()
        with torch.no_grad():
            x = torch.from_numpy(np.asarray(x_t, dtype=np.float32))[None, None]
            tt = torch.tensor([t], dtype=torch.float32)
            out = self.net(x, tt)
        return out[0, 0].numpy().astype(float)


def train_denoiser(
    dataset: np.ndarray,
    schedule: NoiseSchedule,
    train_config: TrainConfig,
    seed: int,
) -> DenoiserModel:
    """Minimize E || eps - eps_theta(c_t x0 + d_t eps, t) ||^2 over uniform t.

    `dataset` is an (n, height, width) stack of clean grids.  Deterministic
    for a fixed seed under single-threaded execution.  A non-finite loss
    aborts with TrainingDiverged.
    """
    torch = _torch()
    data = np.asarray(dataset, dtype=np.float32)
    if data.ndim != 3 or data.shape[0] == 0:
        raise ValueError("dataset must be a nonempty (n, h, w) stack")

    torch.manual_seed(seed)
    net = _build_net(train_config.channels, schedule.n_steps)
    opt = torch.optim.Adam(net.parameters(), lr=train_config.lr)
    x_all = torch.from_numpy(data)[:, None]
    n = x_all.shape[0]
    c = torch.from_numpy(schedule.c.astype(np.float32))
    d = torch.from_numpy(schedule.d.astype(np.float32))

    gen = torch.Generator().manual_seed(seed)
    losses = []
    for epoch in range(train_config.epochs):
        perm = torch.randperm(n, generator=gen)
        epoch_loss, n_batches = 0.0, 0
        for start in range(0, n, train_config.batch):
            idx = perm[start : start + train_config.batch]
            x0 = x_all[idx]
            t = torch.randint(1, schedule.n_steps + 1, (idx.shape[0],), generator=gen)
            eps = torch.randn(x0.shape, generator=gen)
            x_t = c[t][:, None, None, None] * x0 + d[t][:, None, None, None] * eps
            pred = net(x_t, t.float())
            loss = ((pred - eps) ** 2).mean()
            if not torch.isfinite(loss):
                raise TrainingDiverged(
                    f"loss became non-finite at epoch {epoch}, batch {n_batches}"
                )
            opt.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(net.parameters(), 1.0)
            opt.step()
            epoch_loss += float(loss.detach())
            n_batches += 1
        losses.append(epoch_loss / n_batches)

    model = DenoiserModel(
        net, schedule.n_steps, train_config.channels, final_loss=losses[-1]
    )
    model.loss_history = losses
    if train_config.loss_csv is not None:
        with open(train_config.loss_csv, "w") as f:
            f.write("epoch,loss\n")
            for i, v in enumerate(losses):
                f.write(f"{i},{v!r}\n")
    return model


def save_denoiser(path, model: DenoiserModel) -> None:
    """Model file: magic DMW1, JSON descriptor block, float32le tensors."""
    desc = json.dumps(
        {"arch": "conv_ed3", "channels": model.channels, "n_steps": model.n_steps,
         "final_loss": model.final_loss}
    ).encode()
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<I", len(desc)))
        f.write(desc)
        for p in model.net.parameters():
            f.write(p.detach().numpy().astype("<f4").tobytes())


def load_denoiser(path) -> DenoiserModel:
    torch = _torch()
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MODEL_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        (desc_len,) = struct.unpack("<I", f.read(4))
        desc = json.loads(f.read(desc_len).decode())
        if desc.get("arch") != "conv_ed3":
            raise ValueError(f"{path}: unknown architecture {desc.get('arch')!r}")
        net = _build_net(desc["channels"], desc["n_steps"])
        with torch.no_grad():
            for p in net.parameters():
                buf = f.read(4 * p.numel())
                vals = np.frombuffer(buf, dtype="<f4").reshape(p.shape)
                p.copy_(torch.from_numpy(vals.copy()))
    return DenoiserModel(net, desc["n_steps"], desc["channels"], desc.get("final_loss", float("nan")))
