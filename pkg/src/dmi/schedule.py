"""Discrete diffusion schedules and the observation-bridge coefficients.

Two schedule kinds are supported:

* ``ddpm``: the variance-preserving Markov chain x_t = a_t x_{t-1} + b_t n_t
  with a_t = sqrt(1 - beta_t), b_t = sqrt(beta_t).  Cumulative coefficients
  c_t = a_1 ... a_t and d_t with d_t^2 = a_t^2 d_{t-1}^2 + b_t^2 give the
  closed-form marginal x_t | x_0 ~ N(c_t x_0, d_t^2 I).
* ``ddm``: decoupled attenuation/noise on normalized time t_k = k/N with
  gamma_k = 1 - t_k and delta_k = sqrt(t_k), so x_t | x_0 ~ N(gamma x_0,
  delta^2 I).

The bridge coefficients (u_t, v_t, w_t) parameterize the conditional
q(z_t | z_{t+1}, z_0) = N(u_t z_0 + v_t z_{t+1}, w_t^2 I) of the ddpm chain,
used to generate the backward observation sequence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "NoiseSchedule",
    "BridgeCoeffs",
    "make_ddpm_schedule",
    "make_ddm_schedule",
    "forward_sample",
    "bridge_coeffs",
]


@dataclass(frozen=True)
class NoiseSchedule:
    """Immutable bundle of per-step and cumulative diffusion coefficients.

    Arrays are indexed by step t in 0..n_steps; entry 0 is the boundary
    convention (a_0 = 1, b_0 = 0, c_0 = 1, d_0 = 0) so that ``c[t]`` and
    ``d[t]`` line up with the marginal at step t.
    """

    kind: str
    n_steps: int
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    sigma_step: np.ndarray
    gamma: np.ndarray | None = None
    delta: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("ddpm", "ddm"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.n_steps < 2:
            raise ValueError("n_steps must be >= 2")
        for name in ("a", "b", "c", "d", "sigma_step"):
            arr = getattr(self, name)
            if arr.shape != (self.n_steps + 1,):
                raise ValueError(f"{name} must have shape ({self.n_steps + 1},)")


@dataclass(frozen=True)
class BridgeCoeffs:
    """Coefficients of q(z_t | z_{t+1}, z_0) for one step t of a ddpm chain."""

    u: float
    v: float
    w: float


def make_ddpm_schedule(
    n_steps: int, beta_min: float = 1e-4, beta_max: float | None = None
) -> NoiseSchedule:
    """Linear-beta DDPM schedule.

    beta_t runs linearly from beta_min to beta_max over t = 1..n_steps.
    When beta_max is omitted it is rescaled as 0.02 * (1000 / n_steps) so
    that the terminal attenuation c_N stays below 1e-2 at small step counts.
    """
    if n_steps < 2:
        raise ValueError("n_steps must be >= 2")
    if beta_max is None:
        # Rescaled for the step count, capped so tiny schedules stay valid.
        beta_max = min(0.02 * (1000.0 / n_steps), 0.5)
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ValueError(f"need 0 < beta_min <= beta_max < 1, got ({beta_min}, {beta_max})")

    beta = np.linspace(beta_min, beta_max, n_steps)
    a = np.concatenate([[1.0], np.sqrt(1.0 - beta)])
    b = np.concatenate([[0.0], np.sqrt(beta)])
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - beta)])
    c = np.sqrt(alpha_bar)
    d = np.sqrt(1.0 - alpha_bar)

    # Reverse proposal std: posterior variance beta_t (1 - abar_{t-1}) / (1 - abar_t),
    # with the t = 1 convention sigma_1^2 = beta_1 (the formula degenerates to 0 there).
    sigma2 = np.zeros(n_steps + 1)
    sigma2[1] = beta[0]
    for t in range(2, n_steps + 1):
        sigma2[t] = beta[t - 1] * (1.0 - alpha_bar[t - 1]) / (1.0 - alpha_bar[t])
    sigma_step = np.sqrt(sigma2)

    return NoiseSchedule(
        kind="ddpm", n_steps=n_steps, a=a, b=b, c=c, d=d, sigma_step=sigma_step
    )


def make_ddm_schedule(n_steps: int) -> NoiseSchedule:
    """Decoupled schedule on normalized time t_k = k/N.

    The attenuation is linear (gamma goes 1 -> 0) and the injected noise
    variance is t_k, so the state is fully attenuated with unit-variance
    noise at k = N.  The per-step (a, b) pair reproduces the marginals:
    gamma_k = a_k gamma_{k-1} and delta_k^2 = a_k^2 delta_{k-1}^2 + b_k^2.
    """
    if n_steps < 2:
        raise ValueError("n_steps must be >= 2")
    t_grid = np.arange(n_steps + 1) / n_steps
    gamma = 1.0 - t_grid
    delta = np.sqrt(t_grid)

    a = np.ones(n_steps + 1)
    b = np.zeros(n_steps + 1)
    a[1:] = gamma[1:] / gamma[:-1]  # last entry is exactly 0: gamma_N = 0
    b[1:] = np.sqrt(np.maximum(delta[1:] ** 2 - a[1:] ** 2 * delta[:-1] ** 2, 0.0))

    # Reverse update of the decoupled chain: step size dt = 1/N, proposal
    # variance dt * (t - dt) / t evaluated at t = t_k.
    dt = 1.0 / n_steps
    sigma2 = np.zeros(n_steps + 1)
    sigma2[1:] = dt * (t_grid[1:] - dt) / t_grid[1:]
    sigma_step = np.sqrt(sigma2)

    return NoiseSchedule(
        kind="ddm",
        n_steps=n_steps,
        a=a,
        b=b,
        c=gamma.copy(),
        d=delta.copy(),
        sigma_step=sigma_step,
        gamma=gamma,
        delta=delta,
    )


def forward_sample(
    schedule: NoiseSchedule, x0: np.ndarray, t: int, seed
) -> np.ndarray:
    """Draw x_t | x_0 from the closed-form forward marginal.

    Returns c_t x0 + d_t g for ddpm (gamma_t x0 + delta_t g for ddm) with g
    standard normal from `seed`.
    """
    if not 1 <= t <= schedule.n_steps:
        raise ValueError(f"step t={t} outside 1..{schedule.n_steps}")
    rng = np.random.default_rng(seed)
    g = rng.standard_normal(np.shape(x0))
    if schedule.kind == "ddm":
        return schedule.gamma[t] * np.asarray(x0, dtype=float) + schedule.delta[t] * g
    return schedule.c[t] * np.asarray(x0, dtype=float) + schedule.d[t] * g


def bridge_coeffs(schedule: NoiseSchedule, t: int) -> BridgeCoeffs:
    """Ancestral bridge q(z_t | z_{t+1}, z_0) of the ddpm recursion.

    With D = a_{t+1}^2 d_t^2 + b_{t+1}^2 (which equals d_{t+1}^2):

        u_t = c_t b_{t+1}^2 / D
        v_t = a_{t+1} d_t^2 / D
        w_t^2 = b_{t+1}^2 d_t^2 / D

    Mean consistency u_t + v_t c_{t+1} = c_t holds by construction, so the
    bridge preserves the forward marginals of any chain driven by Eq-style
    selection operators.
    """
    if schedule.kind != "ddpm":
        raise ValueError("bridge coefficients are defined for ddpm schedules only")
    if not 0 <= t < schedule.n_steps:
        raise ValueError(f"step t={t} outside 0..{schedule.n_steps - 1}")
    a_next = schedule.a[t + 1]
    b2_next = schedule.b[t + 1] ** 2
    d2 = schedule.d[t] ** 2
    denom = a_next**2 * d2 + b2_next
    if denom == 0.0:
        # Fully deterministic chain at this step: bridge pinned at z_0.
        return BridgeCoeffs(u=1.0, v=0.0, w=0.0)
    u = schedule.c[t] * b2_next / denom
    v = a_next * d2 / denom
    w = float(np.sqrt(b2_next * d2 / denom))
    return BridgeCoeffs(u=float(u), v=float(v), w=w)
