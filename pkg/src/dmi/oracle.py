"""Closed-form Bayesian inference for the linear-Gaussian case.

With a diagonal Gaussian prior and a selection operator everything
factorizes per cell, so the exact posterior, the Tikhonov MAP estimate, and
the exact backward filtering recursion are all cheap closed forms.  These
are the ground truth the diffusion sampler is validated against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .observation import MaskOperator, ObservationSet
from .priors import GaussianPrior
from .schedule import NoiseSchedule

__all__ = [
    "GaussianPosterior",
    "posterior_gaussian",
    "map_tikhonov",
    "sequential_filter",
]


@dataclass(frozen=True)
class GaussianPosterior:
    """Per-cell Gaussian posterior (diagonal covariance).

    A variance of exactly 0 is the hard-constraint sentinel produced by
    noiseless observations.
    """

    mean: np.ndarray
    var: np.ndarray


def posterior_gaussian(prior: GaussianPrior, obs: ObservationSet) -> GaussianPosterior:
    """Exact posterior of N(mean, var) given y = A x + n per observed cell.

    Observed cell i:  var_i = (1/var_prior + 1/sigma_i^2)^-1,
                      mean_i = var_i (m/var_prior + y_i/sigma_i^2).
    Unobserved cells keep the prior.  sigma_i = 0 becomes the hard
    constraint mean = y_i, var = 0.
    """
    mean = prior.mean.copy()
    var = prior.var.copy()
    idx = obs.mask.observed
    sig = obs.entry_sigmas()

    m_flat = mean.ravel()
    v_flat = var.ravel()
    hard = sig == 0.0
    soft = ~hard

    if soft.any():
        i = idx[soft]
        prec = 1.0 / v_flat[i] + 1.0 / sig[soft] ** 2
        post_var = 1.0 / prec
        m_flat[i] = post_var * (m_flat[i] / v_flat[i] + obs.y[soft] / sig[soft] ** 2)
        v_flat[i] = post_var
    if hard.any():
        i = idx[hard]
        m_flat[i] = obs.y[hard]
        v_flat[i] = 0.0
    return GaussianPosterior(mean=mean, var=var)


def map_tikhonov(prior: GaussianPrior, obs: ObservationSet) -> np.ndarray:
    """Ridge-regularized MAP estimate for a zero-mean prior.

    For a selection operator and diagonal prior the estimate is per-cell
    y_i / (1 + sigma_i^2 / var_prior,i) on observed cells, 0 elsewhere.
    """
    out = np.zeros_like(prior.var)
    flat = out.ravel()
    idx = obs.mask.observed
    sig = obs.entry_sigmas()
    flat[idx] = obs.y / (1.0 + sig**2 / prior.var.ravel()[idx])
    return out


def sequential_filter(
    obs_seq,
    prior: GaussianPrior,
    schedule: NoiseSchedule,
    update_steps: set[int] | None = None,
) -> list[GaussianPosterior]:
    """Exact backward filter p(x_t | y_{t:N}) for the Gaussian chain.

    Runs in the sampler's time direction (t = N down to 0).  The prediction
    step pushes the filtered Gaussian through the exact reverse conditional
    of the forward chain; the update step conditions on y_t with the
    noise-shared likelihood N(A x_t, c_t^2 sigma_i^2).  Returns a list
    indexed by t in 0..N.

    `update_steps` restricts which steps receive a measurement update
    (default: all); passing {0} collapses the filter to the static posterior.
    """
    if schedule.kind != "ddpm":
        raise ValueError("sequential_filter requires a ddpm schedule")
    n = schedule.n_steps
    mask: MaskOperator = obs_seq.obs.mask
    sig = obs_seq.obs.entry_sigmas()
    idx = mask.observed
    m0 = prior.mean.ravel()
    s2 = prior.var.ravel()
    c, d, a, b = schedule.c, schedule.d, schedule.a, schedule.b

    # Per-cell marginal variance of the diffused prior at each step.
    marg = lambda t: c[t] ** 2 * s2 + d[t] ** 2

    def update(mean, var, t):
        if update_steps is not None and t not in update_steps:
            return mean, var
        y_t = obs_seq.y[t]
        lik_var = (c[t] * sig) ** 2
        mean, var = mean.copy(), var.copy()
        hard = lik_var == 0.0
        soft = ~hard
        if soft.any():
            i = idx[soft]
            post_var = 1.0 / (1.0 / var[i] + 1.0 / lik_var[soft])
            mean[i] = post_var * (mean[i] / var[i] + y_t[soft] / lik_var[soft])
            var[i] = post_var
        if hard.any():
            i = idx[hard]
            mean[i] = y_t[hard]
            var[i] = 0.0
        return mean, var

    out: list[GaussianPosterior | None] = [None] * (n + 1)
    mean, var = c[n] * m0, marg(n)
    mean, var = update(mean, var, n)
    shape = prior.mean.shape
    out[n] = GaussianPosterior(mean=mean.reshape(shape), var=var.reshape(shape))

    for t in range(n - 1, -1, -1):
        # Reverse conditional x_t | x_{t+1} of the Gaussian chain:
        # F = a_{t+1} G_t / G_{t+1}, e = c_t m b_{t+1}^2 / G_{t+1},
        # Q = b_{t+1}^2 G_t / G_{t+1}, with G_t the diffused marginal variance.
        g_t, g_next = marg(t), marg(t + 1)
        f_coef = a[t + 1] * g_t / g_next
        e_coef = c[t] * m0 * b[t + 1] ** 2 / g_next
        q = b[t + 1] ** 2 * g_t / g_next
        mean = f_coef * mean + e_coef
        var = f_coef**2 * var + q
        mean, var = update(mean, var, t)
        out[t] = GaussianPosterior(mean=mean.reshape(shape), var=var.reshape(shape))
    return out  # type: ignore[return-value]
