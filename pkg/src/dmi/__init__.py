"""Diffusion-prior Bayesian reconstruction of masked, noisy 2D grid maps.

Subpackages cover synthetic scene simulation, mask/observation handling,
discrete diffusion schedules, pluggable priors (analytic Gaussian and a
small trained denoiser), the filtering posterior sampler, an exact
linear-Gaussian oracle, interpolation baselines, and evaluation metrics.
"""

__version__ = "0.1.0"
