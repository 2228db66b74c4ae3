"""Gaussian kernel density prior built from global particles."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import as_matrix, log_sum_exp, pairwise_sq_dists

DEFAULT_BANDWIDTH = 0.55


@dataclass(frozen=True)
class GlobalPrior:
    """Equal-weight mixture of isotropic Gaussians centred on the particles.

    ``bandwidth`` is the standard deviation of each component.
    """

    particles: np.ndarray
    bandwidth: float = DEFAULT_BANDWIDTH

    def __post_init__(self):
        particles = as_matrix(self.particles, "particles")
        if particles.shape[0] < 1:
            raise ValueError("a prior needs at least one particle")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        object.__setattr__(self, "particles", particles)

    @property
    def dim(self) -> int:
        return self.particles.shape[1]


def _log_components(prior: GlobalPrior, theta):
    theta = np.asarray(theta, dtype=np.float64)
    single = theta.ndim == 1
    thetas = as_matrix(theta, "theta")
    if thetas.shape[1] != prior.dim:
        raise ValueError(
            f"theta has dimension {thetas.shape[1]}, prior has {prior.dim}")
    bw2 = prior.bandwidth ** 2
    sq = pairwise_sq_dists(thetas, prior.particles)
    log_norm = -0.5 * prior.dim * np.log(2.0 * np.pi * bw2)
    return single, thetas, log_norm - 0.5 * sq / bw2


def responsibilities(prior: GlobalPrior, theta) -> np.ndarray:
    """Posterior component weights ``w_i(theta)``; rows sum to one."""
    single, _, logc = _log_components(prior, theta)
    w = np.exp(logc - log_sum_exp(logc, axis=1)[:, None])
    return w[0] if single else w


def log_density(prior: GlobalPrior, theta):
    """``log (1/N) sum_i N(theta; theta_i, bandwidth^2 I)``.

    Accepts one point (m,) or a stack (p, m).
    """
    single, _, logc = _log_components(prior, theta)
    out = log_sum_exp(logc, axis=1) - np.log(prior.particles.shape[0])
    return float(out[0]) if single else out


def grad_log_density(prior: GlobalPrior, theta) -> np.ndarray:
    """``sum_i w_i(theta) (theta_i - theta) / bandwidth^2``."""
    single, thetas, logc = _log_components(prior, theta)
    w = np.exp(logc - log_sum_exp(logc, axis=1)[:, None])
    grad = (w @ prior.particles - thetas) / prior.bandwidth ** 2
    return grad[0] if single else grad
