"""Stein variational gradient descent with an AdaGrad step policy.

The update direction for particle ``i`` is

    phi_i = (1/N) sum_j [ k(x_j, x_i) grad_log_p(x_j) + grad_{x_j} k(x_j, x_i) ]

and the applied step is an AdaGrad transform of ``phi`` followed by heavy-ball
momentum. ``momentum=0`` gives plain AdaGrad.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .numerics import as_matrix, median, pairwise_sq_dists

KERNELS = ("rbf", "laplacian", "polynomial", "sigmoid")


@dataclass(frozen=True)
class SvgdKernel:
    """Kernel choice and its parameters.

    ``bandwidth=None`` means the median heuristic recomputed at every step
    (used by ``rbf`` and ``laplacian``). ``degree``/``coef0`` parametrize the
    polynomial kernel ``(x.y + coef0) ** degree`` and ``alpha``/``bias`` the
    sigmoid kernel ``tanh(alpha x.y + bias)``.
    """

    kind: str = "rbf"
    bandwidth: Optional[float] = None
    degree: int = 2
    coef0: float = 1.0
    alpha: float = 1.0
    bias: float = 0.0

    def __post_init__(self):
        if self.kind not in KERNELS:
            raise ValueError(f"unknown kernel {self.kind!r}; expected one of {KERNELS}")
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        if self.degree < 1:
            raise ValueError("polynomial degree must be >= 1")
        if self.alpha == 0:
            raise ValueError("sigmoid alpha must be nonzero")


@dataclass(frozen=True)
class SvgdConfig:
    iterations: int = 30
    step_eta: float = 0.01
    adagrad_lambda: float = 1e-8
    momentum: float = 0.9
    minibatch: Optional[int] = None
    kernel: SvgdKernel = field(default_factory=SvgdKernel)

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.step_eta > 0:
            raise ValueError("step_eta must be positive")
        if not self.adagrad_lambda > 0:
            raise ValueError("adagrad_lambda must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.minibatch is not None and self.minibatch < 1:
            raise ValueError("minibatch must be >= 1")


@dataclass(frozen=True)
class SvgdState:
    particles: np.ndarray
    grad_accum: np.ndarray
    velocity: np.ndarray

    @classmethod
    def start(cls, particles) -> "SvgdState":
        particles = as_matrix(particles, "particles").copy()
        return cls(particles, np.zeros_like(particles), np.zeros_like(particles))


def median_bandwidth(particles) -> float:
    """``med**2 / log N`` over pairwise Euclidean distances.

    Falls back to 1.0 for a single particle or when all particles coincide.
    """
    particles = as_matrix(particles, "particles")
    n = particles.shape[0]
    if n < 2:
        return 1.0
    sq = pairwise_sq_dists(particles, particles)
    med = median(np.sqrt(sq[np.triu_indices(n, k=1)]))
    if med == 0.0:
        return 1.0
    return med ** 2 / np.log(n)


def _resolve_bandwidth(kernel: SvgdKernel, particles) -> float:
    if kernel.bandwidth is not None:
        return float(kernel.bandwidth)
    return median_bandwidth(particles)


def _kernel_terms(kernel: SvgdKernel, X: np.ndarray, h: float):
    """Kernel matrix and per-pair scalar weights for the kernel gradient.

    Every supported kernel has ``grad_{x_j} k(x_j, x_i) = a[j, i] x_j + b[j, i] x_i``;
    returns ``(K, a, b)``.
    """
    kind = kernel.kind
    if kind in ("rbf", "laplacian"):
        sq = pairwise_sq_dists(X, X)
        if kind == "rbf":
            K = np.exp(-sq / h)
            a = -2.0 / h * K
        else:
            sigma = np.sqrt(h)
            r = np.sqrt(sq)
            K = np.exp(-r / sigma)
            with np.errstate(divide="ignore", invalid="ignore"):
                a = np.where(r > 0, -K / (sigma * r), 0.0)
        return K, a, -a
    gram = X @ X.T
    zero = np.zeros_like(gram)
    if kind == "polynomial":
        base = gram + kernel.coef0
        K = base ** kernel.degree
        return K, zero, kernel.degree * base ** (kernel.degree - 1)
    K = np.tanh(kernel.alpha * gram + kernel.bias)
    return K, zero, kernel.alpha * (1.0 - K ** 2)


def kernel_and_grad(kernel: SvgdKernel, particles, bandwidth=None):
    """Kernel matrix and all pairwise kernel gradients.

    Returns ``K`` (n, n) with ``K[j, i] = k(x_j, x_i)`` and ``grad_k`` (n, n, m)
    with ``grad_k[j, i] = grad_{x_j} k(x_j, x_i)``. Memory is O(n^2 m); the
    update itself never materializes ``grad_k``.
    """
    X = as_matrix(particles, "particles")
    h = bandwidth if bandwidth is not None else _resolve_bandwidth(kernel, X)
    K, a, b = _kernel_terms(kernel, X, h)
    grad_k = a[:, :, None] * X[:, None, :] + b[:, :, None] * X[None, :, :]
    return K, grad_k


def svgd_direction(kernel: SvgdKernel, particles, grad_log_post, bandwidth=None):
    """Stein variational direction ``phi`` for every particle, shape (n, m)."""
    X = as_matrix(particles, "particles")
    G = np.asarray(grad_log_post, dtype=np.float64)
    if G.shape != X.shape:
        raise ValueError(f"gradient shape {G.shape} does not match particles {X.shape}")
    if not np.all(np.isfinite(G)):
        raise ValueError("gradient contains non-finite entries")
    h = bandwidth if bandwidth is not None else _resolve_bandwidth(kernel, X)
    K, a, b = _kernel_terms(kernel, X, h)
    repulsion = a.T @ X + b.sum(axis=0)[:, None] * X
    return (K.T @ G + repulsion) / X.shape[0]


def svgd_step(state: SvgdState, grad_log_post, config: SvgdConfig,
              bandwidth=None) -> SvgdState:
    phi = svgd_direction(config.kernel, state.particles, grad_log_post, bandwidth)
    grad_accum = state.grad_accum + phi ** 2
    step = config.step_eta * phi / np.sqrt(grad_accum + config.adagrad_lambda)
    velocity = config.momentum * state.velocity + step
    return SvgdState(state.particles + velocity, grad_accum, velocity)


def run_svgd(init, target_grad: Callable, config: SvgdConfig, rng=None,
             callback: Optional[Callable] = None) -> np.ndarray:
    """Run ``config.iterations`` SVGD steps from ``init``.

    ``target_grad`` maps an (n, m) particle stack to the (n, m) stack of
    log-target gradients. When ``rng`` is given it is forwarded as
    ``target_grad(particles, rng)`` (minibatch sampling lives there).
    ``callback(iteration, particles)`` is invoked after every step.
    """
    state = SvgdState.start(init)
    for it in range(config.iterations):
        if rng is None:
            grad = target_grad(state.particles)
        else:
            grad = target_grad(state.particles, rng)
        state = svgd_step(state, grad, config)
        if callback is not None:
            callback(it, state.particles)
    return state.particles


def stein_kernel_matrix(kernel: SvgdKernel, particles, scores, bandwidth=None):
    """Pairwise Stein kernel ``u_p(x_i, x_j)`` for the RBF or polynomial kernel."""
    X = as_matrix(particles, "particles")
    S = np.asarray(scores, dtype=np.float64).reshape(X.shape)
    m = X.shape[1]
    sx = np.einsum("ij,ij->i", S, X)  # s_i . x_i
    SX = S @ X.T  # [i, j] = s_i . x_j
    SS = S @ S.T
    if kernel.kind == "rbf":
        h = bandwidth if bandwidth is not None else _resolve_bandwidth(kernel, X)
        sq = pairwise_sq_dists(X, X)
        K = np.exp(-sq / h)
        # s_i . grad_{x_j} k + s_j . grad_{x_i} k, with diff = x_i - x_j
        cross = 2.0 / h * K * ((sx[:, None] - SX) - (SX.T - sx[None, :]))
        trace = K * (2.0 * m / h - 4.0 * sq / h ** 2)
        return SS * K + cross + trace
    if kernel.kind == "polynomial":
        d, c = kernel.degree, kernel.coef0
        gram = X @ X.T
        base = gram + c
        K = base ** d
        dk = d * base ** (d - 1)
        cross = dk * (sx[:, None] + sx[None, :])
        d2k = d * (d - 1) * base ** (d - 2) if d >= 2 else np.zeros_like(base)
        trace = d2k * gram + m * dk
        return SS * K + cross + trace
    raise ValueError(f"kernelized Stein discrepancy is not defined here for {kernel.kind!r}")


def ksd(particles, target_grad: Callable, kernel: SvgdKernel = SvgdKernel(),
        bandwidth=None) -> float:
    """Kernelized Stein discrepancy of the particle measure (V-statistic).

    Returns the square root of the clipped-at-zero squared-KSD estimate.
    """
    X = as_matrix(particles, "particles")
    if X.shape[0] < 2:
        raise ValueError("ksd needs at least two particles")
    U = stein_kernel_matrix(kernel, X, target_grad(X), bandwidth)
    return float(np.sqrt(max(U.mean(), 0.0)))


def with_kernel(config: SvgdConfig, **kernel_changes) -> SvgdConfig:
    return replace(config, kernel=replace(config.kernel, **kernel_changes))
