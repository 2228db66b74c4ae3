"""Empirical checks of the convergence claims and of the OT solver.

Each suite returns a :class:`SuiteResult`; ``passed`` is the verdict and
``stats`` carries the numbers the verdict was based on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .barycenter import AggregationConfig, aggregate
from .metrics import gaussian_fit_kl, w2_to_point
from .numerics import make_rng
from .ot import brute_force_assignment, cost_matrix, solve_exact
from .svgd import SvgdConfig, run_svgd


@dataclass
class SuiteResult:
    name: str
    passed: bool
    stats: dict = field(default_factory=dict)

    def line(self) -> str:
        shown = ", ".join(f"{k}={_fmt(v)}" for k, v in self.stats.items())
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {shown}"


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


def conjugate_gaussian_problem(seed: int, n_obs: int = 10):
    """2-D Gaussian mean with a Gaussian prior; returns posterior mean,
    covariance and precision."""
    rng = make_rng(10_000 + seed)
    prior_cov = 4.0 * np.eye(2)
    lik_cov = np.array([[1.0, 0.6], [0.6, 1.0]])
    theta_true = np.array([1.0, -1.0])
    obs = rng.multivariate_normal(theta_true, lik_cov, n_obs)
    lik_prec = np.linalg.inv(lik_cov)
    precision = np.linalg.inv(prior_cov) + n_obs * lik_prec
    cov = np.linalg.inv(precision)
    mean = cov @ (lik_prec @ obs.sum(axis=0))
    return mean, cov, precision


KL_SUITE_SVGD = SvgdConfig(iterations=300, step_eta=0.2, momentum=0.0)


def kl_trace(seed: int, config: SvgdConfig = KL_SUITE_SVGD, n_particles: int = 50):
    """KL of the Gaussian fit to the analytic posterior, before and after
    every SVGD iteration."""
    mean, cov, precision = conjugate_gaussian_problem(seed)
    init = make_rng(seed).standard_normal((n_particles, 2)) + np.array([-2.0, 2.0])
    trace = [gaussian_fit_kl(init, mean, cov)]
    run_svgd(init, lambda X: -(X - mean) @ precision, config,
             callback=lambda it, X: trace.append(gaussian_fit_kl(X, mean, cov)))
    return np.array(trace)


def kl_monotonicity_suite(seeds=range(10), config: SvgdConfig = KL_SUITE_SVGD,
                          burn_in: int = 20, min_fraction: float = 0.95,
                          max_ratio: float = 0.05) -> SuiteResult:
    """KL nonincreasing in at least ``min_fraction`` of post-burn-in
    iterations for every seed, and final KL below ``max_ratio`` x initial."""
    fractions, ratios = [], []
    for seed in seeds:
        trace = kl_trace(seed, config)
        steps = np.diff(trace[burn_in:])
        fractions.append(float(np.mean(steps <= 0)) if len(steps) else 1.0)
        ratio = trace[-1] / trace[0]
        ratios.append(float(ratio) if np.isfinite(ratio) else float("inf"))
    passed = min(fractions) >= min_fraction and max(ratios) < max_ratio
    return SuiteResult("kl_monotonicity", passed, {
        "min_nonincreasing_fraction": min(fractions),
        "max_final_to_initial_kl": max(ratios)})


def contraction_w2(seed: int, s: int, num_clients: int = 5, n_particles: int = 10,
                   theta_true: float = 1.0, noise_sd: float = 1.0,
                   prior_sd: float = 1.0, fixed_point_iters: int = 5) -> float:
    """W2 from the barycenter of ``num_clients`` conjugate posteriors, each
    seeing ``s`` observations, to the true mean."""
    rng = make_rng([seed, s])
    ensembles = []
    for _ in range(num_clients):
        obs = theta_true + noise_sd * rng.standard_normal(s)
        post_var = 1.0 / (1.0 / prior_sd ** 2 + s / noise_sd ** 2)
        post_mean = post_var * obs.sum() / noise_sd ** 2
        ensembles.append(post_mean + np.sqrt(post_var) * rng.standard_normal((n_particles, 1)))
    init = prior_sd * rng.standard_normal((n_particles, 1))
    bary = aggregate(init, ensembles, AggregationConfig(fixed_point_iters))
    return w2_to_point(bary, [theta_true])


def barycenter_contraction_suite(seeds=range(10), sizes=(10, 100, 1000)) -> SuiteResult:
    """Median W2 to the true parameter strictly decreases with client data size."""
    medians = [float(np.median([contraction_w2(seed, s) for seed in seeds])) for s in sizes]
    passed = all(b < a for a, b in zip(medians, medians[1:]))
    return SuiteResult("barycenter_contraction", passed,
                       {"sizes": list(sizes), "median_w2": medians})


def ot_oracle_suite(instances: int = 200, seed: int = 0, ns=range(2, 7),
                    dims=(1, 2, 5), tol: float = 1e-9) -> SuiteResult:
    """Assignment objective equals the permutation-enumeration minimum."""
    rng = make_rng(seed)
    ns, dims = list(ns), list(dims)
    worst = 0.0
    for _ in range(instances):
        n = ns[int(rng.integers(len(ns)))]
        m = dims[int(rng.integers(len(dims)))]
        cost = cost_matrix(rng.standard_normal((n, m)), rng.standard_normal((n, m)))
        _, objective = solve_exact(cost)
        _, best = brute_force_assignment(cost)
        worst = max(worst, abs(objective - best))
    return SuiteResult("ot_oracle", worst <= tol, {"instances": instances, "max_abs_gap": worst})


def run_all(kl_config: SvgdConfig = KL_SUITE_SVGD) -> list:
    return [kl_monotonicity_suite(config=kl_config), barycenter_contraction_suite(),
            ot_oracle_suite()]
