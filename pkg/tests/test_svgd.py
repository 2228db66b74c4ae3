import math

import numpy as np
import pytest
import sympy as sp

from fedwba.numerics import make_rng
from fedwba.svgd import (SvgdConfig, SvgdKernel, SvgdState, kernel_and_grad, ksd,
                         median_bandwidth, run_svgd, svgd_direction, svgd_step)

RBF1 = SvgdKernel("rbf", bandwidth=1.0)


def test_rbf_diagonal(rng):
    K, gK = kernel_and_grad(SvgdKernel(), rng.standard_normal((4, 3)))
    np.testing.assert_allclose(np.diag(K), 1.0)
    assert np.all(gK[np.arange(4), np.arange(4)] == 0)


def test_rbf_hand_values():
    K, gK = kernel_and_grad(RBF1, np.array([[0.0], [1.0]]))
    assert K[0, 1] == pytest.approx(math.exp(-1))
    # grad wrt theta_1 of k(theta_1, theta_2) = -2 (0 - 1) e^-1
    assert gK[0, 1, 0] == pytest.approx(2 * math.exp(-1))


def test_polynomial_hand_value():
    K, _ = kernel_and_grad(SvgdKernel("polynomial", degree=2, coef0=1.0), np.array([[1.0, 0.0], [0.0, 1.0]]))
    assert K[0, 1] == 1.0


@pytest.mark.parametrize("kind", ["rbf", "laplacian", "polynomial", "sigmoid"])
def test_kernel_gradients_match_finite_differences(kind, rng):
    kernel = SvgdKernel(kind, bandwidth=1.3)
    X = 0.5 * rng.standard_normal((3, 2))
    K, gK = kernel_and_grad(kernel, X)
    eps = 1e-6
    for j in range(3):
        for i in range(3):
            if i == j:
                continue
            for d in range(2):
                Xp, Xm = X.copy(), X.copy()
                Xp[j, d] += eps
                Xm[j, d] -= eps
                kp = kernel_and_grad(kernel, Xp)[0][j, i]
                km = kernel_and_grad(kernel, Xm)[0][j, i]
                assert gK[j, i, d] == pytest.approx((kp - km) / (2 * eps), rel=1e-6, abs=1e-9)


def test_median_bandwidth():
    assert median_bandwidth(np.array([[0.0], [2.0]])) == pytest.approx(4 / math.log(2))
    assert median_bandwidth(np.array([[3.0, 1.0]])) == 1.0
    assert median_bandwidth(np.ones((5, 2))) == 1.0


@pytest.mark.parametrize("kind", ["rbf", "laplacian", "polynomial", "sigmoid"])
def test_direction_matches_full_gradient_tensor(kind, rng):
    kernel = SvgdKernel(kind)
    X, G = rng.standard_normal((5, 3)), rng.standard_normal((5, 3))
    K, gK = kernel_and_grad(kernel, X)
    expected = (K.T @ G + gK.sum(axis=0)) / 5
    np.testing.assert_allclose(svgd_direction(kernel, X, G), expected, rtol=1e-12, atol=1e-14)


def test_single_particle_is_map_ascent():
    g = np.array([[0.3, -2.0]])
    np.testing.assert_allclose(svgd_direction(SvgdKernel(), [[1.0, 1.0]], g), g)


def test_identical_particles_stay_identical():
    state = SvgdState.start(np.ones((3, 2)))
    out = svgd_step(state, np.zeros((3, 2)), SvgdConfig())
    assert np.all(out.particles == out.particles[0])


def test_two_particle_gaussian_hand_expansion():
    a, h = 0.8, 1.5
    X = np.array([[a], [-a]])
    e = math.exp(-4 * a * a / h)
    # phi(a) = 1/2 [ k(a,a)(-a) + k(-a,a)(a) + grad_{x_j} k(x_j, a) at x_j=-a ]
    expected = 0.5 * (-a + a * e + 4 * a * e / h)
    phi = svgd_direction(SvgdKernel("rbf", bandwidth=h), X, -X)
    assert phi[0, 0] == pytest.approx(expected, rel=1e-14)
    assert phi[1, 0] == pytest.approx(-expected, rel=1e-14)


def test_adagrad_and_momentum_transform():
    cfg = SvgdConfig(step_eta=0.5, adagrad_lambda=1e-8, momentum=0.0, kernel=RBF1)
    s1 = svgd_step(SvgdState.start([[0.0]]), [[2.0]], cfg)
    assert s1.particles[0, 0] == pytest.approx(0.5 * 2 / math.sqrt(4 + 1e-8))
    assert s1.grad_accum[0, 0] == 4.0
    cfg = SvgdConfig(step_eta=0.5, momentum=0.9, kernel=RBF1)
    s1 = svgd_step(SvgdState.start([[0.0]]), [[2.0]], cfg)
    s2 = svgd_step(s1, [[1.0]], cfg)
    step2 = 0.5 * 1 / math.sqrt(5 + 1e-8)
    assert s2.velocity[0, 0] == pytest.approx(0.9 * s1.velocity[0, 0] + step2)
    assert s2.particles[0, 0] == pytest.approx(s1.particles[0, 0] + s2.velocity[0, 0])


def test_non_finite_gradient_rejected():
    with pytest.raises(ValueError):
        svgd_step(SvgdState.start([[0.0]]), [[np.inf]], SvgdConfig())


def test_config_validation():
    with pytest.raises(ValueError):
        SvgdConfig(iterations=0)
    with pytest.raises(ValueError):
        SvgdConfig(step_eta=0)
    with pytest.raises(ValueError):
        SvgdKernel("cosine")
    with pytest.raises(ValueError):
        SvgdKernel("sigmoid", alpha=0.0)


RECOVERY = SvgdConfig(iterations=500, step_eta=0.1, momentum=0.9)


def test_gaussian_recovery():
    x0 = make_rng(0).normal(5, 1, (50, 1))
    out = run_svgd(x0, lambda x: -x, RECOVERY)
    assert abs(out.mean()) < 0.05
    assert abs(out.std() - 1) < 0.1


def test_single_particle_finds_mode():
    mu, var = np.array([2.0, -1.0]), 0.5
    out = run_svgd(np.zeros((1, 2)), lambda x: -(x - mu) / var,
                   SvgdConfig(iterations=400, step_eta=0.1, momentum=0.9))
    np.testing.assert_allclose(out[0], mu, atol=1e-3)


def test_correlated_gaussian_covariance():
    cov = np.array([[1.0, 0.7], [0.7, 2.0]])
    prec = np.linalg.inv(cov)
    x0 = make_rng(1).standard_normal((100, 2)) + 3
    out = run_svgd(x0, lambda x: -x @ prec, SvgdConfig(iterations=1000, step_eta=0.1, momentum=0.9))
    fit = np.cov(out.T, bias=True)
    assert np.linalg.norm(fit - cov) / np.linalg.norm(cov) < 0.15


def test_translation_equivariance():
    c = np.array([3.0, -2.0])
    x0 = make_rng(2).standard_normal((8, 2))
    cfg = SvgdConfig(iterations=20, kernel=SvgdKernel(bandwidth=0.7))
    base = run_svgd(x0, lambda x: -x, cfg)
    shifted = run_svgd(x0 + c, lambda x: -(x - c), cfg)
    np.testing.assert_allclose(shifted, base + c, atol=1e-10)


def test_permutation_equivariance():
    x0 = make_rng(3).standard_normal((7, 2))
    perm = make_rng(4).permutation(7)
    cfg = SvgdConfig(iterations=15)
    np.testing.assert_allclose(run_svgd(x0[perm], lambda x: -x, cfg),
                               run_svgd(x0, lambda x: -x, cfg)[perm], rtol=1e-12, atol=1e-13)


def test_rng_is_forwarded():
    seen = []

    def target(x, rng):
        seen.append(rng.random())
        return -x

    run_svgd(np.zeros((2, 1)), target, SvgdConfig(iterations=3), rng=make_rng(0))
    assert len(seen) == 3


def _sympy_stein_kernel(h):
    x, y = sp.symbols("x y")
    k = sp.exp(-(x - y) ** 2 / h)
    sx, sy = -x, -y
    u = sx * sy * k + sx * sp.diff(k, y) + sy * sp.diff(k, x) + sp.diff(k, x, y)
    return sp.lambdify((x, y), u)


def test_ksd_matches_double_sum():
    pts, h = [-0.7, 0.2, 1.5], 0.9
    u = _sympy_stein_kernel(h)
    expected = math.sqrt(sum(u(a, b) for a in pts for b in pts) / 9)
    got = ksd(np.array(pts)[:, None], lambda x: -x, SvgdKernel("rbf", bandwidth=h))
    assert got == pytest.approx(expected, rel=1e-12)


def test_ksd_polynomial_matches_sympy(rng):
    pts = rng.standard_normal(4)
    x, y = sp.symbols("x y")
    k = (x * y + 1) ** 2
    u = sp.lambdify((x, y), x * y * k - x * sp.diff(k, y) - y * sp.diff(k, x) + sp.diff(k, x, y))
    expected = math.sqrt(max(sum(u(a, b) for a in pts for b in pts) / 16, 0.0))
    got = ksd(pts[:, None], lambda X: -X, SvgdKernel("polynomial"))
    assert got == pytest.approx(expected, rel=1e-10)


def test_ksd_zero_when_stein_features_cancel():
    # linear kernel x.y + 1: the mean Stein feature is (1 - E[x^2]) y - E[x],
    # which vanishes for {-1, 1} under a standard normal target
    pts = np.array([[-1.0], [1.0]])
    assert ksd(pts, lambda x: -x, SvgdKernel("polynomial", degree=1)) == 0.0


def test_ksd_far_exceeds_near_and_decreases():
    rng = make_rng(5)
    near = rng.standard_normal((30, 1))
    far = rng.standard_normal((30, 1)) + 4
    assert ksd(far, lambda x: -x) > ksd(near, lambda x: -x)
    out = run_svgd(far, lambda x: -x, RECOVERY)
    assert ksd(out, lambda x: -x) < ksd(far, lambda x: -x)


def test_ksd_errors():
    with pytest.raises(ValueError):
        ksd(np.zeros((1, 1)), lambda x: -x)
    with pytest.raises(ValueError):
        ksd(np.zeros((3, 1)), lambda x: -x, SvgdKernel("sigmoid"))
