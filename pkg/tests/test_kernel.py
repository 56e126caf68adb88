import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from damsph.errors import ConfigurationError
from damsph.kernel import CubicSplineKernel, dwdr, evaluate, gradient

H = 0.45


def lattice_offsets(spacing=0.5, half_width=6):
    k = np.arange(-half_width, half_width + 1) * spacing
    X, Y = np.meshgrid(k, k)
    return np.column_stack([X.ravel(), Y.ravel()])


def test_value_at_origin():
    assert evaluate(0.0, H) == pytest.approx(10.0 / (7.0 * math.pi * H * H), rel=1e-14)
    assert evaluate(0.0, H) == pytest.approx(2.2456, abs=5e-5)


def test_value_at_junction():
    assert evaluate(H, H) == pytest.approx(0.25 * evaluate(0.0, H), rel=1e-14)
    assert evaluate(H, H) == pytest.approx(0.5614, abs=5e-5)


@pytest.mark.parametrize("r", [2 * H, 2 * H + 1e-9, 3.0, 100.0])
def test_compact_support(r):
    assert evaluate(r, H) == 0.0
    assert dwdr(r, H) == 0.0


@pytest.mark.parametrize("h", [0.0, -0.45, float("nan")])
def test_non_positive_h_rejected(h):
    with pytest.raises(ConfigurationError):
        evaluate(0.1, h)
    with pytest.raises(ConfigurationError):
        CubicSplineKernel(h)


def test_normalized_over_the_plane():
    total, _ = quad(lambda r: 2 * math.pi * r * evaluate(r, H), 0.0, 2 * H, points=[H])
    assert total == pytest.approx(1.0, rel=1e-10)


def test_second_derivative_continuous():
    # one-sided second differences of W agree at q = 1 and vanish at q = 2
    step = 1e-5 * H
    for r0 in (H, 2 * H):
        left = (dwdr(r0 - step, H) - dwdr(r0 - 2 * step, H)) / step
        right = (dwdr(r0 + 2 * step, H) - dwdr(r0 + step, H)) / step
        scale = evaluate(0.0, H) / H**2
        assert abs(left - right) < 1e-3 * scale


def test_non_negative_everywhere():
    r = np.linspace(0.0, 3 * H, 2001)
    assert np.all(evaluate(r, H) >= 0.0)


def test_gradient_at_origin_is_zero():
    assert np.array_equal(gradient(np.zeros(2), H), np.zeros(2))


def test_gradient_matches_central_difference():
    dx = np.array([0.5, 0.0])
    step = 1e-6
    fd = (evaluate(0.5 + step, H) - evaluate(0.5 - step, H)) / (2 * step)
    g = gradient(dx, H)
    assert g[1] == 0.0
    assert g[0] == pytest.approx(fd, rel=1e-6)


def test_gradient_vs_finite_differences_random_radii():
    rng = np.random.default_rng(7)
    radii = rng.uniform(0.0, 2 * H, 100)
    step = 1e-7
    fd = (evaluate(radii + step, H) - evaluate(radii - step, H)) / (2 * step)
    analytic = dwdr(radii, H)
    err = np.abs(analytic - fd) / np.maximum(np.abs(analytic), 1e-8)
    assert err.max() < 1e-5


@given(st.floats(-2.0, 2.0), st.floats(-2.0, 2.0))
def test_gradient_antisymmetric(x, y):
    dx = np.array([x, y])
    assert np.array_equal(gradient(dx, H), -gradient(-dx, H))


@given(st.floats(0.01, 2.0), st.floats(0.0, 2 * math.pi))
def test_gradient_along_separation(r, theta):
    dx = r * np.array([math.cos(theta), math.sin(theta)])
    g = gradient(dx, H)
    assert abs(dx[0] * g[1] - dx[1] * g[0]) <= 1e-12 * max(1.0, np.abs(g).max())
    assert np.linalg.norm(g) == pytest.approx(abs(dwdr(r, H)), rel=1e-12, abs=1e-15)


def test_vectorized_gradient_matches_scalar():
    dx = np.random.default_rng(3).uniform(-1, 1, (50, 2))
    batch = gradient(dx, H)
    for row, g in zip(dx, batch):
        assert np.allclose(gradient(row, H), g, rtol=0, atol=0)
    kern = CubicSplineKernel(H)
    r = np.linalg.norm(dx, axis=1)
    assert np.allclose(kern.pair_gradient(dx, r), batch, rtol=1e-14, atol=1e-14)


def test_partition_of_unity_on_lattice():
    offsets = lattice_offsets()
    w = evaluate(np.linalg.norm(offsets, axis=1), H)
    assert 0.98 <= np.sum(w * 0.25) <= 1.02


def test_gradient_consistency_on_lattice():
    # sum_j (x_j - x_i) (x) grad_i W_ij V_j ~ identity
    offsets = lattice_offsets()
    g = gradient(-offsets, H)  # dx = x_i - x_j with x_i at the origin
    tensor = np.einsum("ka,kb->ab", offsets, g) * 0.25
    assert np.abs(tensor - np.eye(2)).max() < 0.05


def test_bound_kernel_delegates():
    kern = CubicSplineKernel(H)
    assert kern.support == pytest.approx(0.9)
    assert kern(0.3) == evaluate(0.3, H)
    assert kern.normalization == pytest.approx(evaluate(0.0, H))
