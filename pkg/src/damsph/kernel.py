"""Cubic B-spline smoothing kernel in two dimensions (support radius 2h)."""

import math

import numpy as np

from .errors import ConfigurationError

NORM_2D = 10.0 / (7.0 * math.pi)


def _check_h(h):
    if not h > 0.0:
        raise ConfigurationError(f"smoothing length must be positive, got {h!r}")


def evaluate(r, h):
    """Kernel value W(r, h) in 1/m^2. Accepts scalars or arrays."""
    _check_h(h)
    q = np.asarray(r, dtype=float) / h
    w = np.where(
        q < 1.0,
        1.0 - 1.5 * q**2 + 0.75 * q**3,
        np.where(q < 2.0, 0.25 * (2.0 - q) ** 3, 0.0),
    )
    w = NORM_2D / (h * h) * w
    return float(w) if w.ndim == 0 else w


def dwdr(r, h):
    """Radial derivative dW/dr (1/m^3)."""
    _check_h(h)
    q = np.asarray(r, dtype=float) / h
    d = np.where(
        q < 1.0,
        -3.0 * q + 2.25 * q**2,
        np.where(q < 2.0, -0.75 * (2.0 - q) ** 2, 0.0),
    )
    d = NORM_2D / (h**3) * d
    return float(d) if d.ndim == 0 else d


def gradient(dx, h):
    """Gradient of W(x_i - x_j, h) with respect to x_i.

    ``dx`` is x_i - x_j with shape (2,) or (n, 2). The zero vector maps to
    the zero vector.
    """
    dx = np.asarray(dx, dtype=float)
    r = np.sqrt(np.sum(dx * dx, axis=-1))
    safe = np.where(r > 0.0, r, 1.0)
    scale = np.where(r > 0.0, dwdr(r, h) / safe, 0.0)
    return dx * scale[..., None] if dx.ndim > 1 else dx * float(scale)


class CubicSplineKernel:
    """Kernel bound to a fixed smoothing length."""

    def __init__(self, h):
        _check_h(h)
        self.h = float(h)
        self.normalization = NORM_2D / (self.h * self.h)

    @property
    def support(self):
        return 2.0 * self.h

    def __call__(self, r):
        return evaluate(r, self.h)

    def dwdr(self, r):
        return dwdr(r, self.h)

    def gradient(self, dx):
        return gradient(dx, self.h)

    def pair_gradient(self, dx, r):
        """Gradients for precomputed pair separations; r must be > 0."""
        return dx * (dwdr(r, self.h) / r)[:, None]

    def __repr__(self):
        return f"CubicSplineKernel(h={self.h})"
