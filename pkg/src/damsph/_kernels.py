"""Compiled gather loops for the solver's pair sums.

Every particle walks its own adjacency row and writes only its own outputs,
so a particle range can be processed by any thread without changing results.
"""

import math

import numpy as np
from numba import njit

NORM_2D = 10.0 / (7.0 * math.pi)


@njit(inline="always")
def _dwdr_over_r(r, h):
    q = r / h
    if q < 1.0:
        d = -3.0 * q + 2.25 * q * q
    elif q < 2.0:
        d = -0.75 * (2.0 - q) * (2.0 - q)
    else:
        return 0.0
    return NORM_2D / (h * h * h) * d / r


@njit(cache=True, nogil=True)
def rates(start, stop, x, v, rho, m, nbr, bond, ptr, f, h, drho, grad):
    """Density rate and bond-weighted velocity gradient [xx, xy, yx, yy]."""
    for i in range(start, stop):
        s0 = 0.0
        l0 = 0.0
        l1 = 0.0
        l2 = 0.0
        l3 = 0.0
        for k in range(ptr[i], ptr[i + 1]):
            b = bond[k]
            if b < 0:
                continue
            fb = f[b]
            if fb == 0.0:
                continue
            j = nbr[k]
            dx = x[i, 0] - x[j, 0]
            dy = x[i, 1] - x[j, 1]
            s = _dwdr_over_r(math.sqrt(dx * dx + dy * dy), h)
            gx = dx * s
            gy = dy * s
            vx = v[i, 0] - v[j, 0]
            vy = v[i, 1] - v[j, 1]
            term = fb * (vx * gx + vy * gy)
            s0 += m[j] * term
            w = fb * m[j] / rho[i]
            l0 -= w * vx * gx
            l1 -= w * vx * gy
            l2 -= w * vy * gx
            l3 -= w * vy * gy
        drho[i] = s0
        grad[i, 0] = l0
        grad[i, 1] = l1
        grad[i, 2] = l2
        grad[i, 3] = l3


@njit(cache=True, nogil=True)
def forces(start, stop, x, v, rho, m, stress, kv, c, nbr, bond, ptr, f, h,
           eta1, eta2, eps_reg, acc, de):
    """Accelerations split as [stress, viscous stress, viscosity] and de/dt."""
    for i in range(start, stop):
        rho_i2 = rho[i] * rho[i]
        a0 = a1 = a2 = a3 = a4 = a5 = 0.0
        e = 0.0
        for k in range(ptr[i], ptr[i + 1]):
            j = nbr[k]
            b = bond[k]
            fb = f[b] if b >= 0 else 0.0
            dx = x[i, 0] - x[j, 0]
            dy = x[i, 1] - x[j, 1]
            r2 = dx * dx + dy * dy
            s = _dwdr_over_r(math.sqrt(r2), h)
            if s == 0.0:
                continue
            gx = dx * s
            gy = dy * s
            vx = v[i, 0] - v[j, 0]
            vy = v[i, 1] - v[j, 1]
            mj = m[j]
            t0 = 0.0
            t1 = 0.0
            t2 = 0.0
            t3 = 0.0
            if fb != 0.0:
                rho_j2 = rho[j] * rho[j]
                axx = stress[i, 0] / rho_i2 + stress[j, 0] / rho_j2
                ayy = stress[i, 1] / rho_i2 + stress[j, 1] / rho_j2
                axy = stress[i, 2] / rho_i2 + stress[j, 2] / rho_j2
                t0 = fb * (axx * gx + axy * gy)
                t1 = fb * (axy * gx + ayy * gy)
                bxx = kv[i, 0] / rho_i2 + kv[j, 0] / rho_j2
                byy = kv[i, 1] / rho_i2 + kv[j, 1] / rho_j2
                bxy = kv[i, 2] / rho_i2 + kv[j, 2] / rho_j2
                t2 = fb * (bxx * gx + bxy * gy)
                t3 = fb * (bxy * gx + byy * gy)
            t4 = 0.0
            t5 = 0.0
            vdotx = vx * dx + vy * dy
            if vdotx < 0.0 and (eta1 != 0.0 or eta2 != 0.0):
                mu = h * vdotx / (r2 + eps_reg * h * h)
                pi = (-eta1 * 0.5 * (c[i] + c[j]) * mu + eta2 * mu * mu) / (0.5 * (rho[i] + rho[j]))
                t4 = -pi * gx
                t5 = -pi * gy
            a0 += mj * t0
            a1 += mj * t1
            a2 += mj * t2
            a3 += mj * t3
            a4 += mj * t4
            a5 += mj * t5
            e += -0.5 * mj * (vx * (t0 + t2 + t4) + vy * (t1 + t3 + t5))
        acc[i, 0] = a0
        acc[i, 1] = a1
        acc[i, 2] = a2
        acc[i, 3] = a3
        acc[i, 4] = a4
        acc[i, 5] = a5
        de[i] = e


def adjacency(i, j, n):
    """Particle-major directed adjacency (neighbor, pair index, row pointer)."""
    owner = np.concatenate([i, j])
    other = np.concatenate([j, i])
    pidx = np.concatenate([np.arange(len(i)), np.arange(len(i))])
    order = np.lexsort((other, owner))
    counts = np.bincount(owner, minlength=n)
    ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=ptr[1:])
    return other[order].astype(np.int64), pidx[order].astype(np.int64), ptr
