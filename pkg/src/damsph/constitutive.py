"""Linear elasticity with rate-form update and exponential-softening damage.

Tensors are stored in 2D Voigt-like order ``[xx, yy, xy]`` where the shear
entry is the tensor component (not the engineering strain).
"""

import logging
import math
from dataclasses import dataclass, fields
from types import SimpleNamespace

import numpy as np

from .errors import ConfigurationError, NumericalBlowupError

log = logging.getLogger(__name__)

DAMAGE_CAP = 1.0 - 1e-12
PRINCIPAL = "principal"
MODIFIED_VON_MISES = "modified_von_mises"


@dataclass(frozen=True)
class Material:
    name: str
    E: float  # Pa
    nu: float
    rho0: float  # kg/m^3
    f_t: float  # Pa
    f_c: float  # Pa, informational unless the modified von Mises measure is used
    G_f: float  # N/m
    eps0: float
    h_c: float  # m, regularization length of the softening law

    def __post_init__(self):
        checks = {
            "E": self.E > 0,
            "nu": 0.0 <= self.nu < 0.5,
            "rho0": self.rho0 > 0,
            "G_f": self.G_f > 0,
            "eps0": self.eps0 > 0,
            "h_c": self.h_c > 0,
        }
        bad = [k for k, ok in checks.items() if not ok]
        if bad:
            exc = ConfigurationError(f"material {self.name!r}: invalid {', '.join(bad)}")
            exc.fields = bad
            raise exc
        if self.f_t > 0 and abs(self.E * self.eps0 - self.f_t) > 0.1 * self.f_t:
            log.warning("material %s: E*eps0 = %.4g Pa differs from f_t = %.4g Pa by more than 10%%",
                        self.name, self.E * self.eps0, self.f_t)

    @property
    def sound_speed(self):
        return math.sqrt(self.E / self.rho0)

    @property
    def softening_modulus(self):
        """Exponent coefficient E*eps0*h_c/G_f of the softening branch."""
        return self.E * self.eps0 * self.h_c / self.G_f

    @property
    def peak_stress(self):
        return self.E * self.eps0


def broadcast(materials, index):
    """Per-particle material parameter arrays with the Material field names."""
    index = np.asarray(index)
    out = {}
    for f in fields(Material):
        if f.name == "name":
            continue
        out[f.name] = np.array([getattr(m, f.name) for m in materials], dtype=float)[index]
    return SimpleNamespace(**out)


def damage(eps, mat, length=None):
    """Damage D(eps) of the exponential softening law, in [0, 1 - 1e-12].

    ``length`` overrides the material characteristic length ``h_c``.
    """
    eps = np.asarray(eps, dtype=float)
    eps0 = np.asarray(mat.eps0, dtype=float)
    hc = mat.h_c if length is None else length
    k = np.asarray(mat.E * mat.eps0, dtype=float) * hc / mat.G_f
    active = eps > eps0
    safe = np.where(active, eps, 1.0)
    with np.errstate(over="ignore", under="ignore"):
        d = 1.0 - (eps0 / safe) * np.exp(-k * (safe - eps0))
    d = np.where(active, np.clip(d, 0.0, DAMAGE_CAP), 0.0)
    return float(d) if d.ndim == 0 else d


def principal_values(t):
    """Largest and smallest eigenvalues of symmetric 2x2 tensors [xx, yy, xy]."""
    t = np.asarray(t, dtype=float)
    mean = 0.5 * (t[..., 0] + t[..., 1])
    rad = np.hypot(0.5 * (t[..., 0] - t[..., 1]), t[..., 2])
    return mean + rad, mean - rad


def out_of_plane_strain(strain, nu, plane="stress"):
    if plane == "strain":
        return np.zeros(np.shape(strain)[:-1])
    return -np.asarray(nu) / (1.0 - np.asarray(nu)) * (strain[..., 0] + strain[..., 1])


def equivalent_strain(strain, measure=PRINCIPAL, mat=None, plane="stress"):
    """Scalar tensile strain measure driving damage, always >= 0."""
    strain = np.asarray(strain, dtype=float)
    if measure == PRINCIPAL:
        eq = np.maximum(principal_values(strain)[0], 0.0)
    elif measure == MODIFIED_VON_MISES:
        if mat is None:
            raise ConfigurationError("modified von Mises strain needs material constants")
        nu = np.asarray(mat.nu, dtype=float)
        k = np.asarray(mat.f_c, dtype=float) / np.asarray(mat.f_t, dtype=float)
        exx, eyy, exy = strain[..., 0], strain[..., 1], strain[..., 2]
        ezz = out_of_plane_strain(strain, nu, plane)
        i1 = exx + eyy + ezz
        j2 = ((exx - eyy) ** 2 + (eyy - ezz) ** 2 + (ezz - exx) ** 2) / 6.0 + exy**2
        a = (k - 1.0) / (1.0 - 2.0 * nu)
        eq = a * i1 / (2.0 * k) + np.sqrt((a * i1) ** 2 + 12.0 * k * j2 / (1.0 + nu) ** 2) / (2.0 * k)
        eq = np.maximum(eq, 0.0)
    else:
        raise ConfigurationError(f"unknown equivalent strain measure {measure!r}")
    return float(eq) if eq.ndim == 0 else eq


def hooke_rate(rate, mat, plane="stress"):
    """Stress increment per unit strain for the plane idealization."""
    E = np.asarray(mat.E, dtype=float)
    nu = np.asarray(mat.nu, dtype=float)
    dxx, dyy, dxy = rate[..., 0], rate[..., 1], rate[..., 2]
    out = np.empty(np.shape(rate))
    if plane == "stress":
        c = E / (1.0 - nu * nu)
        out[..., 0] = c * (dxx + nu * dyy)
        out[..., 1] = c * (dyy + nu * dxx)
    elif plane == "strain":
        lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
        two_g = E / (1.0 + nu)
        out[..., 0] = lam * (dxx + dyy) + two_g * dxx
        out[..., 1] = lam * (dxx + dyy) + two_g * dyy
    else:
        raise ConfigurationError(f"unknown plane idealization {plane!r}")
    out[..., 2] = E / (1.0 + nu) * dxy
    return out


def strain_energy_density(stress, mat, plane="stress"):
    """0.5 * sigma : C^-1 : sigma for undamaged in-plane stresses (J/m^3)."""
    E = np.asarray(mat.E, dtype=float)
    nu = np.asarray(mat.nu, dtype=float)
    sxx, syy, sxy = stress[..., 0], stress[..., 1], stress[..., 2]
    if plane == "stress":
        exx = (sxx - nu * syy) / E
        eyy = (syy - nu * sxx) / E
    else:
        exx = ((1 - nu * nu) * sxx - nu * (1 + nu) * syy) / E
        eyy = ((1 - nu * nu) * syy - nu * (1 + nu) * sxx) / E
    exy = (1.0 + nu) * sxy / E
    return 0.5 * (sxx * exx + syy * eyy + 2.0 * sxy * exy)


@dataclass
class ConstitutiveState:
    stress: np.ndarray  # undamaged stress, Pa
    strain: np.ndarray  # accumulated small strain
    kappa: np.ndarray  # history of the equivalent strain
    damage: np.ndarray

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros((n, 3)), np.zeros((n, 3)), np.zeros(n), np.zeros(n))

    def effective_stress(self):
        return (1.0 - self.damage)[:, None] * self.stress

    def copy(self):
        return ConstitutiveState(self.stress.copy(), self.strain.copy(),
                                 self.kappa.copy(), self.damage.copy())


def jaumann_correction(stress, spin):
    """W.sigma - sigma.W for the 2D spin w = (L_xy - L_yx)/2."""
    corr = np.empty_like(stress)
    corr[..., 0] = 2.0 * spin * stress[..., 2]
    corr[..., 1] = -2.0 * spin * stress[..., 2]
    corr[..., 2] = spin * (stress[..., 1] - stress[..., 0])
    return corr


def stress_update(strain_rate, spin, dt, state, mat, plane="stress",
                  measure=PRINCIPAL, freeze_damage=False):
    """Advance ``state`` in place by ``dt`` and return the effective stress.

    The undamaged stress follows Hooke's law in rate form with the Jaumann
    spin terms; damage follows the history of the equivalent strain of the
    accumulated strain and scales the whole tensor.
    """
    if not dt > 0:
        raise ConfigurationError(f"time step must be positive, got {dt!r}")
    strain_rate = np.asarray(strain_rate, dtype=float)
    spin = np.asarray(spin, dtype=float)
    bad = ~(np.isfinite(strain_rate).all(axis=-1) & np.isfinite(spin))
    if bad.any():
        raise NumericalBlowupError("non-finite strain rate", particle=int(np.flatnonzero(bad)[0]))

    state.stress += dt * (hooke_rate(strain_rate, mat, plane)
                          + jaumann_correction(state.stress, spin))
    state.strain += dt * strain_rate
    if not freeze_damage:
        eq = equivalent_strain(state.strain, measure, mat, plane)
        np.maximum(state.kappa, eq, out=state.kappa)
        state.damage = np.asarray(damage(state.kappa, mat), dtype=float).reshape(state.kappa.shape)
    return state.effective_stress()
