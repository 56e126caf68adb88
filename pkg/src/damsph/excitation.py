"""Base excitation signals, kinematic boundary driving and gravity preload."""

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, IngestionError, PreloadError

log = logging.getLogger(__name__)

G = 9.81


class NoSignal:
    kind = "none"

    def sample(self, t):
        return np.zeros(2)


@dataclass
class Sinusoid:
    amplitude_g: float
    period: float
    direction: tuple = (1.0, 0.0)
    g: float = G
    kind = "sinusoid"

    def __post_init__(self):
        if not self.period > 0:
            raise ConfigurationError(f"sinusoid period must be positive, got {self.period!r}")
        d = np.asarray(self.direction, dtype=float)
        norm = np.linalg.norm(d)
        if norm == 0:
            raise ConfigurationError("sinusoid direction must be non-zero")
        self._dir = d / norm

    def sample(self, t):
        # reduce the phase first so sample(t) == sample(t + T) to rounding
        phase = math.fmod(t, self.period) / self.period
        return self.amplitude_g * self.g * math.sin(2.0 * math.pi * phase) * self._dir


@dataclass
class Constant:
    acceleration: tuple = (0.0, 0.0)  # m/s^2
    kind = "constant"

    def sample(self, t):
        return np.asarray(self.acceleration, dtype=float).copy()


@dataclass
class Accelerogram:
    """Sampled ground acceleration in g; columns are horizontal, vertical."""

    time: np.ndarray
    accel_g: np.ndarray
    g: float = G
    scale: float = 1.0
    source: str = ""
    kind = "accelerogram"

    def __post_init__(self):
        self.time = np.asarray(self.time, dtype=float)
        acc = np.asarray(self.accel_g, dtype=float)
        if acc.ndim == 1:
            acc = np.column_stack([acc, np.zeros_like(acc)])
        self.accel_g = acc
        if len(self.time) < 2 or len(self.time) != len(acc):
            raise IngestionError("accelerogram needs at least two samples with matching columns")
        if not np.all(np.diff(self.time) > 0):
            k = int(np.flatnonzero(np.diff(self.time) <= 0)[0]) + 1
            raise IngestionError(f"accelerogram times not strictly increasing at record {k}")

    @property
    def duration(self):
        return float(self.time[-1])

    def sample(self, t):
        if t < self.time[0] or t > self.time[-1]:
            return np.zeros(2)
        out = np.array([np.interp(t, self.time, self.accel_g[:, c]) for c in (0, 1)])
        return out * self.g * self.scale


def sample(signal, t):
    """Acceleration (m/s^2) of ``signal`` at time ``t`` >= 0."""
    if t < 0:
        raise ConfigurationError(f"sample time must be non-negative, got {t!r}")
    return signal.sample(t)


def _is_number(tok):
    try:
        float(tok)
    except ValueError:
        return False
    return True


def load_accelerogram(path, g=G, scale=1.0):
    """Read ``time_s, horiz_g[, vert_g]`` records; a header line is optional."""
    rows = []
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            rec = [tok.strip() for tok in rec if tok.strip()]
            if not rec or rec[0].startswith("#"):
                continue
            if not _is_number(rec[0]):
                if rows:
                    raise IngestionError(f"{path}:{lineno}: non-numeric record after data")
                continue
            try:
                vals = [float(tok) for tok in rec]
            except ValueError as exc:
                raise IngestionError(f"{path}:{lineno}: {exc}") from None
            if len(vals) not in (2, 3):
                raise IngestionError(f"{path}:{lineno}: expected 2 or 3 columns, got {len(vals)}")
            rows.append(vals + [0.0] * (3 - len(vals)))
    if not rows:
        raise IngestionError(f"{path}: no accelerogram records")
    data = np.asarray(rows)
    return Accelerogram(data[:, 0], data[:, 1:3], g=g, scale=scale, source=str(path))


def synthetic_accelerogram(duration=10.0, dt=0.01, pga_g=(0.49, 0.34), band_hz=(1.0, 12.0),
                           rise=(1.0, 4.5), decay=0.6, seed=1967):
    """Band-limited, envelope-shaped random ground motion in g.

    Each component is filtered white noise under a rise / strong-motion /
    exponential-decay envelope, scaled so its peak equals ``pga_g``.
    Deterministic for a given ``seed``.
    """
    from scipy.signal import butter, sosfiltfilt

    t = np.arange(int(round(duration / dt)) + 1) * dt
    t1, t2 = rise
    env = np.where(t < t1, (t / t1) ** 2, np.where(t <= t2, 1.0, np.exp(-decay * (t - t2))))
    sos = butter(4, band_hz, btype="bandpass", fs=1.0 / dt, output="sos")
    rng = np.random.default_rng(seed)
    out = np.empty((len(t), len(pga_g)))
    for c, pga in enumerate(pga_g):
        a = sosfiltfilt(sos, rng.standard_normal(len(t))) * env
        a -= np.linspace(a[0], a[-1], len(t))  # pin both ends to zero
        out[:, c] = pga * a / np.max(np.abs(a))
    return t, out


def write_accelerogram(path, time, accel_g, comment=None):
    acc = np.asarray(accel_g, dtype=float).reshape(len(time), -1)
    with open(path, "w") as fh:
        for line in (comment or "").splitlines():
            fh.write(f"# {line}\n")
        fh.write("time_s,horiz_g" + (",vert_g" if acc.shape[1] > 1 else "") + "\n")
        for t, row in zip(time, acc):
            fh.write(",".join(f"{v + 0.0:.10g}" for v in (t, *row)) + "\n")


@dataclass
class BoundaryCondition:
    """Kinematically driven particle group."""

    mask: np.ndarray
    kind: str = "prescribed_motion"  # or "fixed"
    signal: object = field(default_factory=NoSignal)
    initial_velocity: tuple = (0.0, 0.0)
    name: str = "base"

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.kind not in ("prescribed_motion", "fixed"):
            raise ConfigurationError(f"unknown boundary condition kind {self.kind!r}")
        if not self.mask.any():
            raise ConfigurationError(f"boundary condition {self.name!r} selects no particles")

    def acceleration(self, t):
        if self.kind == "fixed":
            return np.zeros(2)
        return sample(self.signal, t)


def apply_base_motion(position, velocity, mask, signal, t, dt):
    """Advance flagged particles one step under the prescribed acceleration.

    Velocities take the trapezoidal increment of the signal over [t, t + dt]
    and positions drift with the mid-step velocity, matching the solver's
    kick-drift-kick sequence. Arrays are updated in place.
    """
    a0 = sample(signal, t)
    a1 = sample(signal, t + dt)
    v_half = velocity[mask] + 0.5 * dt * a0
    position[mask] += dt * v_half
    velocity[mask] = v_half + 0.5 * dt * a1
    return position, velocity


def kinetic_energy_per_mass(mass, velocity, active=None):
    m = mass if active is None else mass[active]
    v = velocity if active is None else velocity[active]
    total = m.sum()
    return float(0.5 * np.sum(m * np.einsum("ij,ij->i", v, v)) / total) if total > 0 else 0.0


@dataclass
class PreloadResult:
    iterations: int
    kinetic_energy: float
    history: list


def gravity_preload(solver, g_vec=None, damping=None, tol=1e-6, max_steps=200_000,
                    window=100):
    """Settle ``solver`` under self-weight by damped dynamic relaxation.

    Boundary groups are held fixed, damage is frozen and the excitation clock
    does not advance. Converged once the kinetic energy per unit mass is below
    ``tol`` and has decreased monotonically over the last ``window`` steps.
    Velocities are zeroed afterwards.
    """
    if g_vec is not None:
        solver.gravity = np.asarray(g_vec, dtype=float)
    if not np.any(solver.gravity):
        return PreloadResult(0, 0.0, [])
    if damping is None:
        damping = solver.default_relaxation_damping()
    free = ~solver.kinematic_mask
    history = []
    for it in range(1, max_steps + 1):
        solver.step(relax=True, relax_damping=damping)
        ke = kinetic_energy_per_mass(solver.state.m, solver.state.v, free)
        history.append(ke)
        if ke < tol and len(history) > window:
            tail = np.asarray(history[-(window + 1):])
            if np.all(np.diff(tail) <= 0.0):
                solver.finish_preload()
                log.info("gravity preload converged after %d steps (KE %.3g J/kg)", it, ke)
                return PreloadResult(it, ke, history[-(window + 1):])
        if it % 5000 == 0:
            log.info("preload step %d: KE %.3g J/kg", it, ke)
    raise PreloadError(f"gravity preload did not converge in {max_steps} steps (KE {history[-1]:.3g} J/kg)")
