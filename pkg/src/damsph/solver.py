"""Explicit kick-drift-kick time stepping of the pseudo-spring SPH solid."""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from .constitutive import PRINCIPAL, broadcast, strain_energy_density, stress_update
from . import _kernels
from .dynamics import (ArtificialViscosity, CFL_NUMBER, State, cfl_limit, kelvin_voigt_stress,
                       strain_rate_and_spin)
from .errors import ConfigurationError, NumericalBlowupError
from .kernel import CubicSplineKernel
from .neighbors import build_grid
from .springs import REST_LENGTH, init_network, update_bonds

log = logging.getLogger(__name__)

FORCE_KEYS = ("stress", "viscous_stress", "viscosity", "damping", "gravity", "actuator")


@dataclass
class Numerics:
    spacing: float
    h: float
    dt: float
    t_end: float = 10.0
    cfl: float = CFL_NUMBER
    eta1: float = 1.0
    eta2: float = 2.0
    epsilon_reg: float = 0.01
    alpha: float = 0.0  # 1/s
    beta: float = 0.0  # s
    plane: str = "stress"
    measure: str = PRINCIPAL
    bond_length_scale: str = REST_LENGTH
    skin: float = None

    def __post_init__(self):
        if self.skin is None:
            self.skin = 0.25 * self.spacing
        if self.dt <= 0 or self.h <= 0 or self.spacing <= 0:
            raise ConfigurationError("spacing, h and dt must be positive")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigurationError("Rayleigh coefficients must be non-negative")


@dataclass
class EnergyBudget:
    """Cumulative energy terms since the start of the transient (J per m thickness)."""

    kinetic0: float = 0.0
    strain0: float = 0.0
    work: dict = field(default_factory=lambda: {k: 0.0 for k in FORCE_KEYS})
    damage_dissipated: float = 0.0

    @property
    def external_work(self):
        return self.work["actuator"] + self.work["gravity"]

    @property
    def viscosity_dissipated(self):
        return -self.work["viscosity"]

    @property
    def damping_dissipated(self):
        return -(self.work["damping"] + self.work["viscous_stress"])

    @property
    def stress_work(self):
        """Work done on the material by the elastic stresses."""
        return -self.work["stress"]


class Solver:
    def __init__(self, particles, numerics, gravity=(0.0, 0.0), boundary_conditions=(),
                 threads=1, freeze_damage=False):
        self.particles = particles
        self.num = numerics
        self.state = State.from_particles(particles)
        self.mat = broadcast(particles.materials, particles.material)
        self.sound_speed = np.sqrt(self.mat.E / self.mat.rho0)
        self.kernel = CubicSplineKernel(numerics.h)
        self.visc = ArtificialViscosity(numerics.eta1, numerics.eta2, numerics.epsilon_reg)
        self.gravity = np.asarray(gravity, dtype=float)
        self.bcs = list(boundary_conditions)
        self.kinematic_mask = np.zeros(self.state.n, dtype=bool)
        for bc in self.bcs:
            self.kinematic_mask |= bc.mask
        self.threads = max(1, int(threads))
        self.freeze_damage = freeze_damage

        initial = build_grid(self.state.x, self.kernel.support)
        self.network = init_network(self.state.x, initial, particles.materials,
                                    particles.material, numerics.bond_length_scale)
        self._bond_keys = self.network.keys
        self._cand_ref = None
        self._nonbond = np.zeros((0, 2), dtype=np.int64)
        self.neighbor_rebuilds = 0
        self.contacts = np.zeros((0, 2), dtype=np.int64)
        self._adj = None
        self._adj_contacts = None
        self._pool = ThreadPoolExecutor(self.threads) if self.threads > 1 else None

        self._apply_initial_velocity()
        self.budget = EnergyBudget()
        self._refresh_forces()
        self.reset_budget()

    # ------------------------------------------------------------------ setup
    def _apply_initial_velocity(self):
        for bc in self.bcs:
            self.state.v[bc.mask] = np.asarray(bc.initial_velocity, dtype=float)

    def default_relaxation_damping(self):
        """Mass-proportional damping near critical for the slowest mode."""
        x = self.state.x
        size = float(np.max(np.ptp(x, axis=0))) if len(x) > 1 else self.num.spacing
        omega = np.pi * float(np.max(self.sound_speed)) / (4.0 * max(size, self.num.spacing))
        return 2.0 * omega

    def cfl_limit(self):
        return cfl_limit(self.num.h, self.sound_speed, self.state.v, self.num.cfl)

    def check_cfl(self):
        limit = self.cfl_limit()
        if self.num.dt > limit:
            at_rest = cfl_limit(self.num.h, self.sound_speed, None, self.num.cfl)
            if self.num.dt > at_rest:
                raise ConfigurationError(
                    f"time step {self.num.dt:.3g} s exceeds the CFL limit {limit:.3g} s")
            # the step was admissible until particle speeds grew
            speed = np.linalg.norm(self.state.v, axis=1)
            raise NumericalBlowupError(
                f"particle speed {speed.max():.3g} m/s pushes the CFL limit to {limit:.3g} s, "
                f"below dt = {self.num.dt:.3g} s", particle=int(np.argmax(speed)),
                step=self.state.step + 1)
        return limit

    # -------------------------------------------------------------- neighbors
    def _update_contacts(self):
        """Unbonded pairs currently inside the kernel support."""
        x = self.state.x
        radius = self.kernel.support
        skin = self.num.skin
        if self._cand_ref is None or np.max(np.abs(x - self._cand_ref)) * np.sqrt(2.0) > 0.5 * skin:
            cand = build_grid(x, radius + skin).pairs
            keys = cand[:, 0] * self.state.n + cand[:, 1]
            pos = np.searchsorted(self._bond_keys, keys)
            pos = np.minimum(pos, max(len(self._bond_keys) - 1, 0))
            bonded = (self._bond_keys[pos] == keys) if len(self._bond_keys) else np.zeros(len(keys), bool)
            self._nonbond = cand[~bonded]
            self._cand_ref = x.copy()
            self.neighbor_rebuilds += 1
        nb = self._nonbond
        if len(nb) == 0:
            self.contacts = nb
        else:
            d = x[nb[:, 0]] - x[nb[:, 1]]
            self.contacts = nb[np.einsum("ij,ij->i", d, d) < radius * radius]
        return self.contacts

    def _adjacency(self):
        """Directed adjacency over bonds plus active contacts, cached."""
        c = self.contacts
        if self._adj is None or not np.array_equal(self._adj_contacts, c):
            nb = len(self.network)
            i = np.concatenate([self.network.i, c[:, 0]])
            j = np.concatenate([self.network.j, c[:, 1]])
            nbr, pidx, ptr = _kernels.adjacency(i, j, self.state.n)
            bond = np.where(pidx < nb, pidx, -1)
            self._adj = (nbr, bond, ptr)
            self._adj_contacts = c.copy()
        return self._adj

    def _parallel(self, fn, *args):
        n = self.state.n
        if self._pool is None:
            fn(0, n, *args)
            return
        edges = np.linspace(0, n, self.threads + 1).astype(np.int64)
        jobs = [self._pool.submit(fn, int(a), int(b), *args)
                for a, b in zip(edges[:-1], edges[1:]) if b > a]
        for job in jobs:
            job.result()

    def _rates(self, velocity):
        s = self.state
        nbr, bond, ptr = self._adjacency()
        drho = np.empty(s.n)
        grad = np.empty((s.n, 4))
        self._parallel(_kernels.rates, s.x, velocity, s.rho, s.m, nbr, bond, ptr,
                       self.network.f, self.kernel.h, drho, grad)
        return drho, grad

    def _forces(self, velocity, kv_stress, extra_damping=0.0):
        """Per-category forces (m * a) at the current configuration."""
        s = self.state
        nbr, bond, ptr = self._adjacency()
        stress = s.material.effective_stress()
        if kv_stress is None:
            kv_stress = np.zeros_like(stress)
        acc = np.empty((s.n, 6))
        de = np.empty(s.n)
        self._parallel(_kernels.forces, s.x, velocity, s.rho, s.m, stress, kv_stress,
                       self.sound_speed, nbr, bond, ptr, self.network.f, self.kernel.h,
                       self.visc.eta1, self.visc.eta2, self.visc.epsilon_reg, acc, de)
        self._energy_rate = de
        m = s.m[:, None]
        forces = {"stress": acc[:, 0:2] * m, "viscous_stress": acc[:, 2:4] * m,
                  "viscosity": acc[:, 4:6] * m}
        free = ~self.kinematic_mask
        alpha = self.num.alpha + extra_damping
        damp = np.zeros_like(velocity)
        if alpha:
            damp[free] = -alpha * m[free] * velocity[free]
        grav = np.zeros_like(velocity)
        if np.any(self.gravity):
            grav[free] = m[free] * self.gravity
        forces["damping"] = damp
        forces["gravity"] = grav
        return forces

    def _prescribed(self, t, relax=False):
        acc = np.zeros((self.state.n, 2))
        if not relax:
            for bc in self.bcs:
                acc[bc.mask] = bc.acceleration(t)
        return acc

    def _finish_forces(self, forces, t, relax=False):
        """Total acceleration with kinematic particles overridden."""
        m = self.state.m[:, None]
        total = sum(forces[k] for k in ("stress", "viscous_stress", "viscosity",
                                        "damping", "gravity"))
        km = self.kinematic_mask
        act = np.zeros_like(total)
        if km.any():
            presc = self._prescribed(t, relax)
            act[km] = m[km] * presc[km] - total[km]
            total = total + act
        forces["actuator"] = act
        return total / m

    def _refresh_forces(self, relax=False, extra_damping=0.0):
        s = self.state
        self._update_contacts()
        self.force = self._forces(s.v, None, extra_damping)
        self.acc = self._finish_forces(self.force, s.time, relax)

    # ------------------------------------------------------------------- step
    def step(self, relax=False, relax_damping=0.0):
        """Advance one kick-drift-kick step.

        With ``relax`` the step belongs to gravity relaxation: kinematic
        particles are held, damage histories are frozen, extra
        mass-proportional damping applies and the clock does not advance.
        """
        s, num = self.state, self.num
        dt = num.dt
        self.check_cfl()
        t_next = (s.step + 1) * dt
        v_old = s.v.copy()
        f_old = self.force
        km = self.kinematic_mask

        v_half = s.v + 0.5 * dt * self.acc
        if relax:
            v_half[km] = 0.0
        s.x += dt * v_half

        self._update_contacts()
        drho, L = self._rates(v_half)
        s.rho = s.rho + dt * drho
        if not np.all(s.rho > 0):
            k = int(np.flatnonzero(~(s.rho > 0))[0])
            raise NumericalBlowupError("non-positive density", particle=k, step=s.step + 1)

        rate, spin = strain_rate_and_spin(L)
        frozen = relax or self.freeze_damage
        d_old = s.material.damage.copy()
        try:
            stress_update(rate, spin, dt, s.material, self.mat, num.plane, num.measure, frozen)
        except NumericalBlowupError as exc:
            exc.step = s.step + 1
            raise
        kv = None
        if num.beta > 0:
            kv = kelvin_voigt_stress(rate, self.mat, num.beta, s.material.damage, num.plane)
        update_bonds(self.network, s.x, frozen=frozen)

        forces = self._forces(v_half, kv, relax_damping if relax else 0.0)
        acc = self._finish_forces(forces, t_next, relax)
        s.v = v_half + 0.5 * dt * acc
        if relax:
            s.v[km] = 0.0
        s.energy = s.energy + dt * self._energy_rate
        self.acc, self.force = acc, forces

        if not relax:
            self._account(v_old, f_old, forces, d_old, dt)
            s.step += 1
            s.time = s.step * dt
        self._check_finite()
        return s

    def _check_finite(self):
        s = self.state
        ok = np.isfinite(s.x).all(axis=1) & np.isfinite(s.v).all(axis=1) & np.isfinite(s.rho)
        if not ok.all():
            raise NumericalBlowupError("non-finite state", particle=int(np.flatnonzero(~ok)[0]),
                                       step=s.step)

    def run(self, t_end=None, callback=None):
        """Step until ``t_end``; ``callback(solver)`` runs after every step."""
        t_end = self.num.t_end if t_end is None else t_end
        n_total = int(round(t_end / self.num.dt))
        while self.state.step < n_total:
            self.step()
            if callback is not None:
                callback(self)
        return self.state

    # ---------------------------------------------------------------- energy
    def kinetic_energy(self):
        s = self.state
        return float(0.5 * np.sum(s.m * np.einsum("ij,ij->i", s.v, s.v)))

    def strain_energy(self):
        s = self.state
        w = strain_energy_density(s.material.stress, self.mat, self.num.plane)
        return float(np.sum(s.m / s.rho * (1.0 - s.material.damage) * w))

    def _account(self, v_old, f_old, f_new, d_old, dt):
        vbar = 0.5 * (v_old + self.state.v)
        for k in FORCE_KEYS:
            self.budget.work[k] += 0.5 * dt * float(np.sum((f_old[k] + f_new[k]) * vbar))
        s = self.state
        dd = s.material.damage - d_old
        if np.any(dd):
            w = strain_energy_density(s.material.stress, self.mat, self.num.plane)
            self.budget.damage_dissipated += float(np.sum(s.m / s.rho * w * dd))

    def reset_budget(self):
        self.budget = EnergyBudget(self.kinetic_energy(), self.strain_energy())

    def energy_report(self):
        b = self.budget
        ke, se = self.kinetic_energy(), self.strain_energy()
        dissipated = b.damage_dissipated + b.viscosity_dissipated + b.damping_dissipated
        residual = (ke - b.kinetic0) + (se - b.strain0) + dissipated - b.external_work
        return {
            "kinetic_J": ke,
            "strain_J": se,
            "damage_dissipated_J": b.damage_dissipated,
            "viscosity_dissipated_J": b.viscosity_dissipated,
            "damping_dissipated_J": b.damping_dissipated,
            "external_work_J": b.external_work,
            "stress_work_J": b.stress_work,
            "residual_J": residual,
        }

    def finish_preload(self):
        """Zero velocities and restart the clock after gravity relaxation."""
        s = self.state
        s.v[:] = 0.0
        s.time, s.step = 0.0, 0
        self._apply_initial_velocity()
        self._refresh_forces()
        self.reset_budget()

    # ------------------------------------------------------------ checkpoint
    def state_dict(self):
        s, nw = self.state, self.network
        d = {
            "x": s.x, "v": s.v, "rho": s.rho, "energy": s.energy,
            "stress": s.material.stress, "strain": s.material.strain,
            "kappa": s.material.kappa, "damage": s.material.damage,
            "time": np.float64(s.time), "step": np.int64(s.step),
            "bond_f": nw.f, "bond_kappa": nw.kappa, "bond_failed": nw.failed,
            "acc": self.acc, "gravity": self.gravity,
            "cand_ref": self._cand_ref if self._cand_ref is not None else np.zeros((0, 2)),
            "nonbond": self._nonbond,
            "neighbor_rebuilds": np.int64(self.neighbor_rebuilds),
            "budget_kinetic0": np.float64(self.budget.kinetic0),
            "budget_strain0": np.float64(self.budget.strain0),
            "budget_damage": np.float64(self.budget.damage_dissipated),
        }
        for k in FORCE_KEYS:
            d[f"force_{k}"] = self.force[k]
            d[f"work_{k}"] = np.float64(self.budget.work[k])
        return {k: np.array(v, copy=True) for k, v in d.items()}

    def load_state_dict(self, d):
        s, nw = self.state, self.network
        s.x, s.v, s.rho, s.energy = (np.array(d[k]) for k in ("x", "v", "rho", "energy"))
        mt = s.material
        mt.stress, mt.strain, mt.kappa, mt.damage = (
            np.array(d[k]) for k in ("stress", "strain", "kappa", "damage"))
        s.time, s.step = float(d["time"]), int(d["step"])
        nw.f, nw.kappa, nw.failed = (np.array(d[k]) for k in ("bond_f", "bond_kappa", "bond_failed"))
        self.acc = np.array(d["acc"])
        self.gravity = np.array(d["gravity"])
        self._cand_ref = np.array(d["cand_ref"]) if len(d["cand_ref"]) else None
        self._nonbond = np.array(d["nonbond"]).reshape(-1, 2).astype(np.int64)
        self.neighbor_rebuilds = int(d["neighbor_rebuilds"])
        self.force = {k: np.array(d[f"force_{k}"]) for k in FORCE_KEYS}
        self.budget = EnergyBudget(float(d["budget_kinetic0"]), float(d["budget_strain0"]),
                                   {k: float(d[f"work_{k}"]) for k in FORCE_KEYS},
                                   float(d["budget_damage"]))
        if self._cand_ref is not None:
            x = s.x
            nb = self._nonbond
            dd = x[nb[:, 0]] - x[nb[:, 1]] if len(nb) else np.zeros((0, 2))
            self.contacts = nb[np.einsum("ij,ij->i", dd, dd) < self.kernel.support ** 2]
        self._adj = None

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None
