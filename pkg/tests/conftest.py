import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from damsph.constitutive import Material
from damsph.lattice import RegionPolygon, fill_polygon
from damsph.solver import Numerics, Solver

settings.register_profile(
    "damsph", deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("damsph")

# concrete constants used throughout the Koyna analysis
CONCRETE = dict(E=31.03e9, nu=0.2, rho0=2643.0, f_t=3.19e6, f_c=31.9e6, G_f=100.0,
                eps0=1e-4, h_c=0.5)


def concrete(**changes):
    return Material(name=changes.pop("name", "concrete"), **{**CONCRETE, **changes})


@pytest.fixture
def koyna_concrete():
    return concrete()


def rectangle(width, height, origin=(0.0, 0.0), label="block", material_id="concrete"):
    x0, y0 = origin
    return RegionPolygon(((x0, y0), (x0 + width, y0), (x0 + width, y0 + height),
                          (x0, y0 + height)), material_id, label)


def block(width, height, spacing=0.5, material=None, origin=(0.0, 0.0), label="block"):
    """Lattice particles filling a width x height rectangle."""
    material = material or concrete()
    return fill_polygon(rectangle(width, height, origin, label), spacing, material)


def make_solver(particles, dt=1e-5, h=None, **kw):
    bcs = kw.pop("boundary_conditions", ())
    threads = kw.pop("threads", 1)
    gravity = kw.pop("gravity", (0.0, 0.0))
    freeze = kw.pop("freeze_damage", False)
    num = Numerics(spacing=particles.spacing, h=h or 0.9 * particles.spacing, dt=dt, **kw)
    return Solver(particles, num, gravity=gravity, boundary_conditions=bcs, threads=threads,
                  freeze_damage=freeze)


def interior_index(positions, center):
    d = np.linalg.norm(np.asarray(positions) - np.asarray(center), axis=1)
    return int(np.argmin(d))


# acceptance summary lines, filled by tests/test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
