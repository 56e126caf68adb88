"""Run orchestration: preload, transient, outputs, checkpoints and metadata."""

import hashlib
import logging
import platform
import sys
import time
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np
import yaml

from .errors import NumericalBlowupError, SceneIOError
from .excitation import gravity_preload
from .scene_io import (CrackGeometry, TimeSeriesLog, build_solver, dump_scene, ensure_directory,
                       extract_cracks, write_snapshot)

log = logging.getLogger(__name__)

THREADS_ENV = "DAMSPH_THREADS"
CHECKPOINT = "checkpoint.npz"
# measured on the coarse Koyna scene, single thread
SECONDS_PER_PARTICLE_STEP = 2.0e-6


@dataclass
class RunManifest:
    scene_path: str
    output_dir: str
    overrides: tuple = ()
    threads: int = 1
    checkpoint_interval: int = 0  # steps; 0 disables
    resume: bool = False
    stop_after: int = None  # stop (as if interrupted) after this many transient steps
    progress_interval: float = None  # wall seconds; None uses the scene value


@dataclass
class RunResult:
    status: str
    steps: int
    time: float
    wall_time: float
    preload_iterations: int
    energy: dict
    cracks: dict
    sequence: dict
    output_dir: Path
    snapshots: list = field(default_factory=list)


def estimate_wall_time(n_particles, n_steps, threads=1):
    return SECONDS_PER_PARTICLE_STEP * n_particles * n_steps / max(1, threads)


def crack_sequence(fail_step, midpoints, geometry, dt):
    """Timing and location of the first failures, in the neck band and at the base."""
    out = {"first_failure_time_s": None, "first_failure_midpoint_m": None,
           "first_failure_in_neck_band": None, "first_neck_failure_time_s": None,
           "first_base_failure_time_s": None, "base_after_neck": None}
    failed = fail_step >= 0
    if not failed.any():
        return out
    steps = fail_step[failed]
    mid = midpoints[failed]
    first = int(steps.min())
    at_first = mid[steps == first]
    neck = mid[:, 1] >= geometry.interface_y + 0.6 * geometry.height
    base = np.abs(mid[:, 1] - geometry.interface_y) <= 2.0 * geometry.spacing * (1 + 1e-9)
    out["first_failure_time_s"] = first * dt
    out["first_failure_midpoint_m"] = [float(v) for v in at_first[0]]
    out["first_failure_in_neck_band"] = bool(
        np.all(at_first[:, 1] >= geometry.interface_y + 0.6 * geometry.height))
    if neck.any():
        out["first_neck_failure_time_s"] = int(steps[neck].min()) * dt
    if base.any():
        out["first_base_failure_time_s"] = int(steps[base].min()) * dt
    if neck.any():
        out["base_after_neck"] = (not base.any()) or int(steps[base].min()) > int(steps[neck].min())
    return out


def _versions():
    out = {"python": platform.python_version()}
    for mod in ("numpy", "scipy", "numba", "yaml"):
        try:
            out[mod] = sys.modules[mod].__version__ if mod in sys.modules else \
                __import__(mod).__version__
        except (ImportError, AttributeError):
            out[mod] = None
    try:
        out["damsph"] = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        out["damsph"] = None
    return out


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_yaml(path, data):
    try:
        Path(path).write_text(yaml.safe_dump(_plain(data), sort_keys=False))
    except OSError as exc:
        raise SceneIOError(f"cannot write {path}: {exc}") from None


class Runner:
    """Drive one scene from preload to the end time."""

    def __init__(self, scene, manifest, progress=sys.stderr):
        self.scene = scene
        self.manifest = manifest
        self.progress = progress
        self.out = ensure_directory(manifest.output_dir)
        self.snap_dir = ensure_directory(self.out / "snapshots")
        self.scene_text = dump_scene(scene)
        self.scene_hash = hashlib.sha256(self.scene_text.encode()).hexdigest()
        self.solver, self.model = build_solver(scene, threads=manifest.threads)
        self.geometry = CrackGeometry.from_particles(self.model.particles,
                                                     scene.output.dam_region)
        self.fail_step = np.full(len(self.solver.network), -1, dtype=np.int64)
        self.n_failed = 0
        self.preload_iterations = 0
        self.snapshots = []
        num = scene.numerics
        self.n_total = int(round(num.t_end / num.dt))
        self.snap_every = max(1, int(round(scene.output.snapshot_interval / num.dt)))
        self.checkpoint_every = manifest.checkpoint_interval or \
            scene.output.checkpoint_interval_steps
        self.progress_interval = (manifest.progress_interval if manifest.progress_interval
                                  is not None else scene.output.progress_interval)

    # ----------------------------------------------------------------- state
    def _track_failures(self):
        failed = self.solver.network.failed
        n = int(np.count_nonzero(failed))
        if n != self.n_failed:
            new = failed & (self.fail_step < 0)
            self.fail_step[new] = self.solver.state.step
            self.n_failed = n

    def checkpoint_path(self):
        return self.out / CHECKPOINT

    def save_checkpoint(self):
        d = self.solver.state_dict()
        d["fail_step"] = self.fail_step
        d["preload_iterations"] = np.int64(self.preload_iterations)
        d["scene_hash"] = np.array(self.scene_hash)
        tmp = self.out / (CHECKPOINT + ".tmp.npz")
        try:
            np.savez(tmp, **d)
            tmp.replace(self.checkpoint_path())
        except OSError as exc:
            raise SceneIOError(f"cannot write checkpoint: {exc}") from None

    def load_checkpoint(self):
        path = self.checkpoint_path()
        try:
            with np.load(path) as z:
                d = {k: z[k] for k in z.files}
        except OSError as exc:
            raise SceneIOError(f"cannot read checkpoint {path}: {exc}") from None
        if str(d["scene_hash"]) != self.scene_hash:
            raise SceneIOError(f"checkpoint {path} was written for a different scene "
                               "or override set")
        self.solver.load_state_dict(d)
        self.fail_step = np.array(d["fail_step"])
        self.n_failed = int(np.count_nonzero(self.solver.network.failed))
        self.preload_iterations = int(d["preload_iterations"])

    # ---------------------------------------------------------------- output
    def snapshot(self, tag=None):
        paths = write_snapshot(self.solver, self.scene, self.snap_dir, tag=tag,
                               geometry=self.geometry, fail_step=self.fail_step)
        self.snapshots.append(paths[0])
        return paths

    def _report(self, wall0):
        s = self.solver.state
        ke = self.solver.kinetic_energy()
        pct = 100.0 * s.step / self.n_total if self.n_total else 100.0
        print(f"[damsph] step {s.step}/{self.n_total} ({pct:.1f}%) t={s.time:.5g} s "
              f"KE={ke:.4g} J failed_bonds={self.n_failed} wall={time.time() - wall0:.1f} s",
              file=self.progress, flush=True)

    def cracks(self):
        prof = extract_cracks(self.solver.state, self.solver.network,
                              self.scene.output.crack_threshold, self.geometry,
                              particles=self.model.particles,
                              reference=self.model.particles.position)
        return prof

    def sequence(self):
        nw = self.solver.network
        x0 = self.model.particles.position
        mid = 0.5 * (x0[nw.i] + x0[nw.j])
        return crack_sequence(self.fail_step, mid, self.geometry, self.scene.numerics.dt)

    def _metadata(self, status, wall, error=None):
        s = self.solver.state
        meta = {
            "status": status,
            "scene": {"name": self.scene.name, "path": self.manifest.scene_path,
                      "sha256": self.scene_hash},
            "overrides": list(self.manifest.overrides),
            "output_dir": str(self.out),
            "threads": self.manifest.threads,
            "particles": {lab: self.model.particles.count(lab)
                          for lab in self.model.particles.labels},
            "bonds": len(self.solver.network),
            "numerics": dict(self.scene.data["numerics"]),
            "excitation_case": self.scene.excitation_case,
            "preload_iterations": self.preload_iterations,
            "steps": s.step,
            "time_s": s.time,
            "wall_time_s": wall,
            "energy": self.solver.energy_report(),
            "crack_sequence": self.sequence(),
            "versions": _versions(),
        }
        if error is not None:
            meta["error"] = str(error)
        return meta

    # ------------------------------------------------------------------- run
    def run(self):
        wall0 = time.time()
        solver = self.solver
        (self.out / "scene.resolved.scene").write_text(self.scene_text)
        probes = self.scene.output.probes
        resumed = self.manifest.resume and self.checkpoint_path().exists()
        if self.manifest.resume and not resumed:
            log.warning("no checkpoint in %s, starting from scratch", self.out)
        status = "complete"
        try:
            if resumed:
                self.load_checkpoint()
                ts = TimeSeriesLog(self.out / "timeseries.csv", solver, probes,
                                   self.scene.output.log_interval_steps, append=True)
                ts.truncate_after(solver.state.step)
                print(f"[damsph] resumed at step {solver.state.step}", file=self.progress,
                      flush=True)
            else:
                pre = self.scene.preload
                if pre["enabled"] and np.any(solver.gravity):
                    print("[damsph] gravity preload", file=self.progress, flush=True)
                    res = gravity_preload(solver, damping=pre["damping_per_s"],
                                          tol=pre["tolerance_J_per_kg"],
                                          max_steps=pre["max_steps"], window=pre["window_steps"])
                    self.preload_iterations = res.iterations
                ts = TimeSeriesLog(self.out / "timeseries.csv", solver, probes,
                                   self.scene.output.log_interval_steps)
                ts.record(solver)
                self.snapshot()
            last_report = time.time()
            stop_at = self.n_total
            if self.manifest.stop_after is not None:
                stop_at = min(stop_at, solver.state.step + self.manifest.stop_after)
            while solver.state.step < stop_at:
                try:
                    solver.step()
                except NumericalBlowupError as exc:
                    if exc.step is None:
                        exc.step = solver.state.step + 1
                    raise
                step = solver.state.step
                self._track_failures()
                if ts.due(step):
                    ts.record(solver)
                if step % self.snap_every == 0 or step == self.n_total:
                    self.snapshot()
                if self.checkpoint_every and step % self.checkpoint_every == 0:
                    self.save_checkpoint()
                if time.time() - last_report >= self.progress_interval:
                    self._report(wall0)
                    last_report = time.time()
            if solver.state.step < self.n_total:
                status = "interrupted"
                self.save_checkpoint()
        except NumericalBlowupError as exc:
            tag = f"emergency_step_{solver.state.step:09d}"
            try:
                self.snapshot(tag=tag)
            except Exception:  # the emergency snapshot must not mask the blowup
                log.exception("emergency snapshot failed")
            write_yaml(self.out / "run.yaml", self._metadata("blowup", time.time() - wall0, exc))
            raise
        wall = time.time() - wall0
        self._report(wall0)
        prof = self.cracks()
        cracks = prof.summary()
        seq = self.sequence()
        write_yaml(self.out / "cracks.yaml", {"time_s": solver.state.time,
                                              "step": solver.state.step,
                                              "profile": cracks, "sequence": seq})
        write_yaml(self.out / "run.yaml", self._metadata(status, wall))
        solver.close()
        return RunResult(status, solver.state.step, solver.state.time, wall,
                         self.preload_iterations, solver.energy_report(), cracks, seq,
                         self.out, list(self.snapshots))


def run_scene(scene, manifest, progress=sys.stderr):
    return Runner(scene, manifest, progress).run()
