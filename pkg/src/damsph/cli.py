"""Command-line driver: ``damsph validate | run | postprocess | scene``.

Exit codes:

    0  success
    1  internal error
    2  configuration error (invalid scene, override or precondition)
    3  I/O error (missing/unreadable files, empty snapshot directory)
    4  numerical failure (blowup, preload did not converge)
"""

import argparse
import logging
import math
import os
import shutil
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DamSPHError, SceneIOError
from .runner import (THREADS_ENV, RunManifest, estimate_wall_time, run_scene, write_yaml)
from .scene_io import (SHIPPED_SCENES, CrackGeometry, build_particles, crack_profile,
                       list_snapshots, load_scene, read_failed_bonds, read_snapshot_csv,
                       shipped_files)

EXIT_OK, EXIT_INTERNAL, EXIT_CONFIG, EXIT_IO, EXIT_NUMERICAL = 0, 1, 2, 3, 4
CONFIRM_STEPS = 500_000


def _default_threads():
    val = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(val))
    except ValueError:
        raise ConfigurationError(f"{THREADS_ENV}={val!r} is not an integer") from None


def _print(*args):
    print(*args, file=sys.stdout, flush=True)


# ------------------------------------------------------------------ validate
def cmd_validate(args):
    scene = load_scene(args.scene, args.set)
    model = build_particles(scene)
    p = model.particles
    num = scene.numerics
    limit = scene.cfl_limit()
    steps = scene.estimated_steps()
    _print(f"scene: {scene.name} ({args.scene})")
    for lab in p.labels:
        _print(f"  region {lab}: {p.count(lab)} particles")
    _print(f"  total: {len(p)} particles, mass {float(p.mass.sum()):.6g} kg per m thickness")
    for name, mask in model.groups.items():
        _print(f"  boundary group {name}: {int(mask.sum())} particles")
    _print(f"  spacing {num.spacing:g} m, h {num.h:g} m (h/spacing {num.h / num.spacing:.3g})")
    _print(f"  dt {num.dt:.3g} s <= cfl_limit {limit:.3g} s")
    _print(f"  t_end {num.t_end:g} s -> {steps:,} steps")
    _print(f"  excitation case: {scene.excitation_case}")
    est = estimate_wall_time(len(p), steps, args.threads)
    _print(f"  estimated wall time: {_duration(est)} on {args.threads} thread(s)")
    _print("valid")
    return EXIT_OK


def _duration(seconds):
    if seconds < 120:
        return f"{seconds:.0f} s"
    if seconds < 7200:
        return f"{seconds / 60:.0f} min"
    return f"{seconds / 3600:.1f} h"


# ----------------------------------------------------------------------- run
def cmd_run(args):
    scene = load_scene(args.scene, args.set)
    out = args.out or scene.output.directory
    steps = scene.estimated_steps()
    est = estimate_wall_time(_particle_estimate(scene), steps, args.threads)
    print(f"[damsph] {scene.name}: {steps:,} steps, estimated {_duration(est)}",
          file=sys.stderr, flush=True)
    if steps > CONFIRM_STEPS and not args.yes:
        print(f"[damsph] refusing to start {steps:,} steps without --yes "
              f"(threshold {CONFIRM_STEPS:,})", file=sys.stderr)
        return EXIT_CONFIG
    manifest = RunManifest(str(args.scene), str(out), tuple(args.set), args.threads,
                           args.checkpoint_every or 0, args.resume, args.stop_after,
                           args.progress_interval)
    result = run_scene(scene, manifest)
    _print(f"status: {result.status}")
    _print(f"steps: {result.steps} (t = {result.time:.6g} s), wall {result.wall_time:.1f} s")
    _print(f"failed bonds: {result.cracks['failed_bonds']}")
    seq = result.sequence
    if seq["first_failure_time_s"] is not None:
        _print(f"first failure: t = {seq['first_failure_time_s']:.6g} s at "
               f"{tuple(round(v, 3) for v in seq['first_failure_midpoint_m'])} m")
    _print(f"output: {result.output_dir}")
    return EXIT_OK


def _particle_estimate(scene):
    area = sum(r.area for r in scene.regions)
    return max(1, int(area / scene.spacing ** 2))


# --------------------------------------------------------------- postprocess
POSTPROCESS_COLUMNS = ("step", "time_s", "sigma_max_max_Pa", "sigma_min_min_Pa",
                       "failed_bonds", "damaged_particles", "base_extent_m",
                       "neck_elevation_m")


def postprocess(directory, threshold=None, dam_region=None):
    """Per-snapshot stress extrema and crack metrics; returns (rows, final profile)."""
    directory = Path(directory)
    snap_dir = directory / "snapshots" if (directory / "snapshots").is_dir() else directory
    paths = list_snapshots(snap_dir)
    if not paths:
        raise SceneIOError(f"no snapshots found in {snap_dir}")
    rows, profile = [], None
    for path in paths:
        snap = read_snapshot_csv(path)
        meta = snap.metadata
        region = dam_region or meta.get("dam_region", "dam")
        thr = threshold if threshold is not None else float(meta.get("crack_threshold", 0.5))
        geom = CrackGeometry(float(meta["spacing_m"]),
                             float(meta.get("interface_y_m", np.min(snap.fields["y"]))),
                             float(meta.get("dam_height_m", np.ptp(snap.fields["y"]))))
        bonds = read_failed_bonds(path.with_name(path.stem + ".bonds.csv"))
        labels = snap.fields["region"]
        bl = labels[bonds["i"]].copy() if len(bonds["i"]) else np.zeros(0, dtype=object)
        if len(bl):
            bl[labels[bonds["i"]] != labels[bonds["j"]]] = "interface"
        profile = crack_profile(bonds["mid0"], bl, snap.fields["connectivity_damage"], thr, geom)
        in_dam = labels == region if np.any(labels == region) else np.ones(len(labels), bool)
        rows.append((snap.step, snap.time, float(snap.fields["sigma_max"][in_dam].max()),
                     float(snap.fields["sigma_min"][in_dam].min()), profile.failed_bonds,
                     len(profile.damaged_particles), profile.base_extent,
                     profile.neck_elevation))
    return rows, profile


def cmd_postprocess(args):
    rows, profile = postprocess(args.directory, args.threshold)
    out = Path(args.out) if args.out else Path(args.directory) / "postprocess.csv"
    try:
        with open(out, "w") as fh:
            fh.write(",".join(POSTPROCESS_COLUMNS) + "\n")
            for r in rows:
                fh.write(",".join(str(v) if isinstance(v, (int, np.integer)) else
                                  ("nan" if isinstance(v, float) and math.isnan(v)
                                   else "%.17g" % v) for v in r) + "\n")
    except OSError as exc:
        raise SceneIOError(f"cannot write {out}: {exc}") from None
    summary = profile.summary()
    write_yaml(out.with_suffix(".yaml"), {"final": summary, "snapshots": len(rows)})
    _print(f"{'step':>10} {'time_s':>10} {'smax_MPa':>10} {'smin_MPa':>10} "
           f"{'failed':>7} {'base_m':>7} {'neck_m':>7}")
    for r in rows:
        neck = "-" if math.isnan(r[7]) else f"{r[7]:.2f}"
        _print(f"{r[0]:>10d} {r[1]:>10.4g} {r[2] / 1e6:>10.4g} {r[3] / 1e6:>10.4g} "
               f"{r[4]:>7d} {r[6]:>7.2f} {neck:>7}")
    _print(f"final: {summary['failed_bonds']} failed bonds, base extent "
           f"{summary['base_extent_m']:.2f} m, neck elevation {summary['neck_elevation_m']}")
    _print(f"written: {out}")
    return EXIT_OK


# --------------------------------------------------------------------- scene
def cmd_scene(args):
    if args.list or not args.name:
        for name in SHIPPED_SCENES:
            _print(name)
        return EXIT_OK
    dest = Path(args.out or ".")
    dest.mkdir(parents=True, exist_ok=True)
    for src in shipped_files(args.name):
        target = dest / src.name
        if target.exists() and not args.force:
            raise SceneIOError(f"{target} exists (use --force to overwrite)")
        shutil.copyfile(src, target)
        _print(f"wrote {target}")
    return EXIT_OK


# ---------------------------------------------------------------------- main
def build_parser():
    parser = argparse.ArgumentParser(
        prog="damsph", description="Pseudo-spring SPH fracture simulation of gravity dams.",
        epilog="Exit codes: 0 ok, 1 internal, 2 configuration, 3 I/O, 4 numerical.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def overrides(p):
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a scene value (dotted path or unique key); repeatable")

    def threads(p):
        p.add_argument("--threads", type=int, default=None,
                       help=f"worker threads (default ${THREADS_ENV} or 1)")

    p = sub.add_parser("validate", help="check a scene and report its size")
    p.add_argument("scene")
    overrides(p)
    threads(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="preload and integrate a scene")
    p.add_argument("scene")
    p.add_argument("--out", help="output directory (default: the scene's output.directory)")
    overrides(p)
    threads(p)
    p.add_argument("--checkpoint-every", type=int, metavar="STEPS",
                   help="write a checkpoint every STEPS steps")
    p.add_argument("--resume", action="store_true", help="continue from the last checkpoint")
    p.add_argument("--stop-after", type=int, metavar="STEPS",
                   help="stop after STEPS steps, leaving a checkpoint to resume from")
    p.add_argument("--progress-interval", type=float, metavar="SECONDS",
                   help="wall-clock seconds between progress lines")
    p.add_argument("--yes", action="store_true",
                   help=f"allow runs longer than {CONFIRM_STEPS:,} steps")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("postprocess", help="stress extrema and crack metrics of a run")
    p.add_argument("directory")
    p.add_argument("--threshold", type=float, default=None,
                   help="connectivity-damage threshold for damaged particles")
    p.add_argument("--out", help="table path (default: DIR/postprocess.csv)")
    p.set_defaults(func=cmd_postprocess)

    p = sub.add_parser("scene", help="write a shipped canonical scene")
    p.add_argument("name", nargs="?", help=", ".join(SHIPPED_SCENES))
    p.add_argument("--out", help="destination directory (default: current)")
    p.add_argument("--list", action="store_true", help="list shipped scenes")
    p.add_argument("--force", action="store_true", help="overwrite existing files")
    p.set_defaults(func=cmd_scene)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if getattr(args, "threads", 1) is None:
            args.threads = _default_threads()
        return args.func(args)
    except DamSPHError as exc:
        print(f"damsph: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"damsph: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except KeyboardInterrupt:
        print("damsph: interrupted", file=sys.stderr)
        return 130


if __name__ == "__main__":
    sys.exit(main())
