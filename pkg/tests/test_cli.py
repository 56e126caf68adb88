import csv
from types import SimpleNamespace

import numpy as np
import pytest
import yaml

from conftest import block, make_solver
from damsph.cli import CONFIRM_STEPS, main, postprocess
from damsph.lattice import merge
from damsph.runner import THREADS_ENV
from damsph.scene_io import list_snapshots, shipped_scene_path, write_snapshot

PLATE = str(shipped_scene_path("plate-tension"))
SHORT = ["--set", "t_end_s=0.004", "--set", "snapshot_interval_s=0.002",
         "--set", "log_interval_steps=20"]


def run(*argv):
    return main([str(a) for a in argv])


def read_table(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


class TestValidate:
    def test_koyna_report(self, capsys):
        assert run("validate", shipped_scene_path("koyna")) == 0
        out = capsys.readouterr().out
        assert "region dam: 14521 particles" in out
        assert "region foundation: 8601 particles" in out
        assert "dt 5e-06 s <= cfl_limit 3.94e-05 s" in out
        assert "2,000,000 steps" in out
        assert out.rstrip().endswith("valid")

    def test_missing_file(self, tmp_path, capsys):
        assert run("validate", tmp_path / "missing.scene") == 2
        assert "scene not found" in capsys.readouterr().err

    def test_dt_override_violates_cfl(self, capsys):
        assert run("validate", shipped_scene_path("koyna"), "--set", "dt_s=1e-4") == 2
        assert "cfl_limit" in capsys.readouterr().err

    def test_unknown_override(self, capsys):
        assert run("validate", PLATE, "--set", "warp=9") == 2
        assert "does not name" in capsys.readouterr().err

    def test_bad_thread_env(self, monkeypatch):
        monkeypatch.setenv(THREADS_ENV, "many")
        assert run("validate", PLATE) == 2


class TestRun:
    def test_zero_end_time(self, tmp_path):
        out = tmp_path / "out"
        assert run("run", PLATE, "--out", out, "--set", "t_end_s=0") == 0
        assert [p.name for p in list_snapshots(out / "snapshots")] == \
            ["snapshot_000000000.csv"]
        meta = yaml.safe_load((out / "run.yaml").read_text())
        assert meta["status"] == "complete" and meta["steps"] == 0
        assert {"versions", "wall_time_s", "numerics", "energy"} <= set(meta)
        assert (out / "cracks.yaml").exists()
        assert (out / "scene.resolved.scene").exists()

    def test_checkpoint_resume_is_bit_identical(self, tmp_path):
        full, split = tmp_path / "full", tmp_path / "split"
        assert run("run", PLATE, "--out", full, *SHORT) == 0
        assert run("run", PLATE, "--out", split, *SHORT, "--stop-after", 130,
                   "--checkpoint-every", 50) == 0
        meta = yaml.safe_load((split / "run.yaml").read_text())
        assert meta["status"] == "interrupted" and meta["steps"] == 130
        assert run("run", PLATE, "--out", split, *SHORT, "--resume") == 0
        names = [p.name for p in list_snapshots(full / "snapshots")]
        assert names == [p.name for p in list_snapshots(split / "snapshots")]
        for name in names:
            for suffix in ("", ".vtk", ".bonds.csv"):
                stem = name[:-4] if suffix else name
                a = (full / "snapshots" / (stem + suffix)).read_bytes()
                assert a == (split / "snapshots" / (stem + suffix)).read_bytes()
        assert (full / "timeseries.csv").read_bytes() == (split / "timeseries.csv").read_bytes()

    def test_resume_rejects_changed_scene(self, tmp_path, capsys):
        out = tmp_path / "out"
        assert run("run", PLATE, "--out", out, *SHORT, "--stop-after", 10) == 0
        assert run("run", PLATE, "--out", out, *SHORT, "--set", "eta1=0.5", "--resume") == 3
        assert "different scene" in capsys.readouterr().err

    def test_blowup_exits_numerical(self, tmp_path, capsys):
        out = tmp_path / "out"
        # a large CFL number admits an unstable step; speeds then run away
        code = run("run", PLATE, "--out", out, "--set", "cfl_number=5", "--set", "dt_s=4e-4",
                   "--set", "t_end_s=0.4")
        assert code == 4
        err = capsys.readouterr().err
        assert "particle" in err and "step" in err
        assert list((out / "snapshots").glob("emergency_step_*.csv"))
        assert yaml.safe_load((out / "run.yaml").read_text())["status"] == "blowup"

    def test_long_run_needs_confirmation(self, tmp_path, capsys):
        dt = 2.0e-5
        t_end = (CONFIRM_STEPS + 1) * dt
        code = run("run", PLATE, "--out", tmp_path, "--set", f"t_end_s={t_end!r}")
        assert code == 2
        assert "--yes" in capsys.readouterr().err
        assert not (tmp_path / "run.yaml").exists()

    def test_thread_count_from_environment(self, tmp_path, monkeypatch):
        monkeypatch.setenv(THREADS_ENV, "3")
        assert run("run", PLATE, "--out", tmp_path, "--set", "t_end_s=0") == 0
        assert yaml.safe_load((tmp_path / "run.yaml").read_text())["threads"] == 3

    def test_thread_counts_give_identical_output(self, tmp_path):
        for threads in (1, 3):
            assert run("run", PLATE, "--out", tmp_path / str(threads), *SHORT,
                       "--threads", threads) == 0
        for name in ("timeseries.csv", "snapshots/snapshot_000000200.csv"):
            assert (tmp_path / "1" / name).read_bytes() == (tmp_path / "3" / name).read_bytes()


@pytest.fixture(scope="module")
def plate_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("plate")
    assert run("run", PLATE, "--out", out, "--progress-interval", 1000) == 0
    return out


class TestPostprocess:
    def test_intact_run_has_no_failures(self, tmp_path):
        assert run("run", PLATE, "--out", tmp_path, *SHORT) == 0
        rows, profile = postprocess(tmp_path)
        assert len(rows) == 3
        assert all(r[4] == 0 for r in rows)
        assert profile.failed_bonds == 0

    def test_empty_directory(self, tmp_path, capsys):
        assert run("postprocess", tmp_path) == 3
        assert "no snapshots" in capsys.readouterr().err

    def test_failed_bond_column_is_monotone(self, plate_run, capsys):
        assert run("postprocess", plate_run) == 0
        rows = read_table(plate_run / "postprocess.csv")
        failed = [int(r["failed_bonds"]) for r in rows]
        extent = [float(r["base_extent_m"]) for r in rows]
        assert failed[-1] > 0
        assert np.all(np.diff(failed) >= 0)
        assert np.all(np.diff(extent) >= 0)
        final = yaml.safe_load((plate_run / "postprocess.yaml").read_text())["final"]
        assert final["failed_bonds"] == failed[-1]
        assert "final:" in capsys.readouterr().out

    def test_constructed_base_line(self, tmp_path):
        dam = block(20.0, 10.0, label="dam")
        rock = block(20.0, 4.0, origin=(0.0, -4.0), label="foundation")
        solver = make_solver(merge([dam, rock]))
        nw = solver.network
        x = solver.particles.position
        mid = 0.5 * (x[nw.i] + x[nw.j])
        cut = ((x[nw.i, 1] > 0) != (x[nw.j, 1] > 0)) & (mid[:, 0] <= 10.0)
        nw.sever(cut)
        scene = SimpleNamespace(name="constructed", output=SimpleNamespace(
            dam_region="dam", crack_threshold=0.5, formats=("csv",)))
        write_snapshot(solver, scene, tmp_path)
        rows, profile = postprocess(tmp_path)
        assert rows[0][4] == np.count_nonzero(cut)
        assert profile.base_extent == pytest.approx(10.0, abs=0.5)

    def test_threshold_override(self, plate_run):
        strict = postprocess(plate_run, threshold=1.0)[0]
        loose = postprocess(plate_run, threshold=0.1)[0]
        assert all(s[5] <= lo[5] for s, lo in zip(strict, loose))


class TestSceneCommand:
    def test_list(self, capsys):
        assert run("scene", "--list") == 0
        assert "koyna" in capsys.readouterr().out.split()

    def test_write_and_force(self, tmp_path):
        assert run("scene", "koyna-coarse-earthquake", "--out", tmp_path) == 0
        assert (tmp_path / "koyna-coarse-earthquake.scene").exists()
        assert (tmp_path / "koyna-accelerogram.csv").exists()
        assert run("validate", tmp_path / "koyna-coarse-earthquake.scene") == 0
        assert run("scene", "koyna-coarse-earthquake", "--out", tmp_path) == 3
        assert run("scene", "koyna-coarse-earthquake", "--out", tmp_path, "--force") == 0

    def test_unknown_scene(self, tmp_path):
        assert run("scene", "atlantis", "--out", tmp_path) != 0
