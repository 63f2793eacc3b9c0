import csv
import io
import json

import numpy as np
import pytest

from flashcollapse.cli import main, write_flashes_csv
from flashcollapse.config import RunConfig
from flashcollapse.engine import FlashRecord, Trajectory
from flashcollapse.errors import ConfigError
from flashcollapse.figure import FigureSpec, emit_figure_data, points_for
from flashcollapse.qalg import QuantumState

GRW_TOML = """\
seed = 7

[model]
kind = "grw"

[initial]
kind = "gaussian"

[schedule]
kind = "model"
horizon = 10.0

[ensemble]
n_trajectories = 100
"""


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


class TestConfig:
    def test_defaults_fill_in(self):
        cfg = RunConfig.from_dict({"seed": 1, "model": {"kind": "grw"}})
        assert cfg.model["alpha"] == 10.0 and cfg.model["n_sites"] == 41
        assert cfg.ensemble["n_trajectories"] == 100
        assert cfg.output["flashes"] == "flashes.csv"

    @pytest.mark.parametrize("raw", [
        {"model": {"kind": "grw", "alpah": 1.0}},
        {"model": {"kind": "grw"}, "ensembel": {}},
        {"model": {"kind": "grw"}, "schedule": {"kind": "model", "horizn": 3.0}},
        {"model": {"kind": "quantum_gravity"}},
        {"model": {"kind": "grw", "alpha": -1.0}},
        {"model": {"kind": "grw", "n_sites": 0}},
        {"model": {"kind": "csl_discrete", "beta": 0.0}},
        {"model": {"kind": "relativistic_lattice", "lattice_spacing": -2.0}},
        {"model": {"kind": "grw"}, "initial": {"kind": "occupations"}},
    ])
    def test_rejections(self, raw):
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"seed": 1, **raw}).build()

    @pytest.mark.parametrize("seed", [None, -1, 2 ** 64, 1.5, True])
    def test_seed_required_and_ranged(self, seed):
        raw = {"model": {"kind": "grw"}}
        if seed is not None:
            raw["seed"] = seed
        with pytest.raises(ConfigError):
            RunConfig.from_dict(raw)

    def test_round_trip(self):
        cfg = RunConfig.from_toml(GRW_TOML)
        again = RunConfig.from_dict(cfg.as_dict())
        assert again.as_dict() == cfg.as_dict()
        assert cfg.seed == 7

    @pytest.mark.parametrize("kind", ["grw", "csl_discrete", "relativistic_lattice"])
    def test_every_model_builds(self, kind):
        model, initial, schedule = RunConfig.from_dict({"seed": 1, "model": {"kind": kind}}).build()
        assert initial.dims == model.dims
        assert schedule.horizon == 10.0


class TestRun:
    def test_grw_flash_count(self, tmp_path, capsys):
        cfg = write(tmp_path / "run.toml", GRW_TOML)
        assert main(["run", cfg, "--out-dir", str(tmp_path / "out")]) == 0
        summary = json.loads((tmp_path / "out" / "summary.json").read_text())
        # Poisson(lambda T) per trajectory: 100 x 10 events, sd sqrt(1000)
        assert abs(summary["total_flashes"] - 1000) <= 3 * np.sqrt(1000)
        rows = read_rows(tmp_path / "out" / "flashes.csv")
        assert len(rows) == summary["total_flashes"]
        assert list(rows[0]) == ["trajectory_id", "time", "label", "position", "z"]
        assert summary["seed"] == 7 and summary["config"]["model"]["kind"] == "grw"
        assert summary["mean_energy_after"] > summary["mean_energy_before"]
        assert json.loads(capsys.readouterr().out)["total_flashes"] == summary["total_flashes"]

    def test_zero_event_schedule(self, tmp_path):
        text = GRW_TOML.replace('kind = "model"', 'kind = "none"')
        cfg = write(tmp_path / "run.toml", text)
        assert main(["run", cfg, "--out-dir", str(tmp_path)]) == 0
        assert (tmp_path / "flashes.csv").read_text() == "trajectory_id,time,label,position,z\n"
        assert json.loads((tmp_path / "summary.json").read_text())["total_flashes"] == 0

    def test_rerun_byte_identical(self, tmp_path):
        cfg = write(tmp_path / "run.toml", GRW_TOML.replace("100", "20"))
        main(["run", cfg, "--out-dir", str(tmp_path / "a"), "--threads", "1"])
        main(["run", cfg, "--out-dir", str(tmp_path / "b"), "--threads", "4"])
        a = (tmp_path / "a" / "flashes.csv").read_bytes()
        assert a == (tmp_path / "b" / "flashes.csv").read_bytes()
        assert b"\r" not in a

    def test_seed_flag_overrides(self, tmp_path):
        cfg = write(tmp_path / "run.toml", GRW_TOML.replace("100", "5"))
        main(["run", cfg, "--out-dir", str(tmp_path / "a")])
        main(["run", cfg, "--out-dir", str(tmp_path / "b"), "--seed", "8"])
        assert (tmp_path / "a" / "flashes.csv").read_bytes() != \
            (tmp_path / "b" / "flashes.csv").read_bytes()
        assert json.loads((tmp_path / "b" / "summary.json").read_text())["seed"] == 8

    def test_lattice_model_runs(self, tmp_path):
        text = ('seed = 3\n[model]\nkind = "csl_discrete"\nmax_occupation = 4\n'
                '[schedule]\nhorizon = 2.0\n[ensemble]\nn_trajectories = 3\n')
        cfg = write(tmp_path / "run.toml", text)
        assert main(["run", cfg, "--out-dir", str(tmp_path)]) == 0
        assert json.loads((tmp_path / "summary.json").read_text())["model"] == "csl_discrete"

    def test_unknown_key_exit_1(self, tmp_path, capsys):
        cfg = write(tmp_path / "run.toml", GRW_TOML.replace("[ensemble]", "[ensemble]\nn_trajs = 3"))
        assert main(["run", cfg, "--out-dir", str(tmp_path)]) == 1
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "config" and "n_trajs" in err["message"]

    def test_bad_toml_exit_1(self, tmp_path, capsys):
        cfg = write(tmp_path / "run.toml", "seed = = 3\n")
        assert main(["run", cfg]) == 1
        assert json.loads(capsys.readouterr().err)["error"] == "config"

    def test_csv_writer_formats(self):
        traj = Trajectory(QuantumState([1.0]), (FlashRecord(0.5, 0, None, 1.25),),
                          QuantumState([1.0]), 0)
        buf = io.StringIO()
        write_flashes_csv([traj], buf)
        assert buf.getvalue().splitlines()[1] == "0,0.5,0,,1.25"


class TestVerify:
    def test_passing_suite(self, tmp_path, capsys):
        assert main(["verify", "completeness", "--out-dir", str(tmp_path)]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["passed"] and report["suite"] == "completeness"
        assert all(c["max_deviation"] <= c["tolerance"] for c in report["checks"])
        assert json.loads((tmp_path / "verify_completeness.json").read_text()) == report

    def test_bayes_suite(self, capsys):
        assert main(["verify", "bayes"]) == 0
        report = json.loads(capsys.readouterr().out)
        assert max(c["max_deviation"] for c in report["checks"]) <= 1e-12

    def test_unknown_suite(self, capsys):
        assert main(["verify", "telepathy"]) == 1
        assert json.loads(capsys.readouterr().err)["error"] == "suite"

    def test_failing_suite_exit_2(self, monkeypatch, capsys):
        import flashcollapse.cli as cli

        def failing(seed, threads):
            return {"suite": "completeness", "passed": False, "checks": [], "seconds": 0.0}

        monkeypatch.setitem(cli.SUITES, "completeness", failing)
        monkeypatch.setattr(cli, "execute_verify",
                            lambda suite, seed, threads: cli.SUITES[suite](seed, threads))
        assert main(["verify", "completeness"]) == 2


class TestFigure:
    def spec(self, **kw):
        base = dict(mu=points_for(10_000, 10.0, -5.0, 10.0), seed=11)
        base.update(kw)
        return FigureSpec(**base)

    def test_noise_std(self):
        data = emit_figure_data(self.spec(beta=2.0))
        noise = data.noisy[:, 2] - data.points[:, 2]
        assert abs(len(noise) - 10_000) <= 5 * 100
        assert np.std(noise, ddof=1) == pytest.approx((2 * 2.0) ** -0.5, rel=0.03)

    def test_infinite_beta_no_noise(self):
        data = emit_figure_data(self.spec(beta_infinite=True))
        assert np.array_equal(data.noisy, data.points)

    def test_tube_mean(self):
        s = self.spec(rho0=2.5)
        pts = emit_figure_data(s).points
        tube = np.abs(pts[:, 1] - s.velocity * pts[:, 0]) < 0.05
        assert tube.sum() > 30
        # inside the tube the blob is within 0.05^2 / 2 of its peak
        assert np.mean(pts[tube, 2]) == pytest.approx(2.5, rel=2e-3)

    def test_dense_panel_and_points_exact(self):
        s = self.spec(grid_nt=3, grid_nx=4)
        data = emit_figure_data(s)
        assert data.dense.shape == (12, 3)
        assert np.array_equal(data.points[:, 2], s.density(data.points[:, 0], data.points[:, 1]))

    def test_deterministic_and_cli(self, tmp_path):
        write(tmp_path / "fig.toml", "[figure]\nmu = 1.0\nseed = 4\ngrid_nt = 5\ngrid_nx = 5\n")
        assert main(["figure", str(tmp_path / "fig.toml"), "--out-dir", str(tmp_path / "a")]) == 0
        assert main(["figure", str(tmp_path / "fig.toml"), "--out-dir", str(tmp_path / "b")]) == 0
        a = (tmp_path / "a" / "figure.csv").read_text()
        assert a == (tmp_path / "b" / "figure.csv").read_text()
        assert a.startswith("panel,t,x,z\n")
        panels = {line.split(",")[0] for line in a.splitlines()[1:]}
        assert panels == {"1", "2", "3"}

    def test_invalid_spec(self, tmp_path, capsys):
        write(tmp_path / "fig.toml", "width = 0.0\n")
        assert main(["figure", str(tmp_path / "fig.toml"), "--out-dir", str(tmp_path)]) == 1
        write(tmp_path / "fig.toml", "widht = 1.0\n")
        assert main(["figure", str(tmp_path / "fig.toml"), "--out-dir", str(tmp_path)]) == 1

    def test_spec_validation(self):
        with pytest.raises(ConfigError):
            FigureSpec(mu=-1.0)
        with pytest.raises(ConfigError):
            FigureSpec(beta=0.0)


class TestSprinkle:
    def test_stdout(self, capsys):
        assert main(["sprinkle", "--sites", "3", "--steps", "2", "--mu", "2.0", "--seed", "1"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "event_id,t,x,site,z"
        for line in lines[1:]:
            eid, t, x, site, z = line.split(",")
            assert 0 <= float(t) <= 2 and 0 <= float(x) <= 3 and z == ""
            assert int(site) in (0, 1, 2)

    def test_file_and_determinism(self, tmp_path):
        args = ["sprinkle", "--sites", "4", "--steps", "3", "--mu", "1.5", "--seed", "2"]
        main(args + ["--out-dir", str(tmp_path / "a")])
        main(args + ["--out-dir", str(tmp_path / "b")])
        assert (tmp_path / "a" / "sprinkling.csv").read_bytes() == \
            (tmp_path / "b" / "sprinkling.csv").read_bytes()

    def test_invalid_region(self, capsys):
        assert main(["sprinkle", "--sites", "0", "--steps", "2", "--mu", "1.0"]) == 1
        assert main(["sprinkle", "--sites", "2", "--steps", "2", "--mu", "-1.0"]) == 1
