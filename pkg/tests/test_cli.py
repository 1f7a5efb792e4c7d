import csv
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmplab import csvlog, gradcheck
from cmplab.cli import main, resolve_arm
from cmplab.config import (
    PRESETS,
    ConfigError,
    RunConfig,
    derive_seeds,
    parse_config,
    render_config,
    splitmix64,
)

TINY = [
    "--env", "quadratic-bandit", "--iterations", "2",
    "--set", "exploration_steps=8", "--set", "eval_steps=4", "--set", "exploit_update_times=2",
    "--set", "explore_update_times=2", "--set", "metaq_update_times=1", "--set", "batch_size=4",
    "--set", "hidden_sizes=8,8",
]


def read(path):
    with open(path, "rb") as fh:
        return fh.read()


class TestConfig:
    def test_defaults(self):
        cfg = parse_config()
        assert (cfg.exploration_steps, cfg.eval_steps, cfg.exploit_update_times, cfg.explore_update_times) == (
            100, 200, 50, 50)
        assert cfg.beta == 1.0 and cfg.algo == "cmp" and cfg.hidden_sizes == (64, 64)

    def test_negative_beta(self):
        with pytest.raises(ConfigError, match="beta"):
            parse_config(overrides={"beta": -1.0})

    def test_unknown_key(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("no_such_key = 3\n")
        with pytest.raises(ConfigError, match="no_such_key"):
            parse_config(str(p))

    def test_precedence(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("# comment\npreset = large\nbeta = 0.5\neval_steps = 400\n")
        cfg = parse_config(str(p), {"beta": 2.0})
        assert cfg.beta == 2.0  # flag beats file
        assert cfg.eval_steps == 400  # file beats preset
        assert cfg.exploit_update_times == PRESETS["large"]["exploit_update_times"]  # preset beats default

    def test_bad_preset(self):
        with pytest.raises(ConfigError, match="preset"):
            parse_config(overrides={"preset": "huge"})

    @settings(max_examples=40, deadline=None)
    @given(
        beta=st.floats(0, 10, allow_nan=False),
        lr=st.floats(0, 1, allow_nan=False),
        hidden=st.lists(st.integers(1, 128), min_size=1, max_size=3),
        seed=st.integers(0, 2**31),
        ln=st.booleans(),
        clip=st.one_of(st.none(), st.floats(1e-3, 100)),
    )
    def test_render_parse_round_trip(self, tmp_path_factory, beta, lr, hidden, seed, ln, clip):
        cfg = RunConfig(beta=beta, actor_lr=lr, hidden_sizes=tuple(hidden), seed=seed, layer_norm=ln, grad_clip=clip)
        p = tmp_path_factory.mktemp("cfg") / "c.cfg"
        p.write_text(render_config(cfg))
        assert parse_config(str(p)) == cfg


class TestSeeds:
    def test_splitmix_reference(self):
        # published first outputs of splitmix64 seeded with 0
        state, a = splitmix64(0)
        _, b = splitmix64(state)
        assert (a, b) == (0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4)

    def test_streams_distinct_and_stable(self):
        s = derive_seeds(0)
        assert len(set(s.values())) == 4
        assert s == derive_seeds(0) and s != derive_seeds(1)


class TestArms:
    def test_names(self):
        assert resolve_arm("ddpg") == ("ddpg", None)
        assert resolve_arm("cmp-0.5") == ("cmp", 0.5)
        with pytest.raises(ConfigError):
            resolve_arm("sac")


class TestRun:
    def test_writes_csv_with_one_row_per_iteration(self, tmp_path, capsys):
        assert main(["run", "--out", str(tmp_path), "--seed", "3", *TINY]) == 0
        path = capsys.readouterr().out.strip()
        assert path == os.path.join(str(tmp_path), "run_cmp_quadratic-bandit_seed3.csv")
        lines = read(path).decode().splitlines()
        assert len(lines) == 3 and lines[0] == ",".join(csvlog.COLUMNS)
        assert lines[1].split(",")[-1] == "NA"

    def test_byte_identical_rerun(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["run", "--out", str(a), *TINY]) == 0
        assert main(["run", "--out", str(b), *TINY]) == 0
        name = "run_cmp_quadratic-bandit_seed0.csv"
        assert read(a / name) == read(b / name)

    def test_ddpg_meta_columns_are_na(self, tmp_path):
        assert main(["run", "--out", str(tmp_path), "--algo", "ddpg", *TINY]) == 0
        rows = csvlog.read_run_csv(str(tmp_path / "run_ddpg_quadratic-bandit_seed0.csv"))
        for r in rows:
            assert all(r[k] is None for k in ("cv_gain", "cv_cost", "advantage", "metaq_loss", "explore_loss"))
            assert r["eval_return"] is not None

    def test_env_var_output_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv("CMP_OUT_DIR", str(tmp_path / "env"))
        assert main(["run", *TINY]) == 0
        assert (tmp_path / "env" / "run_cmp_quadratic-bandit_seed0.csv").exists()

    def test_config_error_exit(self, tmp_path):
        assert main(["run", "--out", str(tmp_path), "--beta", "-1", *TINY]) == 1

    def test_io_error_exit(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert main(["run", "--out", str(blocker / "sub"), *TINY]) == 3

    def test_missing_config_file_is_io_error(self, tmp_path):
        assert main(["run", "--config", str(tmp_path / "missing.cfg"), *TINY]) == 3


class TestSweep:
    def test_single_cell(self, tmp_path):
        assert main(["sweep", "--out", str(tmp_path), "--seeds", "0", "--algos", "cmp", *TINY]) == 0
        with open(tmp_path / "sweep_summary.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 1 and rows[0]["seeds"] == "1" and rows[0]["final_std"] == "0.0"

    def test_summary_matches_hand_average(self, tmp_path):
        args = ["sweep", "--out", str(tmp_path), "--seeds", "0,1", "--algos", "ddpg,cmp-0.5", "--set",
                "summary_last_k=1", *TINY]
        assert main(args) == 0
        with open(tmp_path / "sweep_summary.csv") as fh:
            rows = {r["preset"]: r for r in csv.DictReader(fh)}
        for arm, algo in (("ddpg", "ddpg"), ("cmp-0.5", "cmp")):
            finals = []
            for seed in (0, 1):
                recs = csvlog.read_run_csv(str(tmp_path / arm / f"run_{algo}_quadratic-bandit_seed{seed}.csv"))
                finals.append(recs[-1]["eval_return"])
            assert float(rows[arm]["final_mean"]) == pytest.approx(np.mean(finals), abs=1e-12)
            assert float(rows[arm]["final_std"]) == pytest.approx(np.std(finals, ddof=1), abs=1e-12)
        assert rows["cmp-0.5"]["beta"] == "0.5"

    def test_rerun_gives_identical_summary(self, tmp_path):
        for d in ("a", "b"):
            assert main(["sweep", "--out", str(tmp_path / d), "--seeds", "0,1", "--algos", "ma2c", *TINY]) == 0
        assert read(tmp_path / "a" / "sweep_summary.csv") == read(tmp_path / "b" / "sweep_summary.csv")

    def test_bad_seeds(self, tmp_path):
        assert main(["sweep", "--out", str(tmp_path), "--seeds", "x", *TINY]) == 1


class TestGradcheck:
    def test_corrupted_gradient_detected(self):
        def corrupt(name, grads):
            if name == "critic":
                grads = [g.copy() for g in grads]
                grads[0] *= 1.01
            return grads

        errors = gradcheck.check_all(0, corrupt, hidden=(8, 8))
        assert errors["critic"] > gradcheck.TOLERANCE
        assert all(v < gradcheck.TOLERANCE for k, v in errors.items() if k != "critic")

    def test_run_reports_failure(self, monkeypatch, capsys):
        monkeypatch.setattr(gradcheck, "check_all", lambda seed, corrupt=None: {k: 0.0 if k != "actor" else 1.0
                                                                               for k in gradcheck.CHECKS})
        assert gradcheck.run(0) != 0
        assert "FAIL" in capsys.readouterr().out

    @pytest.mark.slow
    def test_cli_passes(self, capsys):
        assert main(["gradcheck"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert [ln.split()[0] for ln in lines] == list(gradcheck.CHECKS)
