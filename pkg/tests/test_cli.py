import subprocess
import sys

import numpy as np
import pytest

from ofucontrol import cli
from ofucontrol.records import RunRecord

MINIMAL = """
[system]
d_x = 1
d_u = 1

[controller]
horizon = 64
"""

FULL = """
[experiment]
seed = 3
out_dir = runs

[system]
d_x = 1
d_u = 1
kappa = 1.0
gamma = 0.5
noise = scaled_rademacher

[cost]
family = norm_target
target_radius = 1.0

[controller]
horizon = 64
h = 2
alpha_scale = 0.05
budget = 80
batch = 32

[suite]
t_grid = 32, 64
seeds = 2
algorithms = ofu
comparator_budget = 40
"""


def write(tmp_path, text, name="exp.ini"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestParseConfig:
    def test_minimal_defaults(self, tmp_path):
        cfg = cli.parse_config(write(tmp_path, MINIMAL))
        assert cfg["system"]["noise"] == "scaled_rademacher"
        assert cfg["cost"]["family"] == "norm_target"
        assert cfg["controller"]["h"] == 0  # theory memory
        assert cfg["suite"]["t_grid"] == [256, 1024, 4096, 16384]

    def test_kappa_constraint_cited(self, tmp_path):
        text = MINIMAL.replace("d_u = 1", "d_u = 1\nkappa = 0.5")
        with pytest.raises(ValueError, match="kappa >= 1"):
            cli.parse_config(write(tmp_path, text))

    def test_unknown_key_rejected(self, tmp_path):
        text = MINIMAL.replace("d_u = 1", "d_u = 1\nmystery = 7")
        with pytest.raises(ValueError, match="system.mystery"):
            cli.parse_config(write(tmp_path, text))

    def test_unknown_section_rejected(self, tmp_path):
        path = write(tmp_path, MINIMAL + "\n[extra]\nfoo = 1\n")
        with pytest.raises(ValueError, match="extra"):
            cli.parse_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            cli.parse_config(tmp_path / "absent.ini")

    def test_missing_required_key(self, tmp_path):
        with pytest.raises(ValueError, match="controller.horizon"):
            cli.parse_config(write(tmp_path, "[system]\nd_x = 1\nd_u = 1\n"))

    def test_round_trip(self, tmp_path):
        cfg = cli.parse_config(write(tmp_path, FULL))
        out = tmp_path / "round.ini"
        cli.serialize_config(cfg, out)
        again = cli.parse_config(out)
        assert cfg == again

    def test_explicit_plant_matrices(self, tmp_path):
        text = MINIMAL.replace("d_u = 1", "d_u = 1\na_star = 0.4\nb_star = 1.0")
        cfg = cli.parse_config(write(tmp_path, text))
        sys_ = cli.build_system(cfg)
        assert sys_.a_star[0, 0] == pytest.approx(0.4)
        assert sys_.b_star[0, 0] == pytest.approx(1.0)

    def test_explicit_matrices_round_trip_through_config(self, tmp_path):
        from ofucontrol.bench import default_d2_system

        sys_ = default_d2_system()
        cfg = cli.parse_config(write(tmp_path, MINIMAL))
        cfg["system"].update(cli.system_to_config_values(sys_))
        out = tmp_path / "sys.ini"
        cli.serialize_config(cfg, out)
        rebuilt = cli.build_system(cli.parse_config(out))
        assert np.array_equal(rebuilt.a_star, sys_.a_star)
        assert np.array_equal(rebuilt.b_star, sys_.b_star)

    def test_explicit_matrices_must_pass_certificate(self, tmp_path):
        text = MINIMAL.replace("d_u = 1", "d_u = 1\na_star = 1.5\nb_star = 1.0")
        cfg = cli.parse_config(write(tmp_path, text))
        with pytest.raises(ValueError, match="stability certificate"):
            cli.build_system(cfg)

    def test_explicit_matrices_shape_validated(self, tmp_path):
        text = MINIMAL.replace("d_u = 1", "d_u = 1\na_star = 0.1, 0.2\nb_star = 1.0")
        with pytest.raises(ValueError, match="row-major"):
            cli.parse_config(write(tmp_path, text))


def small_record(t=3):
    zeros = np.zeros(t)
    return RunRecord(
        t=np.arange(1, t + 1),
        epoch=np.ones(t, dtype=int),
        subepoch=np.ones(t, dtype=int),
        cost=np.array([1.0, np.pi, 1e-7])[:t],
        action_norm=zeros.copy(),
        state_norm=zeros.copy(),
        noise_err=np.array([0.5, 0.25, 0.125])[:t],
        logdet_v=np.array([0.1, 0.2, 0.3])[:t],
        policy_switches=np.zeros(t, dtype=int),
        harmonic=zeros.copy(),
        noise_trace=np.zeros((t, 1)),
        z_trace=np.zeros((t, 2)),
        w_hat=np.zeros((t, 1)),
        states=np.zeros((t + 1, 1)),
        actions=np.zeros((t, 1)),
        epoch_starts=[1],
        subepoch_starts=[(1, 1, 1)],
    )


class TestRunCsv:
    def test_horizon_one_two_lines(self, tmp_path):
        rec = small_record(1)
        path = tmp_path / "run.csv"
        cli.write_run_csv(rec, path)
        lines = path.read_text().split("\n")
        assert len([ln for ln in lines if ln]) == 2
        assert lines[0].startswith("t,epoch,subepoch,cost,")

    def test_read_back_twelve_digits(self, tmp_path):
        rec = small_record(3)
        rec.comparator_costs = np.array([0.5, 0.25, 1.0 / 3.0])
        rec.cum_regret = np.cumsum(rec.cost - rec.comparator_costs)
        path = tmp_path / "run.csv"
        cli.write_run_csv(rec, path)
        back = cli.read_run_csv(path)
        for name, src in (("cost", rec.cost), ("cum_regret", rec.cum_regret),
                          ("noise_err_sq", rec.noise_err**2), ("logdet_v", rec.logdet_v)):
            assert np.allclose(back[name], src, rtol=1e-11, atol=1e-300)

    def test_missing_comparator_nan_sentinel(self, tmp_path):
        rec = small_record(2)
        path = tmp_path / "run.csv"
        cli.write_run_csv(rec, path)
        body = path.read_text().split("\n")[1]
        assert ",nan," in body

    def test_lf_line_endings(self, tmp_path):
        path = tmp_path / "run.csv"
        cli.write_run_csv(small_record(2), path)
        raw = path.read_bytes()
        assert b"\r" not in raw


class TestCommands:
    def test_run_command_exit_zero(self, tmp_path):
        cfg_path = write(tmp_path, FULL.replace("out_dir = runs", f"out_dir = {tmp_path}/out"))
        code = cli.main(["run", "--config", str(cfg_path), "--seeds", "1"])
        assert code == 0
        assert (tmp_path / "out" / "ofu_T64_seed3.csv").exists()

    def test_config_error_exit_two(self, tmp_path):
        bad = write(tmp_path, MINIMAL + "kappa = 0.2\n")
        assert cli.main(["run", "--config", str(bad)]) == 2

    def test_suite_writes_summary_and_timings(self, tmp_path):
        cfg_path = write(tmp_path, FULL.replace("out_dir = runs", f"out_dir = {tmp_path}/suite"))
        assert cli.main(["suite", "--config", str(cfg_path)]) == 0
        summary = (tmp_path / "suite" / "summary.csv").read_text()
        assert summary.splitlines()[0] == (
            "algo,T,seed,final_regret,regret_vs_etc_baseline,epochs,"
            "max_subepochs,noise_err_sum,harmonic_sum"
        )
        assert len(summary.splitlines()) == 1 + 4  # 2 T values x 2 seeds x 1 algo
        assert (tmp_path / "suite" / "timings.csv").exists()

    def test_sco_command(self, tmp_path):
        text = FULL.replace("out_dir = runs", f"out_dir = {tmp_path}/sco") + (
            "\n[sco]\nbudget = 10\nbatch = 8\nmc_samples = 300\nalpha_scale = 0.1\n"
        )
        cfg_path = write(tmp_path, text)
        assert cli.main(["sco", "--config", str(cfg_path), "--seeds", "1"]) == 0
        assert (tmp_path / "sco" / "sco_T64_seed3.csv").exists()

    def test_oracle_subcommand(self):
        assert cli.main(["oracle", "--instances", "2"]) == 0

    def test_console_script_entrypoint(self, tmp_path):
        cfg_path = write(tmp_path, FULL.replace("out_dir = runs", f"out_dir = {tmp_path}/o"))
        proc = subprocess.run(
            [sys.executable, "-m", "ofucontrol.cli", "run", "--config", str(cfg_path),
             "--seeds", "1"],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0, proc.stderr
