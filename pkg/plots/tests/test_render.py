from pathlib import Path

import numpy as np
import pytest

from ofuplots import PlotSpec, fit_loglog_slope, read_run_file, render
from ofuplots.render import RUN_COLUMNS, SUMMARY_COLUMNS

DATA = Path(__file__).parent / "data"


def synth_summary(path, coefficient=3.0, exponent=0.5, horizons=(256, 1024, 4096, 16384)):
    lines = [",".join(SUMMARY_COLUMNS)]
    for t in horizons:
        for seed in range(1, 6):
            regret = coefficient * t**exponent
            lines.append(f"ofu,{t},{seed},{regret:.12g},nan,3,4,1.0,2.0")
    path.write_text("\n".join(lines) + "\n")


class TestSlopeFit:
    def test_recovers_half_exponent(self, tmp_path):
        path = tmp_path / "summary.csv"
        synth_summary(path, exponent=0.5)
        out = render(PlotSpec(str(path), str(tmp_path / "fig.png"), "loglog_scaling"))
        assert Path(out).stat().st_size > 0
        horizons = np.array([256, 1024, 4096, 16384])
        slope, _ = fit_loglog_slope(horizons, 3.0 * horizons**0.5)
        assert abs(slope - 0.5) <= 0.02

    def test_recovers_other_exponents(self):
        horizons = np.array([128, 512, 2048, 8192])
        for exp in (0.35, 0.66, 1.0):
            slope, _ = fit_loglog_slope(horizons, 1.7 * horizons**exp)
            assert abs(slope - exp) <= 0.02


class TestRender:
    def test_regret_curve_from_real_suite_output(self, tmp_path):
        out = render(PlotSpec(str(DATA / "ofu_T256_seed*.csv"),
                              str(tmp_path / "curve.png"), "regret_curve"))
        assert Path(out).stat().st_size > 0

    def test_loglog_from_real_summary(self, tmp_path):
        out = render(PlotSpec(str(DATA / "summary.csv"),
                              str(tmp_path / "scaling.png"), "loglog_scaling"))
        assert Path(out).stat().st_size > 0

    def test_epoch_timeline(self, tmp_path):
        out = render(PlotSpec(str(DATA / "ofu_T256_seed2.csv"),
                              str(tmp_path / "timeline.png"), "epoch_timeline"))
        assert Path(out).stat().st_size > 0

    def test_empty_glob_raises(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="no inputs"):
            render(PlotSpec(str(tmp_path / "nothing*.csv"), str(tmp_path / "x.png"),
                            "regret_curve"))

    def test_malformed_row_names_line(self, tmp_path):
        bad = tmp_path / "bad.csv"
        good = (DATA / "ofu_T64_seed2.csv").read_text().splitlines()
        good[3] = "oops"
        bad.write_text("\n".join(good) + "\n")
        with pytest.raises(ValueError, match="row 4"):
            render(PlotSpec(str(bad), str(tmp_path / "x.png"), "regret_curve"))

    def test_unknown_kind_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="unknown plot kind"):
            PlotSpec("*.csv", "x.png", "pie_chart")

    def test_deterministic_bytes(self, tmp_path):
        spec1 = PlotSpec(str(DATA / "ofu_T128_seed*.csv"), str(tmp_path / "a.png"),
                         "regret_curve")
        spec2 = PlotSpec(str(DATA / "ofu_T128_seed*.csv"), str(tmp_path / "b.png"),
                         "regret_curve")
        render(spec1)
        render(spec2)
        assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()


class TestReaders:
    def test_run_reader_columns(self):
        data = read_run_file(str(DATA / "ofu_T64_seed2.csv"))
        assert set(data) == set(RUN_COLUMNS)
        assert data["t"].shape == (64,)
        assert np.all(np.diff(data["t"]) == 1)

    def test_run_reader_rejects_header_drift(self, tmp_path):
        bad = tmp_path / "drift.csv"
        text = (DATA / "ofu_T64_seed2.csv").read_text().splitlines()
        text[0] = text[0].replace("cum_regret", "regret")
        bad.write_text("\n".join(text) + "\n")
        with pytest.raises(ValueError, match="schema"):
            read_run_file(str(bad))


def test_cli_roundtrip(tmp_path):
    from ofuplots.cli import main

    out = tmp_path / "fig.png"
    code = main(["--in", str(DATA / "summary.csv"), "--out", str(out),
                 "--kind", "loglog_scaling"])
    assert code == 0 and out.stat().st_size > 0
    assert main(["--in", str(tmp_path / "none*.csv"), "--out", str(out),
                 "--kind", "regret_curve"]) == 2
