import csv
import json
import math
from pathlib import Path

import pytest

from cellchain.cli import main

BASE_CFG = """\
n_particles = 2
epsilon = 0.02
lambda = 1.0
energies = 0.5, 2.0
seed = 11
replicas = 40
horizon_macro = 1.0
"""


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "chain.cfg"
    path.write_text(BASE_CFG)
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestSimulate:
    def test_outputs_and_manifest(self, cfg_file, tmp_path):
        out = tmp_path / "sim"
        assert main(["simulate", "--config", str(cfg_file), "--out", str(out)]) == 0
        rows = read_csv(out / "paths.csv")
        assert rows[0] == ["replica", "time", "e_1", "e_2"]
        assert rows[1] == ["0", "0.0", "0.5", "2.0"]
        crows = read_csv(out / "collisions.csv")
        assert crows[0] == ["replica", "clock", "time", "k", "e_before_k", "e_before_k1"]
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "simulate"
        assert set(manifest["outputs"]) == {"paths.csv", "collisions.csv"}
        assert manifest["config"]["epsilon"] == 0.02

    def test_rerun_is_byte_identical(self, cfg_file, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(["simulate", "--config", str(cfg_file), "--out", str(out1)]) == 0
        assert main(["simulate", "--config", str(cfg_file), "--out", str(out2)]) == 0
        assert (out1 / "paths.csv").read_bytes() == (out2 / "paths.csv").read_bytes()
        assert (out1 / "collisions.csv").read_bytes() == (out2 / "collisions.csv").read_bytes()

    def test_missing_key_names_it(self, tmp_path, capsys):
        cfg = tmp_path / "broken.cfg"
        cfg.write_text("n_particles = 2\nlambda = 1\nenergies = 0.5, 2\n")
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
        assert "epsilon" in capsys.readouterr().err

    def test_epsilon_above_half_rejected(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text(BASE_CFG.replace("epsilon = 0.02", "epsilon = 0.6"))
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2

    def test_failure_leaves_no_partial_outputs(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text(BASE_CFG.replace("epsilon = 0.02", "epsilon = 0.0"))
        out = tmp_path / "o"
        assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 2
        assert not list(out.glob("*.csv")) if out.exists() else True


class TestLimit:
    def test_two_state_curve(self, cfg_file, tmp_path):
        out = tmp_path / "lim"
        assert main(["limit", "--config", str(cfg_file), "--times", "0.5", "--out", str(out)]) == 0
        rows = read_csv(out / "distribution_t0.5.csv")
        assert rows[0] == ["state_index", "e_1", "e_2", "probability"]
        probs = {(r[1], r[2]): float(r[3]) for r in rows[1:]}
        exact = (1.0 - math.exp(-1.0)) / 2.0
        assert probs[("2.0", "0.5")] == pytest.approx(exact, abs=1e-10)

    def test_time_zero_point_mass(self, cfg_file, tmp_path):
        out = tmp_path / "lim0"
        assert main(["limit", "--config", str(cfg_file), "--times", "0", "--out", str(out)]) == 0
        rows = read_csv(out / "distribution_t0.csv")
        probs = {(r[1], r[2]): float(r[3]) for r in rows[1:]}
        assert probs[("0.5", "2.0")] == 1.0
        assert probs[("2.0", "0.5")] == 0.0


class TestCompare:
    def test_equal_energies_tv_zero(self, tmp_path):
        cfg = tmp_path / "eq.cfg"
        cfg.write_text(BASE_CFG.replace("energies = 0.5, 2.0", "energies = 1.0, 1.0"))
        out = tmp_path / "cmp"
        code = main(
            [
                "compare", "--config", str(cfg), "--times", "0,0.5",
                "--epsilon-ladder", "0.08,0.02", "--replicas", "20", "--out", str(out),
            ]
        )
        assert code == 0
        rows = read_csv(out / "compare.csv")
        assert rows[0] == ["epsilon", "t", "tv", "ci"]
        assert all(float(r[2]) == 0.0 for r in rows[1:])

    def test_time_zero_tv_zero(self, cfg_file, tmp_path):
        out = tmp_path / "cmp0"
        code = main(
            [
                "compare", "--config", str(cfg_file), "--times", "0",
                "--epsilon-ladder", "0.05", "--replicas", "30", "--out", str(out),
            ]
        )
        assert code == 0
        rows = read_csv(out / "compare.csv")
        assert float(rows[1][2]) == 0.0


class TestKernelCommand:
    def test_rejects_zero_time(self, cfg_file, tmp_path):
        assert (
            main(
                ["kernel", "--config", str(cfg_file), "--q0", "0.3", "--t", "0",
                 "--out", str(tmp_path / "k")]
            )
            == 2
        )

    def test_schema_and_atom(self, cfg_file, tmp_path):
        out = tmp_path / "k"
        code = main(
            ["kernel", "--config", str(cfg_file), "--q0", "0.3", "--t", "1.0",
             "--grid", "5", "--out", str(out)]
        )
        assert code == 0
        rows = read_csv(out / "kernel.csv")
        assert rows[0] == ["q", "p_sign", "q_prime", "p_prime_sign", "t",
                           "atom_weight", "smooth_density"]
        assert float(rows[1][5]) == pytest.approx(math.exp(-1.0))
        assert len(rows) == 1 + 2 * 5


class TestDoeblinCommand:
    def test_alpha_positive(self, cfg_file, tmp_path):
        out = tmp_path / "d"
        code = main(
            ["doeblin", "--config", str(cfg_file), "--t0", "2.0", "--resolution", "9",
             "--speeds", "1.0", "--mixing-times", "1,2,4", "--out", str(out)]
        )
        assert code == 0
        rows = read_csv(out / "doeblin.csv")
        assert rows[0] == ["lambda", "speed", "t0", "grid_resolution", "alpha", "decay_rate"]
        assert float(rows[1][4]) > 0.0
        assert float(rows[1][5]) > 0.0


class TestRatesCommand:
    def test_sparse_data_refused(self, cfg_file, tmp_path):
        code = main(
            ["rates", "--config", str(cfg_file), "--epsilon-ladder", "0.02",
             "--replicas", "30", "--out", str(tmp_path / "r")]
        )
        assert code == 3

    def test_small_fit_runs(self, cfg_file, tmp_path):
        out = tmp_path / "r"
        code = main(
            ["rates", "--config", str(cfg_file), "--epsilon-ladder", "0.08",
             "--replicas", "400", "--out", str(out)]
        )
        assert code == 0
        rows = read_csv(out / "rates.csv")
        assert rows[0] == ["epsilon", "lambda", "rate", "ci_lo", "ci_hi"]
        rate = float(rows[1][2])
        assert 0.5 < rate < 1.6


class TestRecollisionsCommand:
    def test_schema(self, cfg_file, tmp_path):
        out = tmp_path / "rc"
        code = main(
            ["recollisions", "--config", str(cfg_file), "--epsilon-ladder", "0.08",
             "--window", "4.0", "--replicas", "200", "--out", str(out)]
        )
        assert code == 0
        rows = read_csv(out / "recollisions.csv")
        assert rows[0] == ["epsilon", "ratio_label", "fraction", "ci"]
        assert rows[1][1] == "2"  # speed ratio sqrt(2*2)/sqrt(2*0.5)


class TestParser:
    def test_unknown_flag_exits_2(self, cfg_file, capsys):
        assert main(["simulate", "--config", str(cfg_file), "--frobnicate"]) == 2
        capsys.readouterr()

    def test_version_flag(self, capsys):
        assert main(["--version"]) == 0
        capsys.readouterr()
