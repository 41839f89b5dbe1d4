"""Tests for config parsing, dataset plumbing, the experiment runner, and the CLI."""

import os

import numpy as np
import pytest

from hamcmc.cli import main
from hamcmc.config import ConfigError, parse_config
from hamcmc.data import DataError, ingest_movielens, split_train_test


MINIMAL = "experiment = synthetic_2d\nseed = 7\n"


class TestParseConfig:
    def test_minimal_with_defaults(self):
        cfg = parse_config(MINIMAL)
        assert cfg.experiment == "synthetic_2d"
        assert cfg.seed == 7
        assert cfg.sampler.m == 3
        assert cfg.sampler.exponent == 0.51
        assert cfg.sampler.schedule_kind == "polynomial"

    def test_m_of_one_rejected_with_message(self):
        with pytest.raises(ConfigError) as err:
            parse_config(MINIMAL + "sampler.m = 1\n")
        assert any("M must be chosen at least 2" in v for v in err.value.violations)

    def test_unknown_key_named(self):
        with pytest.raises(ConfigError) as err:
            parse_config(MINIMAL + "foo = 1\n")
        assert any("'foo'" in v for v in err.value.violations)

    def test_all_violations_collected(self):
        bad = "experiment = nope\nsampler.m = 99\nsampler.alpha = 2\nbar = 3\n"
        with pytest.raises(ConfigError) as err:
            parse_config(bad)
        text = "\n".join(err.value.violations)
        assert "experiment" in text and "sampler.m" in text
        assert "sampler.alpha" in text and "'bar'" in text
        assert "seed: missing" in text

    def test_type_mismatch(self):
        with pytest.raises(ConfigError) as err:
            parse_config(MINIMAL + "sampler.t = soon\n")
        assert any("cannot parse" in v for v in err.value.violations)

    def test_comments_and_blanks_ignored(self):
        cfg = parse_config("# a comment\n\n" + MINIMAL + "sampler.t = 100  # trailing\n")
        assert cfg.sampler.t == 100

    def test_per_sampler_override(self):
        cfg = parse_config(MINIMAL + "sampler.a_eps = 0.5\nsampler.sgld.a_eps = 0.1\n")
        assert cfg.sampler_value("sgld", "a_eps") == 0.1
        assert cfg.sampler_value("hamcmc", "a_eps") == 0.5

    def test_override_validated(self):
        with pytest.raises(ConfigError):
            parse_config(MINIMAL + "sampler.hamcmc.m = 1\n")
        with pytest.raises(ConfigError):
            parse_config(MINIMAL + "sampler.sgld.mirror = true\n")

    def test_duplicate_key_rejected(self):
        with pytest.raises(ConfigError) as err:
            parse_config(MINIMAL + "sampler.t = 1\nsampler.t = 2\n")
        assert any("duplicate" in v for v in err.value.violations)

    def test_distributed_samplers_only_for_mf(self):
        with pytest.raises(ConfigError):
            parse_config(MINIMAL + "sweep.samplers = dsgld\n")
        ok = parse_config(
            "experiment = mf_distributed\nseed = 1\nsweep.samplers = dsgld,dhamcmc\n"
        )
        assert ok.sweep.samplers == ("dsgld", "dhamcmc")

    def test_synthetic_2d_requires_d2(self):
        with pytest.raises(ConfigError) as err:
            parse_config(MINIMAL + "model.d = 5\n")
        assert any("d = 2" in v for v in err.value.violations)

    def test_echo_roundtrip(self):
        cfg = parse_config(MINIMAL + "sampler.t = 123\nsampler.sgld.a_eps = 0.25\n")
        cfg2 = parse_config("\n".join(cfg.echo_lines()))
        assert cfg2.sampler.t == 123
        assert cfg2.sampler_value("sgld", "a_eps") == 0.25


class TestIngestMovielens:
    def write(self, tmp_path, text):
        path = tmp_path / "ratings.dat"
        path.write_text(text)
        return str(path)

    def test_two_lines(self, tmp_path):
        path = self.write(tmp_path, "1::10::5::978300760\n2::20::3::978302109\n")
        triples, n_rows, n_cols, stats = ingest_movielens(path)
        assert n_rows == 2 and n_cols == 2  # two distinct movies, two users
        assert stats["n_ratings"] == 2
        # movie 10 -> row 0, movie 20 -> row 1; user 1 -> col 0, user 2 -> col 1
        assert (0, 0, 5.0) in triples and (1, 1, 3.0) in triples

    def test_dense_reindexing_sorted(self, tmp_path):
        path = self.write(tmp_path, "7::300::4::1\n7::5::2::2\n9::300::1::3\n")
        triples, n_rows, n_cols, _ = ingest_movielens(path)
        # movies {5, 300} -> {0, 1}; users {7, 9} -> {0, 1}
        assert n_rows == 2 and n_cols == 2
        assert (1, 0, 4.0) in triples and (0, 0, 2.0) in triples and (1, 1, 1.0) in triples

    def test_malformed_line_reports_number(self, tmp_path):
        path = self.write(tmp_path, "1::10::5::978300760\n2::20::3\n")
        with pytest.raises(DataError, match="line 2"):
            ingest_movielens(path)

    def test_non_numeric_field(self, tmp_path):
        path = self.write(tmp_path, "1::ten::5::978300760\n")
        with pytest.raises(DataError, match="line 1"):
            ingest_movielens(path)

    def test_empty_file(self, tmp_path):
        path = self.write(tmp_path, "")
        with pytest.raises(DataError, match="empty"):
            ingest_movielens(path)


class TestSplitTrainTest:
    def triples(self, n):
        return [(i, 0, float(i)) for i in range(n)]

    def test_sizes_and_disjointness(self):
        train, test = split_train_test(self.triples(1000), 0.1, seed=4)
        assert len(test) == 100
        assert len(train) == 900
        assert set(map(tuple, train)).isdisjoint(map(tuple, test))

    def test_deterministic(self):
        t1 = split_train_test(self.triples(50), 0.2, seed=9)
        t2 = split_train_test(self.triples(50), 0.2, seed=9)
        assert t1 == t2

    def test_union_is_input(self):
        data = self.triples(37)
        train, test = split_train_test(data, 0.25, seed=1)
        assert sorted(train + test) == sorted(data)

    def test_degenerate_fraction(self):
        with pytest.raises(DataError):
            split_train_test(self.triples(10), 0.01, seed=0)
        with pytest.raises(DataError):
            split_train_test(self.triples(10), 1.5, seed=0)


def write_cfg(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


SMALL_2D = """
experiment = synthetic_2d
seed = 11
model.n = 100
sampler.t = 60
sampler.burn_in = 30
sampler.n_omega = 5
sampler.a_eps = 0.001
sampler.lam = 10
sweep.samplers = sgld,hamcmc
output.figures = false
"""

SMALL_BIAS = """
experiment = bias_mse
seed = 12
model.d = 2
model.n = 80
sampler.n_omega = 4
sampler.a_eps = 0.001
sweep.samplers = sgld,psgld
sweep.t_values = 30,60
sweep.replicates = 2
output.figures = false
"""


class TestRunExperiment:
    def test_synthetic_2d_row_counts(self, tmp_path):
        from hamcmc.config import parse_config
        from hamcmc.experiments import run_experiment

        cfg = parse_config(SMALL_2D)
        out = tmp_path / "out"
        run_experiment(cfg, str(out))
        for sampler in ("sgld", "hamcmc"):
            lines = [
                l for l in (out / f"samples_{sampler}.csv").read_text().splitlines()
                if l and not l.startswith("#")
            ]
            assert len(lines) - 1 == 60 - 30  # header + T - burn_in rows

    def test_bias_mse_row_counts(self, tmp_path):
        from hamcmc.config import parse_config
        from hamcmc.experiments import run_experiment

        cfg = parse_config(SMALL_BIAS)
        out = tmp_path / "out"
        run_experiment(cfg, str(out))
        lines = [
            l for l in (out / "bias_mse.csv").read_text().splitlines()
            if l and not l.startswith("#")
        ]
        rows = lines[1:]
        # per (sampler, T): replicates sq_error rows + d abs_bias + bias_norm + mse
        expected = 2 * 2 * (2 + 2 + 2)
        assert len(rows) == expected
        per_rep = [r for r in rows if r.split(",")[2] not in ("-1",)]
        assert len(per_rep) == 2 * 2 * 2

    def test_rerun_byte_identical(self, tmp_path):
        from hamcmc.config import parse_config
        from hamcmc.experiments import run_experiment

        cfg = parse_config(SMALL_2D)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        run_experiment(cfg, str(out1))
        run_experiment(cfg, str(out2))
        for name in sorted(os.listdir(out1)):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name

    def test_all_csv_cells_finite(self, tmp_path):
        from hamcmc.config import parse_config
        from hamcmc.experiments import run_experiment

        cfg = parse_config(SMALL_BIAS)
        out = tmp_path / "out"
        run_experiment(cfg, str(out))
        for name in os.listdir(out):
            if not name.endswith(".csv"):
                continue
            body = (out / name).read_text().splitlines()
            for line in body:
                if line.startswith("#") or not line:
                    continue
                for cell in line.split(","):
                    if cell.replace(".", "").replace("-", "").replace("e", "").isdigit():
                        assert np.isfinite(float(cell))

    def test_nonfinite_cell_rejected(self):
        from hamcmc.experiments import ExperimentError, write_csv

        with pytest.raises(ExperimentError):
            write_csv("/tmp/_hamcmc_nan_test.csv", ["x"], [[float("nan")]], [])


class TestCliMain:
    def test_success_exit_zero(self, tmp_path, capsys):
        cfg_path = write_cfg(tmp_path, SMALL_2D)
        out = tmp_path / "out"
        assert main(["--config", cfg_path, "--out", str(out)]) == 0
        printed = capsys.readouterr().out.splitlines()
        assert any("samples_sgld.csv" in line for line in printed)

    def test_config_error_exit_two(self, tmp_path, capsys):
        cfg_path = write_cfg(tmp_path, "experiment = nope\n")
        assert main(["--config", cfg_path, "--out", str(tmp_path / "o")]) == 2
        err = capsys.readouterr().err
        assert "config error" in err

    def test_missing_config_file_exit_two(self, tmp_path):
        assert main(["--config", str(tmp_path / "absent.cfg"), "--out", str(tmp_path)]) == 2

    def test_seed_override_changes_output(self, tmp_path):
        cfg_path = write_cfg(tmp_path, SMALL_2D)
        out1, out2, out3 = (str(tmp_path / d) for d in ("o1", "o2", "o3"))
        assert main(["--config", cfg_path, "--out", out1]) == 0
        assert main(["--config", cfg_path, "--out", out2, "--seed", "999"]) == 0
        assert main(["--config", cfg_path, "--out", out3, "--seed", "999"]) == 0
        a = open(os.path.join(out1, "samples_sgld.csv")).read()
        b = open(os.path.join(out2, "samples_sgld.csv")).read()
        c = open(os.path.join(out3, "samples_sgld.csv")).read()
        assert a != b and b == c

    def test_missing_ratings_file_exit_three(self, tmp_path):
        cfg_path = write_cfg(
            tmp_path,
            "experiment = mf_distributed\nseed = 1\n"
            "model.movielens_path = /nonexistent/ratings.dat\n"
            "dist.rounds = 5\noutput.figures = false\n",
        )
        assert main(["--config", cfg_path, "--out", str(tmp_path / "o")]) == 3

    def test_threads_flag(self, tmp_path):
        cfg_path = write_cfg(tmp_path, SMALL_2D)
        out1 = str(tmp_path / "t1")
        out2 = str(tmp_path / "t2")
        assert main(["--config", cfg_path, "--out", out1, "--threads", "2"]) == 0
        assert main(["--config", cfg_path, "--out", out2, "--threads", "1"]) == 0
        a = open(os.path.join(out1, "samples_hamcmc.csv")).read()
        b = open(os.path.join(out2, "samples_hamcmc.csv")).read()
        assert a == b
