import json
import os
import subprocess
import sys

import numpy as np
import pytest

from rejaug.cli import EXIT_IO, EXIT_NUMERICAL, EXIT_OK, main
from rejaug.errors import ConfigError
from rejaug.ingest import (matrices_from_rows, matrices_to_rows, matrix_header,
                           read_numeric_csv, write_numeric_csv)
from rejaug.manifest import load_config, manifest_text, validate_config
from rejaug.rng import chain_seed, stream
from rejaug.stiefel import sample_haar_uniform


def write(path, text):
    path.write_text(text)
    return str(path)


def read(path):
    with open(path) as fh:
        return fh.read()


TOY_INI = """[run]
model = toy-discrete
seed = 5
chains = 3
data = {data}

[sampler]
n_iter = 200
burn_in = 10
prior_a = 2
prior_b = 2
"""


@pytest.fixture
def toy_config(tmp_path):
    data = write(tmp_path / "bits.csv", "x\n" + "\n".join(["0", "1", "1", "0", "1"] * 4) + "\n")
    return write(tmp_path / "toy.ini", TOY_INI.format(data=data))


class TestManifest:
    def test_defaults_filled(self):
        cfg = validate_config({"run": {"model": "langevin"}})
        assert cfg["sampler"]["method"] == "hmc"
        assert cfg["model"]["layout"] == "column-major"
        assert cfg["run"]["chains"] == 1

    def test_seed_override(self):
        assert validate_config({"run": {"model": "gpds", "seed": 3}}, seed=9)["run"]["seed"] == 9

    @pytest.mark.parametrize("raw,match", [
        ({"run": {"model": "nope"}}, "model"),
        ({"run": {"model": "gpds"}, "extra": {}}, "unknown section"),
        ({"run": {"model": "gpds"}, "sampler": {"n_iters": 5}}, "unknown key"),
        ({"run": {"model": "gpds"}, "sampler": {"n_iter": "many"}}, "n_iter"),
        ({"run": {"model": "gpds", "seed": -1}}, "seed"),
        ({"run": {"model": "gpds", "chains": 0}}, "chains"),
        ({"run": {"model": "langevin"}, "model": {"p": 3, "kappa": [1, 2]}}, "kappa"),
        ({"run": {"model": "langevin"}, "model": {"layout": "diagonal"}}, "layout"),
        ({"run": {"model": "langevin"}, "sampler": {"method": "gibbs"}}, "method"),
        ({"run": {"model": "gpds"}, "sampler": {"nig": [1, 2]}}, "nig"),
        ({"run": {"model": "trunc-mixture", "data_lower": [0, 0]}}, "go together"),
        ({"run": {"model": "toy-discrete"}, "sampler": {"adapt": "maybe"}}, "unknown key"),
        ({"run": {"model": "langevin"}, "sampler": {"adapt": "maybe"}}, "boolean"),
    ])
    def test_rejections(self, raw, match):
        with pytest.raises(ConfigError, match=match):
            validate_config(raw)

    def test_ini_and_json_agree(self, tmp_path):
        ini = write(tmp_path / "a.ini", "[run]\nmodel = langevin\nseed = 4\n\n"
                                        "[model]\nkappa = 3, 1\nd = 4\n")
        js = write(tmp_path / "a.json", json.dumps(
            {"run": {"model": "langevin", "seed": 4}, "model": {"kappa": [3, 1], "d": 4}}))
        assert load_config(ini) == load_config(js)

    def test_manifest_round_trip(self, tmp_path):
        cfg = validate_config({"run": {"model": "gpds", "seed": 7}})
        text = manifest_text(cfg, {"chain_seeds": [1, 2], "package": "x"})
        path = write(tmp_path / "m.json", text)
        assert load_config(path) == cfg

    def test_bad_json_reports_line(self, tmp_path):
        path = write(tmp_path / "bad.json", '{\n "run": {\n  "model": }\n}')
        with pytest.raises(ConfigError, match="line 3"):
            load_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "none.ini")


class TestIngest:
    def test_header_comments_blank_lines(self, tmp_path):
        path = write(tmp_path / "d.csv", "# note\na,b\n1,2\n\n3,4.5\n")
        assert np.array_equal(read_numeric_csv(path), [[1, 2], [3, 4.5]])

    @pytest.mark.parametrize("text,match", [
        ("1,2\n3\n", "line 2: expected 2 fields"),
        ("1,2\n3,x\n", "line 2, column 2: non-numeric"),
        ("1,2\nnan,3\n", "line 2, column 1: non-finite"),
        ("a,b\n", "no data rows"),
    ])
    def test_errors_name_line_and_column(self, tmp_path, text, match):
        path = write(tmp_path / "d.csv", text)
        with pytest.raises(ConfigError, match=match):
            read_numeric_csv(path)

    def test_expected_width(self, tmp_path):
        path = write(tmp_path / "d.csv", "1,2,3\n")
        with pytest.raises(ConfigError, match="expected 2 fields"):
            read_numeric_csv(path, 2)

    @pytest.mark.parametrize("layout", ["column-major", "row-major"])
    def test_matrix_layout_round_trip(self, layout):
        X = sample_haar_uniform(4, 2, np.random.default_rng(0), 5)
        rows = matrices_to_rows(X, layout)
        assert np.array_equal(matrices_from_rows(rows, 4, 2, layout), X)
        assert len(matrix_header(4, 2, layout)) == 8

    def test_column_major_order(self):
        X = np.arange(6.0).reshape(1, 3, 2)
        assert list(matrices_to_rows(X)[0]) == [0, 2, 4, 1, 3, 5]
        assert matrix_header(3, 2)[:2] == ["X[1,1]", "X[2,1]"]
        assert list(matrices_to_rows(X, "row-major")[0]) == [0, 1, 2, 3, 4, 5]

    def test_write_is_exact(self, tmp_path):
        a = np.random.default_rng(1).standard_normal((4, 3))
        path = tmp_path / "o.csv"
        write_numeric_csv(path, a, ["a", "b", "c"])
        assert np.array_equal(read_numeric_csv(path), a)


class TestStreams:
    def test_streams_independent_of_order(self):
        a = stream(3, 1).random(5)
        stream(3, 0).random(100)
        assert np.array_equal(stream(3, 1).random(5), a)

    def test_distinct_chain_seeds(self):
        seeds = {chain_seed(5, c) for c in range(3)}
        assert len(seeds) == 3


class TestCommands:
    def test_fit_determinism_and_threads(self, toy_config, tmp_path):
        outs = []
        for threads in (1, 4, 1):
            out = tmp_path / f"run{len(outs)}"
            assert main(["fit", "--config", toy_config, "--out", str(out),
                         "--threads", str(threads)]) == EXIT_OK
            outs.append(out)
        for c in range(3):
            texts = [read(o / f"chain{c}.trace.csv") for o in outs]
            assert texts[0] == texts[1] == texts[2]
        # chains differ from each other
        assert read(outs[0] / "chain0.trace.csv") != read(outs[0] / "chain1.trace.csv")
        man = json.loads(read(outs[0] / "manifest.json"))
        assert len(set(man["chain_seeds"])) == 3
        assert os.path.isabs(man["run"]["data"])
        assert (outs[0] / "chain0.seconds.csv").exists()

    def test_manifest_reproduces_run(self, toy_config, tmp_path):
        assert main(["fit", "--config", toy_config, "--out", str(tmp_path / "a")]) == EXIT_OK
        man = str(tmp_path / "a" / "manifest.json")
        assert main(["fit", "--config", man, "--out", str(tmp_path / "b")]) == EXIT_OK
        assert read(tmp_path / "a" / "chain2.trace.csv") == read(tmp_path / "b" / "chain2.trace.csv")

    def test_seed_changes_output(self, toy_config, tmp_path):
        main(["fit", "--config", toy_config, "--out", str(tmp_path / "a")])
        main(["fit", "--config", toy_config, "--out", str(tmp_path / "b"), "--seed", "6"])
        assert read(tmp_path / "a" / "chain0.trace.csv") != read(tmp_path / "b" / "chain0.trace.csv")

    @pytest.mark.parametrize("model,extra", [
        ("langevin", "[model]\nd = 3\np = 2\nkappa = 4, 2\nn_samples = 50\n"),
        ("gpds", "[model]\nn_samples = 30\n"),
        ("toy-discrete", "[model]\ntheta = 0.3\nn_samples = 100\n"),
        ("trunc-mixture", "[model]\nK = 5\nn_samples = 40\n"),
    ])
    def test_sample_prior(self, tmp_path, model, extra):
        cfg = write(tmp_path / "c.ini", f"[run]\nmodel = {model}\nseed = 1\n\n{extra}")
        out = tmp_path / "out"
        assert main(["sample-prior", "--config", cfg, "--out", str(out)]) == EXIT_OK
        summary = json.loads(read(out / "summary.json"))
        assert 0 < summary["acceptance_rate"] <= 1
        data = read_numeric_csv(out / "samples.csv")
        assert len(data) == summary["n_samples"]
        assert (out / "manifest.json").exists()

    def test_langevin_fit_from_sampled_data(self, tmp_path):
        cfg = write(tmp_path / "c.ini", "[run]\nmodel = langevin\nseed = 2\n\n"
                                        "[model]\nd = 3\np = 2\nkappa = 4, 2\nn_samples = 20\n")
        main(["sample-prior", "--config", cfg, "--out", str(tmp_path / "prior")])
        fit = write(tmp_path / "f.ini",
                    f"[run]\nmodel = langevin\nseed = 3\nchains = 2\n"
                    f"data = {tmp_path / 'prior' / 'samples.csv'}\n\n"
                    "[sampler]\nmethod = rw\nn_iter = 40\nburn_in = 10\n\n"
                    "[model]\nd = 3\np = 2\nkappa = 1, 1\n")
        out = tmp_path / "fit"
        assert main(["fit", "--config", fit, "--out", str(out), "--threads", "2"]) == EXIT_OK
        traces = [str(out / f"chain{c}.trace.csv") for c in range(2)]
        assert main(["diagnose", *traces, "--out", str(tmp_path / "diag"), "--burn", "5",
                     "--params", "kappa[1]", "kappa[2]"]) == EXIT_OK
        summary = read(tmp_path / "diag" / "summary.csv").splitlines()
        assert summary[0].startswith("trace,parameter,mean")
        assert len(summary) == 1 + 2 * 8
        assert "chain0 vs chain1" in read(tmp_path / "diag" / "comparison.md")

    def test_mixture_fit_normalizes(self, tmp_path):
        rng = np.random.default_rng(3)
        raw = rng.uniform(10, 20, (30, 2))
        data = tmp_path / "raw.csv"
        write_numeric_csv(data, raw, ["a", "b"])
        cfg = write(tmp_path / "m.ini",
                    f"[run]\nmodel = trunc-mixture\ndata = {data}\n"
                    "data_lower = 10, 10\ndata_upper = 20, 20\n\n"
                    "[sampler]\nn_iter = 5\nburn_in = 1\nK = 5\ngrid_size = 10\n")
        out = tmp_path / "out"
        assert main(["fit", "--config", cfg, "--out", str(out)]) == EXIT_OK
        man = json.loads(read(out / "manifest.json"))
        assert man["normalization"] == {"lower": [10.0, 10.0], "upper": [20.0, 20.0]}
        assert read(out / "chain0.grid.csv").startswith("x,y,mean_density")

    def test_ingest_check(self, toy_config, capsys):
        assert main(["ingest-check", "--config", toy_config]) == EXIT_OK
        assert "20 observations" in capsys.readouterr().out

    def test_bad_data_exit_code(self, tmp_path, capsys):
        data = write(tmp_path / "bits.csv", "0\n2\n")
        cfg = write(tmp_path / "t.ini", TOY_INI.format(data=data))
        assert main(["fit", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_IO
        assert "0/1" in capsys.readouterr().err

    def test_malformed_row_exit_code(self, tmp_path, capsys):
        data = write(tmp_path / "bits.csv", "0\n1,1\n")
        cfg = write(tmp_path / "t.ini", TOY_INI.format(data=data))
        assert main(["ingest-check", "--config", cfg]) == EXIT_IO
        assert "line 2" in capsys.readouterr().err

    def test_missing_config_exit_code(self, tmp_path):
        assert main(["fit", "--config", str(tmp_path / "no.ini"), "--out",
                     str(tmp_path / "o")]) == EXIT_IO

    def test_outside_box_exit_code(self, tmp_path):
        data = tmp_path / "raw.csv"
        write_numeric_csv(data, np.array([[0.5, 0.5], [0.5, 1.5]]))
        cfg = write(tmp_path / "m.ini", f"[run]\nmodel = trunc-mixture\ndata = {data}\n")
        assert main(["fit", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_IO

    def test_numerical_failure_exit_code(self, tmp_path, monkeypatch):
        from rejaug import cli
        from rejaug.errors import NumericalError

        def boom(*args, **kwargs):
            raise NumericalError("forced")

        monkeypatch.setattr(cli, "_fit_chain", boom)
        cfg = write(tmp_path / "t.ini", "[run]\nmodel = toy-discrete\n")
        assert main(["fit", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_NUMERICAL

    def test_bad_threads(self, toy_config, tmp_path):
        assert main(["fit", "--config", toy_config, "--out", str(tmp_path / "o"),
                     "--threads", "0"]) == EXIT_IO

    def test_diagnose_missing_trace(self, tmp_path):
        assert main(["diagnose", str(tmp_path / "none.csv"), "--out", str(tmp_path)]) == EXIT_IO


def test_console_script_version():
    res = subprocess.run([sys.executable, "-m", "rejaug.cli", "--version"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip()
