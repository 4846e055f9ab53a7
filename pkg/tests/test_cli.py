import subprocess
import sys

import numpy as np
import pytest

from mslab.cli import main, read_config
from mslab.experiments import read_csv
from mslab.manifold import read_points


def run(args, capsys):
    code = main(args)
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def fib_file(tmp_path, capsys):
    path = tmp_path / "fib.txt"
    assert main(["gen", "--family", "fibonacci", "--n", "120", "--out", str(path)]) == 0
    return path


def test_gen_writes_point_format(tmp_path, capsys):
    path = tmp_path / "r.txt"
    assert main(["gen", "--manifold", "T2", "--n", "10", "--seed", "3", "--out", str(path)]) == 0
    P = read_points(path)
    assert P.manifold.name == "T2" and P.n == 10
    lines = path.read_text().splitlines()
    assert lines[0] == "# manifold=T2 n=10"
    assert len(lines[1].split()[0].replace("0.", "", 1)) >= 15
    code, out, _ = run(["gen", "--manifold", "T2", "--n", "10", "--seed", "3"], capsys)
    assert code == 0 and out == path.read_text()


def test_metrics_rows(fib_file, capsys):
    code, out, _ = run(["metrics", "--points", str(fib_file), "--gamma", "inf"], capsys)
    lines = out.splitlines()
    assert code == 0 and lines[0].startswith("# ") and "seed=" in lines[0]
    assert lines[1] == "label,n,gamma,value,err,method"
    fields = lines[2].split(",")
    assert fields[1] == "120" and fields[2] == "inf" and fields[5] == "mesh-max"
    code, out, _ = run(["metrics", "--points", str(fib_file), "--gamma", "2", "--resolution", "40"], capsys)
    assert out.splitlines()[2].split(",")[5] == "quadrature"


def test_discrepancy_and_weights(fib_file, tmp_path, capsys):
    code, out, _ = run(["discrepancy", "--points", str(fib_file), "--mc-samples", "5000"], capsys)
    assert code == 0
    assert out.splitlines()[1] == "label,n,wce_equal,wce_opt,ratio,err"
    row = [float(v) for v in out.splitlines()[2].split(",")[1:]]
    assert row[2] <= row[1] and row[3] > 0 and row[4] > 0
    wfile = tmp_path / "w.txt"
    assert main(["weights", "--points", str(fib_file), "--out", str(wfile)]) == 0
    lines = wfile.read_text().splitlines()
    assert len(lines) == 121 and lines[-1].startswith("# min_wce=")
    assert float(lines[-1].split("=")[1]) == pytest.approx(row[2], rel=1e-12)
    code, out, _ = run(["discrepancy", "--points", str(fib_file), "--weights", str(wfile)], capsys)
    given = float(out.splitlines()[2].split(",")[2])
    assert given == pytest.approx(row[2], rel=1e-6)


def test_recover_row(tmp_path, capsys):
    path = tmp_path / "f.txt"
    main(["gen", "--family", "fibonacci", "--n", "1500", "--out", str(path)])
    code, out, _ = run(["recover", "--points", str(path), "--function", "x3", "--q", "inf",
                        "--eval-resolution", "32"], capsys)
    assert code == 0
    assert out.splitlines()[1] == "label,n,q,error,dist_norm_gamma_alpha,ratio"
    vals = out.splitlines()[2].split(",")
    assert vals[2] == "inf" and float(vals[3]) > 0 and float(vals[5]) == pytest.approx(float(vals[3]) / float(vals[4]))


def test_experiment_subcommands_write_csv(tmp_path, capsys):
    out = tmp_path / "res"
    code, text, _ = run(["limit-theorem", "--manifold", "T2", "--n-list", "16,32", "--trials", "3",
                         "--out", str(out), "--seed", "5"], capsys)
    assert code == 0 and "limit" in text
    meta, cols, rows = read_csv(out / "limit-theorem.csv")
    assert meta["seed"] == "5" and len(rows) == 2
    assert (out / "limit-theorem.svg").exists()
    code, _, _ = run(["rates", "--manifold", "T2", "--family", "grid", "--gamma", "inf", "--out", str(out),
                      "--no-plot"], capsys)
    assert code == 0 and len(read_csv(out / "rates.csv")[2]) == 5
    code, _, _ = run(["equivalence", "--n-list", "16,32", "--families", "random,fibonacci", "--out", str(out)],
                     capsys)
    assert code == 0 and len(read_csv(out / "equivalence.csv")[2]) == 4


def test_config_file_and_override(tmp_path, capsys):
    conf = tmp_path / "c.cfg"
    conf.write_text("# comment\nmanifold = T2\nn_list = 16 32\ntrials = 3\nseed = 11\n")
    assert read_config(conf)["n_list"] == "16 32"
    out = tmp_path / "o"
    assert main(["limit-theorem", "--config", str(conf), "--out", str(out), "--no-plot"]) == 0
    assert read_csv(out / "limit-theorem.csv")[0]["seed"] == "11"
    assert main(["limit-theorem", "--config", str(conf), "--seed", "12", "--out", str(out), "--no-plot"]) == 0
    assert read_csv(out / "limit-theorem.csv")[0]["seed"] == "12"
    conf.write_text("bogus_key = 1\n")
    assert main(["limit-theorem", "--config", str(conf), "--out", str(out)]) == 2


def test_invalid_input_exit_code(tmp_path, fib_file, capsys):
    assert main(["metrics", "--points", str(tmp_path / "missing.txt")]) == 2
    bad = tmp_path / "bad.txt"
    bad.write_text("# manifold=S2 n=2\n1 0 0\n")
    assert main(["metrics", "--points", str(bad)]) == 2
    assert main(["metrics", "--points", str(fib_file), "--manifold", "T2"]) == 2
    assert main(["gen", "--n", "0"]) == 2
    assert main(["rates", "--n-list", "64,32", "--out", str(tmp_path)]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["metrics", "--points", str(fib_file), "--gamma", "-2"])
    assert exc.value.code == 2
    capsys.readouterr()


def test_numerical_failure_exit_code(monkeypatch, fib_file, capsys):
    from mslab import cli
    from mslab.errors import NumericalError

    def boom(_):
        raise NumericalError("factorization failed")

    monkeypatch.setattr(cli, "solve_with_ridge_escalation", boom)
    assert main(["weights", "--points", str(fib_file)]) == 3
    assert "numerical failure" in capsys.readouterr().err


def test_console_script_entry_point(fib_file):
    proc = subprocess.run([sys.executable, "-m", "mslab.cli", "metrics", "--points", str(fib_file)],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "mesh-max" in proc.stdout
