import json
import os
import subprocess
import sys

import pytest

from nird.cli import main
from nird.fosls import load_field
from nird.problems import instantiate


def read(path):
    with open(path, "rb") as fh:
        return fh.read()


def test_perfmodel_row(capsys):
    assert main(["perfmodel", "--preset", "easy", "--P", "1024"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "preset,P,C_T,C_N,ratio"
    preset, P, ct, cn, ratio = out[1].split(",")
    assert (preset, P) == ("easy", "1024")
    assert abs(float(ct) - 1427.4458) < 1e-4 and float(cn) == 20.0


def test_perfmodel_default_sweep(tmp_path, capsys):
    assert main(["perfmodel", "--out", str(tmp_path), "--plots"]) == 0
    lines = read(tmp_path / "perfmodel.csv").decode().splitlines()
    assert len(lines) == 1 + 2 * 20
    assert read(tmp_path / "perfmodel.png")[:8] == b"\x89PNG\r\n\x1a\n"


def test_nird_outputs(tmp_path, capsys):
    out = tmp_path / "run"
    code = main(["nird", "--problem", "poisson_smooth", "--P", "4", "--E", "300", "--out", str(out),
                 "--dump", "--table1", "--plots"])
    assert code == 0
    for name in ("metrics.csv", "lsf.csv", "partition.csv", "table1.csv", "manifest.json", "union.txt",
                 "lsf.png", "partition.png", "union_mesh.png"):
        assert (out / name).exists(), name
    man = json.loads(read(out / "manifest.json"))
    assert man["ledger"] == {"rounds": 4, "messages": 16, "received": 16}
    assert set(man["artifacts"]) >= {"metrics", "lsf", "partition", "table1", "union"}
    field = load_field(read(out / "rank0000_iter1.txt").decode(), instantiate("poisson_smooth"))
    assert field.mesh.nleaves <= 300
    lsf_lines = read(out / "lsf.csv").decode().splitlines()
    assert lsf_lines[0] == "iteration,N_U,N_T,lsf" and len(lsf_lines) == 4
    assert b"\r" not in read(out / "metrics.csv")


def test_nird_zero_iterations(tmp_path, capsys):
    assert main(["nird", "--problem", "poisson_smooth", "--P", "4", "--E", "300", "--iters", "0",
                 "--out", str(tmp_path)]) == 0
    row = read(tmp_path / "metrics.csv").decode().splitlines()[1].split(",")
    assert row[:2] == ["discontinuous", "4"]
    assert row[4:] == [""] * 5
    assert json.loads(read(tmp_path / "manifest.json"))["ledger"]["rounds"] == 0


def test_nird_is_deterministic(tmp_path, capsys):
    args = ["nird", "--problem", "advdiff_in", "--P", "4", "--E", "300", "--pou", "cinf"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    for name in ("metrics.csv", "lsf.csv", "partition.csv", "manifest.json"):
        assert read(tmp_path / "a" / name) == read(tmp_path / "b" / name)


def test_table_shape(tmp_path, capsys):
    code = main(["table", "--problem", "poisson_smooth", "--P", "2,4", "--E", "200", "--pou", "discts,c0",
                 "--out", str(tmp_path)])
    assert code == 0
    lines = read(tmp_path / "table.csv").decode().splitlines()
    assert lines[0] == "pou,P,eta_ratio,N_c,C0,Q1,K1,Q2,K2"
    assert [ln.split(",")[:2] for ln in lines[1:]] == [["discontinuous", "2"], ["C0", "2"],
                                                       ["discontinuous", "4"], ["C0", "4"]]


def test_baseline(tmp_path, capsys):
    assert main(["baseline", "--problem", "poisson_smooth", "--E", "200", "--out", str(tmp_path), "--plots"]) == 0
    trace = read(tmp_path / "trace.csv").decode().splitlines()
    assert trace[0] == "level,N,lsf" and len(trace) > 3
    assert (tmp_path / "mesh.txt").exists() and (tmp_path / "convergence.png").exists()


@pytest.mark.parametrize("argv", [
    ["nird", "--problem", "poisson_smooth", "--P", "3"],
    ["nird", "--problem", "poisson_smooth", "--iters", "-1"],
    ["nird", "--problem", "wavefront", "--rhs", "oscillatory"],
    ["perfmodel", "--P", "6"],
    ["baseline", "--problem", "poisson_smooth", "--E", "4"],
    ["table", "--problem", "poisson_smooth", "--pou", "smooth"],
])
def test_usage_errors_exit_2(argv, tmp_path, capsys):
    assert main(argv + (["--out", str(tmp_path)] if argv[0] != "perfmodel" else [])) == 2
    assert "error" in capsys.readouterr().err


def test_argparse_errors_exit_2(capsys):
    with pytest.raises(SystemExit) as info:
        main(["nird", "--problem", "nope"])
    assert info.value.code == 2


def test_runtime_failure_exits_1(tmp_path, capsys, monkeypatch):
    import nird.cli as cli

    def boom(*a, **k):
        from nird.orchestrator import StageError
        raise StageError("subproblem (iteration 1)", "solver did not converge")

    monkeypatch.setattr(cli, "nird_run", boom)
    assert main(["nird", "--problem", "poisson_smooth", "--out", str(tmp_path)]) == 1
    assert "[subproblem (iteration 1)]" in capsys.readouterr().err


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "nird", "perfmodel", "--preset", "hard", "--P", "2"],
                       capture_output=True, text=True, env={**os.environ, "PYTHONHASHSEED": "0"})
    assert r.returncode == 0 and r.stdout.startswith("preset,P,C_T,C_N,ratio\nhard,2,")
