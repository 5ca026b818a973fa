import csv

import pytest

from moessm.cli import main

VERIFY_ARGS = ["verify", "--seed", "7", "--instances", "3"]


def test_unknown_flag_is_usage_error():
    with pytest.raises(SystemExit) as err:
        main(["verify", "--frobnicate"])
    assert err.value.code == 2


def test_missing_subcommand_is_usage_error():
    with pytest.raises(SystemExit) as err:
        main([])
    assert err.value.code == 2


def test_bench_empty_axis_is_usage_error():
    with pytest.raises(SystemExit) as err:
        main(["bench", "--T", ""])
    assert err.value.code == 2


def test_bench_invalid_config_is_usage_error(capsys):
    # k > E passes argparse but fails SweepConfig validation -> MoessmError -> 2
    code = main(["bench", "--T", "8", "--N", "2", "--P", "2", "--E", "2", "--k", "3"])
    assert code == 2
    assert "error:" in capsys.readouterr().err


def test_verify_passes_and_is_deterministic(capsys):
    assert main(VERIFY_ARGS) == 0
    first = capsys.readouterr().out
    assert main(VERIFY_ARGS) == 0
    second = capsys.readouterr().out
    assert first == second
    assert "checks passed" in first
    assert "FAIL" not in first


def test_verify_writes_csv(tmp_path, capsys):
    out = tmp_path / "checks.csv"
    assert main(VERIFY_ARGS + ["--out", str(out)]) == 0
    capsys.readouterr()
    with open(out, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["name", "value", "threshold", "comparison", "status"]
    assert len(rows) > 10
    assert all(row[4] == "PASS" for row in rows[1:])


def test_verify_seed_from_environment(capsys, monkeypatch):
    monkeypatch.setenv("MOESSM_SEED", "7")
    assert main(["verify", "--instances", "3"]) == 0
    env_out = capsys.readouterr().out
    monkeypatch.delenv("MOESSM_SEED")
    assert main(VERIFY_ARGS) == 0
    flag_out = capsys.readouterr().out
    assert env_out == flag_out


def test_flops_mixed_recurrence_ignores_expert_count(capsys):
    base = ["flops", "--design", "mixed", "--T", "64", "--N", "8", "--P", "4", "--k", "1"]
    assert main(base + ["--E", "2"]) == 0
    out_e2 = capsys.readouterr().out
    assert main(base + ["--E", "64"]) == 0
    out_e64 = capsys.readouterr().out
    line = lambda text, key: next(l for l in text.splitlines() if l.startswith(key))
    assert line(out_e2, "recurrence") == line(out_e64, "recurrence")
    assert line(out_e2, "routing") != line(out_e64, "routing")


def test_flops_separated_recurrence_scales_with_experts(capsys):
    base = ["flops", "--design", "separated", "--T", "64", "--N", "8", "--P", "4", "--k", "1"]
    assert main(base + ["--E", "2"]) == 0
    rec2 = int(capsys.readouterr().out.splitlines()[1].split()[1])
    assert main(base + ["--E", "4"]) == 0
    rec4 = int(capsys.readouterr().out.splitlines()[1].split()[1])
    assert rec4 == 2 * rec2


def test_bench_tiny_run_and_csv(tmp_path, capsys):
    out = tmp_path / "bench.csv"
    code = main([
        "bench", "--seed", "3", "--T", "16", "--N", "4", "--P", "3",
        "--E", "2", "--k", "1", "--repeats", "3", "--out", str(out),
    ])
    assert code == 0
    text = capsys.readouterr().out
    assert "design" in text and "gflop/s" in text
    assert "mixed" in text and "separated" in text
    with open(out, newline="") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 3  # header + 2 designs


def test_gradcheck_tiny(capsys, tmp_path):
    out = tmp_path / "grad.csv"
    code = main([
        "gradcheck", "--seed", "5", "--T", "8", "--N", "3", "--P", "4",
        "--E", "2", "--coords", "8", "--out", str(out),
    ])
    assert code == 0
    text = capsys.readouterr().out
    assert "finite differences, dense routing" in text
    assert "adjoint dot test" in text
    assert "FAIL" not in text
    with open(out, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["mode", "group", "value", "checked", "rejected"]
    assert any(row[0] == "dot" for row in rows[1:])


def test_ssd_equiv_tiny(capsys):
    code = main([
        "ssd-equiv", "--seed", "2", "--T", "64", "--Q", "1,16,64",
        "--instances", "3",
    ])
    assert code == 0
    text = capsys.readouterr().out
    assert text.count("PASS") == 3
    assert "FAIL" not in text


def test_ssd_equiv_chunk_out_of_range(capsys):
    with pytest.raises(SystemExit):
        main(["ssd-equiv", "--T", "16", "--Q", "32", "--instances", "1"])


def test_demo_expressivity(capsys):
    assert main(["demo-expressivity", "--points", "41"]) == 0
    text = capsys.readouterr().out
    assert "max |output - sigmoid|" in text
    assert "best cubic sup gap" in text
    assert "strictly increasing    = True" in text


def test_kernel_bench_tiny(capsys, tmp_path):
    out = tmp_path / "kern.csv"
    code = main([
        "kernel-bench", "--T", "32", "--N", "3", "--P", "2",
        "--kinds", "diagonal", "--repeats", "3", "--out", str(out),
    ])
    assert code == 0
    text = capsys.readouterr().out
    assert "scan_diag_last" in text
    assert out.exists()


def test_bad_env_seed_is_usage_error(monkeypatch):
    monkeypatch.setenv("MOESSM_SEED", "not-a-number")
    with pytest.raises(SystemExit):
        main(["verify", "--instances", "1"])
