"""End-to-end checks of the command line: exit codes, artifacts and reproducibility."""
import json

import pytest

from nlplap.cli import EXIT_CHECK, EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_OK, main


def _last_json(out: str) -> dict:
    return json.loads(out.strip().splitlines()[-1])


def _write_config(tmp_path, data) -> str:
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(data))
    return str(path)


def test_solve_writes_artifacts(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["solve", "--out", str(out), "--delta", "0.1"]) == EXIT_OK
    summary = _last_json(capsys.readouterr().out)
    assert summary["passed"]
    payload = json.loads((out / "solve.json").read_text())
    assert payload["config_hash"] == summary["config_hash"]
    for name in ("u.csv", "sigma2pt.csv", "recovered_flux.csv"):
        first = (out / name).read_text().splitlines()[0]
        assert first == f"# config_hash={summary['config_hash']}"


def test_rerun_is_byte_identical(tmp_path):
    dirs = [tmp_path / "a", tmp_path / "b"]
    for d in dirs:
        assert main(["consistency", "--out", str(d), "--deltas", "0.2,0.1"]) == EXIT_OK
    for name in ("consistency.json", "consistency.csv"):
        assert (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes()


def test_hash_tracks_config(tmp_path, capsys):
    main(["solve", "--out", str(tmp_path / "a")])
    h1 = _last_json(capsys.readouterr().out)["config_hash"]
    main(["solve", "--out", str(tmp_path / "b"), "--p", "3"])
    h2 = _last_json(capsys.readouterr().out)["config_hash"]
    assert h1 != h2


def test_zero_load_gives_zero_energies(tmp_path):
    cfg = _write_config(tmp_path, {"data": {"f": {"kind": "const", "value": 0.0}}})
    assert main(["solve", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_OK
    state = json.loads((tmp_path / "o" / "solve.json").read_text())["state"]
    assert state["primal_energy"] == 0.0
    assert state["dual_energy"] == 0.0
    assert state["iterations"] == 0


def test_verify_passes(tmp_path, capsys):
    assert main(["verify", "--out", str(tmp_path)]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert not [ln for ln in lines if ln.startswith("FAIL")]


def test_corrupted_kernel_constant_is_caught(tmp_path, capsys):
    code = main(["verify", "--out", str(tmp_path), "--corrupt-cnorm", "1.01"])
    assert code == EXIT_CHECK
    failed = [ln for ln in capsys.readouterr().out.splitlines() if ln.startswith("FAIL")]
    assert any("normalization" in ln for ln in failed)


@pytest.mark.parametrize("argv", [
    ["solve", "--h-ratio", "1"],
    ["solve", "--delta", "-0.1"],
    ["solve", "--deltas", "0.1,abc"],
    ["solve", "--config", "/nonexistent/cfg.json"],
    ["frobnicate"],
    [],
])
def test_bad_input_exits_2(argv, tmp_path, capsys):
    with pytest.raises(SystemExit) as exc_info:
        raise SystemExit(main(argv + ["--out", str(tmp_path)] if argv else argv))
    assert exc_info.value.code == EXIT_CONFIG


def test_malformed_json_exits_2(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    assert main(["solve", "--config", str(path), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_infeasible_budget_exits_2(tmp_path):
    cfg = _write_config(tmp_path, {"data": {"admissible": {"kappa_lo": 2.0, "kappa_hi": 3.0,
                                                           "V": 1.0}}})
    assert main(["design", "--config", cfg, "--out", str(tmp_path)]) == EXIT_CONFIG


def test_iteration_cap_exits_3(tmp_path, capsys):
    cfg = _write_config(tmp_path, {"solver": {"max_iter": 1}})
    assert main(["solve", "--config", cfg, "--p", "3", "--out", str(tmp_path)]) == EXIT_CONVERGENCE
    assert "convergence failure" in capsys.readouterr().err
