import json
import subprocess
import sys

import pytest

from sheetcontrol.cli import main


def read(p):
    return p.read_bytes()


def test_r0_runs_and_writes_artifacts(tmp_path):
    out = tmp_path / "r0"
    assert main(["r0", "--out", str(out)]) == 0
    params = json.loads((out / "params.json").read_text())
    assert params["experiment"] == "r0" and params["tol"] == 1e-3
    header = (out / "results.csv").read_text().splitlines()[0]
    assert header == "metric,value,standard_error,target,tolerance,pass,note"


def test_reruns_are_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["sheet-check", "--paths", "300", "--grid-nt", "8", "--grid-nx", "8", "--seed", "7"]
    main(args + ["--out", str(a)])
    main(args + ["--out", str(b)])
    for name in ("results.csv", "path_0.csv"):
        assert read(a / name) == read(b / name)


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"grid-nt": 4, "grid_nx": 4, "paths": 100, "seed": 3, "theta": 2.0}))
    out = tmp_path / "h"
    code = main(["harvest", "--config", str(cfg), "--theta", "1.5", "--out", str(out)])
    params = json.loads((out / "params.json").read_text())
    assert code == 0
    assert params["theta"] == 1.5 and params["grid_nt"] == 4
    for name in ("field_u.csv", "field_p.csv", "field_L.csv", "adjoint.csv"):
        assert (out / name).exists()


@pytest.mark.parametrize("argv", [
    ["lq", "--T", "1.5"],
    ["sheet-check", "--paths", "1"],
    ["r0", "--tol", "-1"],
    ["sheet-check", "--grid-nt", "4"],
])
def test_bad_values_exit_2(tmp_path, argv):
    assert main(argv + ["--out", str(tmp_path / "x")]) == 2


def test_bad_config_exits_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["r0", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    unknown = tmp_path / "unknown.json"
    unknown.write_text(json.dumps({"bogus": 1}))
    assert main(["r0", "--config", str(unknown), "--out", str(tmp_path / "o")]) == 2
    assert main(["r0", "--config", str(tmp_path / "missing.json")]) == 2


def test_unknown_experiment_exits_2():
    with pytest.raises(SystemExit) as info:
        main(["nonsense"])
    assert info.value.code == 2


def test_unattainable_tolerance_exits_1(tmp_path):
    assert main(["r0", "--tol", "1e-30", "--out", str(tmp_path / "r")]) == 1


def test_ml_budget_failure_exits_1(tmp_path):
    out = tmp_path / "ml"
    assert main(["ml", "--grid-nt", "4", "--tol", "1e-6", "--out", str(out)]) in (0, 1)
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"max_sweeps": 2}))
    assert main(["ml", "--grid-nt", "4", "--config", str(cfg), "--out", str(out)]) == 1
    assert (out / "field_u.csv").exists()


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "sheetcontrol", "positivity", "--out", str(tmp_path / "p")],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert (tmp_path / "p" / "probe.csv").exists()
