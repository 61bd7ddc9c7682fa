import json
from pathlib import Path

import numpy as np
import pytest

from fsi.cli import (EXIT_CHECK, EXIT_CONFIG, EXIT_OK, SCHEMAS, ConfigError, format_config, main, parse_config)

RUN = """\
[mesh]
n = 2
[solver]
T = 0.003
dt = 0.001
[initial]
v0 = shear(1e-3)
xi1 = shear(1e-3)
[output]
directory = out
"""


def write(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return path


def read_csv(path):
    lines = Path(path).read_text().splitlines()
    return lines[0], lines[1].split(","), [ln.split(",") for ln in lines[2:]]


def test_config_round_trip(tmp_path):
    cfg = parse_config(RUN, tmp_path)
    again = parse_config(format_config(cfg), tmp_path)
    assert again == cfg
    assert cfg.solver.T == 0.003 and cfg.mesh_n == 2
    assert Path(cfg.output_dir) == tmp_path / "out"


@pytest.mark.parametrize("text, key", [("[solver]\nbogus = 1\n", "solver.bogus"),
                                       ("[extra]\nx = 1\n", "extra"),
                                       ("[solver]\ndt = abc\n", "solver.dt"),
                                       ("[initial]\ninflow = parabolic\n", "initial.inflow")])
def test_config_errors_name_key(text, key):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.key == key


def test_unknown_key_run_exit_and_failure_report(tmp_path):
    path = write(tmp_path, "[solver]\nbogus = 1\n")
    assert main(["run", str(path)]) == EXIT_CONFIG
    report = json.loads((tmp_path / "out" / "failure.json").read_text())
    assert report["key"] == "solver.bogus" and report["exit_code"] == EXIT_CONFIG
    for name in ("energy", "contraction", "interface"):
        header, cols, rows = read_csv(tmp_path / "out" / f"{name}.csv")
        assert header == f"# schema: {SCHEMAS[name][0]}" and rows == []


def test_zero_preset_run(tmp_path):
    text = RUN.replace("shear(1e-3)", "zero")
    path = write(tmp_path, text)
    assert main(["run", str(path)]) == EXIT_OK
    out = tmp_path / "out"
    status = json.loads((out / "status.json").read_text())
    assert status["status"] == "converged"
    _, cols, rows = read_csv(out / "fields" / "velocity_00003.csv")
    vals = np.array([float(r[cols.index("value")]) for r in rows])
    assert vals.size and not vals.any()


@pytest.fixture(scope="module")
def two_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("runs")
    path = write(base, RUN)
    codes = [main(["run", str(path), "-o", str(base / d)]) for d in ("a", "b")]
    return base, codes


def test_schema_headers(two_runs):
    base, codes = two_runs
    assert codes == [EXIT_OK, EXIT_OK]
    for name in ("timeseries", "energy", "contraction", "interface", "pressure", "membership", "compatibility"):
        header, _, rows = read_csv(base / "a" / f"{name}.csv")
        assert header == f"# schema: {SCHEMAS[name][0]}"
    header, _, _ = read_csv(base / "a" / "fields" / "displacement_00000.csv")
    assert header == f"# schema: {SCHEMAS['field'][0]}"


def test_reruns_byte_identical(two_runs):
    base, _ = two_runs
    a = sorted(p.relative_to(base / "a") for p in (base / "a").rglob("*") if p.is_file())
    b = sorted(p.relative_to(base / "b") for p in (base / "b").rglob("*") if p.is_file())
    assert a == b and len(a) > 10
    for rel in a:
        assert (base / "a" / rel).read_bytes() == (base / "b" / rel).read_bytes(), rel


def test_energy_ledger_file_balances(two_runs):
    base, _ = two_runs
    _, cols, rows = read_csv(base / "a" / "energy.csv")
    rel = np.array([float(r[cols.index("relative_imbalance")]) for r in rows])
    assert len(rel) == 4 and rel.max() <= 1e-10


def test_threads_env(tmp_path, monkeypatch, two_runs):
    base, _ = two_runs
    monkeypatch.setenv("FSI_THREADS", "3")
    path = write(tmp_path, RUN)
    assert main(["run", str(path), "-o", str(tmp_path / "c")]) == EXIT_OK
    _, cols, rows = read_csv(tmp_path / "c" / "energy.csv")
    _, _, ref = read_csv(base / "a" / "energy.csv")
    k = cols.index("kinetic_fluid")
    for r, s in zip(rows, ref):
        assert float(r[k]) == pytest.approx(float(s[k]), rel=1e-12, abs=1e-30)
    monkeypatch.setenv("FSI_THREADS", "zero")
    assert main(["run", str(path), "-o", str(tmp_path / "d")]) == EXIT_CONFIG


def test_infsup_command(tmp_path, capsys):
    assert main(["infsup", str(write(tmp_path, "[mesh]\nn = 2\n"))]) == EXIT_OK
    assert "pass" in capsys.readouterr().out
    assert main(["infsup", str(write(tmp_path, "[mesh]\nn = 2\ndegree = 1\n", "p1.ini"))]) == EXIT_CHECK


def test_check_command(tmp_path, capsys):
    assert main(["check", str(write(tmp_path, RUN))]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.count("condition") == 9 and "condition 6: skipped" in out


def test_tensor_selftest(capsys):
    assert main(["tensor-selftest"]) == EXIT_OK
    assert "c max relative error" in capsys.readouterr().out
