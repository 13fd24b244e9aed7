import filecmp
import math
from pathlib import Path

import numpy as np
import pytest

from sbdp import Box, ComparisonModel, Configuration, FiniteKernel, simulate
from sbdp.cli import main
from sbdp.io import (ConfigError, format_kernel, format_trajectory, parse_config, parse_document, parse_kernel,
                     parse_trajectory, validate_trajectory_text)

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
UNIT = Box((0.0, 0.0), (1.0, 1.0))

MINIMAL = """
[model]
preset = "aggregation"

[initial]
points = [[0.5, 0.5]]

[run]
horizon = 2
"""


def test_minimal_spec_gets_defaults():
    spec = parse_config(MINIMAL)
    assert spec["model.include_self"] is True
    assert spec["run.max_events"] == 10**7
    assert spec["model.a"] == 2.0 and spec["model.dim"] == 2
    assert spec.model().params.include_self


def test_bad_a_is_reported():
    with pytest.raises(ConfigError) as exc:
        parse_config(MINIMAL.replace('preset = "aggregation"', 'preset = "aggregation"\na = 0.5'))
    assert any("a must exceed 1" in e for e in exc.value.errors)


def test_all_errors_are_collected():
    text = MINIMAL.replace("horizon = 2", "horizon = 2\nhorizon = 3\nbogus = 1\nruns = 0")
    text += "\n[nowhere]\nx = 1\n"
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    errs = "\n".join(exc.value.errors)
    assert "duplicate key run.horizon" in errs
    assert "line 9" in errs and "line 10" in errs
    assert "unknown section [nowhere]" in errs
    assert "run.bogus" in errs
    assert len(exc.value.errors) >= 4


def test_missing_required_key():
    with pytest.raises(ConfigError) as exc:
        parse_config(MINIMAL.replace("horizon = 2", ""))
    assert any("run.horizon is required" in e for e in exc.value.errors)


def test_comments_and_strings():
    doc, errors = parse_document('[model]\npreset = "a#b"  # trailing\nregion = box\n')
    assert not errors
    assert doc["model"]["preset"] == "a#b" and doc["model"]["region"] == "box"


def test_spec_hash_ignores_workers():
    spec = parse_config(MINIMAL)
    assert spec.with_overrides(workers=8).spec_hash == spec.spec_hash
    assert spec.with_overrides(seed=5).spec_hash != spec.spec_hash


def test_trajectory_round_trip():
    m = ComparisonModel(UNIT, 2.0, 1.0)
    tr = simulate(m, Configuration(2, [(0.5, 0.5), (1.5, 0.25)]), 4.0, 3)
    text = format_trajectory(tr, UNIT)
    rec = validate_trajectory_text(text)
    back = rec.trajectory
    assert np.array_equal(back.times, tr.times) and np.array_equal(back.coords, tr.coords)
    assert np.array_equal(back.ids, tr.ids) and np.array_equal(back.kinds, tr.kinds)
    assert back.status == tr.status and back.horizon == tr.horizon
    assert format_trajectory(back, rec.region) == text
    assert rec.region_counts[-1] == tr.count_at(4.0, UNIT)


def test_validator_rejects_tampering():
    m = ComparisonModel(UNIT, 2.0, 1.0)
    tr = simulate(m, Configuration(2, [(0.5, 0.5)]), 4.0, 8)
    lines = format_trajectory(tr, UNIT).splitlines()
    body = [i for i, ln in enumerate(lines) if not ln.startswith("#")]
    assert body
    parts = lines[body[0]].split()
    parts[-2] = str(int(parts[-2]) + 1)
    bad = lines[:]
    bad[body[0]] = " ".join(parts)
    with pytest.raises(ValueError, match="recorded n="):
        validate_trajectory_text("\n".join(bad))
    with pytest.raises(ValueError, match="kind"):
        parse_trajectory("\n".join(lines[:body[0]] + [lines[body[0]].replace(" B ", " X ").replace(" D ", " X ")]))


def test_kernel_file_round_trip():
    Q = FiniteKernel([[0.3, 0.3, 0.4], [0.1, 0.2, 0.7], [0.0, 0.0, 1.0]])
    text = format_kernel(Q)
    assert text.splitlines()[0] == "n=3"
    assert parse_kernel(text) == Q
    with pytest.raises(ValueError, match="n=<states>"):
        parse_kernel("0.5 0.5\n0.5 0.5\n")
    with pytest.raises(ValueError, match="rows"):
        parse_kernel("n=3\n1 0 0\n0 1 0\n")


def _run(tmp, name, *args):
    out = tmp / name
    code = main([*args, "--out", str(out)])
    return code, out


def test_cli_bad_config(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text(MINIMAL.replace("horizon = 2", "horizon = -1"))
    code, _ = _run(tmp_path, "o", "simulate", "--config", str(cfg))
    assert code == 2
    assert "horizon" in capsys.readouterr().err
    code, _ = _run(tmp_path, "o", "simulate", "--config", str(tmp_path / "missing.toml"))
    assert code == 2


def test_cli_simulate_outputs(tmp_path):
    code, out = _run(tmp_path, "a", "simulate", "--config", str(CONFIGS / "simulate.toml"), "--runs", "20")
    assert code == 0
    report = (out / "simulate_report.txt").read_text()
    assert "spec_hash" in report and "seed" in report and "version" in report
    traj = sorted(out.glob("trajectory_*.txt"))
    assert traj
    for p in traj:
        validate_trajectory_text(p.read_text())


def test_cli_is_byte_identical_across_workers(tmp_path):
    cfg = str(CONFIGS / "simulate.toml")
    _, a = _run(tmp_path, "a", "simulate", "--config", cfg, "--runs", "60", "--workers", "1")
    _, b = _run(tmp_path, "b", "simulate", "--config", cfg, "--runs", "60", "--workers", "4")
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    match, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
    assert not mismatch and not errors


def test_cli_lump_from_kernel_file(tmp_path):
    code, out = _run(tmp_path, "l", "lump", "--config", str(CONFIGS / "lump_file.toml"))
    assert code == 0
    Qbar = parse_kernel((out / "lumped_kernel.txt").read_text())
    np.testing.assert_allclose(Qbar.rows, [[0.6, 0.4], [0.3, 0.7]], atol=1e-15)
