from __future__ import annotations

import csv
import json

import pytest

from floquet_lattice.cli import SweepSpec, load_sweep, main
from floquet_lattice.errors import ConfigError

LATTICE = """
[lattice]
barrier_height = 1.0
barrier_width = 0.5
barrier_spacing = 10.0
drive_amplitude = 1.0
drive_frequency = 1.0
phases = {phases}

[truncation]
mu_max = 8
n_max = 12
n_steps = 32
interior_window = 2
"""

SWEEP = """
[sweep]
parameter = "delta3"
values = ["0", "0.1pi"]
outputs = ["spectrum", "currents", "husimi", "symmetry-report"]
crossing_window = [-0.5, 0.5]

[observables]
husimi_nx = 11
husimi_np = 9
"""


@pytest.fixture
def files(tmp_path):
    lat = tmp_path / "lat.toml"
    lat.write_text(LATTICE.format(phases='["0", "2pi/3", "0"]'))
    sweep = tmp_path / "sweep.toml"
    sweep.write_text(SWEEP)
    return lat, sweep, tmp_path


def _run(lat, sweep, out, cache):
    return main(
        [
            "run",
            "--config", str(lat),
            "--sweep", str(sweep),
            "--output-dir", str(out),
            "--cache-dir", str(cache),
            "--kappa-points", "9",
            "--t0-points", "8",
            "--tolerance-profile", "fast",
        ]
    )


def _table(path):
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def test_run_writes_datasets_and_manifest(files):
    lat, sweep, tmp = files
    assert _run(lat, sweep, tmp / "out", tmp / "cache") == 0
    out = tmp / "out"
    manifest = json.loads((out / "manifest.json").read_text())
    for name in ("spectrum_000.csv", "currents_001.csv", "husimi_000.csv", "symmetry_001.jsonl", "jbar.csv"):
        assert name in manifest["files"]
    # 9 quasi-momenta plus the +-kappa pair of the symmetry report, per sweep point
    assert manifest["cache"]["misses"] == 22 and manifest["cache"]["hits"] == 0
    header = (out / "spectrum_000.csv").read_text().splitlines()[:12]
    assert any(h.startswith("# config_hash: ") for h in header)
    rows = _table(out / "spectrum_000.csv")
    assert len(rows) == 9 * 17
    jbar = _table(out / "jbar.csv")
    # reflection-symmetric driving carries no net current; delta3 = 0.1 pi does
    assert abs(float(jbar[0]["Jbar"])) < 1e-8
    assert abs(float(jbar[1]["Jbar"])) > 1e-4
    assert len(_table(out / "husimi_000.csv")) == 11 * 9
    reports = [json.loads(ln) for ln in (out / "symmetry_000.jsonl").read_text().splitlines()]
    assert {r["tag"] for r in reports} >= {"time-reversal-U", "fbm-parity"}


def test_warm_rerun_is_bit_identical(files):
    lat, sweep, tmp = files
    _run(lat, sweep, tmp / "a", tmp / "cache")
    _run(lat, sweep, tmp / "b", tmp / "cache")
    a = json.loads((tmp / "a" / "manifest.json").read_text())
    b = json.loads((tmp / "b" / "manifest.json").read_text())
    assert a["files"] == b["files"]
    assert b["cache"]["hits"] == 22 and b["cache"]["misses"] == 0


def test_verify_exit_codes(tmp_path, capsys):
    good = tmp_path / "good.toml"
    good.write_text(LATTICE.format(phases='["0", "pi", "0"]').replace("n_max = 12", "n_max = 16"))
    assert main(["verify", "--config", str(good), "--cache-dir", str(tmp_path / "c"), "--tolerance-profile", "fast"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert all(json.loads(ln)["passed"] for ln in lines)
    # a truncation too small for the identities to hold fails the expected predicates
    bad = tmp_path / "bad.toml"
    bad.write_text(LATTICE.format(phases='["0", "pi", "0"]').replace("n_max = 12", "n_max = 4"))
    assert main(["verify", "--config", str(bad), "--cache-dir", str(tmp_path / "c"), "--tolerance-profile", "fast"]) == 1


def test_bad_inputs_exit_with_code_2(tmp_path, capsys):
    assert main(["verify", "--config", str(tmp_path / "missing.toml")]) == 2
    bad = tmp_path / "bad.toml"
    bad.write_text(LATTICE.format(phases="[]"))
    assert main(["verify", "--config", str(bad)]) == 2
    assert "error:" in capsys.readouterr().err


def test_cache_inspect_and_clear(files, capsys):
    lat, sweep, tmp = files
    _run(lat, sweep, tmp / "out", tmp / "cache")
    assert main(["cache", "inspect", "--cache-dir", str(tmp / "cache")]) == 0
    assert "22 entries" in capsys.readouterr().out
    assert main(["cache", "clear", "--cache-dir", str(tmp / "cache")]) == 0
    assert "removed 22" in capsys.readouterr().out


def test_sweep_spec_validation(tmp_path):
    with pytest.raises(ConfigError):
        SweepSpec("delta2", [0.0], ["plots"])
    with pytest.raises(ConfigError):
        SweepSpec("barrier_colour", [0.0], ["spectrum"])
    with pytest.raises(ConfigError):
        SweepSpec("delta2", [], ["spectrum"])
    path = tmp_path / "s.toml"
    path.write_text('[sweep]\nparameter = "A"\nrange = {start = 1.0, stop = 1.25, num = 3}\n')
    spec = load_sweep(path)
    assert spec.parameter == "drive_amplitude" and spec.values == pytest.approx([1.0, 1.125, 1.25])
