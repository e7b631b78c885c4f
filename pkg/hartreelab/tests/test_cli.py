import json
import math

import pytest

from hartreelab.api import read_table
from hartreelab.cli import main

KERR = """
seed = 1

[model]
preset = "kerr1"

[prep]
kind = "hermite"
z0 = [1.0]

[sweep]
N_list = [2, 4, 8, 16]
t_max = 1.0
t_points = 5

[output]
dir = "{out}"
"""

LATTICE = """
[model]
preset = "lattice-delta"

[prep]
kind = "hermite"
z0 = [0.6, 0.8]

[sweep]
N_list = [3, 4, 5]
probe_count = 2
probe_radius = 0.3

[numerics]
audit_cases = 5

[output]
dir = "{out}"
"""


def _config(tmp_path, text, name="experiment.toml", out="results"):
    path = tmp_path / name
    path.write_text(text.format(out=(tmp_path / out).as_posix()), encoding="utf-8")
    return str(path)


def test_dry_run_prints_the_summary(tmp_path, capsys):
    assert main(["convergence", "--config", _config(tmp_path, KERR), "--dry-run", "--seed", "7"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["model"] == "kerr1"
    assert summary["seed"] == 7
    assert summary["N_list"] == [2, 4, 8, 16]
    assert not (tmp_path / "results").exists()


def test_invalid_config_exits_with_2(tmp_path, capsys):
    path = _config(tmp_path, KERR.replace("N_list = [2, 4, 8, 16]", "N_list = [4, 2]"))
    assert main(["convergence", "--config", path]) == 2
    record = json.loads(capsys.readouterr().err)
    assert record["error"] == "ConfigValidationError"
    assert record["errors"][0]["field"] == "sweep.N_list"


def test_missing_config_exits_with_2(tmp_path, capsys):
    assert main(["duhamel", "--config", str(tmp_path / "nowhere.toml")]) == 2
    assert json.loads(capsys.readouterr().err)["errors"][0]["field"] == "<file>"


def test_unknown_kind_is_rejected(tmp_path):
    with pytest.raises(SystemExit):
        main(["wigner", "--config", _config(tmp_path, KERR)])


def test_kerr_convergence(tmp_path, capsys):
    assert main(["convergence", "--config", _config(tmp_path, KERR)]) == 0
    written = capsys.readouterr().out.split()
    assert len(written) == 4
    distances = read_table(tmp_path / "results" / "rdm_distance.csv")
    assert len(distances) == 20
    assert distances.column("N")[:4] == [2, 4, 8, 16]
    assert all(value == pytest.approx(0.0, abs=1e-12) for value in distances.column("distance"))
    characteristic = read_table(tmp_path / "results" / "characteristic_distance.csv")
    assert len(characteristic) == 20 * 8
    energy = read_table(tmp_path / "results" / "energy_bound.csv")
    assert set(energy.column("satisfied")) == {"true"}
    assert len(read_table(tmp_path / "results" / "form_bound.csv")) == 4


def test_reruns_are_byte_identical(tmp_path):
    first = _config(tmp_path, KERR, "a.toml", "a")
    second = _config(tmp_path, KERR, "b.toml", "b")
    assert main(["convergence", "--config", first]) == 0
    assert main(["convergence", "--config", second, "--threads", "3"]) == 0
    for name in ("rdm_distance", "characteristic_distance", "energy_bound", "form_bound"):
        assert (tmp_path / "a" / f"{name}.csv").read_bytes() == (tmp_path / "b" / f"{name}.csv").read_bytes()


def test_liouville_rows_are_classical(tmp_path):
    path = _config(tmp_path, KERR)
    assert main(["liouville", "--config", path, "--format", "json-lines"]) == 0
    table = read_table(tmp_path / "results" / "liouville.jsonl")
    assert set(table.column("N")) == {"inf"}
    assert table.column("probe_id") == ["transported-gradient", "transported-bracket", "frozen-gradient"]
    assert all(math.isfinite(value) for value in table.column("residual"))
    gradient, bracket = table.column("residual")[:2]
    assert bracket == pytest.approx(gradient, rel=1e-8, abs=1e-14)
    moments = read_table(tmp_path / "results" / "measure_moments.jsonl")
    assert all(mass == pytest.approx(1.0) for mass in moments.column("unit_ball_mass"))


def test_algebra_audit_passes(tmp_path):
    assert main(["algebra-audit", "--config", _config(tmp_path, LATTICE)]) == 0
    summary = read_table(tmp_path / "results" / "algebra_audit_summary.csv")
    assert summary.column("check") == ["ccr", "adjointness", "covariance", "translation", "commutator"]
    assert summary.column("passed") == ["true"] * 5
    assert summary.column("cases") == [5, 5, 5, 5, 3 * 2 * 2]


@pytest.mark.slow
def test_duhamel_residuals_are_small(tmp_path):
    text = LATTICE.replace("N_list = [3, 4, 5]", "N_list = [3, 4]\ntimes = [0.0, 0.5]")
    assert main(["duhamel", "--config", _config(tmp_path, text)]) == 0
    table = read_table(tmp_path / "results" / "duhamel.csv")
    assert len(table) == 2 * 2
    assert max(table.column("residual")) < 1e-5
    refinement = read_table(tmp_path / "results" / "duhamel_refinement.csv")
    assert refinement.column("nodes") == [9, 17, 33, 65] * 2
