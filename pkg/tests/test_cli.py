import csv
import json
import math
import subprocess
import sys

import pytest

from gfkqmc import cli
from gfkqmc import config as C
from gfkqmc.quantities import EnergyValue

SMALL_H2PLUS = """
[system]
preset = "h2_plus"
mode = "BO"
R = 2.0

[trial]
form = "atomic_product"
alpha = 1.24

[walk]
n = {n}
t_max = 4
horizons = [1, 2, 3, 4]
n_rep = 200
seed = 5
chunk_size = 64

[estimate]
n_blocks = 5
"""

SMALL_H2 = """
[system]
preset = "h2"
mode = "BO"

[trial]
form = "atomic_product"
alpha = 1.0

[walk]
n = 10
t_max = 2
horizons = [0.5, 1, 1.5, 2]
n_rep = 60
seed = 2

[lambda_T]
"""


def run_cli(argv, capsys):
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def energy_json(tmp_path, name, value, sigma=0.0):
    return write(tmp_path, name, json.dumps({"energy": {"value": value, "sigma": sigma, "unit": "hartree"}}))


# -- run ------------------------------------------------------------------------


def test_run_bundled_zero_variance(tmp_path, capsys):
    code, out, _ = run_cli(["run", "hydrogen_atom_bo", "--out-dir", str(tmp_path)], capsys)
    assert code == 0
    summary = json.loads((tmp_path / "hydrogen_atom_bo.json").read_text())
    assert summary["schema_version"] == "1.0"
    assert summary["energy"]["value"] == pytest.approx(-0.5, abs=1e-12)
    assert summary["energy"]["sigma"] < 1e-12
    with open(tmp_path / "hydrogen_atom_bo.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [float(r["t"]) for r in rows] == [2.0, 4.0, 6.0, 8.0]
    assert json.loads(out)["files"] == summary["files"]


def test_run_two_step_sizes(tmp_path, capsys):
    cfg = write(tmp_path, "hp.toml", SMALL_H2PLUS.format(n="[10, 20]"))
    code, _, _ = run_cli(["run", cfg, "--out-dir", str(tmp_path / "o")], capsys)
    assert code == 0
    summary = json.loads((tmp_path / "o" / "hp.json").read_text())
    assert summary["energy"]["method"] == "linear_dt"
    assert [r["n"] for r in summary["runs"]] == [10, 20]
    assert (tmp_path / "o" / "hp_n10.csv").exists() and (tmp_path / "o" / "hp_n20.csv").exists()
    props = summary["runs"][0]["properties"]
    assert set(props) == {"V", "E_L_mixed", "T", "virial_ratio"}


def test_seed_flag_changes_result_and_is_echoed(tmp_path, capsys):
    cfg = write(tmp_path, "hp.toml", SMALL_H2PLUS.format(n=10))
    run_cli(["run", cfg, "--out-dir", str(tmp_path / "a")], capsys)
    run_cli(["run", cfg, "--out-dir", str(tmp_path / "b"), "--seed", "99"], capsys)
    a = json.loads((tmp_path / "a" / "hp.json").read_text())
    b = json.loads((tmp_path / "b" / "hp.json").read_text())
    assert b["seed"] == 99 and b["config"]["walk"]["seed"] == 99
    assert a["energy"]["value"] != b["energy"]["value"]


def test_workers_do_not_change_result(tmp_path, capsys):
    cfg = write(tmp_path, "hp.toml", SMALL_H2PLUS.format(n=10))
    run_cli(["run", cfg, "--out-dir", str(tmp_path / "a")], capsys)
    run_cli(["run", cfg, "--out-dir", str(tmp_path / "b"), "--workers", "2"], capsys)
    a = (tmp_path / "a" / "hp.csv").read_text()
    b = (tmp_path / "b" / "hp.csv").read_text()
    assert a == b


def test_json_echo_reproduces_run(tmp_path, capsys):
    cfg = write(tmp_path, "hp.toml", SMALL_H2PLUS.format(n=10))
    run_cli(["run", cfg, "--out-dir", str(tmp_path / "a"), "--seed", "17"], capsys)
    first = json.loads((tmp_path / "a" / "hp.json").read_text())
    code, _, _ = run_cli(["run", str(tmp_path / "a" / "hp.json"), "--out-dir", str(tmp_path / "b")], capsys)
    assert code == 0
    second = json.loads((tmp_path / "b" / "hp.json").read_text())
    for key in ("energy", "runs", "lambda_T", "seed"):
        assert first[key] == second[key]
    assert (tmp_path / "a" / "hp.csv").read_bytes() == (tmp_path / "b" / "hp.csv").read_bytes()


def test_run_with_checkpoint(tmp_path, capsys):
    cfg = write(tmp_path, "hp.toml", SMALL_H2PLUS.format(n=10) + "\n[output]\ncheckpoint = true\n")
    code, _, _ = run_cli(["run", cfg, "--out-dir", str(tmp_path)], capsys)
    assert code == 0
    assert (tmp_path / "hp_n10.ckpt").stat().st_size > 0
    first = (tmp_path / "hp.csv").read_bytes()
    run_cli(["run", cfg, "--out-dir", str(tmp_path)], capsys)
    assert (tmp_path / "hp.csv").read_bytes() == first


# -- errors ------------------------------------------------------------------------


@pytest.mark.parametrize(
    "patch, key",
    [
        (("n_rep = 200", "n_rep = -3"), "walk.n_rep"),
        (("seed = 5", "seed = 5\ncolour = 1"), "walk.colour"),
        (("alpha = 1.24", "alpha = 'big'"), "trial.alpha"),
        (('form = "atomic_product"', 'form = "spline"'), "trial.form"),
        (('preset = "h2_plus"', 'preset = "h3"'), "system.preset"),
        (("[estimate]", "[estimate]\nmodel = 'cubic'"), "estimate.model"),
    ],
)
def test_bad_config_exits_2_naming_key(tmp_path, capsys, patch, key):
    text = SMALL_H2PLUS.format(n=10).replace(*patch)
    cfg = write(tmp_path, "bad.toml", text)
    code, out, err = run_cli(["run", cfg, "--out-dir", str(tmp_path)], capsys)
    assert code == 2
    record = json.loads(err)["error"]
    assert record["key"] == key
    assert record["type"] == "ConfigError"
    assert out == ""


def test_malformed_toml(tmp_path, capsys):
    cfg = write(tmp_path, "bad.toml", "[walk\nn = ")
    code, _, err = run_cli(["run", cfg], capsys)
    assert code == 2 and json.loads(err)["error"]["key"] == "config"


def test_missing_config(capsys):
    code, _, err = run_cli(["run", "no_such_config"], capsys)
    assert code == 2 and json.loads(err)["error"]["key"] == "config"


def test_bad_arguments(capsys):
    code, _, err = run_cli(["run"], capsys)
    assert code == 2 and json.loads(err)["error"]["key"] == "arguments"
    code, _, err = run_cli(["run", "hydrogen_atom_bo", "--workers", "0"], capsys)
    assert code == 2 and json.loads(err)["error"]["key"] == "workers"


def test_console_entry_point(tmp_path):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("[system]\npreset = 'h2'\nmass = 3\n")
    proc = subprocess.run([sys.executable, "-m", "gfkqmc", "run", str(cfg)], capture_output=True, text=True)
    assert proc.returncode == 2
    assert json.loads(proc.stderr)["error"]["key"] == "system.mass"


# -- scan ---------------------------------------------------------------------------


def test_scan_empty_list(tmp_path, capsys):
    code, _, err = run_cli(["scan", "h2_bo", "--R", "--out-dir", str(tmp_path)], capsys)
    assert code == 2 and json.loads(err)["error"]["key"] == "scan.R"


def test_scan_rejects_non_bo(capsys):
    code, _, err = run_cli(["scan", "h2_nbo", "--R", "1.4"], capsys)
    assert code == 2 and json.loads(err)["error"]["key"] == "system.mode"


def test_small_scan(tmp_path, capsys):
    cfg = write(tmp_path, "h2.toml", SMALL_H2.replace("[lambda_T]\n", ""))
    code, _, _ = run_cli(["scan", cfg, "--R", "1.4", "2.0", "--out-dir", str(tmp_path)], capsys)
    assert code == 0
    with open(tmp_path / "h2_scan.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [float(r["R"]) for r in rows] == [1.4, 2.0]
    assert all(r["status"] == "ok" and math.isfinite(float(r["E_inf"])) for r in rows)
    summary = json.loads((tmp_path / "h2_scan.json").read_text())
    assert summary["R"] == [1.4, 2.0] and len(summary["runs"]) == 2


# -- extrapolate ----------------------------------------------------------------------


def test_extrapolate_csv(tmp_path, capsys):
    text = "t,E,sigma_E\n" + "".join(f"{t},{-1 + 0.3 / t!r},1e-6\n" for t in (8, 16, 24, 32, 40, 48))
    path = write(tmp_path, "series.csv", text)
    code, out, _ = run_cli(["extrapolate", path, "--out-dir", str(tmp_path)], capsys)
    assert code == 0
    result = json.loads(out)
    assert result["energy"]["value"] == pytest.approx(-1.0, abs=1e-9)
    assert (tmp_path / "series_fit.json").exists()


def test_extrapolate_bad_csv(tmp_path, capsys):
    path = write(tmp_path, "series.csv", "t,E\n1,2\n")
    code, _, err = run_cli(["extrapolate", path], capsys)
    assert code == 1 and json.loads(err)["error"]["type"] == "FitFailed"
    code, _, err = run_cli(["extrapolate", str(tmp_path / "nope.csv")], capsys)
    assert code == 2 and json.loads(err)["error"]["key"] == "csv"


# -- derive ----------------------------------------------------------------------------


def test_derive_reference_energies(tmp_path, capsys):
    mol = energy_json(tmp_path, "mol.json", -1.164546)
    ion = energy_json(tmp_path, "ion.json", -0.597528)
    argv = ["derive", "--mol", mol, "--ion", ion, "--offset-cm", "2.4", "--citation", "relativistic and QED",
            "--out-dir", str(tmp_path)]
    code, out, _ = run_cli(argv, capsys)
    assert code == 0
    row = json.loads(out)["row"]
    assert row["E_p_cm"] == pytest.approx(124446.066, abs=1e-3)
    assert row["E_d_cm"] == pytest.approx(36113.672, abs=1e-3)
    assert row["E_d_corrected_cm"] == pytest.approx(36116.072, abs=1e-3)
    with open(tmp_path / "derived.csv") as fh:
        (csv_row,) = list(csv.DictReader(fh))
    assert tuple(csv_row) == cli.DERIVE_COLUMNS
    assert float(csv_row["E_d_hartree"]) == pytest.approx(0.164546, abs=1e-12)


def test_derive_identical_inputs(tmp_path, capsys):
    mol = energy_json(tmp_path, "mol.json", -1.0, 1e-5)
    code, out, _ = run_cli(["derive", "--mol", mol, "--ion", mol], capsys)
    assert code == 0
    assert json.loads(out)["row"]["E_p_hartree"] == 0.0


def test_derive_function_reduced_mass():
    out = cli.derive(EnergyValue(-1.164546), EnergyValue(-0.597528), EnergyValue(-0.4997278))
    assert out["row"]["E_d_hartree"] == pytest.approx(0.1650904, abs=1e-7)
    assert math.isnan(out["row"]["E_d_corrected_cm"])


def test_derive_bad_inputs(tmp_path, capsys):
    mol = energy_json(tmp_path, "mol.json", -1.0)
    junk = write(tmp_path, "junk.json", json.dumps({"nothing": 1}))
    code, _, err = run_cli(["derive", "--mol", mol, "--ion", junk], capsys)
    assert code == 2 and json.loads(err)["error"]["key"] == "ion.energy.value"
    code, _, err = run_cli(["derive", "--mol", mol, "--ion", mol, "--atom-energy", "heavy"], capsys)
    assert code == 2 and json.loads(err)["error"]["key"] == "atom-energy"


def test_derive_from_run_outputs(tmp_path, capsys):
    run_cli(["run", "hydrogen_atom_bo", "--out-dir", str(tmp_path)], capsys)
    path = str(tmp_path / "hydrogen_atom_bo.json")
    code, out, _ = run_cli(["derive", "--mol", path, "--ion", path, "--atom-energy", "-0.25"], capsys)
    assert code == 0
    assert json.loads(out)["row"]["E_d_hartree"] == pytest.approx(0.0, abs=1e-12)


# -- check-trial and list -----------------------------------------------------------------


@pytest.mark.parametrize("name", ["h2_bo", "h2_nbo", "h2plus_nbo", "oscillator_3d"])
def test_check_trial(name, tmp_path, capsys):
    code, out, _ = run_cli(["check-trial", name, "--out-dir", str(tmp_path)], capsys)
    report = json.loads(out)
    assert code == 0 and report["passed"]
    assert report["points"] == 100
    assert max(report["max_relative_error"].values()) <= 1e-6


def test_check_trial_without_trial(tmp_path, capsys):
    cfg = write(tmp_path, "free.toml", SMALL_H2PLUS.format(n=10).replace('form = "atomic_product"\nalpha = 1.24',
                                                                          'form = "none"'))
    code, _, err = run_cli(["check-trial", cfg], capsys)
    assert code == 2 and json.loads(err)["error"]["key"] == "trial.form"


def test_list(capsys):
    code, out, _ = run_cli(["list"], capsys)
    assert code == 0
    assert set(out.split()) == set(C.bundled_configs())
    assert {"h2_bo", "h2_nbo", "h2plus_bo", "hydrogen_atom_bo"} <= set(out.split())
