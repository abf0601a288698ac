import csv
import json
import math
import os
import subprocess
import sys
from importlib import resources

import pytest

from polsynth import cli, heating

DATA = resources.files("polsynth.data")


def call(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def results(text):
    return json.loads(text)["results"]


def all_units_paired(obj):
    if isinstance(obj, dict):
        if "value" in obj or "unit" in obj:
            return set(obj) == {"value", "unit"} and isinstance(obj["unit"], str)
        return all(all_units_paired(v) for v in obj.values())
    return False


# --- subcommands -----------------------------------------------------------------

def test_budget_defaults(capsys):
    code, out, _ = call(capsys, "budget")
    assert code == 0
    r = results(out)
    assert r["eta_intensity"]["value"] == pytest.approx(3.9e-8, rel=0.15)
    assert r["eta_phase"]["value"] == pytest.approx(7.6e-7, rel=0.1)
    assert 100 * r["dop"]["value"] == pytest.approx(99.99, abs=1e-3)
    assert all_units_paired(r)


def test_budget_circular_pole(capsys):
    _, out, _ = call(capsys, "budget", "--epsilon", "1.0")
    r = results(out)
    assert r["eta_intensity"]["value"] == 0.0 and r["eta_phase"]["value"] == 0.0


def test_budget_missing_unit_names_row(capsys, tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("freq_hz,value,unit\n1,1e-12,rad2_per_hz\n10,1e-12\n")
    code, _, err = call(capsys, "budget", "--phase-psd", str(p))
    assert code == 2
    assert "row 3" in err


def test_storage_simulate_and_pure_exponential(capsys):
    code, out, _ = call(capsys, "storage", "--t-end-s", "10", "--n-times", "11")
    assert code == 0
    assert results(out)["half_life"]["value"] == pytest.approx(6.6, rel=0.2)
    _, out, _ = call(capsys, "storage", "--q-phase", "0", "--gamma-int", "0", "--q-recoil", "0", "--n-times", "5")
    assert results(out)["half_life"]["value"] == pytest.approx(300 * math.log(2), rel=1e-9)


def test_storage_fit_fixture(capsys):
    code, out, _ = call(capsys, "storage", "--data", str(DATA.joinpath("survival_synthetic.csv")))
    assert code == 0
    r = results(out)
    assert r["q_phase"]["value"] == pytest.approx(1.37, abs=0.06)
    assert r["t0"]["value"] == pytest.approx(7.8e-6, abs=0.7e-6)
    assert r["t0"]["unit"] == "K"


def test_servo_default_bandwidth(capsys):
    code, out, _ = call(capsys, "servo")
    assert code == 0
    assert results(out)["bandwidth_3db"]["value"] == pytest.approx(800e3, rel=0.15)


def test_servo_csv_tables(capsys):
    _, out, _ = call(capsys, "servo", "--format", "csv")
    assert "\nt_s,value\n" in out
    _, out, _ = call(capsys, "servo", "--format", "csv", "--response", "freq")
    assert "\nfreq_hz,mag_db\n" in out


def test_heating_convention_note(capsys):
    code, out, _ = call(capsys, "heating", "--s-dbc", "-122", "--nu-par-hz", "117e3")
    assert code == 0
    body = json.loads(out)
    assert body["results"]["q_phase"]["value"] == pytest.approx(0.62, rel=0.01)
    assert any("convention" in n for n in body["notes"])
    _, out, _ = call(capsys, "heating", "--ssb")
    assert results(out)["q_phase"]["value"] == pytest.approx(1.25, rel=0.01)


def test_transport_and_oracle(capsys):
    code, out, _ = call(capsys, "transport", "--ramp", str(DATA.joinpath("ramp_minjerk_1ms.json")))
    assert code == 0 and results(out)["n_bar"]["value"] < 1e-6
    _, out, _ = call(capsys, "transport", "--kind", "bangbang", "--duration-s", "20e-6", "--oracle")
    r = results(out)
    assert r["n_bar"]["value"] == pytest.approx(r["n_bar_time_domain"]["value"], rel=1e-8)


def test_sideband_ratio_and_fit(capsys):
    _, out, _ = call(capsys, "sideband", "--r", "0.5")
    assert results(out)["n_bar"]["value"] == 1.0
    _, out, _ = call(capsys, "sideband", "--spectrum", str(DATA.joinpath("sideband_synthetic.csv")))
    assert results(out)["r"]["value"] == pytest.approx(0.1, rel=0.01)
    code, _, _ = call(capsys, "sideband")
    assert code == 2


def test_mc_dop(capsys):
    code, out, _ = call(capsys, "mc-dop", "--seed", "3")
    assert code == 0
    r = results(out)
    assert abs(r["z_score"]["value"]) < 3


# --- exit codes ---------------------------------------------------------------------

@pytest.mark.parametrize(
    "argv",
    [
        ("sideband", "--r", "1.5"),
        ("transport", "--kind", "teleport"),
        ("budget", "--phase-psd", "/nonexistent/psd.csv"),
    ],
)
def test_input_errors_exit_2(capsys, argv):
    code, _, err = call(capsys, *argv)
    assert code == 2
    assert err.startswith("polsynth: input error")


@pytest.mark.parametrize("argv", [("storage", "--ramp", "x"), ("heating", "--s-dbc", "loud")])
def test_bad_flags_exit_2(argv):
    with pytest.raises(SystemExit) as exc:
        cli.main(list(argv))
    assert exc.value.code == 2


def test_numerical_error_exit_3(capsys):
    code, _, err = call(capsys, "servo", "--kp", "3", "--ki-per-s", "0", "--kii-per-s2", "0", "--kd-s", "0")
    assert code == 3
    assert "unstable" in err


def test_reproduce_passes(capsys):
    code, out, _ = call(capsys, "reproduce-paper")
    body = json.loads(out)
    assert code == 0
    assert body["results"]["failed"]["value"] == 0
    assert len(body["checks"]) >= 15


def test_reproduce_failure_exit_4(capsys, monkeypatch):
    monkeypatch.setattr(heating, "heating_const_intensity", lambda *a, **k: 1.0)
    code, out, _ = call(capsys, "reproduce-paper", "--format", "csv")
    assert code == 4
    rows = {r[0]: r for r in csv.reader(ln for ln in out.splitlines() if not ln.startswith("#"))}
    assert rows["intensity_heating_const"][4] == "False"
    assert all(len(r) == 5 for r in rows.values())
    assert rows["temporal_fraction"][3] == "[0.5%, 2%] of total"


# --- config handling ------------------------------------------------------------------

def test_config_file_and_flag_precedence(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"r": 0.25}))
    _, out, _ = call(capsys, "sideband", "--config", str(cfg))
    assert results(out)["n_bar"]["value"] == pytest.approx(1 / 3)
    _, out, _ = call(capsys, "sideband", "--config", str(cfg), "--r", "0.5")
    assert results(out)["n_bar"]["value"] == 1.0


def test_nested_config_sections(capsys, tmp_path):
    cfg = tmp_path / "servo.json"
    cfg.write_text(json.dumps({"plant": {"dead_time_s": 3e-7}, "controller": {"kp": 0.15}}))
    code, out, _ = call(capsys, "servo", "--config", str(cfg), "--t-end-s", "2e-5")
    assert code == 0
    assert json.loads(out)["config"]["dead_time_s"] == 3e-7


@pytest.mark.parametrize("content", ['{"nu_par": 1}', '{"r": "half"}', "[1, 2]", "{broken"])
def test_bad_config_rejected(capsys, tmp_path, content):
    cfg = tmp_path / "c.json"
    cfg.write_text(content)
    code, _, err = call(capsys, "sideband", "--config", str(cfg))
    assert code == 2
    assert err


def test_config_echoed(capsys):
    _, out, _ = call(capsys, "heating", "--nu-par-hz", "100e3")
    assert json.loads(out)["config"]["nu_par_hz"] == 100e3


# --- determinism and output ---------------------------------------------------------------

@pytest.mark.parametrize("fmt", ["json", "csv"])
def test_byte_identical_reruns(capsys, fmt):
    argv = ("mc-dop", "--seed", "11", "--n-samples", "20000", "--format", fmt)
    _, a, _ = call(capsys, *argv)
    _, b, _ = call(capsys, *argv)
    assert a == b
    _, c, _ = call(capsys, "mc-dop", "--seed", "12", "--n-samples", "20000", "--format", fmt)
    assert c != a


def test_seed_from_environment(capsys, monkeypatch):
    monkeypatch.setenv(cli.SEED_ENV, "11")
    _, env_out, _ = call(capsys, "mc-dop", "--n-samples", "20000")
    monkeypatch.delenv(cli.SEED_ENV)
    _, flag_out, _ = call(capsys, "mc-dop", "--n-samples", "20000", "--seed", "11")
    assert env_out == flag_out
    monkeypatch.setenv(cli.SEED_ENV, "eleven")
    assert call(capsys, "mc-dop", "--n-samples", "20000")[0] == 2


def test_atomic_output(capsys, tmp_path):
    target = tmp_path / "sub" / "report.csv"
    code, out, _ = call(capsys, "budget", "--format", "csv", "-o", str(target))
    assert code == 0 and out == ""
    text = target.read_text()
    assert text.startswith("# command: budget")
    assert "quantity,value,unit" in text
    assert [p.name for p in target.parent.iterdir()] == ["report.csv"]


def test_csv_rows_carry_units(capsys):
    _, out, _ = call(capsys, "heating", "--format", "csv")
    rows = [ln.split(",") for ln in out.splitlines() if not ln.startswith("#")]
    assert rows[0] == ["quantity", "value", "unit"]
    assert all(len(r) == 3 and r[2] for r in rows[1:])


def test_every_json_result_has_unit(capsys):
    for argv in (("budget",), ("heating",), ("sideband", "--r", "0.3"), ("transport", "--duration-s", "1e-4")):
        _, out, _ = call(capsys, *argv)
        assert all_units_paired(results(out))


@pytest.mark.parametrize("name", sorted(cli.COMMANDS))
def test_help_shows_formula(name):
    text = cli.build_parser()._subparsers._group_actions[0].choices[name].format_help()
    formula = cli.COMMANDS[name][3].split("\n")[-1].strip()
    assert formula in text


def test_console_script_entry_point():
    env = dict(os.environ)
    out = subprocess.run(
        [sys.executable, "-m", "polsynth.cli", "sideband", "--r", "0.9"], env=env, capture_output=True, text=True
    )
    assert out.returncode == 0
    assert results(out.stdout)["n_bar"]["value"] == pytest.approx(9.0)
