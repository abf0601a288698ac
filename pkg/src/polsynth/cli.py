"""``polsynth`` command-line interface.

Every subcommand resolves its parameters as built-in defaults, then an
optional JSON ``--config`` file, then explicit flags (flags win).  Reports
echo the resolved configuration and pair every number with its unit.
Identical configuration and seed give byte-identical output.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import heating, noise, servo, storage, transport
from . import polarization as pol
from .constants import CS_MASS, GAMMA_SCATTER, H, LAMBDA_MAGIC, NU_PAR, NU_PERP
from .errors import InputError, NumericalError

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL, EXIT_REPRODUCE = 0, 2, 3, 4
SEED_ENV = "POLSYNTH_SEED"


@dataclass(frozen=True)
class Param:
    key: str
    default: object
    kind: type  # float, int, bool or str
    help: str = ""
    aliases: tuple = ()


def _data_path(name: str) -> str:
    return str(resources.files("polsynth.data").joinpath(name))


# ---------------------------------------------------------------------------
# config resolution

def _flag(key: str) -> str:
    return "--" + key.replace("_", "-")


def _add_params(parser: argparse.ArgumentParser, params):
    for p in params:
        names = [_flag(p.key), *p.aliases]
        if p.kind is bool:
            parser.add_argument(*names, dest=p.key, action=argparse.BooleanOptionalAction, default=None, help=p.help)
        else:
            parser.add_argument(*names, dest=p.key, type=p.kind, default=None, metavar=p.kind.__name__.upper(), help=p.help)


def _flatten(data: dict) -> dict:
    """Nested sections (``{"plant": {...}}``) are merged into one level."""
    flat = {}
    for k, v in data.items():
        if isinstance(v, dict):
            for k2, v2 in _flatten(v).items():
                flat[k2] = v2
        else:
            flat[k] = v
    return flat


def _coerce(p: Param, value):
    if value is None:
        return None
    try:
        if p.kind is bool:
            if not isinstance(value, bool):
                raise ValueError(f"expected true/false, got {value!r}")
            return value
        if p.kind is int:
            if isinstance(value, bool) or int(value) != float(value):
                raise ValueError(f"expected an integer, got {value!r}")
            return int(value)
        if p.kind is float:
            if isinstance(value, bool):
                raise ValueError(f"expected a number, got {value!r}")
            return float(value)
        return str(value)
    except (TypeError, ValueError) as exc:
        raise InputError(f"config key {p.key!r}: {exc}") from None


def resolve_config(params, args: argparse.Namespace) -> dict:
    cfg = {p.key: p.default for p in params}
    if getattr(args, "config", None):
        try:
            data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise InputError(f"cannot read config {args.config}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise InputError(f"{args.config}: {exc}") from None
        if not isinstance(data, dict):
            raise InputError(f"{args.config}: top level must be a JSON object")
        data = _flatten(data)
        by_key = {p.key: p for p in params}
        unknown = sorted(set(data) - set(by_key))
        if unknown:
            raise InputError(f"unknown config keys: {unknown}")
        for k, v in data.items():
            cfg[k] = _coerce(by_key[k], v)
    for p in params:
        v = getattr(args, p.key, None)
        if v is not None:
            cfg[p.key] = v
    return cfg


def resolve_seed(args) -> int:
    if args.seed is not None:
        return int(args.seed)
    env = os.environ.get(SEED_ENV)
    if env is None or env.strip() == "":
        return 0
    try:
        return int(env)
    except ValueError:
        raise InputError(f"{SEED_ENV} must be an integer, got {env!r}") from None


# ---------------------------------------------------------------------------
# reports

def q(value, unit: str) -> dict:
    """A number paired with its unit."""
    if isinstance(value, (np.floating, np.integer)):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        value = repr(value)  # JSON has no inf/nan
    return {"value": value, "unit": unit}


@dataclass
class Report:
    command: str
    config: dict
    results: dict
    table: tuple | None = None  # (header, rows) for CSV output
    notes: tuple = ()
    checks: list | None = None

    def to_json(self) -> str:
        body = {"command": self.command, "config": self.config, "results": self.results}
        if self.notes:
            body["notes"] = list(self.notes)
        if self.checks is not None:
            body["checks"] = self.checks
        return json.dumps(body, indent=2, allow_nan=False) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# command: {self.command}\n")
        buf.write(f"# config: {json.dumps(self.config, sort_keys=True, allow_nan=False)}\n")
        for n in self.notes:
            buf.write(f"# note: {n}\n")
        out = csv.writer(buf, lineterminator="\n")
        if self.table is not None:
            header, rows = self.table
            out.writerow(header)
            out.writerows([_csv_cell(v) for v in row] for row in rows)
        elif self.checks is not None:
            out.writerow(("check", "value", "unit", "target", "passed"))
            for c in self.checks:
                out.writerow((c["name"], _csv_cell(c["value"]), c["unit"], c["target"], c["passed"]))
        else:
            out.writerow(("quantity", "value", "unit"))
            for name, r in self.results.items():
                out.writerow((name, _csv_cell(r["value"]), r["unit"]))
        return buf.getvalue()


def _csv_cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_atomic(path: str, text: str):
    """Write via a temporary file in the target directory and rename."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# subcommands

BUDGET_PARAMS = (
    Param("phase_psd", _data_path("psd_phase.csv"), str, "phase PSD CSV (freq_hz,value,unit)"),
    Param("rin_r_psd", _data_path("psd_rin_r.csv"), str, "R-beam RIN PSD CSV"),
    Param("rin_l_psd", _data_path("psd_rin_l.csv"), str, "L-beam RIN PSD CSV"),
    Param("epsilon", 0.0, float, "ellipticity sin(chi) of the target state"),
    Param("eta_spatial", 5e-5, float, "extinction ratio from the spatial profile"),
    Param("f_lo_hz", 1.0, float, "lower integration limit"),
    Param("f_hi_hz", 25e6, float, "upper integration limit"),
    Param("ssb", False, bool, "read dBc/Hz phase levels as single-sideband L(f), S = 2*10^(L/10)"),
)


def _load_linear(path, ssb):
    try:
        psd = noise.read_psd_csv(path)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    return noise.dbc_to_linear(psd, ssb=ssb) if psd.unit == noise.DBC_PER_HZ else psd


def cmd_budget(cfg, seed) -> Report:
    phase = _load_linear(cfg["phase_psd"], cfg["ssb"])
    b = noise.budget(
        phase,
        _load_linear(cfg["rin_r_psd"], cfg["ssb"]),
        _load_linear(cfg["rin_l_psd"], cfg["ssb"]),
        cfg["epsilon"],
        cfg["eta_spatial"],
        band=(cfg["f_lo_hz"], cfg["f_hi_hz"]),
    )
    results = {
        "sigma_chi": q(b.sigma_chi, "rad"),
        "sigma_chi_deg": q(math.degrees(b.sigma_chi), "deg"),
        "sigma_psi": q(b.sigma_psi, "rad"),
        "sigma_psi_deg": q(math.degrees(b.sigma_psi), "deg"),
        "eta_intensity": q(b.eta_intensity, "1"),
        "eta_phase": q(b.eta_phase, "1"),
        "eta_spatial": q(b.eta_spatial, "1"),
        "eta_total": q(b.eta_total, "1"),
        "dop": q(b.dop, "1"),
        "temporal_fraction": q(b.temporal_fraction, "1"),
    }
    return Report("budget", cfg, results)


STORAGE_PARAMS = (
    Param("q_phase_per_s", 1.37, float, "phase-noise excitation rate (quanta/s)", ("--q-phase",)),
    Param("q_recoil_per_s", 0.025, float, "recoil excitation rate (quanta/s)", ("--q-recoil",)),
    Param("gamma_int_per_s", 2e-3, float, "parametric heating constant", ("--gamma-int",)),
    Param("tau_coll_s", 300.0, float, "background-collision lifetime", ("--tau-coll",)),
    Param("t0_k", 7.8e-6, float, "initial temperature", ("--t0",)),
    Param("n_max", 14, int, "number of bound levels"),
    Param("nu_par_hz", NU_PAR, float, "axial trap frequency"),
    Param("t_end_s", 30.0, float, "last output time of the simulated curve"),
    Param("n_times", 301, int, "number of output times"),
    Param("data", None, str, "survival CSV (time_s,survival[,stderr]); fit instead of simulate"),
)


def _loss_params(cfg) -> storage.LossModelParams:
    return storage.LossModelParams(
        q_phase=cfg["q_phase_per_s"],
        q_recoil=cfg["q_recoil_per_s"],
        gamma_int=cfg["gamma_int_per_s"],
        tau_coll=cfg["tau_coll_s"],
        t0=cfg["t0_k"],
        n_max=cfg["n_max"],
        nu_par=cfg["nu_par_hz"],
    )


def cmd_storage(cfg, seed) -> Report:
    params = _loss_params(cfg)
    if cfg["data"]:
        try:
            observed = storage.read_survival_csv(cfg["data"])
        except OSError as exc:
            raise InputError(f"cannot read {cfg['data']}: {exc.strerror}") from None
        fit = storage.fit_storage(observed, params)
        results = {
            "q_phase": q(fit.q_phase, "quanta/s"),
            "q_phase_err": q(fit.q_phase_err, "quanta/s"),
            "t0": q(fit.t0, "K"),
            "t0_err": q(fit.t0_err, "K"),
            "chi2": q(fit.residual, "1"),
            "dof": q(fit.dof, "1"),
        }
        return Report("storage", cfg, results, notes=("mode: fit (q_phase, t0 free; other rates fixed)",))
    if cfg["n_times"] < 2 or not cfg["t_end_s"] > 0:
        raise InputError("need n_times >= 2 and t_end_s > 0")
    times = np.linspace(0.0, cfg["t_end_s"], cfg["n_times"])
    curve = storage.evolve(params, t_grid=times)
    init = storage.boltzmann_init(params.t0, params.nu_par, params.n_max)
    results = {
        "half_life": q(storage.find_half_life(params, init), "s"),
        "initial_mean_n": q(init.mean_n, "quanta"),
        "survival_at_t_end": q(float(curve.survival[-1]), "1"),
    }
    rows = [(t, s) for t, s in zip(curve.times, curve.survival)]
    return Report("storage", cfg, results, table=(("time_s", "survival"), rows), notes=("mode: simulate",))


def _servo_params():
    d = servo.default_config().to_dict()
    pl, ct = d["plant"], d["controller"]
    return (
        Param("dead_time_s", pl["dead_time_s"], float, "actuator dead time"),
        Param("actuator_pole_hz", pl["actuator_pole_hz"], float, "actuator first-order pole"),
        Param("gain", pl["gain"], float, "actuator DC gain"),
        Param("kp", ct["kp"], float, "proportional gain"),
        Param("ki_per_s", ct["ki_per_s"], float, "integral gain"),
        Param("kii_per_s2", ct["kii_per_s2"], float, "double-integral gain"),
        Param("kd_s", ct["kd_s"], float, "derivative gain"),
        Param("derivative_rolloff_hz", ct["derivative_rolloff_hz"], float, "derivative roll-off"),
        Param("dt_s", d["dt_s"], float, "simulation step"),
        Param("t_end_s", d["t_end_s"], float, "simulated duration"),
        Param("response", "step", str, "CSV table to emit: step (t_s,value) or freq (freq_hz,mag_db)"),
    )


def cmd_servo(cfg, seed) -> Report:
    if cfg["response"] not in ("step", "freq"):
        raise InputError("response must be 'step' or 'freq'")
    plant = servo.PlantModel(cfg["dead_time_s"], cfg["actuator_pole_hz"], cfg["gain"])
    ctrl = servo.ControllerParams(
        cfg["kp"], cfg["ki_per_s"], cfg["kii_per_s2"], cfg["kd_s"], cfg["derivative_rolloff_hz"]
    )
    step = servo.simulate_step(plant, ctrl, cfg["dt_s"], cfg["t_end_s"])
    fr = servo.freq_response(servo.impulse_from_step(step))
    results = {
        "bandwidth_3db": q(servo.bandwidth_3db(fr), "Hz"),
        "overshoot": q(servo.overshoot(step), "1"),
        "settling_time_2pct": q(servo.settling_time(step, 0.02), "s"),
        "dc_gain": q(fr.dc_gain, "1"),
        "final_value": q(float(step.values[-1]), "1"),
    }
    if cfg["response"] == "step":
        table = (("t_s", "value"), list(zip(step.times, step.values)))
    else:
        keep = fr.freq <= 20.0 * results["bandwidth_3db"]["value"]
        table = (("freq_hz", "mag_db"), list(zip(fr.freq[keep], fr.magnitude_db[keep])))
    return Report("servo", cfg, results, table=table)


HEATING_PARAMS = (
    Param("s_dbc", -122.0, float, "lattice phase noise at the trap frequency (dBc/Hz)"),
    Param("s_rad2_per_hz", None, float, "same in rad^2/Hz; overrides s_dbc when given"),
    Param("ssb", False, bool, "read s_dbc as single-sideband L(f), S = 2*10^(L/10)"),
    Param("rin2_per_hz", 1.4e-14, float, "relative intensity noise at twice the trap frequency"),
    Param("axis", "par", str, "trap axis: par or perp"),
    Param("nu_par_hz", NU_PAR, float, "axial trap frequency"),
    Param("nu_perp_hz", NU_PERP, float, "radial trap frequency"),
    Param("lambda_m", LAMBDA_MAGIC, float, "lattice wavelength"),
    Param("mass_kg", CS_MASS, float, "atomic mass"),
    Param("gamma_scatter_per_s", GAMMA_SCATTER, float, "photon scattering rate"),
)


def cmd_heating(cfg, seed) -> Report:
    lat = heating.LatticeConfig(
        lambda_=cfg["lambda_m"],
        mass=cfg["mass_kg"],
        nu_par=cfg["nu_par_hz"],
        nu_perp=cfg["nu_perp_hz"],
        gamma_scatter=cfg["gamma_scatter_per_s"],
    )
    if cfg["s_rad2_per_hz"] is not None:
        s_phi = cfg["s_rad2_per_hz"]
        convention = "phase PSD given directly in rad^2/Hz"
    else:
        s_phi = noise.dbc_value_to_linear(cfg["s_dbc"], ssb=cfg["ssb"])
        convention = "S = 2*10^(L/10) (single-sideband L(f))" if cfg["ssb"] else "S = 10^(L/10) (level read as S_phi)"
    nu = lat.nu(cfg["axis"])
    gamma_int = heating.heating_const_intensity(cfg["rin2_per_hz"], nu)
    results = {
        "s_phi": q(s_phi, "rad^2/Hz"),
        "q_phase": q(heating.heating_rate_phase(s_phi, lat, cfg["axis"]), "quanta/s"),
        "q_recoil": q(heating.heating_rate_recoil(lat, cfg["axis"]), "quanta/s"),
        "gamma_int": q(gamma_int, "1/s"),
        "ground_state_lifetime_intensity": q(heating.intensity_ground_lifetime(gamma_int), "s"),
        "trap_depth": q(heating.depth_in_kelvin(lat), "K"),
        "bound_levels": q(heating.n_bound_levels(lat), "1"),
        "recoil_energy": q(heating.recoil_energy(lat) / H, "Hz"),
    }
    return Report("heating", cfg, results, notes=(f"dBc convention: {convention}",))


TRANSPORT_PARAMS = (
    Param("ramp", None, str, "ramp JSON (kind, distance_m, duration_s[, samples_m])"),
    Param("kind", "smooth_minjerk", str, "smooth_minjerk or bangbang when no ramp file is given"),
    Param("distance_m", 433e-9, float, "transport distance"),
    Param("duration_s", 1e-3, float, "ramp duration"),
    Param("nu_hz", NU_PAR, float, "trap frequency along the transport"),
    Param("mass_kg", CS_MASS, float, "atomic mass"),
    Param("oracle", False, bool, "also integrate the oscillator in the time domain"),
)


def cmd_transport(cfg, seed) -> Report:
    if cfg["ramp"]:
        try:
            ramp = transport.TransportRamp.from_json(cfg["ramp"])
        except OSError as exc:
            raise InputError(f"cannot read {cfg['ramp']}: {exc.strerror}") from None
    else:
        ramp = transport.TransportRamp(cfg["kind"], cfg["distance_m"], cfg["duration_s"])
    res = transport.final_excitation(ramp, cfg["nu_hz"], cfg["mass_kg"])
    results = {
        "n_bar": q(res.n_bar, "quanta"),
        "residual_energy": q(res.residual_energy, "J"),
        "ramp_duration": q(ramp.duration, "s"),
        "ramp_distance": q(ramp.distance, "m"),
    }
    if cfg["oracle"]:
        td = transport.excitation_time_domain(ramp, cfg["nu_hz"], cfg["mass_kg"])
        results["n_bar_time_domain"] = q(td.n_bar, "quanta")
    return Report("transport", cfg, results)


SIDEBAND_PARAMS = (
    Param("r", None, float, "cooling/heating sideband height ratio"),
    Param("spectrum", None, str, "sideband CSV (detuning_hz,transfer_prob) to fit"),
    Param("nu_guess_hz", NU_PAR, float, "initial guess for the sideband spacing"),
)


def cmd_sideband(cfg, seed) -> Report:
    if cfg["spectrum"]:
        try:
            spec = transport.SidebandSpectrum.from_csv(cfg["spectrum"])
        except OSError as exc:
            raise InputError(f"cannot read {cfg['spectrum']}: {exc.strerror}") from None
        fit = transport.fit_sideband(spec, cfg["nu_guess_hz"])
        results = {
            "r": q(fit.r, "1"),
            "n_bar": q(transport.sideband_nbar(fit.r), "quanta"),
            "nu": q(fit.nu, "Hz"),
            "height_cooling": q(fit.peak_heights[0], "1"),
            "height_carrier": q(fit.peak_heights[1], "1"),
            "height_heating": q(fit.peak_heights[2], "1"),
            "width_rms": q(fit.width, "Hz"),
        }
    elif cfg["r"] is not None:
        results = {"r": q(cfg["r"], "1"), "n_bar": q(transport.sideband_nbar(cfg["r"]), "quanta")}
    else:
        raise InputError("give either --r or --spectrum")
    return Report("sideband", cfg, results)


MC_PARAMS = (
    Param("sigma_psi_rad", 0.01, float, "RMS of the relative beam phase"),
    Param("rin_r", 0.01, float, "relative intensity noise RMS, R beam"),
    Param("rin_l", 0.01, float, "relative intensity noise RMS, L beam"),
    Param("epsilon", 0.0, float, "ellipticity sin(chi)"),
    Param("n_samples", 100_000, int, "Monte Carlo samples"),
)


def cmd_mc_dop(cfg, seed) -> Report:
    mc = noise.monte_carlo_dop(
        cfg["sigma_psi_rad"], cfg["rin_r"], cfg["rin_l"], cfg["epsilon"], cfg["n_samples"], seed, return_stderr=True
    )
    inten = pol.dop_from_intensity_noise(cfg["rin_r"], cfg["rin_l"], cfg["epsilon"])
    phase = pol.dop_from_phase_noise(cfg["sigma_psi_rad"], cfg["epsilon"])
    closed = 1.0 - (1.0 - inten.dop) - (1.0 - phase.dop)
    results = {
        "dop_mc": q(mc.dop, "1"),
        "dop_mc_stderr": q(mc.stderr, "1"),
        "dop_closed_form": q(closed, "1"),
        "z_score": q((mc.dop - closed) / mc.stderr if mc.stderr > 0 else 0.0, "1"),
    }
    cfg = dict(cfg, seed=seed)
    return Report("mc-dop", cfg, results)


# ---------------------------------------------------------------------------
# reproduce-paper

def _check(name, value, unit, lo, hi, target):
    return {
        "name": name,
        "value": float(value),
        "unit": unit,
        "target": target,
        "passed": bool(lo <= value <= hi),
    }


def cmd_reproduce(cfg, seed) -> Report:
    checks = []
    b = cmd_budget({p.key: p.default for p in BUDGET_PARAMS}, seed).results
    sc = b["sigma_chi_deg"]["value"]
    checks.append(_check("intensity_sigma_chi", sc, "deg", 0.021, 0.025, "0.023 +/- 0.002 deg"))
    ei = b["eta_intensity"]["value"]
    checks.append(_check("intensity_eta", ei, "1", 3.9e-8 * 0.85, 3.9e-8 * 1.15, "3.9e-8 +/- 15%"))
    ep = b["eta_phase"]["value"]
    checks.append(_check("phase_eta", ep, "1", 7.6e-7 * 0.9, 7.6e-7 * 1.1, "7.6e-7 +/- 10%"))
    dop_pct = 100.0 * b["dop"]["value"]
    checks.append(_check("total_dop", dop_pct, "%", 99.989, 99.991, "99.99 +/- 0.001 %"))
    tf = b["temporal_fraction"]["value"]
    checks.append(_check("temporal_fraction", tf, "1", 0.005, 0.02, "[0.5%, 2%] of total"))

    dx = heating.position_from_phase(math.radians(0.1), LAMBDA_MAGIC)
    checks.append(_check("position_uncertainty", dx * 1e10, "angstrom", 1.20 * 0.98, 1.20 * 1.02, "1.20 +/- 2%"))

    for ssb in (False, True):
        qd = heating.heating_rate_phase(noise.dbc_value_to_linear(-122.0, ssb=ssb))
        checks.append(_check(f"phase_heating_{'ssb' if ssb else 'plain'}", qd, "quanta/s", 0.6, 1.3, "[0.6, 1.3]"))
    g = heating.heating_const_intensity(1.4e-14)
    checks.append(_check("intensity_heating_const", g, "1/s", 1.9e-3 * 0.9, 1.9e-3 * 1.1, "1.9e-3 +/- 10%"))

    params = storage.LossModelParams()
    hl = storage.find_half_life(params)
    checks.append(_check("storage_half_life", hl, "s", 6.6 * 0.8, 6.6 * 1.2, "6.6 +/- 20%"))
    coll = storage.LossModelParams(q_phase=0, q_recoil=0, gamma_int=0)
    times = np.linspace(0, 30, 301)
    dev = float(np.max(np.abs(storage.evolve(coll, t_grid=times).survival - np.exp(-times / coll.tau_coll))))
    checks.append(_check("storage_collision_limit", dev, "1", 0.0, 1e-9, "|S - exp(-t/tau)| < 1e-9"))
    fit = storage.fit_storage(storage.read_survival_csv(_data_path("survival_synthetic.csv")), params)
    checks.append(_check("storage_fit_q_phase", fit.q_phase, "quanta/s", 1.37 - 0.06, 1.37 + 0.06, "1.37 +/- 0.06"))
    checks.append(_check("storage_fit_t0", fit.t0 * 1e6, "uK", 7.8 - 0.7, 7.8 + 0.7, "7.8 +/- 0.7 uK"))

    sc_ = servo.default_config()
    bw = servo.loop_bandwidth(sc_.plant, sc_.controller, sc_.dt, sc_.t_end)
    checks.append(_check("servo_bandwidth", bw, "Hz", 680e3, 920e3, "[680, 920] kHz"))

    for name, limit in (("ramp_minjerk_1ms.json", 1e-6), ("ramp_bangbang_matched.json", 1e-3)):
        ramp = transport.TransportRamp.from_json(_data_path(name))
        nb = transport.final_excitation(ramp, NU_PAR).n_bar
        checks.append(_check(f"transport_{name.split('_')[1]}", nb, "quanta", 0.0, limit, f"< {limit:g}"))

    fit_sb = transport.fit_sideband(transport.SidebandSpectrum.from_csv(_data_path("sideband_synthetic.csv")), NU_PAR)
    checks.append(_check("sideband_ratio", fit_sb.r, "1", 0.1 * 0.99, 0.1 * 1.01, "0.1 +/- 1%"))
    checks.append(_check("sideband_nbar_half", transport.sideband_nbar(0.5), "quanta", 1.0, 1.0, "1 exactly"))

    n_pass = sum(c["passed"] for c in checks)
    results = {"passed": q(n_pass, "checks"), "failed": q(len(checks) - n_pass, "checks")}
    return Report("reproduce-paper", cfg, results, checks=checks)


# ---------------------------------------------------------------------------

COMMANDS = {
    "budget": (
        cmd_budget,
        BUDGET_PARAMS,
        "Polarization noise budget.",
        "Integrates the phase and intensity PSDs over the band, then\n"
        "  sigma_chi^2 = (rin_r^2 + rin_l^2)/4 * (1 - eps^2),  DOP_int = 1 - sigma_chi^2/2\n"
        "  DOP_phase = 1 - (1 - eps^2) sigma_psi^2 / 2\n"
        "  eta = (1 - DOP)/2 per source, eta_total = eta_int + eta_phase + eta_spatial",
    ),
    "storage": (
        cmd_storage,
        STORAGE_PARAMS,
        "Storage-time master equation: simulate, or fit a survival CSV.",
        "Level ladder n = 0..n_max-1 from a Boltzmann start at t0, with rates\n"
        "  n -> n+1: q (n+1),  n -> n-1: q n,  q = q_phase + q_recoil\n"
        "  n -> n+2: Gamma/8 (n+1)(n+2),  n -> n-2: Gamma/8 n(n-1)\n"
        "  leaving the top level or colliding (rate 1/tau_coll) loses the atom",
    ),
    "servo": (
        cmd_servo,
        (),  # filled lazily, needs the packaged default gains
        "Phase-lock loop step response and 3 dB bandwidth.",
        "C(s) = kp + ki/s + kii/s^2 + kd s/(1 + s/(2 pi f_d)) (bilinear), plant\n"
        "  P(s) = g exp(-s T_dead) / (1 + s/(2 pi f_pole)), unity feedback.\n"
        "  Bandwidth: step -> derivative -> FFT -> first -3 dB point.",
    ),
    "heating": (
        cmd_heating,
        HEATING_PARAMS,
        "Motional heating rates of the lattice.",
        "  Qdot_phase = pi^3 m nu^3 S_phi(nu) / (2 hbar k^2)   (golden rule, S_x = S_phi/(4k^2))\n"
        "  Qdot_recoil = 1.4 gamma E_rec / (h nu)\n"
        "  Gamma = pi^2 nu^2 S_RIN(2 nu),  ground-state lifetime 4/Gamma",
    ),
    "transport": (
        cmd_transport,
        TRANSPORT_PARAMS,
        "Motional excitation left by a transport ramp.",
        "  n_bar = (m/2) |int a(t) exp(i 2 pi nu t) dt|^2 / (h nu),  a = x0''(t)",
    ),
    "sideband": (
        cmd_sideband,
        SIDEBAND_PARAMS,
        "Mean occupation from the sideband ratio or a fitted spectrum.",
        "  n_bar = r / (1 - r),  r = h_cooling / h_heating",
    ),
    "mc-dop": (
        cmd_mc_dop,
        MC_PARAMS,
        "Monte Carlo DOP versus the closed-form noise formulas.",
        "  each phase ~ N(0, sigma_psi^2/2), I_R,L = (1 +/- eps)/2 (1 + rin g),\n"
        "  DOP = |<S1,S2,S3>| / <S0> compared with 1 - sigma_chi^2/2 - (1-eps^2) sigma_psi^2/2",
    ),
    "reproduce-paper": (
        cmd_reproduce,
        (),
        "Run every shipped fixture against the published targets.",
        "  Exit status 4 when any check falls outside its tolerance.",
    ),
}


def _params_for(name):
    return _servo_params() if name == "servo" else COMMANDS[name][1]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with unit-suffixed keys; flags override it")
    common.add_argument("--seed", type=int, default=None, help=f"random seed (default: ${SEED_ENV} or 0)")
    common.add_argument("--output", "-o", default=None, help="write the report here (atomically) instead of stdout")
    common.add_argument("--format", choices=("json", "csv"), default="json")

    parser = argparse.ArgumentParser(prog="polsynth", description="Polarization synthesizer and lattice digital twin.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, _, summary, formula) in COMMANDS.items():
        sp = sub.add_parser(
            name,
            parents=[common],
            help=summary,
            description=f"{summary}\n\n{formula}",
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        _add_params(sp, _params_for(name))
    return parser


def run(argv=None) -> tuple[int, str]:
    """Parse and execute; returns ``(exit_code, report_text)``."""
    args = build_parser().parse_args(argv)
    func = COMMANDS[args.command][0]
    cfg = resolve_config(_params_for(args.command), args)
    seed = resolve_seed(args)
    report = func(cfg, seed)
    text = report.to_csv() if args.format == "csv" else report.to_json()
    if args.output:
        write_atomic(args.output, text)
    else:
        sys.stdout.write(text)
    if report.checks is not None and not all(c["passed"] for c in report.checks):
        return EXIT_REPRODUCE, text
    return EXIT_OK, text


def main(argv=None) -> int:
    try:
        code, _ = run(argv)
        return code
    except InputError as exc:
        print(f"polsynth: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"polsynth: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
