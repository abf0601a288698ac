import json
import math
from dataclasses import replace

import numpy as np
import pytest

from polsynth import servo
from polsynth.errors import InputError, NumericalError

NO_DELAY = servo.PlantModel(dead_time=0.0, actuator_pole=math.inf)


def first_order_record(tau, dt, t_end):
    t = np.arange(int(round(t_end / dt)) + 1) * dt
    return servo.ResponseRecord(t, np.exp(-t / tau) / tau)


# --- step --------------------------------------------------------------------

def test_integrator_loop_is_first_order():
    k = 1e6
    step = servo.simulate_step(NO_DELAY, servo.ControllerParams(ki=k), 1e-9, 20e-6)
    assert np.max(np.abs(step.values - (1 - np.exp(-k * step.times)))) < 2e-3


def test_integrator_loop_bandwidth():
    k = 2e6
    bw = servo.loop_bandwidth(NO_DELAY, servo.ControllerParams(ki=k), 1e-9, 10e-6)
    assert bw == pytest.approx(k / (2 * math.pi), rel=0.03)


def test_zero_gains_stay_zero():
    step = servo.simulate_step(servo.PlantModel(), servo.ControllerParams(), 1e-9, 2e-6)
    assert not np.any(step.values)
    assert step.values.size == 2001


def test_step_is_deterministic():
    cfg = servo.default_config()
    a = servo.simulate_step(cfg.plant, cfg.controller, cfg.dt, 10e-6)
    b = servo.simulate_step(cfg.plant, cfg.controller, cfg.dt, 10e-6)
    assert np.array_equal(a.values, b.values)


def test_dead_time_delays_response():
    plant = servo.PlantModel(dead_time=300e-9, actuator_pole=math.inf)
    step = servo.simulate_step(plant, servo.ControllerParams(kp=0.5), 1e-9, 2e-6)
    assert not np.any(step.values[:300])
    assert step.values[301] == pytest.approx(0.5)


def test_step_preconditions():
    plant, ctrl = servo.PlantModel(), servo.ControllerParams(ki=1e6)
    with pytest.raises(InputError, match="dead time"):
        servo.simulate_step(plant, ctrl, 50e-9, 10e-6)
    with pytest.raises(InputError, match="actuator"):
        servo.simulate_step(servo.PlantModel(dead_time=0.0, actuator_pole=10e6), ctrl, 1e-8, 1e-6)
    with pytest.raises(InputError, match="integer multiple"):
        servo.simulate_step(plant, ctrl, 0.7e-9, 1e-6)
    with pytest.raises(InputError):
        servo.simulate_step(plant, ctrl, 1e-9, 0.5e-9)


def test_unstable_loop_reported():
    plant = servo.PlantModel(dead_time=300e-9, actuator_pole=math.inf)
    with pytest.raises(NumericalError, match="unstable"):
        servo.simulate_step(plant, servo.ControllerParams(kp=3.0), 1e-9, 20e-6)


def test_type_validation():
    with pytest.raises(InputError):
        servo.PlantModel(dead_time=-1e-9)
    with pytest.raises(InputError):
        servo.PlantModel(actuator_pole=0.0)
    with pytest.raises(InputError):
        servo.ControllerParams(kp=-0.1)
    with pytest.raises(InputError):
        servo.ControllerParams(derivative_rolloff=0.0)


# --- impulse -----------------------------------------------------------------

@pytest.mark.parametrize("dt", [1e-8, 5e-9])
def test_impulse_of_exponential_step(dt):
    tau = 1e-6
    t = np.arange(2001) * dt
    imp = servo.impulse_from_step(servo.ResponseRecord(t, 1 - np.exp(-t / tau)))
    inner = np.abs(imp.values[1:-1] - np.exp(-t[1:-1] / tau) / tau) * tau
    assert inner.max() < (dt / tau) ** 2  # central difference error ~ (dt/tau)^2 / 6


def test_impulse_trivial_records():
    t = np.linspace(0, 1, 101)
    assert not np.any(servo.impulse_from_step(servo.ResponseRecord(t, np.full_like(t, 0.7))).values)
    assert servo.impulse_from_step(servo.ResponseRecord(t, 3 * t)).values == pytest.approx(np.full_like(t, 3.0))
    with pytest.raises(InputError):
        servo.impulse_from_step(servo.ResponseRecord(np.array([0, 1, 3.0]), np.zeros(3)))


# --- frequency response ---------------------------------------------------------

@pytest.mark.parametrize("tau", [1e-7, 1e-6])
def test_lorentzian_bandwidth(tau):
    dt = tau / 200
    fr = servo.freq_response(first_order_record(tau, dt, 15 * tau))
    assert servo.bandwidth_3db(fr) == pytest.approx(1 / (2 * math.pi * tau), rel=0.02)
    assert fr.dc_gain == pytest.approx(1.0, rel=0.01)
    assert fr.magnitude_db[0] == 0.0


def test_delta_impulse_is_flat():
    t = np.arange(1000) * 1e-9
    h = np.zeros_like(t)
    h[0] = 1e9
    fr = servo.freq_response(servo.ResponseRecord(t, h))
    assert np.max(np.abs(fr.magnitude_db)) < 1e-9
    with pytest.raises(NumericalError):
        servo.bandwidth_3db(fr)


def test_undecayed_impulse_rejected():
    with pytest.raises(NumericalError, match="decayed"):
        servo.freq_response(first_order_record(1e-6, 1e-8, 3e-6))
    t = np.arange(10.0)
    with pytest.raises(NumericalError):
        servo.freq_response(servo.ResponseRecord(t, np.zeros_like(t)))


def test_bandwidth_needs_spectrum():
    t = np.arange(10.0)
    with pytest.raises(InputError):
        servo.bandwidth_3db(servo.ResponseRecord(t, t))


# --- shipped loop ------------------------------------------------------------------

@pytest.fixture(scope="module")
def default_pipeline():
    cfg = servo.default_config()
    step = servo.simulate_step(cfg.plant, cfg.controller, cfg.dt, cfg.t_end)
    fr = servo.freq_response(servo.impulse_from_step(step))
    return cfg, step, fr


def test_default_loop_bandwidth(default_pipeline):
    cfg, step, fr = default_pipeline
    assert cfg.plant.dead_time == pytest.approx(300e-9)
    assert servo.bandwidth_3db(fr) == pytest.approx(800e3, rel=0.15)


def test_default_loop_shape(default_pipeline):
    _, step, _ = default_pipeline
    assert step.values[0] == 0.0
    assert abs(step.values[-1] - 1) < 1e-3
    assert servo.overshoot(step) <= 0.20
    assert servo.settling_time(step) < 5e-6


def test_dc_gain_equals_final_value(default_pipeline):
    _, step, fr = default_pipeline
    assert fr.dc_gain == pytest.approx(step.values[-1], abs=1e-3)


@pytest.mark.parametrize(
    "ctrl",
    [
        servo.ControllerParams(ki=3e6),
        servo.ControllerParams(kp=0.1, ki=2e6),
        servo.ControllerParams(kp=0.05, ki=1.5e6, kd=1e-9),
    ],
)
def test_dc_gain_matches_settled_value(ctrl):
    step = servo.simulate_step(servo.PlantModel(), ctrl, 1e-9, 30e-6)
    fr = servo.freq_response(servo.impulse_from_step(step))
    assert fr.dc_gain == pytest.approx(step.values[-1], abs=1e-3)


@pytest.mark.parametrize("c", [0.5, 2.0])
def test_bandwidth_time_rescaling(c):
    cfg = servo.default_config()
    p, k = cfg.plant, cfg.controller
    plant = replace(p, dead_time=p.dead_time * c, actuator_pole=p.actuator_pole / c)
    ctrl = replace(k, ki=k.ki / c, kii=k.kii / c**2, kd=k.kd * c, derivative_rolloff=k.derivative_rolloff / c)
    base = servo.loop_bandwidth(p, k, cfg.dt, cfg.t_end)
    scaled = servo.loop_bandwidth(plant, ctrl, cfg.dt * c, cfg.t_end * c)
    assert scaled == pytest.approx(base / c, rel=1e-6)


def test_settling_and_overshoot_helpers():
    t = np.linspace(0, 1, 11)
    rec = servo.ResponseRecord(t, np.array([0, 0.5, 1.1, 1.05, 1.01, 1, 1, 1, 1, 1, 1.0]))
    assert servo.overshoot(rec) == pytest.approx(0.1)
    assert servo.settling_time(rec) == pytest.approx(0.4)
    assert servo.settling_time(servo.ResponseRecord(t, np.ones(11))) == 0.0
    assert servo.settling_time(servo.ResponseRecord(t, np.zeros(11))) == math.inf


# --- config ----------------------------------------------------------------------

def test_config_roundtrip(tmp_path):
    cfg = servo.default_config()
    p = tmp_path / "servo.json"
    p.write_text(json.dumps(cfg.to_dict()))
    assert servo.ServoConfig.from_json(p) == cfg


def test_config_rejects_unknown_and_garbage(tmp_path):
    with pytest.raises(InputError, match="unknown"):
        servo.ServoConfig.from_dict({"plant": {"deadtime": 1e-7}})
    with pytest.raises(InputError):
        servo.ServoConfig.from_dict({"controller": {"kp": "lots"}})
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(InputError):
        servo.ServoConfig.from_json(p)
