"""Closed-loop servo model and bandwidth extraction.

A PI^2D controller (bilinear-discretized) drives an actuator with dead time
and a first-order low-pass response inside a unity-feedback loop.  The
bandwidth is obtained the way it is measured on the bench: step response,
then impulse response by differentiation, then frequency response by
Fourier transform, then the first -3 dB point.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import kernels
from .errors import InputError, NumericalError


@dataclass(frozen=True)
class PlantModel:
    """Actuator: transport delay, first-order pole (Hz, ``inf`` for none), DC gain."""

    dead_time: float = 300e-9
    actuator_pole: float = 10e6
    gain: float = 1.0

    def __post_init__(self):
        if self.dead_time < 0:
            raise InputError("dead_time must be >= 0")
        if not self.actuator_pole > 0:
            raise InputError("actuator_pole must be > 0")


@dataclass(frozen=True)
class ControllerParams:
    """``C(s) = kp + ki/s + kii/s^2 + kd s / (1 + s / (2 pi f_d))``."""

    kp: float = 0.0
    ki: float = 0.0
    kii: float = 0.0
    kd: float = 0.0
    derivative_rolloff: float = 50e6

    def __post_init__(self):
        if min(self.kp, self.ki, self.kii, self.kd) < 0:
            raise InputError("controller gains must be >= 0")
        if not self.derivative_rolloff > 0:
            raise InputError("derivative_rolloff must be > 0")


@dataclass(frozen=True)
class ResponseRecord:
    times: np.ndarray
    values: np.ndarray
    freq: np.ndarray | None = None
    magnitude_db: np.ndarray | None = None
    dc_gain: float | None = None

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])


def simulate_step(plant: PlantModel, ctrl: ControllerParams, dt: float, t_end: float) -> ResponseRecord:
    """Response of the closed loop to a unit set-point step at ``t = 0``."""
    if not dt > 0 or not t_end > dt:
        raise InputError("need 0 < dt < t_end")
    if plant.dead_time > 0 and dt > plant.dead_time / 10 * (1 + 1e-9):
        raise InputError(f"dt={dt:g} s too coarse for dead time {plant.dead_time:g} s (need dt <= dead_time/10)")
    if math.isfinite(plant.actuator_pole) and dt > 1.0 / (20.0 * plant.actuator_pole) * (1 + 1e-9):
        raise InputError(f"dt={dt:g} s too coarse for a {plant.actuator_pole:g} Hz actuator (need dt <= 1/(20 f))")
    ratio = plant.dead_time / dt
    delay = int(round(ratio))
    if abs(ratio - delay) > 1e-6 * max(1.0, ratio):
        raise InputError(f"dead time {plant.dead_time:g} s is not an integer multiple of dt={dt:g} s")
    n_steps = int(round(t_end / dt))
    a_pole = 0.0 if math.isinf(plant.actuator_pole) else math.exp(-2.0 * math.pi * plant.actuator_pole * dt)
    y = kernels.servo_loop(
        1.0,
        float(ctrl.kp),
        float(ctrl.ki),
        float(ctrl.kii),
        float(ctrl.kd),
        2.0 * math.pi * ctrl.derivative_rolloff,
        a_pole,
        float(plant.gain),
        delay,
        float(dt),
        n_steps,
    )
    if not np.all(np.isfinite(y)) or np.max(np.abs(y)) > 10.0:
        raise NumericalError("closed loop is unstable (output exceeded 10x the set-point step)")
    return ResponseRecord(np.arange(n_steps + 1) * dt, y)


def settling_time(step: ResponseRecord, band: float = 0.02) -> float:
    """Last time the step response is outside ``1 +/- band``."""
    outside = np.nonzero(np.abs(step.values - 1.0) > band)[0]
    if outside.size == 0:
        return 0.0
    if outside[-1] == step.values.size - 1:
        return math.inf
    return float(step.times[outside[-1] + 1])


def overshoot(step: ResponseRecord) -> float:
    return max(0.0, float(step.values.max()) - 1.0)


def _check_uniform(rec: ResponseRecord):
    d = np.diff(rec.times)
    if d.size == 0 or not np.allclose(d, d[0], rtol=1e-9, atol=0):
        raise InputError("record must be on a uniform time grid")


def impulse_from_step(step: ResponseRecord) -> ResponseRecord:
    """Central-difference derivative; first-order one-sided at both ends."""
    _check_uniform(step)
    return ResponseRecord(step.times, np.gradient(step.values, step.dt))


def freq_response(impulse: ResponseRecord, n_fft: int = 2**18) -> ResponseRecord:
    """Fourier transform of the impulse response (times ``dt``).

    Zero-padding to ``n_fft`` samples only refines the frequency grid.
    ``magnitude_db`` is normalized to the DC value, which is kept in ``dc_gain``.
    """
    _check_uniform(impulse)
    h = impulse.values
    peak = np.max(np.abs(h))
    if peak == 0:
        raise NumericalError("impulse response is identically zero")
    tail = np.max(np.abs(h[-max(3, h.size // 100):]))
    if tail > 1e-4 * peak:
        raise NumericalError(f"impulse response has not decayed by t_end (tail/peak = {tail / peak:.2e})")
    n = max(int(n_fft), h.size)
    spec = np.fft.rfft(h, n=n) * impulse.dt
    freq = np.fft.rfftfreq(n, impulse.dt)
    dc = abs(spec[0])
    with np.errstate(divide="ignore"):
        mag_db = 20.0 * np.log10(np.abs(spec) / dc)
    return ResponseRecord(impulse.times, h, freq=freq, magnitude_db=mag_db, dc_gain=float(spec[0].real))


def bandwidth_3db(freq: ResponseRecord) -> float:
    """First frequency where the normalized magnitude drops to -3 dB."""
    if freq.freq is None or freq.magnitude_db is None:
        raise InputError("record carries no frequency response")
    f, m = freq.freq, freq.magnitude_db
    idx = np.nonzero(m[1:] <= -3.0)[0]
    if idx.size == 0:
        raise NumericalError("magnitude never crosses -3 dB on this frequency grid")
    i = int(idx[0]) + 1
    f0, f1, m0, m1 = f[i - 1], f[i], m[i - 1], m[i]
    if f0 <= 0:
        return float(f0 + (f1 - f0) * (m0 + 3.0) / (m0 - m1))
    frac = (m0 + 3.0) / (m0 - m1)
    return float(math.exp(math.log(f0) + frac * math.log(f1 / f0)))


def loop_bandwidth(plant: PlantModel, ctrl: ControllerParams, dt: float, t_end: float) -> float:
    """Step -> impulse -> frequency response -> 3 dB bandwidth in one call."""
    return bandwidth_3db(freq_response(impulse_from_step(simulate_step(plant, ctrl, dt, t_end))))


# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ServoConfig:
    plant: PlantModel
    controller: ControllerParams
    dt: float
    t_end: float

    def to_dict(self) -> dict:
        return {
            "plant": {
                "dead_time_s": self.plant.dead_time,
                "actuator_pole_hz": self.plant.actuator_pole,
                "gain": self.plant.gain,
            },
            "controller": {
                "kp": self.controller.kp,
                "ki_per_s": self.controller.ki,
                "kii_per_s2": self.controller.kii,
                "kd_s": self.controller.kd,
                "derivative_rolloff_hz": self.controller.derivative_rolloff,
            },
            "dt_s": self.dt,
            "t_end_s": self.t_end,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ServoConfig":
        _reject_unknown(data, {"plant", "controller", "dt_s", "t_end_s"}, "servo config")
        pl = data.get("plant", {})
        ct = data.get("controller", {})
        _reject_unknown(pl, {"dead_time_s", "actuator_pole_hz", "gain"}, "plant")
        _reject_unknown(ct, {"kp", "ki_per_s", "kii_per_s2", "kd_s", "derivative_rolloff_hz"}, "controller")
        try:
            plant = PlantModel(
                dead_time=float(pl.get("dead_time_s", 300e-9)),
                actuator_pole=float(pl.get("actuator_pole_hz", 10e6)),
                gain=float(pl.get("gain", 1.0)),
            )
            ctrl = ControllerParams(
                kp=float(ct.get("kp", 0.0)),
                ki=float(ct.get("ki_per_s", 0.0)),
                kii=float(ct.get("kii_per_s2", 0.0)),
                kd=float(ct.get("kd_s", 0.0)),
                derivative_rolloff=float(ct.get("derivative_rolloff_hz", 50e6)),
            )
            return cls(plant, ctrl, float(data.get("dt_s", 1e-9)), float(data.get("t_end_s", 40e-6)))
        except (TypeError, ValueError) as exc:
            raise InputError(f"servo config: {exc}") from None

    @classmethod
    def from_json(cls, path) -> "ServoConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: {exc}") from None


def _reject_unknown(data: dict, allowed: set, what: str):
    if not isinstance(data, dict):
        raise InputError(f"{what} must be a JSON object")
    unknown = set(data) - allowed
    if unknown:
        raise InputError(f"unknown {what} keys: {sorted(unknown)}")


def default_config() -> ServoConfig:
    """Shipped gain set for the 300 ns dead-time phase loop."""
    text = resources.files("polsynth.data").joinpath("servo_default.json").read_text(encoding="utf-8")
    return ServoConfig.from_dict(json.loads(text))
