"""Regenerate the synthetic fixtures shipped in ``polsynth/data``.

The measured spectra and survival data are not available, so the fixtures
are built from smooth model shapes calibrated to the RMS values used by the
default noise budget:

* phase noise: 0.10 deg RMS in 1 Hz .. 25 MHz (flicker + floor + servo bump)
* intensity noise: 0.056 % RMS per beam in the same band
"""

import json
import math
from pathlib import Path

import numpy as np

from polsynth import noise, storage, transport

DATA = Path(__file__).resolve().parents[1] / "src" / "polsynth" / "data"
BAND = (1.0, 25e6)
SIGMA_PSI = math.radians(0.10)
RIN_RMS = 5.6e-4


def _freqs():
    # 10 points per decade, ending exactly on the band edge
    return np.unique(np.append(np.logspace(0, 7, 71), [1.2e7, 1.6e7, 2e7, BAND[1]]))


def _calibrate(shape, target_var, unit):
    f = _freqs()
    raw = noise.Psd(f, shape(f), unit)
    return raw.scaled(target_var / noise.integrate_psd(raw, *BAND))


def phase_psd():
    def shape(f):
        bump = 3.0 * np.exp(-0.5 * (np.log10(f / 8e5) / 0.15) ** 2)
        return 1e4 / f + 0.05 + bump

    lin = _calibrate(shape, SIGMA_PSI**2, noise.RAD2_PER_HZ)
    return noise.linear_to_dbc(lin)


def rin_psd(corner):
    def shape(f):
        return (1.0 + corner / f) / (1.0 + (f / 1.5e7) ** 2)

    return _calibrate(shape, RIN_RMS**2, noise.RIN2_PER_HZ)


def sideband_spectrum():
    d = np.linspace(-200e3, 200e3, 401)
    p = transport.sideband_model(d, (0.05, 0.9, 0.5), 117e3, 5e3)
    return "detuning_hz,transfer_prob\n" + "".join(f"{float(a)!r},{float(b)!r}\n" for a, b in zip(d, p))


def main():
    (DATA / "psd_phase.csv").write_text(noise.format_psd_csv(phase_psd()), encoding="utf-8")
    (DATA / "psd_rin_r.csv").write_text(noise.format_psd_csv(rin_psd(1e3)), encoding="utf-8")
    (DATA / "psd_rin_l.csv").write_text(noise.format_psd_csv(rin_psd(3e2)), encoding="utf-8")

    times = np.linspace(0.05, 25.0, 500)
    curve = storage.synthetic_survival(storage.LossModelParams(), times, noise=0.02, seed=2024)
    (DATA / "survival_synthetic.csv").write_text(storage.format_survival_csv(curve), encoding="utf-8")

    (DATA / "sideband_synthetic.csv").write_text(sideband_spectrum(), encoding="utf-8")

    ramps = {
        "ramp_minjerk_1ms.json": transport.TransportRamp("smooth_minjerk", 433e-9, 1e-3),
        "ramp_bangbang_matched.json": transport.TransportRamp(
            "bangbang", 433e-9, transport.bangbang_period_matched(117e3)
        ),
    }
    for name, ramp in ramps.items():
        (DATA / name).write_text(json.dumps(ramp.to_dict(), indent=2) + "\n", encoding="utf-8")


if __name__ == "__main__":
    main()
