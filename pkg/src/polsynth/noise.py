"""Noise power spectral densities: I/O, unit conversion, integration,
time-series synthesis, and the polarization noise budget.

All spectra are one-sided.  Between tabulated points a spectrum is
interpolated as a power law (straight line in log-log), and integrals are
taken exactly over that interpolant.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import polarization as pol
from .errors import InputError

DBC_PER_HZ = "dbc_per_hz"
RAD2_PER_HZ = "rad2_per_hz"
RIN2_PER_HZ = "rin2_per_hz"
UNITS = (DBC_PER_HZ, RAD2_PER_HZ, RIN2_PER_HZ)
LINEAR_UNITS = (RAD2_PER_HZ, RIN2_PER_HZ)


@dataclass(frozen=True)
class Psd:
    freqs: np.ndarray
    values: np.ndarray
    unit: str

    def __post_init__(self):
        f = np.asarray(self.freqs, dtype=float)
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "freqs", f)
        object.__setattr__(self, "values", v)
        if self.unit not in UNITS:
            raise InputError(f"unknown PSD unit {self.unit!r}; expected one of {UNITS}")
        if f.ndim != 1 or f.shape != v.shape or f.size < 2:
            raise InputError("freqs and values must be 1D arrays of equal length >= 2")
        if not np.all(f > 0) or not np.all(np.diff(f) > 0):
            raise InputError("frequencies must be positive and strictly increasing")
        if not np.all(np.isfinite(v)):
            raise InputError("PSD values must be finite")
        if self.unit in LINEAR_UNITS and np.any(v < 0):
            raise InputError("linear PSD values must be non-negative")

    @property
    def f_min(self) -> float:
        return float(self.freqs[0])

    @property
    def f_max(self) -> float:
        return float(self.freqs[-1])

    def scaled(self, factor: float) -> "Psd":
        if self.unit not in LINEAR_UNITS:
            raise InputError("only linear-unit PSDs can be scaled")
        return Psd(self.freqs, self.values * factor, self.unit)

    def at(self, f) -> np.ndarray:
        """Log-log interpolated value(s); zero outside the tabulated range."""
        _require_linear(self)
        f = np.asarray(f, dtype=float)
        out = np.zeros_like(f)
        inside = (f >= self.f_min) & (f <= self.f_max)
        if not np.any(inside):
            return out
        fi = f[inside]
        idx = np.clip(np.searchsorted(self.freqs, fi, side="right") - 1, 0, self.freqs.size - 2)
        f0, f1 = self.freqs[idx], self.freqs[idx + 1]
        v0, v1 = self.values[idx], self.values[idx + 1]
        pos = (v0 > 0) & (v1 > 0)
        frac = np.log(fi / f0) / np.log(f1 / f0)
        with np.errstate(divide="ignore", invalid="ignore"):
            loglog = v0 * np.exp(frac * np.log(np.where(pos, v1 / np.where(pos, v0, 1.0), 1.0)))
        lin = v0 + (v1 - v0) * (fi - f0) / (f1 - f0)
        out[inside] = np.where(pos, loglog, lin)
        return out


def _require_linear(psd: Psd):
    if psd.unit not in LINEAR_UNITS:
        raise InputError(f"PSD in {psd.unit} must be converted to linear units first")


def dbc_to_linear(psd: Psd, ssb: bool = False) -> Psd:
    """dBc/Hz to rad^2/Hz.

    By default the tabulated level is read as the phase PSD itself,
    ``S = 10**(L/10)``.  With ``ssb=True`` the level is read as the
    single-sideband noise L(f) and ``S = 2 * 10**(L/10)``.
    """
    if psd.unit != DBC_PER_HZ:
        raise InputError(f"expected a {DBC_PER_HZ} PSD, got {psd.unit}")
    factor = 2.0 if ssb else 1.0
    return Psd(psd.freqs, factor * 10.0 ** (psd.values / 10.0), RAD2_PER_HZ)


def linear_to_dbc(psd: Psd, ssb: bool = False) -> Psd:
    if psd.unit != RAD2_PER_HZ:
        raise InputError(f"expected a {RAD2_PER_HZ} PSD, got {psd.unit}")
    factor = 2.0 if ssb else 1.0
    with np.errstate(divide="ignore"):
        return Psd(psd.freqs, 10.0 * np.log10(psd.values / factor), DBC_PER_HZ)


def dbc_value_to_linear(level_db: float, ssb: bool = False) -> float:
    return (2.0 if ssb else 1.0) * 10.0 ** (level_db / 10.0)


def _segment_integrals(f0, f1, v0, v1):
    """Exact integrals of the log-log interpolant on each segment."""
    out = 0.5 * (v0 + v1) * (f1 - f0)  # fallback for segments touching zero
    pos = (v0 > 0) & (v1 > 0)
    if np.any(pos):
        a, b, s0, s1 = f0[pos], f1[pos], v0[pos], v1[pos]
        lr = np.log(b / a)
        alpha = np.log(s1 / s0) / lr
        g = alpha + 1.0
        # s0 * a * ((b/a)^g - 1) / g, with the g -> 0 limit s0 * a * ln(b/a)
        x = g * lr
        small = np.abs(x) < 1e-8
        expm1_over = np.where(small, lr * (1 + x / 2 + x * x / 6), np.expm1(x) / np.where(small, 1.0, g))
        out[pos] = s0 * a * expm1_over
    return out


def integrate_psd(psd: Psd, f_lo: float, f_hi: float) -> float:
    """Variance contained in ``[f_lo, f_hi]``.

    The power-law interpolant is integrated exactly, so flat and 1/f spectra
    are reproduced without discretization error and integrals are additive
    over adjacent bands.
    """
    _require_linear(psd)
    if not f_lo < f_hi:
        raise InputError(f"empty band [{f_lo}, {f_hi}]")
    rel = 1e-12
    if f_lo < psd.f_min * (1 - rel) or f_hi > psd.f_max * (1 + rel):
        raise InputError(f"band [{f_lo:g}, {f_hi:g}] Hz outside tabulated range [{psd.f_min:g}, {psd.f_max:g}] Hz")
    f_lo = max(f_lo, psd.f_min)
    f_hi = min(f_hi, psd.f_max)
    inner = psd.freqs[(psd.freqs > f_lo) & (psd.freqs < f_hi)]
    nodes = np.concatenate([[f_lo], inner, [f_hi]])
    vals = psd.at(nodes)
    return float(_segment_integrals(nodes[:-1], nodes[1:], vals[:-1], vals[1:]).sum())


def read_psd_csv(path) -> Psd:
    """Read ``freq_hz,value,unit`` rows; lines starting with ``#`` are comments."""
    text = Path(path).read_text(encoding="utf-8")
    return parse_psd_csv(text, source=str(path))


def parse_psd_csv(text: str, source: str = "<string>") -> Psd:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise InputError(f"{source}: no data")
    reader = csv.reader(lines)
    header = [h.strip() for h in next(reader)]
    if header[:3] != ["freq_hz", "value", "unit"]:
        raise InputError(f"{source}: header must be 'freq_hz,value,unit', got {','.join(header)!r}")
    freqs, values, units = [], [], set()
    for rowno, row in enumerate(reader, start=2):
        if len(row) < 3 or not row[2].strip():
            raise InputError(f"{source}: data row {rowno} is missing the unit column")
        try:
            freqs.append(float(row[0]))
            values.append(float(row[1]))
        except ValueError as exc:
            raise InputError(f"{source}: data row {rowno}: {exc}") from None
        units.add(row[2].strip())
    if len(units) != 1:
        raise InputError(f"{source}: mixed units {sorted(units)}")
    return Psd(np.array(freqs), np.array(values), units.pop())


def format_psd_csv(psd: Psd) -> str:
    buf = io.StringIO()
    buf.write("freq_hz,value,unit\n")
    for f, v in zip(psd.freqs, psd.values):
        buf.write(f"{float(f)!r},{float(v)!r},{psd.unit}\n")
    return buf.getvalue()


# ---------------------------------------------------------------------------

def sample_time_series(psd: Psd, duration: float, dt: float, seed: int) -> np.ndarray:
    """Gaussian noise realization whose one-sided PSD matches ``psd``.

    White Gaussian noise is colored in the Fourier domain; bins outside the
    tabulated frequency range get zero power.
    """
    _require_linear(psd)
    if not dt > 0 or not duration > dt:
        raise InputError("need 0 < dt < duration")
    if dt >= 1.0 / (2.0 * psd.f_max):
        raise InputError(f"dt={dt:g} s cannot represent {psd.f_max:g} Hz (need dt < 1/(2 f_max))")
    n = int(round(duration / dt))
    rng = np.random.default_rng(seed)
    white = rng.standard_normal(n)
    spec = np.fft.rfft(white)
    f = np.fft.rfftfreq(n, dt)
    # unit-variance white noise has one-sided PSD 2*dt
    spec *= np.sqrt(psd.at(f) / (2.0 * dt))
    spec[0] = 0.0
    return np.fft.irfft(spec, n)


class McDop(NamedTuple):
    dop: float
    stderr: float


def monte_carlo_dop(
    sigma_psi: float,
    rin_r: float,
    rin_l: float,
    epsilon: float,
    n_samples: int,
    seed: int,
    return_stderr: bool = False,
):
    """Ensemble-averaged DOP for Gaussian phase and intensity fluctuations.

    Each phase gets variance ``sigma_psi**2 / 2``; intensities fluctuate with
    relative RMS ``rin_r``, ``rin_l`` about ``(1 +/- epsilon) / 2``.  With
    ``return_stderr`` a ``(dop, stderr)`` pair is returned, the standard
    error coming from the delta method on the sample mean Stokes vector.
    """
    if n_samples < 10_000:
        raise InputError("n_samples must be at least 1e4")
    if not -1.0 <= epsilon <= 1.0:
        raise InputError("epsilon must lie in [-1, 1]")
    rng = np.random.default_rng(seed)
    sd_phi = sigma_psi / math.sqrt(2.0)
    phi_r = sd_phi * rng.standard_normal(n_samples)
    phi_l = sd_phi * rng.standard_normal(n_samples)
    i_r = (1 + epsilon) / 2 * (1 + rin_r * rng.standard_normal(n_samples))
    i_l = (1 - epsilon) / 2 * (1 + rin_l * rng.standard_normal(n_samples))
    s = pol.stokes_arrays(np.sqrt(np.clip(i_r, 0, None)), np.sqrt(np.clip(i_l, 0, None)), phi_r, phi_l)
    value = pol.dop(s)
    if not return_stderr:
        return value
    mean = s.mean(axis=0)
    vnorm = math.sqrt(mean[1] ** 2 + mean[2] ** 2 + mean[3] ** 2)
    grad = np.array([-vnorm / mean[0] ** 2, *(mean[1:] / (vnorm * mean[0]))])
    proj = (s - mean) @ grad
    return McDop(value, float(proj.std(ddof=1) / math.sqrt(n_samples)))


@dataclass(frozen=True)
class NoiseBudget:
    sigma_chi: float
    sigma_psi: float
    eta_intensity: float
    eta_phase: float
    eta_spatial: float
    eta_total: float

    @property
    def dop(self) -> float:
        return pol.dop_from_eta(min(self.eta_total, 0.5))

    @property
    def temporal_fraction(self) -> float:
        """Share of the total extinction ratio due to intensity and phase noise."""
        return (self.eta_intensity + self.eta_phase) / self.eta_total if self.eta_total > 0 else 0.0


def budget(
    psd_phase: Psd,
    psd_rin_r: Psd,
    psd_rin_l: Psd,
    epsilon: float,
    eta_spatial: float,
    band: tuple[float, float] = (1.0, 25e6),
) -> NoiseBudget:
    """Combine phase, intensity and spatial contributions to the extinction ratio.

    Contributions add, which holds while each is small.
    """
    if not 0.0 <= eta_spatial <= 0.5:
        raise InputError("eta_spatial must lie in [0, 0.5]")
    f_lo, f_hi = band
    var_psi = integrate_psd(psd_phase, f_lo, f_hi)
    rin_r = math.sqrt(integrate_psd(psd_rin_r, f_lo, f_hi))
    rin_l = math.sqrt(integrate_psd(psd_rin_l, f_lo, f_hi))
    inten = pol.dop_from_intensity_noise(rin_r, rin_l, epsilon)
    sigma_psi = math.sqrt(var_psi)
    phase = pol.dop_from_phase_noise(sigma_psi, epsilon)
    total = inten.eta + phase.eta + eta_spatial
    return NoiseBudget(inten.sigma_chi, sigma_psi, inten.eta, phase.eta, eta_spatial, total)
