"""Motional excitation from lattice transport ramps, and sideband thermometry.

An atom initially at rest in a harmonic well that is displaced along
``x0(t)`` ends up, once the well is at rest again, with energy

    E = (m/2) |integral a(t) exp(i 2 pi nu t) dt|^2,   a = x0''

above the ground state (a coherent-state displacement), i.e.
``n_bar = E / (h nu)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import integrate, optimize
from scipy.interpolate import CubicSpline

from .constants import CS_MASS, H
from .errors import InputError, NumericalError

SMOOTH_MINJERK = "smooth_minjerk"
BANGBANG = "bangbang"
CUSTOM = "custom_samples"
KINDS = (SMOOTH_MINJERK, BANGBANG, CUSTOM)

_GL_ORDER = 16
_GL_X, _GL_W = np.polynomial.legendre.leggauss(_GL_ORDER)


@dataclass(frozen=True)
class TransportRamp:
    """Trap displacement ``x0(t)`` from 0 at ``t=0`` to ``distance`` at ``t=duration``.

    ``smooth_minjerk`` uses ``10 u^3 - 15 u^4 + 6 u^5`` (``u = t/T``), which
    starts and stops with zero velocity and acceleration.  ``bangbang``
    accelerates uniformly for the first half and decelerates for the second.
    ``custom_samples`` takes equally spaced positions and joins them with a
    cubic spline of zero end velocity.
    """

    kind: str
    distance: float
    duration: float
    samples: tuple | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown ramp kind {self.kind!r}; expected one of {KINDS}")
        if not self.duration > 0:
            raise InputError("duration must be positive")
        if self.kind == CUSTOM:
            if self.samples is None or len(self.samples) < 4:
                raise InputError("custom ramps need at least 4 position samples")
            s = np.asarray(self.samples, dtype=float)
            if s[0] != 0.0:
                raise InputError("custom ramp must start at x0 = 0")
            if abs(s[-1] - self.distance) > 1e-12 * max(1.0, abs(self.distance)):
                raise InputError("last custom sample must equal distance")
            object.__setattr__(self, "samples", tuple(float(v) for v in s))

    @property
    def _spline(self) -> CubicSpline:
        t = np.linspace(0.0, self.duration, len(self.samples))
        return CubicSpline(t, np.asarray(self.samples), bc_type="clamped")

    def breakpoints(self) -> np.ndarray:
        """Times between which the acceleration is smooth."""
        if self.kind == BANGBANG:
            return np.array([0.0, self.duration / 2, self.duration])
        if self.kind == CUSTOM:
            return np.linspace(0.0, self.duration, len(self.samples))
        return np.array([0.0, self.duration])

    def position(self, t):
        t = np.asarray(t, dtype=float)
        T, D = self.duration, self.distance
        if self.kind == SMOOTH_MINJERK:
            u = np.clip(t / T, 0.0, 1.0)
            return D * u**3 * (10 - 15 * u + 6 * u**2)
        if self.kind == BANGBANG:
            a = 4.0 * D / T**2
            tc = np.clip(t, 0.0, T)
            return np.where(tc < T / 2, 0.5 * a * tc**2, D - 0.5 * a * (T - tc) ** 2)
        return self._spline(np.clip(t, 0.0, T))

    def acceleration(self, t):
        t = np.asarray(t, dtype=float)
        T, D = self.duration, self.distance
        inside = (t >= 0) & (t <= T)
        if self.kind == SMOOTH_MINJERK:
            u = t / T
            acc = D / T**2 * (60 * u - 180 * u**2 + 120 * u**3)
        elif self.kind == BANGBANG:
            a = 4.0 * D / T**2
            acc = np.where(t < T / 2, a, -a)
        else:
            acc = self._spline(np.clip(t, 0.0, T), 2)
        return np.where(inside, acc, 0.0)

    def reversed(self) -> "TransportRamp":
        """The same path run backwards in time and shifted to start at 0."""
        if self.kind == CUSTOM:
            s = self.distance - np.asarray(self.samples)[::-1]
            s[0], s[-1] = 0.0, self.distance  # exact, not up to rounding
            return TransportRamp(CUSTOM, self.distance, self.duration, tuple(s))
        # minjerk and bang-bang are symmetric under t -> T - t, x -> D - x
        return self

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "distance_m": self.distance, "duration_s": self.duration}
        if self.samples is not None:
            d["samples_m"] = list(self.samples)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "TransportRamp":
        allowed = {"kind", "distance_m", "duration_s", "samples_m"}
        unknown = set(data) - allowed
        if unknown:
            raise InputError(f"unknown ramp keys: {sorted(unknown)}")
        try:
            samples = data.get("samples_m")
            distance = data.get("distance_m", samples[-1] if samples else None)
            return cls(data["kind"], float(distance), float(data["duration_s"]), tuple(samples) if samples else None)
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"ramp spec: {exc}") from None

    @classmethod
    def from_json(cls, path) -> "TransportRamp":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: {exc}") from None


class ExcitationResult(NamedTuple):
    n_bar: float
    residual_energy: float  # J


def _panel_nodes(ramp: TransportRamp, nu: float, refine: int):
    period = 1.0 / nu
    bp = ramp.breakpoints()
    edges = []
    for a, b in zip(bp[:-1], bp[1:]):
        m = max(1, int(math.ceil((b - a) / (period / 4)))) * refine
        edges.append(np.linspace(a, b, m + 1)[:-1])
    edges = np.append(np.concatenate(edges), bp[-1])
    lo, hi = edges[:-1], edges[1:]
    half = (hi - lo)[:, None] / 2
    nodes = (lo[:, None] + hi[:, None]) / 2 + half * _GL_X[None, :]
    weights = half * _GL_W[None, :]
    return nodes.ravel(), weights.ravel()


def _fourier_acc(ramp: TransportRamp, nu: float, refine: int) -> complex:
    t, w = _panel_nodes(ramp, nu, refine)
    return complex(np.sum(w * ramp.acceleration(t) * np.exp(2j * math.pi * nu * t)))


def spectral_amplitude(ramp: TransportRamp, nu: float) -> complex:
    """``integral a(t) exp(i 2 pi nu t) dt`` by panel Gauss-Legendre quadrature
    (64 nodes per trap period), checked against a run with panels halved."""
    if not nu > 0:
        raise InputError("nu must be positive")
    coarse = _fourier_acc(ramp, nu, 1)
    fine = _fourier_acc(ramp, nu, 2)
    t, w = _panel_nodes(ramp, nu, 1)
    scale = float(np.sum(w * np.abs(ramp.acceleration(t))))
    if abs(fine - coarse) > 1e-9 * abs(fine) + 1e-13 * scale:
        raise NumericalError(
            f"excitation quadrature not converged (|delta| = {abs(fine - coarse):.3e}, |I| = {abs(fine):.3e})"
        )
    return fine


def final_excitation(ramp: TransportRamp, nu: float, mass: float = CS_MASS) -> ExcitationResult:
    """Mean number of motional quanta left after the ramp (ground state initially)."""
    amp = spectral_amplitude(ramp, nu)
    energy = 0.5 * mass * abs(amp) ** 2
    return ExcitationResult(energy / (H * nu), energy)


def excitation_time_domain(
    ramp: TransportRamp, nu: float, mass: float = CS_MASS, rtol: float = 1e-13
) -> ExcitationResult:
    """Same quantity from direct integration of the driven oscillator.

    Integrates ``q'' = -w^2 q - a(t)`` for the displacement ``q = x - x0`` from
    rest, piece by piece between acceleration breakpoints (DOP853).
    """
    w = 2.0 * math.pi * nu
    bp = ramp.breakpoints()
    tt = np.linspace(0, ramp.duration, 2001)
    a_scale = max(float(np.max(np.abs(ramp.acceleration(tt)))), 1e-300)
    vscale = a_scale / w

    y = np.zeros(2)
    for a, b in zip(bp[:-1], bp[1:]):
        # evaluate the acceleration strictly inside the piece so a jump at
        # the breakpoint belongs to the neighbouring piece
        eps = 1e-12 * (b - a)

        def rhs(t, y, lo=a + eps, hi=b - eps):
            # state: (w q, q'), both scale as a / w
            return [w * y[1], -w * y[0] - float(ramp.acceleration(min(max(t, lo), hi)))]

        sol = integrate.solve_ivp(rhs, (a, b), y, method="DOP853", rtol=rtol, atol=1e-3 * rtol * vscale)
        if not sol.success:
            raise NumericalError(f"oscillator integration failed: {sol.message}")
        y = sol.y[:, -1]
    energy = 0.5 * mass * (y[0] ** 2 + y[1] ** 2)
    return ExcitationResult(energy / (H * nu), energy)


def bangbang_period_matched(nu: float, periods_per_half: int = 1) -> float:
    """Bang-bang duration whose halves each last an integer number of trap periods."""
    return 2.0 * periods_per_half / nu


# ---------------------------------------------------------------------------
# Sideband thermometry
# ---------------------------------------------------------------------------

def sideband_nbar(r: float) -> float:
    """Mean occupation of a thermal state from the cooling/heating sideband ratio."""
    if not 0.0 <= r < 1.0:
        raise InputError(f"sideband ratio must lie in [0, 1), got {r}")
    return r / (1.0 - r)


@dataclass(frozen=True)
class SidebandSpectrum:
    detunings: np.ndarray  # Hz
    transfer_prob: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.detunings, dtype=float)
        p = np.asarray(self.transfer_prob, dtype=float)
        object.__setattr__(self, "detunings", d)
        object.__setattr__(self, "transfer_prob", p)
        if d.ndim != 1 or d.shape != p.shape or d.size < 8:
            raise InputError("spectrum needs matching 1D arrays with at least 8 points")
        if np.any(np.diff(d) <= 0):
            raise InputError("detunings must be strictly increasing")
        if np.any((p < 0) | (p > 1)):
            raise InputError("transfer probabilities must lie in [0, 1]")

    @classmethod
    def from_csv(cls, path) -> "SidebandSpectrum":
        rows = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip() and not ln.startswith("#")]
        if not rows or [h.strip() for h in rows[0].split(",")][:2] != ["detuning_hz", "transfer_prob"]:
            raise InputError(f"{path}: header must be 'detuning_hz,transfer_prob'")
        try:
            data = np.array([[float(v) for v in ln.split(",")[:2]] for ln in rows[1:]])
        except ValueError as exc:
            raise InputError(f"{path}: {exc}") from None
        return cls(data[:, 0], data[:, 1])


def sideband_model(detunings, heights, nu: float, width: float) -> np.ndarray:
    """Cooling, carrier and heating peaks at ``-nu, 0, +nu``; Gaussian, common RMS ``width``."""
    d = np.asarray(detunings, dtype=float)
    h_cool, h_car, h_heat = heights
    g = lambda c: np.exp(-0.5 * ((d - c) / width) ** 2)  # noqa: E731
    return h_cool * g(-nu) + h_car * g(0.0) + h_heat * g(nu)


class SidebandFit(NamedTuple):
    r: float
    nu: float
    peak_heights: tuple  # (cooling, carrier, heating)
    width: float  # Gaussian RMS, Hz


def fit_sideband(spec: SidebandSpectrum, nu_guess: float) -> SidebandFit:
    """Three-peak least-squares fit; ``r`` is cooling over heating peak height."""
    d, p = spec.detunings, spec.transfer_prob
    if not nu_guess > 0:
        raise InputError("nu_guess must be positive")
    if d[0] > -1.5 * nu_guess or d[-1] < 1.5 * nu_guess:
        raise InputError("spectrum must span the carrier +/- 1.5 nu_guess")

    def near(x):
        return float(p[np.argmin(np.abs(d - x))])

    h0 = [near(-nu_guess), near(0.0), near(nu_guess)]
    above = np.abs(d) < nu_guess / 2
    half = above & (p >= 0.5 * max(h0[1], 1e-12))
    fwhm = (d[half].max() - d[half].min()) if np.count_nonzero(half) >= 2 else nu_guess / 10
    w0 = max(fwhm / 2.3548, np.min(np.diff(d)))

    def resid(x):
        return sideband_model(d, x[:3], x[3], x[4]) - p

    x0 = [*h0, nu_guess, min(w0, nu_guess / 4)]
    lo = [0.0, 0.0, 0.0, 0.5 * nu_guess, 1e-9 * nu_guess]
    hi = [1.0, 1.0, 1.0, 1.5 * nu_guess, nu_guess]
    x0 = np.clip(x0, lo, hi)
    res = optimize.least_squares(resid, x0, bounds=(lo, hi), xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=2000)
    if res.status <= 0:
        raise NumericalError(f"sideband fit did not converge: {res.message}")
    h_cool, h_car, h_heat, nu, width = map(float, res.x)
    if 2.3548 * width > nu / 2:
        raise NumericalError("sidebands not resolved (FWHM exceeds half the sideband spacing)")
    if h_heat <= 0:
        raise NumericalError("heating sideband has zero height; ratio undefined")
    return SidebandFit(h_cool / h_heat, nu, (h_cool, h_car, h_heat), width)
