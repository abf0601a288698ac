"""Polarization algebra of a two-component circular-basis synthesizer.

A right- and a left-circular field with real amplitudes ``e_r``, ``e_l`` and
phases ``phi_r``, ``phi_l`` add up to a single, fully polarized beam.  Its
Stokes vector follows directly from the four control parameters.

Angle convention
----------------
Rotation ``psi`` and ellipticity ``chi`` are the *spherical coordinates of the
Stokes vector on the Poincare sphere*:

    psi = atan2(S2, S1) = phi_r - phi_l
    chi = asin(S3 / S0),   epsilon = sin(chi) = (e_r^2 - e_l^2) / (e_r^2 + e_l^2)

Most optics texts use half of these angles (the real-space azimuth and
ellipticity angle of the polarization ellipse).  Use
:func:`to_ellipse_angles` / :func:`from_ellipse_angles` to convert.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy import optimize

from .errors import InputError

#: tolerance on |S|/S0 for a sample to count as fully polarized
PURE_TOL = 1e-9
#: |epsilon| above 1 - POLE_TOL is treated as a pole, where psi is set to 0
POLE_TOL = 1e-12


@dataclass(frozen=True)
class SynthState:
    """Control parameters of the synthesizer (amplitudes in arbitrary linear units)."""

    e_r: float
    e_l: float
    phi_r: float = 0.0
    phi_l: float = 0.0

    def __post_init__(self):
        if not (self.e_r >= 0 and self.e_l >= 0):
            raise InputError(f"field amplitudes must be non-negative, got {self.e_r}, {self.e_l}")
        if self.e_r == 0 and self.e_l == 0:
            raise InputError("e_r = e_l = 0 has no defined state of polarization")


@dataclass(frozen=True)
class StokesVector:
    s0: float
    s1: float
    s2: float
    s3: float

    def __post_init__(self):
        if not self.s0 > 0:
            raise InputError(f"S0 must be positive, got {self.s0}")
        if math.sqrt(self.s1**2 + self.s2**2 + self.s3**2) > self.s0 * (1 + 1e-12):
            raise InputError("polarized intensity exceeds S0")

    def as_array(self) -> np.ndarray:
        return np.array([self.s0, self.s1, self.s2, self.s3])

    @property
    def polarized_fraction(self) -> float:
        return math.sqrt(self.s1**2 + self.s2**2 + self.s3**2) / self.s0


@dataclass(frozen=True)
class PolarizationAngles:
    """Rotation and ellipticity angles in the Stokes-sphere convention (radians).

    ``at_pole`` flags circular states, where ``psi`` carries no information
    and is reported as 0.
    """

    psi: float
    chi: float
    at_pole: bool = False

    def __post_init__(self):
        if not -math.pi / 2 - 1e-12 <= self.chi <= math.pi / 2 + 1e-12:
            raise InputError(f"chi must lie in [-pi/2, pi/2], got {self.chi}")

    @property
    def epsilon(self) -> float:
        return math.sin(self.chi)

    @classmethod
    def from_epsilon(cls, psi: float, epsilon: float) -> "PolarizationAngles":
        if not -1.0 <= epsilon <= 1.0:
            raise InputError(f"epsilon must lie in [-1, 1], got {epsilon}")
        return cls(psi, math.asin(epsilon), abs(epsilon) > 1 - POLE_TOL)


def to_ellipse_angles(a: PolarizationAngles) -> tuple[float, float]:
    """(azimuth, ellipticity angle) of the real-space polarization ellipse."""
    return a.psi / 2.0, a.chi / 2.0


def from_ellipse_angles(azimuth: float, ellipticity_angle: float) -> PolarizationAngles:
    chi = 2.0 * ellipticity_angle
    return PolarizationAngles(2.0 * azimuth, chi, abs(math.sin(chi)) > 1 - POLE_TOL)


# ---------------------------------------------------------------------------

def stokes_arrays(e_r, e_l, phi_r, phi_l) -> np.ndarray:
    """Vectorized synthesis: returns an array of shape ``(..., 4)``."""
    e_r, e_l, phi_r, phi_l = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (e_r, e_l, phi_r, phi_l)))
    ir, il = e_r**2, e_l**2
    cross = 2.0 * e_r * e_l
    dphi = phi_r - phi_l
    return np.stack([ir + il, cross * np.cos(dphi), cross * np.sin(dphi), ir - il], axis=-1)


def synthesize(state: SynthState) -> StokesVector:
    """Stokes vector of the beam produced by ``state``; always fully polarized."""
    s = stokes_arrays(state.e_r, state.e_l, state.phi_r, state.phi_l)
    return StokesVector(*map(float, s))


def angles_from_stokes(s: StokesVector) -> PolarizationAngles:
    if s.polarized_fraction < 1 - PURE_TOL:
        raise InputError(
            f"angles are ambiguous for a partially polarized state (polarized fraction {s.polarized_fraction:.12f})"
        )
    eps = max(-1.0, min(1.0, s.s3 / s.s0))
    at_pole = abs(eps) > 1 - POLE_TOL or math.hypot(s.s1, s.s2) <= POLE_TOL * s.s0
    psi = 0.0 if at_pole else math.atan2(s.s2, s.s1)
    return PolarizationAngles(psi, math.asin(eps), at_pole)


def state_from_angles(a: PolarizationAngles, total_intensity: float) -> SynthState:
    """Inverse of :func:`synthesize` with the gauge ``phi_l = 0``."""
    if not total_intensity > 0:
        raise InputError("total_intensity must be positive")
    eps = a.epsilon
    return SynthState(
        e_r=math.sqrt(total_intensity * (1 + eps) / 2),
        e_l=math.sqrt(max(0.0, total_intensity * (1 - eps) / 2)),
        phi_r=a.psi,
        phi_l=0.0,
    )


def dop(samples: Sequence[StokesVector] | np.ndarray) -> float:
    """Degree of polarization of the incoherent mixture of ``samples``.

    ``samples`` is a sequence of :class:`StokesVector` or an ``(N, 4)`` array.
    """
    arr = _as_stokes_array(samples)
    if arr.shape[0] == 0:
        raise InputError("dop of an empty ensemble is undefined")
    if np.any(arr[:, 0] <= 0):
        raise InputError("all samples need S0 > 0")
    mean = arr.mean(axis=0)
    return float(min(1.0, math.sqrt(mean[1] ** 2 + mean[2] ** 2 + mean[3] ** 2) / mean[0]))


def _as_stokes_array(samples) -> np.ndarray:
    if isinstance(samples, np.ndarray):
        arr = np.atleast_2d(np.asarray(samples, dtype=float))
    else:
        arr = np.array([s.as_array() for s in samples], dtype=float).reshape(-1, 4)
    if arr.ndim != 2 or arr.shape[1] != 4:
        raise InputError("expected Stokes samples with 4 components")
    return arr


def eta_from_dop(dop_value: float) -> float:
    """Minimum polarization extinction ratio reachable with an ideal polarizer."""
    if not 0.0 <= dop_value <= 1.0:
        raise InputError(f"DOP must lie in [0, 1], got {dop_value}")
    return (1.0 - dop_value) / 2.0


def dop_from_eta(eta: float) -> float:
    if not 0.0 <= eta <= 0.5:
        raise InputError(f"eta must lie in [0, 0.5], got {eta}")
    return 1.0 - 2.0 * eta


class Correlation(enum.Enum):
    """Correlation between the R and L field-amplitude fluctuations."""

    UNCORRELATED = "uncorrelated"
    CORRELATED = "correlated"
    ANTICORRELATED = "anticorrelated"


_CORR_FACTOR = {Correlation.UNCORRELATED: 1.0, Correlation.CORRELATED: 0.0, Correlation.ANTICORRELATED: 2.0}


class IntensityNoiseDop(NamedTuple):
    sigma_chi: float
    dop: float
    eta: float


class PhaseNoiseDop(NamedTuple):
    dop: float
    eta: float


def dop_from_intensity_noise(
    rin_r: float, rin_l: float, epsilon: float, correlation: Correlation | str = Correlation.UNCORRELATED
) -> IntensityNoiseDop:
    """Depolarization from relative intensity noise of the two components.

    Small-fluctuation result: ``sigma_chi^2 = (rin_r^2 + rin_l^2)/4 * (1 - eps^2)``
    and ``DOP = 1 - sigma_chi^2 / 2``.  Perfectly correlated amplitude noise
    leaves the state unchanged; anticorrelated noise doubles the variance.
    """
    correlation = Correlation(correlation)
    for name, v in (("rin_r", rin_r), ("rin_l", rin_l)):
        if not 0.0 <= v <= 0.1:
            raise InputError(f"{name}={v} outside [0, 0.1]; the small-fluctuation expansion does not apply")
    if not -1.0 <= epsilon <= 1.0:
        raise InputError(f"epsilon must lie in [-1, 1], got {epsilon}")
    var_chi = _CORR_FACTOR[correlation] * (rin_r**2 + rin_l**2) / 4.0 * (1.0 - epsilon**2)
    d = 1.0 - var_chi / 2.0
    return IntensityNoiseDop(math.sqrt(var_chi), d, eta_from_dop(d))


def dop_from_phase_noise(sigma_psi: float, epsilon: float) -> PhaseNoiseDop:
    """DOP when only the relative phase fluctuates with RMS ``sigma_psi`` (rad)."""
    if not 0.0 <= sigma_psi < 0.3:
        raise InputError(f"sigma_psi={sigma_psi} rad outside [0, 0.3)")
    if not -1.0 <= epsilon <= 1.0:
        raise InputError(f"epsilon must lie in [-1, 1], got {epsilon}")
    d = 1.0 - (1.0 - epsilon**2) / 2.0 * sigma_psi**2
    return PhaseNoiseDop(d, eta_from_dop(d))


def purity_tilt(purity: float) -> float:
    """Inclination (rad) of the reachable-state sphere for a circular purity ``P``."""
    if not purity > 0:
        raise InputError("purity must be positive")
    if math.isinf(purity):
        return 0.0
    return 2.0 * math.atan(1.0 / math.sqrt(purity))


# ---------------------------------------------------------------------------
# Spatially inhomogeneous beam and the extinction measurement
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BeamProfile:
    """Per-pixel intensity weight and polarization angles over a 2D grid."""

    weights: np.ndarray
    psi: np.ndarray
    chi: np.ndarray
    pixel_pitch: float = 1.0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 2 or np.shape(self.psi) != w.shape or np.shape(self.chi) != w.shape:
            raise InputError("weights, psi and chi must be 2D arrays of one shape")
        if np.any(w < 0) or not w.sum() > 0:
            raise InputError("beam needs non-negative weights with positive total")
        if np.any(np.abs(self.chi) > math.pi / 2 + 1e-12):
            raise InputError("chi must lie in [-pi/2, pi/2]")

    @property
    def shape(self):
        return np.shape(self.weights)

    @classmethod
    def gaussian(
        cls,
        n: int = 64,
        psi0: float = 0.0,
        chi0: float = 0.0,
        psi_rms: float = 0.0,
        chi_rms: float = 0.0,
        seed: int | None = None,
        pixel_pitch: float = 1.0,
    ) -> "BeamProfile":
        """Gaussian envelope (1/e^2 intensity radius = n/2 pixels) with optional
        zero-mean white Gaussian angle perturbations per pixel."""
        c = (np.arange(n) - (n - 1) / 2.0) * 1.0
        xx, yy = np.meshgrid(c, c)
        waist = n / 2.0
        w = np.exp(-2.0 * (xx**2 + yy**2) / waist**2)
        rng = np.random.default_rng(seed)
        psi = psi0 + psi_rms * rng.standard_normal((n, n))
        chi = np.clip(chi0 + chi_rms * rng.standard_normal((n, n)), -math.pi / 2, math.pi / 2)
        return cls(w, psi, chi, pixel_pitch)

    def unit_stokes(self) -> np.ndarray:
        """Normalized (S1, S2, S3) per pixel, shape ``(ny, nx, 3)``."""
        return _unit_vector(self.psi, self.chi)

    def mean_stokes(self) -> StokesVector:
        w = np.asarray(self.weights, dtype=float)
        v = (self.unit_stokes() * w[..., None]).sum(axis=(0, 1))
        return StokesVector(float(w.sum()), *map(float, v))


def _unit_vector(psi, chi):
    psi = np.asarray(psi, dtype=float)
    chi = np.asarray(chi, dtype=float)
    cc = np.cos(chi)
    return np.stack([cc * np.cos(psi), cc * np.sin(psi), np.sin(chi)], axis=-1)


def transmitted_fraction(beam: BeamProfile, setting: PolarizationAngles, polarizer_floor: float = 1e-7) -> float:
    """Leaked power over crossed-axis power, summed pixel by pixel.

    ``setting`` is the state the polarizer is set to extinguish.  A pixel with
    unit Stokes direction ``s`` leaks ``(1 - a.s)/2`` of its power through an
    ideal polarizer extinguishing ``a``; the polarizer adds ``floor`` times the
    power it would pass when rotated by 90 degrees.
    """
    w = np.asarray(beam.weights, dtype=float)
    a = _unit_vector(setting.psi, setting.chi)
    s = beam.unit_stokes()
    dot = s @ a
    leak = (w * (1.0 - dot) / 2.0).sum()
    passed = (w * (1.0 + dot) / 2.0).sum()
    return float((leak + polarizer_floor * passed) / passed)


class ExtinctionResult(NamedTuple):
    eta_min: float
    argmin: PolarizationAngles


class _BeamMoments:
    """Weight, mean direction and spread of the pixel Stokes directions.

    The leaked power for an extinction setting ``a`` is
    ``(W |a - m|^2 + V) / 4`` with ``m`` the weighted mean direction and ``V``
    the weighted spread, which avoids the ``1 - cos`` cancellation near the
    optimum.
    """

    def __init__(self, beam: BeamProfile):
        w = np.asarray(beam.weights, dtype=float)
        s = beam.unit_stokes()
        self.w_tot = float(w.sum())
        self.mean = (s * w[..., None]).sum(axis=(0, 1)) / self.w_tot
        self.spread = float((w * ((s - self.mean) ** 2).sum(axis=-1)).sum())

    def eta(self, psi, chi, floor):
        a = _unit_vector(psi, chi)
        dist2 = ((a - self.mean) ** 2).sum(axis=-1)
        leak = (self.w_tot * dist2 + self.spread) / 4.0
        # the antipodal setting passes nothing; keep the ratio large and positive
        passed = np.maximum(self.w_tot * (1.0 + a @ self.mean) / 2.0, 1e-300)
        return (leak + floor * passed) / passed


def extinction_scan(beam: BeamProfile, polarizer_floor: float = 1e-7, grid: int = 129) -> ExtinctionResult:
    """Minimize the extinction ratio over compensation settings (psi, chi).

    A ``grid x grid`` search over psi in [-pi, pi) and chi in [-pi/2, pi/2]
    seeds a Nelder-Mead refinement.
    """
    if not 0.0 <= polarizer_floor <= 1e-3:
        raise InputError(f"polarizer_floor={polarizer_floor} outside [0, 1e-3]")
    mom = _BeamMoments(beam)
    if not np.linalg.norm(mom.mean) > 0:
        raise InputError("beam is fully depolarized; no extinction setting exists")

    psis = np.linspace(-math.pi, math.pi, grid, endpoint=False)
    chis = np.linspace(-math.pi / 2, math.pi / 2, grid)
    pp, cc = np.meshgrid(psis, chis, indexing="ij")
    etas = mom.eta(pp, cc, polarizer_floor)
    i, j = np.unravel_index(np.argmin(etas), etas.shape)
    x0 = np.array([psis[i], chis[j]])
    scale = max(float(etas[i, j]), 1e-300)

    def objective(x):
        chi = min(max(x[1], -math.pi / 2), math.pi / 2)
        return float(mom.eta(x[0], chi, polarizer_floor)) / scale

    res = optimize.minimize(
        objective,
        x0,
        method="Nelder-Mead",
        options={"xatol": 1e-12, "fatol": 1e-12, "maxiter": 4000, "initial_simplex": [x0, x0 + [2 * math.pi / grid, 0], x0 + [0, math.pi / grid]]},
    )
    best = res.x if res.fun <= 1.0 else x0
    psi = (best[0] + math.pi) % (2 * math.pi) - math.pi
    chi = min(max(best[1], -math.pi / 2), math.pi / 2)
    eta_min = float(mom.eta(psi, chi, polarizer_floor))
    return ExtinctionResult(eta_min, PolarizationAngles(psi, chi, abs(math.sin(chi)) > 1 - POLE_TOL))


def analytic_compensation(beam: BeamProfile) -> PolarizationAngles:
    """Setting aligned with the beam's mean Stokes direction."""
    m = beam.mean_stokes()
    v = np.array([m.s1, m.s2, m.s3])
    norm = np.linalg.norm(v)
    if norm == 0:
        raise InputError("beam is fully depolarized")
    eps = float(np.clip(v[2] / norm, -1, 1))
    at_pole = abs(eps) > 1 - POLE_TOL
    return PolarizationAngles(0.0 if at_pole else math.atan2(v[1], v[0]), math.asin(eps), at_pole)


def extinction_at(beam: BeamProfile, setting: PolarizationAngles, polarizer_floor: float = 1e-7) -> float:
    """Extinction ratio for one setting, using the cancellation-free moments."""
    return float(_BeamMoments(beam).eta(setting.psi, setting.chi, polarizer_floor))
