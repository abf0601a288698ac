"""Lattice positions from optical phases, and motional heating rates.

Covers position shaking (phase noise) through Fermi's golden rule, photon
recoil, and parametric heating from intensity noise, for atoms in a 1D
harmonic approximation of the lattice well.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable

from .constants import CS_MASS, GAMMA_SCATTER, H, HBAR, KB, LAMBDA_MAGIC, NU_PAR, NU_PERP
from .errors import InputError


@dataclass(frozen=True)
class LatticeConfig:
    """Lattice and atom parameters in SI units.

    ``depth`` (J) is derived from ``mass * (nu_par * lambda)**2 / 2`` when
    left as ``None``.
    """

    lambda_: float = LAMBDA_MAGIC
    mass: float = CS_MASS
    nu_par: float = NU_PAR
    nu_perp: float = NU_PERP
    gamma_scatter: float = GAMMA_SCATTER
    depth: float | None = None

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            if not (isinstance(v, (int, float)) and v > 0 and math.isfinite(v)):
                raise InputError(f"LatticeConfig.{_json_name(f.name)} must be a positive number, got {v!r}")

    @property
    def k(self) -> float:
        return 2.0 * math.pi / self.lambda_

    @property
    def trap_depth(self) -> float:
        if self.depth is not None:
            return self.depth
        return self.mass * (self.nu_par * self.lambda_) ** 2 / 2.0

    def nu(self, axis: str = "par") -> float:
        if axis == "par":
            return self.nu_par
        if axis == "perp":
            return self.nu_perp
        raise InputError(f"axis must be 'par' or 'perp', got {axis!r}")

    # JSON uses "lambda", a Python keyword, hence the lambda_ attribute
    def to_dict(self) -> dict:
        return {_json_name(k): v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: dict) -> "LatticeConfig":
        known = {_json_name(f.name): f.name for f in fields(cls)}
        unknown = set(data) - set(known)
        if unknown:
            raise InputError(f"unknown LatticeConfig keys: {sorted(unknown)}")
        return cls(**{known[k]: v for k, v in data.items()})

    @classmethod
    def from_json(cls, path) -> "LatticeConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: {exc}") from None
        return cls.from_dict(data)


def _json_name(attr: str) -> str:
    return "lambda" if attr == "lambda_" else attr


def position_from_phase(dphi: float, lambda_: float = LAMBDA_MAGIC) -> float:
    """Lattice displacement (m) for a phase offset ``dphi`` (rad); 2 pi moves one site."""
    return lambda_ / 2.0 * dphi / (2.0 * math.pi)


@dataclass(frozen=True)
class TrapTrajectory:
    """Phase programs of the R, L and counterpropagating beams versus time."""

    phi_r: Callable[[float], float]
    phi_l: Callable[[float], float]
    phi_0: Callable[[float], float] = lambda t: 0.0
    lambda_: float = LAMBDA_MAGIC

    def x_up(self, t):
        return position_from_phase(self.phi_r(t) - self.phi_0(t), self.lambda_)

    def x_down(self, t):
        # neglects the small R-polarized admixture in the down-spin potential
        return position_from_phase(self.phi_l(t) - self.phi_0(t), self.lambda_)

    def separation(self, t):
        return self.x_up(t) - self.x_down(t)


def phase_psd_to_position_psd(s_phi: float, lambda_: float = LAMBDA_MAGIC) -> float:
    """Position noise (m^2/Hz) from lattice phase noise (rad^2/Hz): ``S_x = S_phi / (4 k^2)``."""
    if s_phi < 0:
        raise InputError("PSD value must be non-negative")
    k = 2.0 * math.pi / lambda_
    return s_phi / (4.0 * k * k)


def golden_rule_rate(n: int, direction: str, nu: float, s_x: float, mass: float = CS_MASS) -> float:
    """Transition rate out of level ``n`` driven by trap-position noise.

    ``R = 2 pi^3 m nu^3 S_x(nu) / hbar * (n + 1/2 +/- 1/2)``; ``direction`` is
    ``"up"`` (n -> n+1) or ``"down"`` (n -> n-1).
    """
    if n < 0 or s_x < 0 or nu < 0 or mass <= 0:
        raise InputError("golden_rule_rate needs n >= 0, s_x >= 0, nu >= 0, mass > 0")
    if direction == "up":
        factor = n + 1
    elif direction == "down":
        factor = n
    else:
        raise InputError(f"direction must be 'up' or 'down', got {direction!r}")
    return 2.0 * math.pi**3 * mass * nu**3 / HBAR * s_x * factor


def heating_rate_phase(s_phi_at_nu: float, cfg: LatticeConfig | None = None, axis: str = "par") -> float:
    """Mean excitation rate (quanta/s) from lattice phase noise at the trap frequency."""
    cfg = cfg or LatticeConfig()
    if s_phi_at_nu < 0:
        raise InputError("PSD value must be non-negative")
    nu = cfg.nu(axis)
    return math.pi**3 * cfg.mass * nu**3 / (2.0 * HBAR * cfg.k**2) * s_phi_at_nu


def recoil_energy(cfg: LatticeConfig | None = None) -> float:
    cfg = cfg or LatticeConfig()
    return HBAR**2 * cfg.k**2 / (2.0 * cfg.mass)


def heating_rate_recoil(cfg: LatticeConfig | None = None, axis: str = "par") -> float:
    """Excitations per second along the lattice from off-resonant photon recoil:
    ``(1 + 2/5) * gamma * E_rec / (h nu)``."""
    cfg = cfg or LatticeConfig()
    return (1.0 + 2.0 / 5.0) * cfg.gamma_scatter * recoil_energy(cfg) / (2.0 * math.pi * HBAR * cfg.nu(axis))


def heating_const_intensity(rin2_at_2nu: float, nu: float = NU_PAR) -> float:
    """Parametric heating rate constant ``Gamma = pi^2 nu^2 S_RIN(2 nu)`` (1/s)."""
    if rin2_at_2nu < 0 or nu < 0:
        raise InputError("inputs must be non-negative")
    return math.pi**2 * nu**2 * rin2_at_2nu


def intensity_ground_lifetime(gamma_int: float) -> float:
    """``1 / R(2<-0) = 4 / Gamma``; infinite for a noiseless trap."""
    return math.inf if gamma_int == 0 else 4.0 / gamma_int


def n_bound_levels(cfg: LatticeConfig | None = None) -> int:
    cfg = cfg or LatticeConfig()
    return int(math.floor(cfg.trap_depth / (H * cfg.nu_par)))


def depth_in_kelvin(cfg: LatticeConfig | None = None) -> float:
    cfg = cfg or LatticeConfig()
    return cfg.trap_depth / KB
