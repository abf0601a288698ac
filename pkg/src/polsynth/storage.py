"""Atom loss from a heated 1D lattice well.

The motional state is a probability vector over the bound levels
``n = 0 .. n_max-1`` plus an absorbing "lost" bin.  Heating enters as a
birth-death master equation:

* position noise and photon recoil drive single-quantum steps with rates
  ``q (n+1)`` up and ``q n`` down, ``q = q_phase + q_recoil``;
* intensity noise drives two-quantum steps with rates
  ``(Gamma/8)(n+2)(n+1)`` up and ``(Gamma/8) n (n-1)`` down, so that the
  mean energy of an unbounded ensemble grows as ``dE/dt = Gamma E``;
* a step above ``n_max - 1`` removes the atom, and background-gas collisions
  remove atoms from every level at rate ``1/tau_coll``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
from scipy import optimize

from . import kernels
from .constants import H, KB, NU_PAR
from .errors import InputError, NumericalError

CONSERVATION_TOL = 1e-9


@dataclass(frozen=True)
class LossModelParams:
    q_phase: float = 1.37  # quanta/s
    q_recoil: float = 0.025  # quanta/s
    gamma_int: float = 2e-3  # 1/s
    tau_coll: float = 300.0  # s
    t0: float = 7.8e-6  # K
    n_max: int = 14
    nu_par: float = NU_PAR  # Hz

    def __post_init__(self):
        for name in ("q_phase", "q_recoil", "gamma_int", "t0"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise InputError(f"{name} must be non-negative and finite, got {v!r}")
        if not self.tau_coll > 0:
            raise InputError("tau_coll must be positive")
        if int(self.n_max) != self.n_max or self.n_max < 2:
            raise InputError("n_max must be an integer >= 2")
        if not self.nu_par > 0:
            raise InputError("nu_par must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LevelDistribution:
    p: np.ndarray
    lost: float = 0.0
    t: float = 0.0

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        object.__setattr__(self, "p", p)
        if p.ndim != 1 or p.size < 2:
            raise InputError("p must be a 1D array over at least two levels")
        if np.any(p < -1e-15) or self.lost < -1e-15:
            raise InputError("probabilities must be non-negative")
        if abs(p.sum() + self.lost - 1.0) > CONSERVATION_TOL:
            raise InputError(f"probabilities sum to {p.sum() + self.lost!r}, not 1")

    @property
    def mean_n(self) -> float:
        total = self.p.sum()
        return float(np.arange(self.p.size) @ self.p / total) if total > 0 else 0.0


@dataclass(frozen=True)
class SurvivalCurve:
    """Trapped fraction versus hold time.

    Model output additionally carries the level ``populations`` (one row per
    time) and the ``lost`` fraction; measured data may carry ``stderr`` or
    atom ``counts``.
    """

    times: np.ndarray
    survival: np.ndarray
    stderr: np.ndarray | None = None
    counts: np.ndarray | None = None
    populations: np.ndarray | None = None
    lost: np.ndarray | None = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        s = np.asarray(self.survival, dtype=float)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "survival", s)
        if t.ndim != 1 or t.shape != s.shape or t.size == 0:
            raise InputError("times and survival must be 1D arrays of equal, non-zero length")
        if np.any(np.diff(t) <= 0):
            raise InputError("times must be strictly increasing")
        for name in ("stderr", "counts"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=float)
                if v.shape != t.shape:
                    raise InputError(f"{name} must match times in length")
                object.__setattr__(self, name, v)


def boltzmann_init(t0: float, nu_par: float = NU_PAR, n_max: int = 14) -> LevelDistribution:
    """Thermal occupation truncated to the bound levels and renormalized."""
    if not t0 >= 0:
        raise InputError("t0 must be non-negative")
    kt = KB * t0
    # colder than ~1/700 of a quantum rounds to the ground state anyway
    if kt == 0 or H * nu_par / kt > 700:
        p = np.zeros(n_max)
        p[0] = 1.0
        return LevelDistribution(p)
    beta = H * nu_par / kt
    logw = -beta * np.arange(n_max)
    w = np.exp(logw - logw.max())
    return LevelDistribution(w / w.sum())


def transition_rates(params: LossModelParams):
    """Per-level rates ``(up1, dn1, up2, dn2)`` and the collision rate."""
    n = np.arange(params.n_max, dtype=float)
    q = params.q_phase + params.q_recoil
    g = params.gamma_int / 8.0
    up1 = q * (n + 1)
    dn1 = q * n
    up2 = g * (n + 2) * (n + 1)
    dn2 = g * n * (n - 1)
    return up1, dn1, up2, dn2, 1.0 / params.tau_coll


def generator_matrix(params: LossModelParams) -> np.ndarray:
    """Rate matrix on ``(p_0 .. p_{n_max-1}, lost)``."""
    return kernels.ladder_generator(*transition_rates(params))


def _propagate(params, init, t_grid, dt):
    up1, dn1, up2, dn2, coll = transition_rates(params)
    p0 = np.append(init.p, init.lost)
    return kernels.ladder_rk4(p0, up1, dn1, up2, dn2, coll, float(init.t), t_grid, float(dt))


def _max_rate(params):
    up1, dn1, up2, dn2, coll = transition_rates(params)
    return float(np.max(up1 + dn1 + up2 + dn2) + coll)


def choose_step(params: LossModelParams, init: LevelDistribution, t_grid, tol: float = 1e-9, max_halvings: int = 30):
    """Largest step ``dt`` (from 0.5 / max_rate, halved) such that halving it
    moves every survival value by less than ``tol``.  Returns ``(dt, states)``
    where ``states`` was computed with ``dt``."""
    t_grid = np.asarray(t_grid, dtype=float)
    dt = 0.5 / _max_rate(params)
    coarse = _propagate(params, init, t_grid, dt)
    for _ in range(max_halvings):
        fine = _propagate(params, init, t_grid, dt / 2)
        if np.max(np.abs(fine[:, -1] - coarse[:, -1])) < tol:
            return dt / 2, fine
        dt /= 2
        coarse = fine
    raise NumericalError(f"step control failed to reach tolerance {tol:g} after {max_halvings} halvings")


def evolve(
    params: LossModelParams,
    init: LevelDistribution | None = None,
    t_grid=None,
    dt: float | None = None,
    tol: float = 1e-9,
) -> SurvivalCurve:
    """Integrate the loss model and sample it on ``t_grid``.

    Fixed-step RK4 that lands exactly on every grid time.  Without an explicit
    ``dt`` the step is refined until halving it changes the survival by less
    than ``tol`` everywhere.
    """
    if init is None:
        init = boltzmann_init(params.t0, params.nu_par, params.n_max)
    if init.p.size != params.n_max:
        raise InputError(f"initial distribution has {init.p.size} levels, model has {params.n_max}")
    t_grid = np.asarray(t_grid if t_grid is not None else np.linspace(0, 30, 301), dtype=float)
    if t_grid.ndim != 1 or t_grid.size == 0 or np.any(np.diff(t_grid) <= 0) or t_grid[0] < init.t:
        raise InputError("t_grid must be strictly increasing and start at or after init.t")
    if dt is None:
        _, states = choose_step(params, init, t_grid, tol)
    else:
        if not dt > 0:
            raise InputError("dt must be positive")
        states = _propagate(params, init, t_grid, dt)

    pops, lost = states[:, :-1], states[:, -1]
    drift = np.abs(pops.sum(axis=1) + lost - 1.0)
    if not np.all(np.isfinite(states)) or drift.max() > CONSERVATION_TOL:
        raise NumericalError(f"probability conservation violated (max drift {drift.max():.3e})")
    if pops.min() < -1e-12:
        raise NumericalError("negative level occupation; step too large")
    return SurvivalCurve(t_grid, 1.0 - lost, populations=pops, lost=lost)


def half_life(curve: SurvivalCurve) -> float:
    """First time the survival falls to 0.5, linearly interpolated."""
    s, t = curve.survival, curve.times
    below = np.nonzero(s <= 0.5)[0]
    if below.size == 0:
        raise NumericalError("survival never reaches 0.5 on this time grid")
    i = int(below[0])
    if i == 0:
        if s[0] == 0.5:
            return float(t[0])
        raise NumericalError("survival starts below 0.5; crossing not bracketed")
    t0, t1, s0, s1 = t[i - 1], t[i], s[i - 1], s[i]
    return float(t0 + (s0 - 0.5) * (t1 - t0) / (s0 - s1))


def find_half_life(params: LossModelParams, init: LevelDistribution | None = None, t_max: float = 1e6) -> float:
    """Half-life from root finding on the model itself rather than a sampled grid."""
    if init is None:
        init = boltzmann_init(params.t0, params.nu_par, params.n_max)

    def excess(t):
        return float(evolve(params, init, t_grid=[init.t, init.t + t]).survival[-1]) - 0.5

    lo, hi = 0.0, 1.0
    while excess(hi) > 0:
        lo, hi = hi, 2.0 * hi
        if hi > t_max:
            raise NumericalError(f"survival stays above 0.5 beyond {t_max:g} s")
    return float(optimize.brentq(excess, lo, hi, xtol=1e-9, rtol=1e-12))


def synthetic_survival(params: LossModelParams, times, noise: float = 0.0, seed: int | None = None) -> SurvivalCurve:
    """Model curve plus additive Gaussian noise of RMS ``noise``; stderr set to ``noise``."""
    model = evolve(params, t_grid=times)
    rng = np.random.default_rng(seed)
    obs = model.survival + noise * rng.standard_normal(model.survival.size) if noise > 0 else model.survival.copy()
    err = np.full(obs.size, noise) if noise > 0 else None
    return SurvivalCurve(model.times, obs, stderr=err)


@dataclass(frozen=True)
class StorageFit:
    q_phase: float
    q_phase_err: float
    t0: float
    t0_err: float
    residual: float  # chi^2 with stderr weights, sum of squares otherwise
    dof: int
    n_eval: int
    fixed: LossModelParams

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fixed"] = {k: v for k, v in self.fixed.to_dict().items() if k not in ("q_phase", "t0")}
        return d


def _weights(observed: SurvivalCurve):
    if observed.stderr is not None:
        if np.any(observed.stderr <= 0):
            raise InputError("stderr values must be positive")
        return observed.stderr, True
    if observed.counts is not None:
        p = np.clip(observed.survival, 0.5 / observed.counts, 1 - 0.5 / observed.counts)
        return np.sqrt(p * (1 - p) / observed.counts), True
    return np.ones_like(observed.survival), False


def fit_storage(
    observed: SurvivalCurve,
    fixed: LossModelParams | None = None,
    init_guess: tuple[float, float] = (1.0, 10e-6),
    max_nfev: int = 200,
) -> StorageFit:
    """Weighted least-squares fit of the phase-noise rate and initial temperature.

    All other model parameters come from ``fixed``.  Uncertainties are the
    square roots of the diagonal of the inverse curvature matrix ``(J^T J)^-1``,
    scaled by the reduced residual when no per-point errors are known.
    """
    fixed = fixed or LossModelParams()
    if observed.times.size < 6:
        raise InputError("need at least 6 data points")
    if observed.times[0] < 0:
        raise InputError("hold times must be non-negative")
    sigma, absolute = _weights(observed)
    q_guess, t_guess = init_guess
    if not (q_guess >= 0 and t_guess > 0):
        raise InputError("initial guess needs q_phase >= 0 and t0 > 0")

    # freeze the step so finite-difference Jacobians see a smooth model
    probe = replace(fixed, q_phase=max(2.0 * q_guess, 1.0), t0=t_guess)
    dt, _ = choose_step(probe, boltzmann_init(t_guess, fixed.nu_par, fixed.n_max), observed.times)
    n_eval = 0

    def model(x):
        nonlocal n_eval
        n_eval += 1
        p = replace(fixed, q_phase=float(x[0]), t0=float(x[1]) * 1e-6)
        return evolve(p, t_grid=observed.times, dt=dt).survival

    def resid(x):
        return (model(x) - observed.survival) / sigma

    res = optimize.least_squares(
        resid,
        x0=[q_guess, t_guess * 1e6],
        bounds=([0.0, 0.05], [100.0, 1000.0]),
        x_scale=[0.1, 1.0],
        diff_step=1e-6,
        xtol=1e-12,
        ftol=1e-12,
        gtol=1e-12,
        max_nfev=max_nfev,
    )
    if res.status <= 0:
        raise NumericalError(f"storage fit did not converge: {res.message}")
    jac = res.jac
    if not np.any(jac):
        raise NumericalError("residual surface is flat; parameters are not identifiable")
    dof = observed.times.size - 2
    chi2 = float(res.fun @ res.fun)
    cov = np.linalg.pinv(jac.T @ jac)
    if not absolute:
        cov = cov * chi2 / max(dof, 1)
    errs = np.sqrt(np.clip(np.diag(cov), 0, None))
    for col in range(2):
        if not np.any(jac[:, col]):
            errs[col] = math.inf

    best = replace(fixed, q_phase=float(res.x[0]), t0=float(res.x[1]) * 1e-6)
    check = evolve(best, t_grid=observed.times).survival
    if np.max(np.abs(check - model(res.x))) > 1e-6:
        raise NumericalError("frozen step size is too coarse at the best-fit point")
    return StorageFit(
        q_phase=float(res.x[0]),
        q_phase_err=float(errs[0]),
        t0=float(res.x[1]) * 1e-6,
        t0_err=float(errs[1]) * 1e-6,
        residual=chi2,
        dof=dof,
        n_eval=n_eval,
        fixed=fixed,
    )


# ---------------------------------------------------------------------------

def read_survival_csv(path) -> SurvivalCurve:
    """Read ``time_s,survival[,stderr]``."""
    text = Path(path).read_text(encoding="utf-8")
    rows = [r for r in csv.reader(ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#"))]
    if not rows:
        raise InputError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if header[:2] != ["time_s", "survival"] or (len(header) > 2 and header[2] != "stderr"):
        raise InputError(f"{path}: header must be 'time_s,survival[,stderr]'")
    has_err = len(header) > 2
    t, s, e = [], [], []
    for rowno, row in enumerate(rows[1:], start=2):
        try:
            t.append(float(row[0]))
            s.append(float(row[1]))
            if has_err:
                e.append(float(row[2]))
        except (ValueError, IndexError):
            raise InputError(f"{path}: malformed data row {rowno}: {row}") from None
    return SurvivalCurve(np.array(t), np.array(s), stderr=np.array(e) if has_err else None)


def format_survival_csv(curve: SurvivalCurve) -> str:
    buf = io.StringIO()
    if curve.stderr is not None:
        buf.write("time_s,survival,stderr\n")
        for row in zip(curve.times, curve.survival, curve.stderr):
            buf.write(",".join(repr(float(v)) for v in row) + "\n")
    else:
        buf.write("time_s,survival\n")
        for row in zip(curve.times, curve.survival):
            buf.write(",".join(repr(float(v)) for v in row) + "\n")
    return buf.getvalue()
