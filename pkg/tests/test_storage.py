import math
from dataclasses import replace
from importlib import resources

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from polsynth import heating, storage
from polsynth.constants import H, KB, NU_PAR
from polsynth.errors import InputError, NumericalError

TABLE = storage.LossModelParams()
QUIET = storage.LossModelParams(q_phase=0.0, q_recoil=0.0, gamma_int=0.0)


def expm_states(params, init, times):
    a = storage.generator_matrix(params)
    p0 = np.append(init.p, init.lost)
    return np.array([expm(a * (t - init.t)) @ p0 for t in times])


# --- initial state -----------------------------------------------------------

def test_boltzmann_examples():
    assert storage.boltzmann_init(0.0).p == pytest.approx(np.eye(14)[0])
    d = storage.boltzmann_init(H * NU_PAR / KB)
    assert d.p[1] / d.p[0] == pytest.approx(math.exp(-1), rel=1e-14)
    x = math.exp(-H * NU_PAR / (KB * 7.8e-6))
    n = np.arange(14)
    oracle = float(np.sum(n * x**n) / np.sum(x**n))
    assert storage.boltzmann_init(7.8e-6).mean_n == pytest.approx(oracle, rel=1e-12)
    assert storage.boltzmann_init(7.8e-6).mean_n == pytest.approx(1.0, abs=0.1)


def test_generator_columns_conserve():
    a = storage.generator_matrix(TABLE)
    assert np.abs(a.sum(axis=0)).max() < 1e-14 * np.abs(a).max()
    assert np.all(a - np.diag(np.diag(a)) >= 0)


def test_two_quantum_ground_rate():
    p = storage.LossModelParams(q_phase=0, q_recoil=0, gamma_int=2e-3)
    a = storage.generator_matrix(p)
    assert a[2, 0] == pytest.approx(2e-3 / 4, rel=1e-15)
    assert 1 / a[2, 0] == pytest.approx(heating.intensity_ground_lifetime(2e-3), rel=1e-15)


# --- evolve ----------------------------------------------------------------

def test_collision_only_is_exponential():
    t = np.linspace(0, 30, 301)
    curve = storage.evolve(QUIET, t_grid=t)
    assert np.max(np.abs(curve.survival - np.exp(-t / 300.0))) < 1e-9


@pytest.mark.parametrize(
    "params",
    [
        TABLE,
        storage.LossModelParams(q_phase=5.0, gamma_int=0.1, tau_coll=20.0, t0=20e-6),
        storage.LossModelParams(q_phase=0.3, q_recoil=0.3, gamma_int=0.0, n_max=6),
    ],
)
def test_evolve_matches_matrix_exponential(params):
    init = storage.boltzmann_init(params.t0, params.nu_par, params.n_max)
    t = np.linspace(0, 25, 26)
    curve = storage.evolve(params, init, t)
    ref = expm_states(params, init, t)
    assert np.max(np.abs(curve.lost - ref[:, -1])) < 1e-8
    assert np.max(np.abs(curve.populations - ref[:, :-1])) < 1e-8


def test_initial_heating_rate_from_ground():
    p = storage.LossModelParams(q_phase=1.37, q_recoil=0.0, gamma_int=0.0, tau_coll=1e12, t0=0.0)
    t = np.array([0.0, 1e-3, 2e-3])
    curve = storage.evolve(p, t_grid=t)
    mean_n = curve.populations @ np.arange(p.n_max)
    assert np.gradient(mean_n, t)[0] == pytest.approx(1.37, rel=1e-3)


def test_linear_energy_growth_before_boundary():
    p = storage.LossModelParams(q_phase=1.0, q_recoil=0.5, gamma_int=0.0, tau_coll=1e12, t0=0.0, n_max=150)
    t = np.linspace(0, 5, 11)
    curve = storage.evolve(p, t_grid=t)
    mean_n = curve.populations @ np.arange(p.n_max)
    assert mean_n == pytest.approx(1.5 * t, rel=1e-6, abs=1e-9)


def test_parametric_energy_growth():
    gamma = 1.0
    p = storage.LossModelParams(q_phase=0, q_recoil=0, gamma_int=gamma, tau_coll=1e12, t0=0.0, n_max=200)
    t = np.linspace(0, 1.0, 11)
    curve = storage.evolve(p, t_grid=t)
    energy = curve.populations @ (np.arange(p.n_max) + 0.5)
    assert curve.lost[-1] < 1e-4  # squeezed-like tails reach the top rung slowly
    assert energy == pytest.approx(0.5 * np.exp(gamma * t), rel=1e-2)


@settings(max_examples=20, deadline=None)
@given(
    q=st.floats(0, 10),
    g=st.floats(0, 0.5),
    tau=st.floats(1, 1e4),
    t0=st.one_of(st.just(0.0), st.floats(1e-9, 50e-6)),
    n_max=st.integers(2, 20),
)
def test_conservation_and_monotonicity(q, g, tau, t0, n_max):
    p = storage.LossModelParams(q_phase=q, gamma_int=g, tau_coll=tau, t0=t0, n_max=n_max)
    curve = storage.evolve(p, t_grid=np.linspace(0, 20, 41))
    drift = np.abs(curve.populations.sum(axis=1) + curve.lost - 1)
    assert drift.max() < 1e-9
    assert np.all(np.diff(curve.survival) <= 1e-12)
    assert np.all(curve.populations >= -1e-12)


def test_halving_step_changes_little():
    t = np.linspace(0, 30, 61)
    init = storage.boltzmann_init(TABLE.t0)
    dt, _ = storage.choose_step(TABLE, init, t)
    a = storage.evolve(TABLE, init, t, dt=dt).survival
    b = storage.evolve(TABLE, init, t, dt=dt / 2).survival
    assert np.max(np.abs(a - b)) < 1e-6


def test_bad_grid_rejected():
    with pytest.raises(InputError):
        storage.evolve(TABLE, t_grid=[0.0, 2.0, 1.0])
    with pytest.raises(InputError):
        storage.evolve(TABLE, init=storage.boltzmann_init(1e-6, n_max=5))


# --- half-life -----------------------------------------------------------------

def test_half_life_examples():
    t = np.linspace(0, 500, 50001)
    curve = storage.SurvivalCurve(t, np.exp(-t / 300))
    assert storage.half_life(curve) == pytest.approx(300 * math.log(2), rel=1e-6)
    with pytest.raises(NumericalError):
        storage.half_life(storage.SurvivalCurve(t, np.ones_like(t)))


def test_table_half_life():
    assert storage.find_half_life(TABLE) == pytest.approx(6.6, rel=0.2)
    curve = storage.evolve(TABLE, t_grid=np.linspace(0, 30, 3001))
    assert storage.half_life(curve) == pytest.approx(storage.find_half_life(TABLE), rel=1e-4)


def test_collision_half_life_root():
    assert storage.find_half_life(QUIET) == pytest.approx(300 * math.log(2), rel=1e-9)


def test_half_life_decreases_with_phase_noise():
    lives = [storage.find_half_life(storage.LossModelParams(q_phase=q)) for q in (0.5, 1.0, 1.37, 2.0, 4.0)]
    assert all(a > b for a, b in zip(lives, lives[1:]))


# --- fit -------------------------------------------------------------------

def test_fit_noiseless_exact():
    times = np.linspace(0.1, 25, 60)
    obs = storage.synthetic_survival(TABLE, times)
    fit = storage.fit_storage(obs, TABLE)
    assert fit.q_phase == pytest.approx(1.37, rel=1e-4)
    assert fit.t0 == pytest.approx(7.8e-6, rel=1e-4)


def test_fit_noisy_recovers():
    times = np.linspace(0.05, 25, 500)
    obs = storage.synthetic_survival(TABLE, times, noise=0.02, seed=123)
    fit = storage.fit_storage(obs, TABLE)
    assert abs(fit.q_phase - 1.37) < 0.06
    assert abs(fit.t0 - 7.8e-6) < 0.7e-6
    assert 0 < fit.q_phase_err < 0.06 and 0 < fit.t0_err < 0.7e-6
    assert fit.residual / fit.dof == pytest.approx(1.0, abs=0.2)
    d = fit.to_dict()
    assert d["fixed"]["tau_coll"] == 300.0 and "q_phase" not in d["fixed"]


def test_fit_pure_exponential_gives_zero_rate():
    # with cold atoms a small heating rate loses nobody inside the window, so
    # the fit only has to land in the flat valley near zero
    times = np.linspace(0.5, 40, 40)
    obs = storage.SurvivalCurve(times, np.exp(-times / 300.0))
    fit = storage.fit_storage(obs, QUIET)
    assert fit.q_phase < 0.02
    model = storage.synthetic_survival(replace(QUIET, q_phase=fit.q_phase, t0=fit.t0), times)
    assert np.max(np.abs(model.survival - obs.survival)) < 1e-6


def test_boltzmann_tiny_temperature_is_ground():
    assert storage.boltzmann_init(2.2e-309).p == pytest.approx(np.eye(14)[0])
    assert storage.boltzmann_init(1e-12).p == pytest.approx(np.eye(14)[0])


def test_fit_rejects_short_data():
    obs = storage.SurvivalCurve(np.arange(1.0, 4.0), np.ones(3))
    with pytest.raises(InputError):
        storage.fit_storage(obs)


def test_shipped_fixture_fit():
    path = resources.files("polsynth.data").joinpath("survival_synthetic.csv")
    fit = storage.fit_storage(storage.read_survival_csv(path), TABLE)
    assert abs(fit.q_phase - 1.37) < 0.06
    assert abs(fit.t0 - 7.8e-6) < 0.7e-6


def test_survival_csv_roundtrip(tmp_path):
    curve = storage.synthetic_survival(TABLE, np.linspace(0, 10, 11), noise=0.01, seed=1)
    p = tmp_path / "s.csv"
    p.write_text(storage.format_survival_csv(curve))
    back = storage.read_survival_csv(p)
    assert np.array_equal(back.times, curve.times)
    assert np.array_equal(back.survival, curve.survival)
    assert np.array_equal(back.stderr, curve.stderr)
    p.write_text("time_s,survival\n0,1\n1,x\n")
    with pytest.raises(InputError, match="row 3"):
        storage.read_survival_csv(p)
