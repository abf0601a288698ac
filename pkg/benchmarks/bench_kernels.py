"""Compare the numba kernels with their pure-numpy counterparts.

    python benchmarks/bench_kernels.py [--repeat N]

Both backends are imported side by side, so the environment flag does not
matter here.  Reported times are best-of-N after one warm-up call.
"""

import argparse
import math
import timeit

import numpy as np

from polsynth import kernels, servo, storage
from polsynth._accel import HAVE_NUMBA


def ladder_case(n_max, t_end=30.0, n_out=301):
    params = storage.LossModelParams(n_max=n_max)
    init = storage.boltzmann_init(params.t0, params.nu_par, params.n_max)
    p0 = np.append(init.p, 0.0)
    dt = 0.5 / (storage._max_rate(params) * 4)
    return (p0, *storage.transition_rates(params), 0.0, np.linspace(0, t_end, n_out), dt)


def servo_case():
    cfg = servo.default_config()
    p, c = cfg.plant, cfg.controller
    a_pole = math.exp(-2 * math.pi * p.actuator_pole * cfg.dt)
    delay = int(round(p.dead_time / cfg.dt))
    n = int(round(cfg.t_end / cfg.dt))
    return (1.0, c.kp, c.ki, c.kii, c.kd, 2 * math.pi * c.derivative_rolloff, a_pole, p.gain, delay, cfg.dt, n)


def best(fn, args, repeat):
    fn(*args)
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    cases = [
        ("ladder_rk4, 14 levels", kernels.ladder_rk4_numba, kernels.ladder_rk4_numpy, ladder_case(14)),
        ("ladder_rk4, 60 levels", kernels.ladder_rk4_numba, kernels.ladder_rk4_numpy, ladder_case(60)),
        ("servo_loop, 40k steps", kernels.servo_loop_numba, kernels.servo_loop_numpy, servo_case()),
    ]
    print(f"{'kernel':<24}{'numba':>12}{'numpy':>12}{'speed-up':>10}  max |diff|")
    for name, fast, slow, case in cases:
        t_fast = best(fast, case, args.repeat)
        t_slow = best(slow, case, args.repeat)
        diff = float(np.max(np.abs(fast(*case) - slow(*case))))
        print(f"{name:<24}{t_fast * 1e3:>10.2f}ms{t_slow * 1e3:>10.2f}ms{t_slow / t_fast:>9.1f}x  {diff:.1e}")


if __name__ == "__main__":
    main()
