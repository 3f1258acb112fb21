"""Timing comparison of the compiled and pure-Python ODE kernels.

Draws a batch of parameter vectors from the prior and times the
trajectory solve that dominates every likelihood evaluation, at the
inference tolerances and at the tighter data-generation tolerances.

Usage: python benchmarks/bench_ode.py [--batch 64] [--repeats 5]
"""

import argparse
import time

import numpy as np

from flowanneal import _ode_core, _ode_fallback
from flowanneal.target import OdePosterior, generate_data

BACKENDS = [("cython", _ode_core.repressilator_trajectory),
            ("python", _ode_fallback.repressilator_trajectory)]


def time_backend(solver, thetas, times, rtol, atol, repeats):
    best = np.inf
    for _ in range(repeats):
        start = time.perf_counter()
        for theta in thetas:
            solver(theta, times, rtol, atol, 1_000_000)
        best = min(best, time.perf_counter() - start)
    return best / len(thetas)


def check_agreement(thetas, times):
    """Statuses must match draw for draw.  States typically match to
    1e-9, but parameter draws with steep Hill exponents amplify last-ulp
    libm differences by the trajectory's phase sensitivity, so the worst
    deviation is only reported, not asserted."""
    deviations = []
    for theta in thetas:
        status_c, states_c, _ = BACKENDS[0][1](theta, times, 1e-6, 1e-8,
                                               1_000_000)
        status_p, states_p, _ = BACKENDS[1][1](theta, times, 1e-6, 1e-8,
                                               1_000_000)
        assert status_c == status_p
        mask = np.isfinite(states_c) & np.isfinite(states_p)
        if mask.any():
            scale = np.maximum(np.abs(states_c[mask]), 1.0)
            deviations.append(
                np.max(np.abs(states_c[mask] - states_p[mask]) / scale))
    deviations = np.array(deviations)
    assert np.median(deviations) < 1e-6
    print(f"backend agreement: median rel dev {np.median(deviations):.1e},"
          f" worst {deviations.max():.1e} over {deviations.size} draws")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--batch", type=int, default=64,
                        help="prior draws per timing pass")
    parser.add_argument("--repeats", type=int, default=5,
                        help="timing passes; the best is reported")
    args = parser.parse_args()

    noisy, _ = generate_data(seed=0)
    posterior = OdePosterior(noisy)
    rng = np.random.default_rng(1)
    thetas = posterior.sample_prior(args.batch, rng)
    times = noisy.times

    check_agreement(thetas, times)
    print(f"batch of {args.batch} prior draws, {times.size}-point grid, "
          f"best of {args.repeats} passes\n")
    print(f"{'tolerances':<22}{'cython':>12}{'python':>12}{'speedup':>10}")
    for label, rtol, atol in [("inference 1e-6/1e-8", 1e-6, 1e-8),
                              ("reference 1e-9/1e-11", 1e-9, 1e-11)]:
        per_call = {}
        for name, solver in BACKENDS:
            per_call[name] = time_backend(solver, thetas, times, rtol,
                                          atol, args.repeats)
        ratio = per_call["python"] / per_call["cython"]
        print(f"{label:<22}"
              f"{per_call['cython'] * 1e6:>10.1f}us"
              f"{per_call['python'] * 1e6:>10.1f}us"
              f"{ratio:>9.1f}x")


if __name__ == "__main__":
    main()
