import numpy as np
import pytest

from flowanneal.tsit5 import (STATUS_MAX_STEPS, STATUS_NONFINITE,
                              STATUS_OK, STATUS_STEP_UNDERFLOW,
                              tsit5_integrate)


def exp_decay(t, x):
    return -x


def harmonic(t, x):
    return np.array([x[1], -x[0]])


def test_exponential_against_closed_form():
    res = tsit5_integrate(exp_decay, [1.0], 0.0, 1.0, [1.0],
                          rtol=1e-9, atol=1e-12)
    assert res.ok and res.status == STATUS_OK
    assert abs(res.states[0, 0] - np.exp(-1.0)) < 1e-8


def test_dense_output_matches_closed_form_between_steps():
    save_at = np.linspace(0.0, 5.0, 101)
    res = tsit5_integrate(exp_decay, [1.0], 0.0, 5.0, save_at,
                          rtol=1e-9, atol=1e-12)
    assert res.ok
    assert np.max(np.abs(res.states[:, 0] - np.exp(-save_at))) < 1e-7


def test_harmonic_energy_drift_over_ten_periods():
    t1 = 20.0 * np.pi
    save_at = np.linspace(0.0, t1, 201)
    res = tsit5_integrate(harmonic, [1.0, 0.0], 0.0, t1, save_at,
                          rtol=1e-9, atol=1e-12)
    assert res.ok
    energy = res.states[:, 0] ** 2 + res.states[:, 1] ** 2
    assert np.max(np.abs(energy - 1.0)) < 1e-6


def test_fifth_order_fixed_step_convergence():
    # huge tolerances so every step is accepted at exactly max_step;
    # halving the step size should shrink the error by about 2**5
    errors = []
    for h in (0.05, 0.025):
        res = tsit5_integrate(exp_decay, [1.0], 0.0, 1.0, [1.0],
                              rtol=1e6, atol=1e6, max_step=h)
        errors.append(abs(res.states[0, 0] - np.exp(-1.0)))
    ratio = errors[0] / errors[1]
    assert 20.0 < ratio < 50.0


def test_save_points_between_and_at_endpoints():
    save_at = np.array([0.0, 0.3, 1.0])
    res = tsit5_integrate(exp_decay, [1.0], 0.0, 1.0, save_at,
                          rtol=1e-9, atol=1e-12)
    assert res.ok
    assert res.states[0, 0] == 1.0
    assert abs(res.states[1, 0] - np.exp(-0.3)) < 1e-8
    assert abs(res.states[2, 0] - np.exp(-1.0)) < 1e-8


def test_max_steps_failure_is_a_result_not_an_exception():
    res = tsit5_integrate(exp_decay, [1.0], 0.0, 100.0,
                          [100.0], rtol=1e-12, atol=1e-14, max_steps=3)
    assert not res.ok
    assert res.status == STATUS_MAX_STEPS
    assert np.isnan(res.states[0, 0])


def test_nonfinite_rhs_reports_failure():
    def bad(t, x):
        return np.array([np.nan])

    res = tsit5_integrate(bad, [1.0], 0.0, 1.0, [1.0])
    assert not res.ok
    assert res.status == STATUS_NONFINITE


def test_blowup_reports_failure():
    # x' = x**2 from x(0)=1 diverges at t=1; finite-time blow-up must
    # surface as a failure status, whichever guard trips first
    def riccati(t, x):
        return x * x

    res = tsit5_integrate(riccati, [1.0], 0.0, 2.0, [2.0],
                          rtol=1e-9, atol=1e-12, max_steps=100000)
    assert not res.ok
    assert res.status in (STATUS_NONFINITE, STATUS_STEP_UNDERFLOW,
                          STATUS_MAX_STEPS)


def test_partial_rows_kept_on_late_failure():
    calls = {"n": 0}

    def dies_later(t, x):
        calls["n"] += 1
        if t > 0.5:
            return np.array([np.nan])
        return -x

    save_at = np.array([0.1, 0.9])
    res = tsit5_integrate(dies_later, [1.0], 0.0, 1.0, save_at,
                          rtol=1e-9, atol=1e-12)
    assert not res.ok
    assert abs(res.states[0, 0] - np.exp(-0.1)) < 1e-6
    assert np.isnan(res.states[1, 0])


def test_tolerance_controls_error():
    errs = []
    for rtol in (1e-5, 1e-7, 1e-9):
        res = tsit5_integrate(exp_decay, [1.0], 0.0, 1.0, [1.0],
                              rtol=rtol, atol=1e-14)
        errs.append(abs(res.states[0, 0] - np.exp(-1.0)))
    assert errs[0] > errs[1] > errs[2]


def test_evaluation_counters_populated():
    res = tsit5_integrate(exp_decay, [1.0], 0.0, 1.0, [1.0])
    assert res.nsteps > 0
    assert res.nfev >= 6 * res.nsteps


def test_invalid_save_grid_rejected():
    from flowanneal.errors import InputValidationError
    with pytest.raises(InputValidationError):
        tsit5_integrate(exp_decay, [1.0], 0.0, 1.0, [0.5, 0.2])
    with pytest.raises(InputValidationError):
        tsit5_integrate(exp_decay, [1.0], 0.0, 1.0, [1.5])
