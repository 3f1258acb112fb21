"""Adaptive Tsitouras 5(4) Runge-Kutta integration with dense output.

Explicit embedded pair: fifth-order propagation, fourth-order embedded
error estimate, FSAL (first stage of the next step reuses the last
evaluation of the current one), and a fourth-order interpolant so the
solution can be reported on an arbitrary save grid without constraining
the step size.

Failures (step underflow, exhausted step budget, non-finite derivatives)
are reported through the result object instead of raised: downstream
likelihood code treats a failed integration as data, not as an error.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InputValidationError

# Tsitouras (2011) coefficients.  Stage times for stages 2..7; stage 7 is
# the FSAL evaluation at t + h.
_C = (0.161, 0.327, 0.9, 0.9800255409045097, 1.0, 1.0)

_A = (
    (0.161,),
    (-0.008480655492356989, 0.335480655492357),
    (2.8971530571054935, -6.359448489975075, 4.3622954328695815),
    (5.325864828439257, -11.748883564062828, 7.4955393428898365,
     -0.09249506636175525),
    (5.86145544294642, -12.92096931784711, 8.159367898576159,
     -0.071584973281401, -0.028269050394068383),
    (0.09646076681806523, 0.01, 0.4798896504144996, 1.379008574103742,
     -3.290069515436081, 2.324710524099774),
)

# Difference between the 5th- and 4th-order solutions; the error estimate
# is h * sum(_BTILDE[i] * k[i]).
_BTILDE = np.array([
    -1.780011052225771e-03,
    -8.164344596567469e-04,
    7.880878010261995e-03,
    -1.447110071732629e-01,
    5.823571654525552e-01,
    -4.580821059291869e-01,
    1.515151515151515e-02,
])

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0
# steps shorter than this fraction of the integration span abort the run
_UNDERFLOW_FRACTION = 1e-14

STATUS_OK = "ok"
STATUS_STEP_UNDERFLOW = "step_underflow"
STATUS_MAX_STEPS = "max_steps"
STATUS_NONFINITE = "nonfinite"


@dataclass
class IntegrationResult:
    """Outcome of one integration.

    ``states`` has one row per save point; on failure the rows the
    integration never reached stay NaN.  ``nsteps`` counts attempted
    steps, ``nfev`` derivative evaluations.
    """

    ok: bool
    states: np.ndarray
    status: str
    nsteps: int
    nfev: int


def _interp_weights(theta):
    """Weights b_i(theta) of the 4th-order dense-output polynomial."""
    t = theta
    return np.array([
        t * (1.0 + t * (-2.763706197274826
                        + t * (2.9132554618219126 - 1.0530884977290216 * t))),
        t * t * (0.13169999999999998 + t * (-0.2234 + 0.1017 * t)),
        t * t * (3.9302962368947516
                 + t * (-5.941033872131505 + 2.490627285651253 * t)),
        t * t * (-12.411077166933676
                 + t * (30.33818863028232 - 16.548102889244902 * t)),
        t * t * (37.50931341651104
                 + t * (-88.1789048947664 + 47.37952196281928 * t)),
        t * t * (-27.896526289197286
                 + t * (65.09189467479366 - 34.87065786149661 * t)),
        t * t * (1.5 + t * (-4.0 + 2.5 * t)),
    ])


def _rms(x):
    return float(np.sqrt(np.mean(np.square(x))))


def _initial_step(rhs, t0, x0, f0, t1, rtol, atol, max_step):
    """Starting step size via the usual two-evaluation heuristic."""
    span = t1 - t0
    scale = atol + rtol * np.abs(x0)
    d0 = _rms(x0 / scale)
    d1 = _rms(f0 / scale)
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    h0 = min(h0, span)

    x1 = x0 + h0 * f0
    f1 = rhs(t0 + h0, x1)
    if not np.all(np.isfinite(f1)):
        h1 = h0 * 1e-3
    else:
        d2 = _rms((f1 - f0) / scale) / h0
        if max(d1, d2) <= 1e-15:
            h1 = max(1e-6, h0 * 1e-3)
        else:
            h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100.0 * h0, h1, span, max_step)


def tsit5_integrate(rhs, x0, t0, t1, save_at, rtol=1e-6, atol=1e-8,
                    max_steps=1_000_000, max_step=np.inf):
    """Integrate ``dx/dt = rhs(t, x)`` from ``t0`` to ``t1``.

    Parameters
    ----------
    rhs : callable
        ``rhs(t, x) -> dx/dt`` with ``x`` of shape (d,).
    x0 : array_like
        Initial state at ``t0``.
    save_at : array_like
        Non-decreasing times in ``[t0, t1]`` at which to report the state.
    rtol, atol : float
        Local error tolerances (mixed relative/absolute RMS criterion).
    max_steps : int
        Budget of attempted steps before giving up.
    max_step : float
        Upper bound on the step size (useful to force fixed-step tests).

    Returns
    -------
    IntegrationResult
    """
    x0 = np.asarray(x0, dtype=float)
    save_at = np.asarray(save_at, dtype=float)
    if save_at.ndim != 1 or save_at.size == 0:
        raise InputValidationError("save_at must be a non-empty 1-d array")
    if np.any(np.diff(save_at) < 0):
        raise InputValidationError("save_at must be non-decreasing")
    if save_at[0] < t0 or save_at[-1] > t1 + 1e-12 * max(abs(t1), 1.0):
        raise InputValidationError("save_at must lie within [t0, t1]")
    if t1 < t0:
        raise InputValidationError("t1 must be >= t0")

    d = x0.size
    states = np.full((save_at.size, d), np.nan)
    nfev = 0
    nsteps = 0

    def fail(status):
        return IntegrationResult(False, states, status, nsteps, nfev)

    if not np.all(np.isfinite(x0)):
        return fail(STATUS_NONFINITE)

    # save points at (or numerically before) t0 take the initial state
    isave = 0
    while isave < save_at.size and save_at[isave] <= t0:
        states[isave] = x0
        isave += 1

    if isave == save_at.size:
        return IntegrationResult(True, states, STATUS_OK, 0, 0)

    f0 = np.asarray(rhs(t0, x0), dtype=float)
    nfev += 1
    if not np.all(np.isfinite(f0)):
        return fail(STATUS_NONFINITE)

    h = _initial_step(rhs, t0, x0, f0, t1, rtol, atol, max_step)
    nfev += 1
    h_floor = _UNDERFLOW_FRACTION * (t1 - t0)

    t = t0
    x = x0.copy()
    k = np.empty((7, d))
    k[0] = f0
    just_rejected = False

    while isave < save_at.size:
        if nsteps >= max_steps:
            return fail(STATUS_MAX_STEPS)
        if h < h_floor:
            return fail(STATUS_STEP_UNDERFLOW)
        nsteps += 1

        at_end = t + h >= t1
        if at_end:
            h = t1 - t
            t_new = t1
        else:
            t_new = t + h

        for i in range(1, 6):
            xi = x + h * (np.array(_A[i - 1]) @ k[:i])
            k[i] = rhs(t + _C[i - 1] * h, xi)
        x_new = x + h * (np.array(_A[5]) @ k[:6])
        k[6] = rhs(t_new, x_new)
        nfev += 6

        err = h * (_BTILDE @ k)
        scale = atol + rtol * np.maximum(np.abs(x), np.abs(x_new))
        with np.errstate(invalid="ignore", over="ignore"):
            err_norm = _rms(err / scale)
        if not np.isfinite(err_norm):
            err_norm = np.inf

        if err_norm > 1.0:
            factor = _MIN_FACTOR if err_norm == np.inf else \
                max(_MIN_FACTOR, _SAFETY * err_norm ** -0.2)
            h *= factor
            just_rejected = True
            continue

        # accepted: report save points inside (t, t_new]; once t1 is
        # reached, any save point left over by roundoff collapses to t1
        while isave < save_at.size and (save_at[isave] <= t_new or at_end):
            theta = (save_at[isave] - t) / h
            if theta >= 1.0 - 1e-12:
                states[isave] = x_new
            else:
                states[isave] = x + h * (_interp_weights(theta) @ k)
            isave += 1

        t = t_new
        x = x_new
        k[0] = k[6]

        if err_norm == 0.0:
            factor = _MAX_FACTOR
        else:
            factor = min(_MAX_FACTOR, _SAFETY * err_norm ** -0.2)
        if just_rejected:
            factor = min(1.0, factor)
            just_rejected = False
        h = min(h * factor, max_step)

    return IntegrationResult(True, states, STATUS_OK, nsteps, nfev)
