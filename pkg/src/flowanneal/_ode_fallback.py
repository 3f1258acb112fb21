"""Pure-Python likelihood kernel, mirror of the compiled extension.

Same contract as ``flowanneal._ode_core.repressilator_trajectory``; used
automatically when the extension is unavailable (see ``flowanneal.kernels``).
"""

import numpy as np

from . import repressilator, tsit5
from .errors import InputValidationError

STATUS_OK = 0
STATUS_STEP_UNDERFLOW = 1
STATUS_MAX_STEPS = 2
STATUS_NONFINITE = 3

_STATUS_CODE = {
    tsit5.STATUS_OK: STATUS_OK,
    tsit5.STATUS_STEP_UNDERFLOW: STATUS_STEP_UNDERFLOW,
    tsit5.STATUS_MAX_STEPS: STATUS_MAX_STEPS,
    tsit5.STATUS_NONFINITE: STATUS_NONFINITE,
}


def repressilator_trajectory(theta, save_at, rtol=1e-6, atol=1e-8,
                             max_steps=1_000_000):
    """Integrate the oscillator under ``theta`` and sample the state.

    ``save_at`` must be increasing; the initial state ``theta[:3]``
    applies at ``save_at[0]``.  Returns ``(status, states, nsteps)`` with
    integer status (0 ok, 1 step underflow, 2 step budget, 3 non-finite)
    and ``states`` of shape (len(save_at), 3); on failure the rows never
    reached stay NaN.
    """
    theta = np.asarray(theta, dtype=float)
    save_at = np.asarray(save_at, dtype=float)
    if theta.shape != (repressilator.N_PARAMS,):
        raise InputValidationError(f"theta must have shape ({repressilator.N_PARAMS},)")

    def f(t, x):
        return repressilator.rhs(x, theta)

    with np.errstate(all="ignore"):
        res = tsit5.tsit5_integrate(f, theta[:3], save_at[0], save_at[-1],
                                    save_at, rtol=rtol, atol=atol,
                                    max_steps=max_steps)
    return _STATUS_CODE[res.status], res.states, res.nsteps
