# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled adaptive Tsitouras 5(4) kernel for the repressilator model.

Identical stepping rules, error control and dense output as the generic
pure-Python integrator in ``flowanneal.tsit5``, specialised to the
three-species vector field and kept in C because the per-sample ODE solve
dominates the cost of every likelihood evaluation.
"""

import numpy as np

from flowanneal.errors import InputValidationError

cimport numpy as cnp
from libc.math cimport fabs, isfinite, pow, sqrt

cnp.import_array()

STATUS_OK = 0
STATUS_STEP_UNDERFLOW = 1
STATUS_MAX_STEPS = 2
STATUS_NONFINITE = 3

# Tsitouras (2011) tableau
cdef double C2 = 0.161, C3 = 0.327, C4 = 0.9, C5 = 0.9800255409045097
cdef double A21 = 0.161
cdef double A31 = -0.008480655492356989, A32 = 0.335480655492357
cdef double A41 = 2.8971530571054935, A42 = -6.359448489975075
cdef double A43 = 4.3622954328695815
cdef double A51 = 5.325864828439257, A52 = -11.748883564062828
cdef double A53 = 7.4955393428898365, A54 = -0.09249506636175525
cdef double A61 = 5.86145544294642, A62 = -12.92096931784711
cdef double A63 = 8.159367898576159, A64 = -0.071584973281401
cdef double A65 = -0.028269050394068383
cdef double B1 = 0.09646076681806523, B2 = 0.01, B3 = 0.4798896504144996
cdef double B4 = 1.379008574103742, B5 = -3.290069515436081
cdef double B6 = 2.324710524099774
cdef double BT1 = -1.780011052225771e-03, BT2 = -8.164344596567469e-04
cdef double BT3 = 7.880878010261995e-03, BT4 = -1.447110071732629e-01
cdef double BT5 = 5.823571654525552e-01, BT6 = -4.580821059291869e-01
cdef double BT7 = 1.515151515151515e-02

cdef double SAFETY = 0.9, MIN_FACTOR = 0.2, MAX_FACTOR = 10.0
cdef double UNDERFLOW_FRACTION = 1e-14


cdef inline bint _rhs(double* x, double a1, double a2, double a3,
                      double m, double eta, double* out) noexcept nogil:
    out[0] = a1 / (1.0 + pow(x[1], m)) - eta * x[0]
    out[1] = a2 / (1.0 + pow(x[2], m)) - eta * x[1]
    out[2] = a3 / (1.0 + pow(x[0], m)) - eta * x[2]
    return isfinite(out[0]) and isfinite(out[1]) and isfinite(out[2])


cdef inline void _interp_weights(double t, double* b) noexcept nogil:
    b[0] = t * (1.0 + t * (-2.763706197274826
                + t * (2.9132554618219126 - 1.0530884977290216 * t)))
    b[1] = t * t * (0.13169999999999998 + t * (-0.2234 + 0.1017 * t))
    b[2] = t * t * (3.9302962368947516
                    + t * (-5.941033872131505 + 2.490627285651253 * t))
    b[3] = t * t * (-12.411077166933676
                    + t * (30.33818863028232 - 16.548102889244902 * t))
    b[4] = t * t * (37.50931341651104
                    + t * (-88.1789048947664 + 47.37952196281928 * t))
    b[5] = t * t * (-27.896526289197286
                    + t * (65.09189467479366 - 34.87065786149661 * t))
    b[6] = t * t * (1.5 + t * (-4.0 + 2.5 * t))


cdef inline double _rms3(double* e) noexcept nogil:
    return sqrt((e[0] * e[0] + e[1] * e[1] + e[2] * e[2]) / 3.0)


def repressilator_trajectory(object theta_in, object save_at_in,
                             double rtol=1e-6, double atol=1e-8,
                             long max_steps=1_000_000):
    """Integrate the oscillator under ``theta`` and sample the state.

    Contract matches ``flowanneal._ode_fallback.repressilator_trajectory``:
    returns ``(status, states, nsteps)`` with states of shape
    ``(len(save_at), 3)``, NaN-filled on failure.
    """
    cdef cnp.ndarray[cnp.float64_t, ndim=1] theta = \
        np.ascontiguousarray(theta_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ts = \
        np.ascontiguousarray(save_at_in, dtype=np.float64)
    if theta.shape[0] != 8:
        raise InputValidationError("theta must have shape (8,)")
    cdef Py_ssize_t nsave = ts.shape[0]
    if nsave == 0:
        raise InputValidationError("save_at must be a non-empty 1-d array")
    cdef Py_ssize_t ii
    for ii in range(nsave - 1):
        if ts[ii + 1] < ts[ii]:
            raise InputValidationError("save_at must be non-decreasing")

    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = \
        np.full((nsave, 3), np.nan)

    cdef double a1 = theta[3], a2 = theta[4], a3 = theta[5]
    cdef double m = theta[6], eta = theta[7]
    cdef double t0 = ts[0], t1 = ts[nsave - 1]

    cdef double x[3]
    cdef double x_new[3]
    cdef double xi[3]
    cdef double k[7][3]
    cdef double bw[7]
    cdef double err[3]
    cdef double scale[3]
    cdef int i, j
    cdef Py_ssize_t isave = 0
    cdef long nsteps = 0
    cdef double h, h_floor, t, t_new, err_norm, factor, d0, d1, d2, h0, h1
    cdef double theta_loc, span, mx
    cdef bint just_rejected = False, at_end, ok

    for i in range(3):
        x[i] = theta[i]
        if not isfinite(x[i]):
            return STATUS_NONFINITE, out, 0

    while isave < nsave and ts[isave] <= t0:
        for i in range(3):
            out[isave, i] = x[i]
        isave += 1
    if isave == nsave:
        return STATUS_OK, out, 0

    if not _rhs(x, a1, a2, a3, m, eta, k[0]):
        return STATUS_NONFINITE, out, 0

    # starting step: same two-evaluation heuristic as the Python integrator
    span = t1 - t0
    for i in range(3):
        scale[i] = atol + rtol * fabs(x[i])
        err[i] = x[i] / scale[i]
    d0 = _rms3(err)
    for i in range(3):
        err[i] = k[0][i] / scale[i]
    d1 = _rms3(err)
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    if h0 > span:
        h0 = span
    for i in range(3):
        xi[i] = x[i] + h0 * k[0][i]
    ok = _rhs(xi, a1, a2, a3, m, eta, k[1])
    if not ok:
        h1 = h0 * 1e-3
    else:
        for i in range(3):
            err[i] = (k[1][i] - k[0][i]) / scale[i]
        d2 = _rms3(err) / h0
        if (d1 if d1 > d2 else d2) <= 1e-15:
            h1 = 1e-6 if 1e-6 > h0 * 1e-3 else h0 * 1e-3
        else:
            h1 = pow(0.01 / (d1 if d1 > d2 else d2), 0.2)
    h = 100.0 * h0
    if h1 < h:
        h = h1
    if span < h:
        h = span

    h_floor = UNDERFLOW_FRACTION * span
    t = t0

    while isave < nsave:
        if nsteps >= max_steps:
            return STATUS_MAX_STEPS, out, nsteps
        if h < h_floor:
            return STATUS_STEP_UNDERFLOW, out, nsteps
        nsteps += 1

        at_end = t + h >= t1
        if at_end:
            h = t1 - t
            t_new = t1
        else:
            t_new = t + h

        ok = True
        for i in range(3):
            xi[i] = x[i] + h * A21 * k[0][i]
        ok = _rhs(xi, a1, a2, a3, m, eta, k[1]) and ok
        for i in range(3):
            xi[i] = x[i] + h * (A31 * k[0][i] + A32 * k[1][i])
        ok = _rhs(xi, a1, a2, a3, m, eta, k[2]) and ok
        for i in range(3):
            xi[i] = x[i] + h * (A41 * k[0][i] + A42 * k[1][i] + A43 * k[2][i])
        ok = _rhs(xi, a1, a2, a3, m, eta, k[3]) and ok
        for i in range(3):
            xi[i] = x[i] + h * (A51 * k[0][i] + A52 * k[1][i]
                                + A53 * k[2][i] + A54 * k[3][i])
        ok = _rhs(xi, a1, a2, a3, m, eta, k[4]) and ok
        for i in range(3):
            xi[i] = x[i] + h * (A61 * k[0][i] + A62 * k[1][i] + A63 * k[2][i]
                                + A64 * k[3][i] + A65 * k[4][i])
        ok = _rhs(xi, a1, a2, a3, m, eta, k[5]) and ok
        for i in range(3):
            x_new[i] = x[i] + h * (B1 * k[0][i] + B2 * k[1][i] + B3 * k[2][i]
                                   + B4 * k[3][i] + B5 * k[4][i]
                                   + B6 * k[5][i])
        ok = isfinite(x_new[0]) and isfinite(x_new[1]) and isfinite(x_new[2]) \
            and ok
        if ok:
            ok = _rhs(x_new, a1, a2, a3, m, eta, k[6])

        if ok:
            for i in range(3):
                err[i] = h * (BT1 * k[0][i] + BT2 * k[1][i] + BT3 * k[2][i]
                              + BT4 * k[3][i] + BT5 * k[4][i] + BT6 * k[5][i]
                              + BT7 * k[6][i])
                mx = fabs(x[i])
                if fabs(x_new[i]) > mx:
                    mx = fabs(x_new[i])
                scale[i] = atol + rtol * mx
                err[i] = err[i] / scale[i]
            err_norm = _rms3(err)
            if not isfinite(err_norm):
                ok = False

        if not ok:
            h *= MIN_FACTOR
            just_rejected = True
            continue

        if err_norm > 1.0:
            factor = SAFETY * pow(err_norm, -0.2)
            if factor < MIN_FACTOR:
                factor = MIN_FACTOR
            h *= factor
            just_rejected = True
            continue

        while isave < nsave and (ts[isave] <= t_new or at_end):
            theta_loc = (ts[isave] - t) / h
            if theta_loc >= 1.0 - 1e-12:
                for i in range(3):
                    out[isave, i] = x_new[i]
            else:
                _interp_weights(theta_loc, bw)
                for i in range(3):
                    out[isave, i] = x[i] + h * (
                        bw[0] * k[0][i] + bw[1] * k[1][i] + bw[2] * k[2][i]
                        + bw[3] * k[3][i] + bw[4] * k[4][i] + bw[5] * k[5][i]
                        + bw[6] * k[6][i])
            isave += 1

        t = t_new
        for i in range(3):
            x[i] = x_new[i]
            k[0][i] = k[6][i]

        if err_norm == 0.0:
            factor = MAX_FACTOR
        else:
            factor = SAFETY * pow(err_norm, -0.2)
            if factor > MAX_FACTOR:
                factor = MAX_FACTOR
        if just_rejected:
            if factor > 1.0:
                factor = 1.0
            just_rejected = False
        h *= factor

    return STATUS_OK, out, nsteps
