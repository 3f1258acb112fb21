"""Vector field of the three-gene cyclic-repression oscillator.

Each protein is produced at a rate repressed by the previous gene in the
cycle (1 <- 2 <- 3 <- 1) through a Hill term, and degrades linearly:

    dX_i/dt = alpha_i / (1 + X_{p(i)}^m) - eta * X_i,   p = (2, 3, 1)

The parameter vector packs initial conditions and kinetics as
``theta = (X1(0), X2(0), X3(0), alpha_1, alpha_2, alpha_3, m, eta)``.
"""

import numpy as np

N_SPECIES = 3
N_PARAMS = 8

# repressor index for each species, i.e. p = (2, 3, 1) zero-based
_REPRESSOR = np.array([1, 2, 0])


def rhs(x, theta):
    """Time derivative of the state ``x`` (shape (3,)) under ``theta``.

    Negative states raised to a fractional Hill exponent produce NaN;
    callers treat non-finite derivatives as an integration failure.
    """
    x = np.asarray(x, dtype=float)
    alpha = theta[3:6]
    m = theta[6]
    eta = theta[7]
    return alpha / (1.0 + x[_REPRESSOR] ** m) - eta * x
