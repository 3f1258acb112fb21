"""Bayesian target for repressilator parameter estimation.

The inference problem: recover initial conditions and kinetic parameters
``theta = (X1(0), X2(0), X3(0), alpha_1, alpha_2, alpha_3, m, eta)`` of
the three-gene oscillator from noisy observations of the total protein
level ``sum_i X_i(t)`` on a regular time grid.  Observation noise is
i.i.d. Gaussian; the prior is an independent Gaussian over the eight
parameters.  Because the likelihood symmetry under cyclic relabeling of
the genes leaves the observable invariant, the posterior has three
equivalent modes.

Integrations that fail (non-finite derivatives, step underflow, step
budget) are not errors: the predicted observable is replaced by a large
constant fill value, which gives those parameter vectors an extremely
small but well-defined likelihood.
"""

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels, repressilator, tables
from .errors import InputValidationError

THETA_DIM = repressilator.N_PARAMS
THETA_TRUE = np.array([2.0, 2.0, 2.0, 10.0, 15.0, 20.0, 4.0, 1.0])
PRIOR_MEAN = np.array([2.0, 2.0, 2.0, 15.0, 15.0, 15.0, 5.0, 5.0])
PRIOR_VAR = np.array([4.0, 4.0, 4.0, 25.0, 25.0, 25.0, 25.0, 25.0])

DEFAULT_SIGMA2 = 0.25
DEFAULT_FILL_VALUE = 200.0

# lower bound on any reported log-likelihood; large enough in magnitude
# to dominate every realistic value, small enough that beta * floor plus
# a log-prior never overflows a float
_LOGLIK_FLOOR = -1.0e306

_LOG_2PI = float(np.log(2.0 * np.pi))

# reuse the vector field under the name callers expect
repressilator_rhs = repressilator.rhs


@dataclass
class Dataset:
    """Observed time series plus the noise variance that generated it."""

    times: np.ndarray
    observed: np.ndarray
    sigma2: float
    theta_true: Optional[np.ndarray] = None
    seed: Optional[int] = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.observed = np.asarray(self.observed, dtype=float)
        if self.times.ndim != 1 or self.times.shape != self.observed.shape:
            raise InputValidationError(
                "times and observed must be equal-length 1-d arrays")
        if self.times.size < 2 or np.any(np.diff(self.times) <= 0):
            raise InputValidationError("times must be strictly increasing")
        if not np.all(np.isfinite(self.observed)):
            raise InputValidationError("observed values must be finite")
        if not self.sigma2 >= 0:
            raise InputValidationError("sigma2 must be non-negative")
        if self.theta_true is not None:
            self.theta_true = np.asarray(self.theta_true, dtype=float)

    def save(self, path):
        metadata = {"sigma2": float(self.sigma2)}
        if self.theta_true is not None:
            metadata["theta_true"] = self.theta_true
        if self.seed is not None:
            metadata["seed"] = int(self.seed)
        tables.write_table(path, ["time", "observed"],
                           [self.times, self.observed], metadata)

    @classmethod
    def load(cls, path):
        metadata, cols = tables.read_table(path, ["time", "observed"])
        if "sigma2" not in metadata:
            raise InputValidationError(f"{path}: missing sigma2 metadata")
        theta_true = None
        if "theta_true" in metadata:
            theta_true = tables.parse_float_list(metadata["theta_true"])
        seed = int(metadata["seed"]) if "seed" in metadata else None
        return cls(cols["time"], cols["observed"],
                   float(metadata["sigma2"]), theta_true, seed)


def generate_data(theta_true=THETA_TRUE, sigma2=DEFAULT_SIGMA2, seed=0,
                  t_start=0.0, t_end=30.0, save_interval=0.6,
                  rtol=1e-9, atol=1e-11):
    """Simulate the observable on a regular grid and add Gaussian noise.

    Returns ``(noisy, noiseless)`` datasets.  The reference integration
    runs at tight tolerances and must succeed; a failure here means the
    requested ground truth is unusable and raises.
    """
    theta_true = np.asarray(theta_true, dtype=float)
    if theta_true.shape != (THETA_DIM,):
        raise InputValidationError(
            f"theta_true must have shape ({THETA_DIM},)")
    if not (t_end > t_start and save_interval > 0):
        raise InputValidationError("need t_end > t_start and a positive "
                                   "save interval")
    n_points = int(round((t_end - t_start) / save_interval)) + 1
    times = t_start + save_interval * np.arange(n_points)
    times[-1] = min(times[-1], t_end)
    status, states, _ = kernels.repressilator_trajectory(
        theta_true, times, rtol, atol, 1_000_000)
    if status != kernels.STATUS_OK:
        raise InputValidationError(
            f"reference integration failed (status {status}) at "
            f"theta_true={theta_true.tolist()}")
    clean = states.sum(axis=1)
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, np.sqrt(sigma2), size=clean.shape) \
        if sigma2 > 0 else np.zeros_like(clean)
    noisy = Dataset(times, clean + noise, sigma2, theta_true, seed)
    noiseless = Dataset(times, clean, 0.0, theta_true, seed)
    return noisy, noiseless


class OdePosterior:
    """Annealed target densities for the repressilator dataset.

    Exposes the split the annealer needs: the normalized prior log-density
    ``log_pb`` and the unnormalized tempered part ``log_pu`` (the data
    log-likelihood), so the target at inverse temperature beta is
    ``log_pb + beta * log_pu``.

    ``workers`` > 1 evaluates likelihood batches in a process pool
    (order-preserving, so results are identical to serial evaluation);
    0 means one worker per available core.
    """

    def __init__(self, dataset, prior_mean=PRIOR_MEAN, prior_var=PRIOR_VAR,
                 rtol=1e-6, atol=1e-8, max_steps=1_000_000,
                 fill_value=DEFAULT_FILL_VALUE, workers=1):
        if dataset.sigma2 <= 0:
            raise InputValidationError(
                "dataset sigma2 must be positive for inference")
        self.dataset = dataset
        self.prior_mean = np.asarray(prior_mean, dtype=float)
        self.prior_var = np.asarray(prior_var, dtype=float)
        if self.prior_mean.shape != self.prior_var.shape or \
                self.prior_mean.ndim != 1:
            raise InputValidationError("prior mean/var shape mismatch")
        if np.any(self.prior_var <= 0):
            raise InputValidationError("prior variances must be positive")
        self.dim = self.prior_mean.size
        self.rtol = float(rtol)
        self.atol = float(atol)
        self.max_steps = int(max_steps)
        self.fill_value = float(fill_value)
        self.workers = os.cpu_count() if workers == 0 else int(workers)
        self._pool = None
        self._log_prior_const = -0.5 * np.sum(
            np.log(2.0 * np.pi * self.prior_var))
        self._loglik_const = -0.5 * self.dataset.times.size * \
            np.log(2.0 * np.pi * self.dataset.sigma2)

    # -- prior ---------------------------------------------------------

    def log_prior(self, theta):
        theta = np.asarray(theta, dtype=float)
        single = theta.ndim == 1
        t2 = theta[None, :] if single else theta
        dev = (t2 - self.prior_mean) ** 2 / self.prior_var
        out = self._log_prior_const - 0.5 * dev.sum(axis=1)
        return float(out[0]) if single else out

    def sample_prior(self, n, rng):
        return self.prior_mean + np.sqrt(self.prior_var) * \
            rng.standard_normal((n, self.dim))

    @property
    def prior_loc(self):
        return self.prior_mean.copy()

    @property
    def prior_scale(self):
        return np.sqrt(self.prior_var)

    # -- likelihood ----------------------------------------------------

    def _loglik_single(self, theta):
        status, states, _ = kernels.repressilator_trajectory(
            np.asarray(theta, dtype=float), self.dataset.times,
            self.rtol, self.atol, self.max_steps)
        if status == kernels.STATUS_OK:
            predicted = states.sum(axis=1)
        else:
            predicted = np.full(self.dataset.times.shape, self.fill_value)
        with np.errstate(over="ignore", invalid="ignore"):
            resid = self.dataset.observed - predicted
            ll = self._loglik_const - 0.5 * float(resid @ resid) / \
                self.dataset.sigma2
        # exploding-but-finite trajectories can overflow the quadratic to
        # -inf; floor it so beta * log_lik is well-defined at beta = 0
        return ll if np.isfinite(ll) else _LOGLIK_FLOOR

    def _loglik_serial(self, thetas):
        return np.array([self._loglik_single(t) for t in thetas])

    def log_likelihood(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.ndim == 1:
            return self._loglik_single(theta)
        return self._eval_batch(theta)

    def _eval_batch(self, thetas):
        if self.workers <= 1 or thetas.shape[0] < 4 * self.workers:
            return self._loglik_serial(thetas)
        if self._pool is None:
            self._pool = ProcessPoolExecutor(
                max_workers=self.workers, initializer=_pool_init,
                initargs=(self._state(),))
        chunks = np.array_split(thetas, 4 * self.workers)
        return np.concatenate(list(self._pool.map(_pool_eval, chunks)))

    def _state(self):
        return {
            "times": self.dataset.times, "observed": self.dataset.observed,
            "sigma2": self.dataset.sigma2,
            "prior_mean": self.prior_mean, "prior_var": self.prior_var,
            "rtol": self.rtol, "atol": self.atol,
            "max_steps": self.max_steps, "fill_value": self.fill_value,
        }

    def close(self):
        """Shut down the worker pool, if one was started."""
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- combined ------------------------------------------------------

    def log_components(self, thetas):
        thetas = np.asarray(thetas, dtype=float)
        if thetas.ndim != 2 or thetas.shape[1] != self.dim:
            raise InputValidationError(
                f"thetas must have shape (n, {self.dim})")
        return self.log_prior(thetas), self._eval_batch(thetas)

    def log_components_single(self, theta):
        theta = np.asarray(theta, dtype=float)
        return self.log_prior(theta), self._loglik_single(theta)

    def annealed_log_target(self, theta, beta):
        """Tempered log-density plus its ``(log_pb, log_pu)`` split."""
        if not 0.0 <= beta <= 1.0:
            raise InputValidationError(f"beta must be in [0, 1], got {beta}")
        lpb = self.log_prior(theta)
        lpu = self.log_likelihood(theta)
        return lpb + beta * lpu, (lpb, lpu)


_POOL_TARGET = None


def _pool_init(state):
    global _POOL_TARGET
    dataset = Dataset(state["times"], state["observed"], state["sigma2"])
    _POOL_TARGET = OdePosterior(
        dataset, prior_mean=state["prior_mean"],
        prior_var=state["prior_var"], rtol=state["rtol"],
        atol=state["atol"], max_steps=state["max_steps"],
        fill_value=state["fill_value"], workers=1)


def _pool_eval(thetas):
    return _POOL_TARGET._loglik_serial(thetas)
