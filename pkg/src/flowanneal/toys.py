"""Small analytic targets used by the command line and the test suite."""

import numpy as np

from .errors import InputValidationError

_LOG_2PI = float(np.log(2.0 * np.pi))


class _BatchTarget:
    """Adds the single-sample entry point on top of a batch evaluator.

    All toy priors are Gaussians centered at the origin, so the shared
    ``prior_loc`` is zero; subclasses with a non-unit prior width
    override ``prior_scale``.
    """

    def log_components_single(self, theta):
        lpb, lpu = self.log_components(np.asarray(theta, float)[None, :])
        return float(lpb[0]), float(lpu[0])

    @property
    def prior_loc(self):
        return np.zeros(self.dim)

    @property
    def prior_scale(self):
        return np.ones(self.dim)


class ConjugateGaussianTarget(_BatchTarget):
    """Standard-normal prior times a Gaussian likelihood ``N(x; mu, s2 I)``.

    Everything is available in closed form, which makes this the
    reference problem for evidence estimators: the posterior is Gaussian,
    the log-evidence is ``sum_j log N(mu_j; 0, 1 + s2)``, and the
    thermodynamic integrand has an explicit expression.
    """

    def __init__(self, like_mean=(1.0, 1.0), like_var=1.0):
        self.like_mean = np.asarray(like_mean, dtype=float)
        if self.like_mean.ndim != 1 or self.like_mean.size < 1:
            raise InputValidationError("like_mean must be a 1-d vector")
        if not like_var > 0:
            raise InputValidationError("like_var must be positive")
        self.like_var = float(like_var)
        self.dim = self.like_mean.size

    def log_components(self, thetas):
        x = np.asarray(thetas, dtype=float)
        lpb = -0.5 * self.dim * _LOG_2PI - 0.5 * np.sum(x * x, axis=1)
        dev = x - self.like_mean
        lpu = -0.5 * self.dim * np.log(2.0 * np.pi * self.like_var) \
            - 0.5 * np.sum(dev * dev, axis=1) / self.like_var
        return lpb, lpu

    def sample_prior(self, n, rng):
        return rng.standard_normal((n, self.dim))

    @property
    def log_evidence(self):
        total_var = 1.0 + self.like_var
        return float(np.sum(-0.5 * np.log(2.0 * np.pi * total_var)
                            - 0.5 * self.like_mean ** 2 / total_var))

    @property
    def posterior_mean(self):
        return self.like_mean / (1.0 + self.like_var)

    @property
    def posterior_var(self):
        return self.like_var / (1.0 + self.like_var)

    def ti_integrand(self, beta):
        """Exact tempered-posterior expectation of the log-likelihood."""
        tau = 1.0 + beta / self.like_var
        m = (beta / self.like_var) * self.like_mean / tau
        dev2 = (m - self.like_mean) ** 2
        return float(-0.5 * self.dim * np.log(2.0 * np.pi * self.like_var)
                     - 0.5 * np.sum(1.0 / tau + dev2) / self.like_var)


class TrimodalGaussianTarget(_BatchTarget):
    """Broad Gaussian prior with a three-component Gaussian likelihood.

    The components sit at equal radius, 120 degrees apart, so by symmetry
    each posterior mode carries exactly one third of the mass.  Mode
    separation is many component widths: a sampler that collapses onto a
    subset of modes is easy to detect through ``mode_fractions``.
    """

    def __init__(self, prior_std=4.0, radius=3.0, mode_std=0.35):
        if not (prior_std > 0 and radius > 0 and mode_std > 0):
            raise InputValidationError("scales must be positive")
        self.dim = 2
        self.prior_std = float(prior_std)
        self.mode_std = float(mode_std)
        angles = np.deg2rad([90.0, 210.0, 330.0])
        self.centers = radius * np.column_stack(
            [np.cos(angles), np.sin(angles)])

    def log_components(self, thetas):
        x = np.asarray(thetas, dtype=float)
        lpb = -self.dim * (0.5 * _LOG_2PI + np.log(self.prior_std)) \
            - 0.5 * np.sum(x * x, axis=1) / self.prior_std ** 2
        d2 = np.sum((x[:, None, :] - self.centers[None, :, :]) ** 2,
                    axis=2)
        comp = -self.dim * (0.5 * _LOG_2PI + np.log(self.mode_std)) \
            - 0.5 * d2 / self.mode_std ** 2
        m = comp.max(axis=1)
        lpu = m + np.log(np.mean(np.exp(comp - m[:, None]), axis=1))
        return lpb, lpu

    def sample_prior(self, n, rng):
        return self.prior_std * rng.standard_normal((n, self.dim))

    @property
    def prior_scale(self):
        return np.full(self.dim, self.prior_std)

    def mode_assign(self, thetas):
        x = np.asarray(thetas, dtype=float)
        d2 = np.sum((x[:, None, :] - self.centers[None, :, :]) ** 2, axis=2)
        return np.argmin(d2, axis=1)

    def mode_fractions(self, thetas):
        idx = self.mode_assign(thetas)
        return np.bincount(idx, minlength=3) / idx.size


class FlatLikelihoodTarget(_BatchTarget):
    """Gaussian prior with likelihood identically one.

    The tempered target equals the prior at every beta, so the adaptive
    schedule should jump straight to beta = 1; also handy for
    detailed-balance tests where the chain must reproduce the prior.
    """

    def __init__(self, dim=2, prior_std=1.0):
        if not prior_std > 0:
            raise InputValidationError("prior_std must be positive")
        self.dim = int(dim)
        self.prior_std = float(prior_std)

    def log_components(self, thetas):
        x = np.asarray(thetas, dtype=float)
        lpb = -self.dim * (0.5 * _LOG_2PI + np.log(self.prior_std)) \
            - 0.5 * np.sum(x * x, axis=1) / self.prior_std ** 2
        return lpb, np.zeros(x.shape[0])

    def sample_prior(self, n, rng):
        return self.prior_std * rng.standard_normal((n, self.dim))

    @property
    def prior_scale(self):
        return np.full(self.dim, self.prior_std)
