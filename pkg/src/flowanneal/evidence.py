"""Evidence (marginal likelihood) estimators.

Two routes with different failure modes, meant to be reported together:

* importance sampling against a tractable proposal (the trained flow or
  the archive's mixture), optionally with the heaviest weights pruned to
  maximize the effective sample size, trading a small bias for variance;
* thermodynamic integration of the tempered-expectation of the
  log-likelihood over the inverse-temperature ladder the run visited.
"""

from dataclasses import dataclass

import numpy as np

from .annealer import ess_from_log_weights, normalized_weights
from .errors import InputValidationError, InsufficientLadderError


@dataclass
class WeightedSampleSet:
    """Samples with log target (at beta = 1) and log proposal densities."""

    samples: np.ndarray
    log_target: np.ndarray
    log_proposal: np.ndarray

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        self.log_target = np.asarray(self.log_target, dtype=float)
        self.log_proposal = np.asarray(self.log_proposal, dtype=float)
        n = self.samples.shape[0]
        if self.log_target.shape != (n,) or self.log_proposal.shape != (n,):
            raise InputValidationError(
                "log_target/log_proposal must be 1-d with one entry per "
                "sample")
        if not np.all(np.isfinite(self.log_proposal)):
            raise InputValidationError(
                "log_proposal must be finite (proposal must cover the "
                "samples)")

    @property
    def log_weights(self):
        return self.log_target - self.log_proposal

    def __len__(self):
        return self.samples.shape[0]


@dataclass
class EvidenceEstimate:
    method: str
    log_evidence: float
    diagnostics: dict


@dataclass
class TiLadder:
    """Per-temperature tempered expectations of the log-likelihood."""

    betas: np.ndarray
    integrands: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        self.betas = np.asarray(self.betas, dtype=float)
        self.integrands = np.asarray(self.integrands, dtype=float)
        self.counts = np.asarray(self.counts)
        if self.betas.shape != self.integrands.shape or \
                self.betas.shape != self.counts.shape:
            raise InputValidationError("ladder arrays must share a shape")


def log_mean_exp(values):
    """log(mean(exp(values))) without overflow."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise InputValidationError("empty input")
    m = np.max(v)
    if m == -np.inf:
        return -np.inf
    return float(m + np.log(np.mean(np.exp(v - m))))


def prune_max_ess(log_weights):
    """Indices to keep after dropping the largest weights.

    Scans every cut depth k (removing the k largest weights) and keeps
    the one whose remaining ESS is largest; ties resolve to the fewest
    removals.  Returns ``(kept_indices, pruned_ess)``.
    """
    lw = np.asarray(log_weights, dtype=float)
    if lw.size == 0:
        raise InputValidationError("empty weight vector")
    order = np.argsort(lw)[::-1]
    w = np.exp(lw[order] - lw[order[0]])
    # suffix sums: s1[k], s2[k] cover weights after removing the k largest
    s1 = np.concatenate([np.cumsum(w[::-1])[::-1], [0.0]])
    s2 = np.concatenate([np.cumsum(np.square(w)[::-1])[::-1], [0.0]])
    with np.errstate(invalid="ignore", divide="ignore"):
        ess_at = np.square(s1[:-1]) / s2[:-1]
    ess_at = np.where(np.isfinite(ess_at), ess_at, 0.0)
    k = int(np.argmax(ess_at))
    kept = np.sort(order[k:])
    return kept, float(ess_at[k])


def evidence_is(sample_set, prune=False):
    """Importance-sampling evidence estimate from a weighted sample set.

    With ``prune=True`` the reported estimate drops the heaviest weights
    per ``prune_max_ess``; the unpruned estimate and both ESS values are
    always available in the diagnostics.
    """
    lw = sample_set.log_weights
    unpruned = log_mean_exp(lw)
    diagnostics = {
        "n_samples": len(sample_set),
        "ess": ess_from_log_weights(lw),
        "log_evidence_unpruned": unpruned,
    }
    if not prune:
        return EvidenceEstimate("is", unpruned, diagnostics)
    kept, pruned_ess = prune_max_ess(lw)
    diagnostics["ess_pruned"] = pruned_ess
    diagnostics["n_pruned"] = len(sample_set) - kept.size
    return EvidenceEstimate("is_pruned", log_mean_exp(lw[kept]),
                            diagnostics)


def reweight_expectation(log_pb, log_pu, log_q, beta, values):
    """Self-normalized importance estimate of ``E[values]`` under the
    tempered target ``p_b * p_u**beta``, for samples with proposal
    log-density ``log_q``."""
    if not 0.0 <= beta <= 1.0:
        raise InputValidationError(f"beta must be in [0, 1], got {beta}")
    w = normalized_weights(np.asarray(log_pb, float)
                           + beta * np.asarray(log_pu, float)
                           - np.asarray(log_q, float))
    return float(w @ np.asarray(values, dtype=float))


def ti_ladder_from_checkpoints(checkpoints, target, n_samples, seed=0):
    """Build the thermodynamic-integration ladder from run checkpoints.

    Each checkpoint's model proposes ``n_samples`` fresh draws, and the
    tempered expectation of the log-likelihood at that checkpoint's beta
    is estimated by reweighting those draws.
    """
    if len(checkpoints) == 0:
        raise InputValidationError("no checkpoints")
    if n_samples < 2:
        raise InputValidationError("n_samples must be >= 2")
    rng = np.random.default_rng(seed)
    betas = []
    integrands = []
    counts = []
    for beta, model in checkpoints:
        samples, log_q = model.sample(n_samples, rng)
        log_pb, log_pu = target.log_components(samples)
        betas.append(float(beta))
        integrands.append(
            reweight_expectation(log_pb, log_pu, log_q, beta, log_pu))
        counts.append(n_samples)
    betas = np.asarray(betas)
    if np.any(np.diff(betas) < 0):
        raise InputValidationError("checkpoint betas must be ascending")
    return TiLadder(betas, np.asarray(integrands), np.asarray(counts))


def evidence_ti(ladder, cutoff=-1e5):
    """Trapezoidal thermodynamic integration over the ladder.

    Ladder points whose integrand falls below ``cutoff`` (numerically
    dominated by integration-failure samples) are excluded; at least two
    usable points must remain.
    """
    betas = np.asarray(ladder.betas, dtype=float)
    integrands = np.asarray(ladder.integrands, dtype=float)
    if betas.size < 2 or np.any(np.diff(betas) <= 0):
        raise InputValidationError("ladder betas must be strictly "
                                   "ascending with at least two points")
    if not (betas[0] >= 0.0 and betas[-1] <= 1.0):
        raise InputValidationError("ladder betas must lie in [0, 1]")
    if abs(betas[-1] - 1.0) > 1e-12:
        raise InputValidationError("ladder must reach beta = 1")
    usable = np.isfinite(integrands) & (integrands >= cutoff)
    n_usable = int(usable.sum())
    if n_usable < 2:
        raise InsufficientLadderError(
            f"only {n_usable} ladder points above the cutoff {cutoff:g}")
    est = float(np.trapezoid(integrands[usable], betas[usable]))
    return EvidenceEstimate("ti", est, {
        "n_points": betas.size,
        "n_excluded": betas.size - n_usable,
        "beta_min_used": float(betas[usable][0]),
        "cutoff": float(cutoff),
    })
