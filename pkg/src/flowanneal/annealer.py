"""ESS-adaptive annealed importance training of the flow sampler.

The driver trains a flow on a sequence of tempered targets
``p_b(x) * p_u(x)**beta`` where ``p_b`` is the (normalized) prior density
and ``p_u`` the unnormalized likelihood.  Training minimizes the
importance-weighted forward KL divergence on batches drawn from a sliding
window of recent sampling distributions, and the inverse temperature is
raised whenever an exponential moving average of the batch effective
sample size clears a threshold.  Each increment is solved so the fresh
batch's ESS drops by a fixed factor, which keeps the sampler and the
target in step without a preset schedule.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import (ConfigError, DegenerateWeightsError,
                     InputValidationError, ScheduleStallError,
                     TrainingDivergedError)
from .flow import FlowModel

# beta increments at or below this are treated as no progress
_PROGRESS_EPS = 1e-7


def ess(weights):
    """Effective sample size ``(sum w)**2 / sum(w**2)`` of plain weights."""
    w = np.asarray(weights, dtype=float)
    if w.size == 0:
        raise InputValidationError("empty weight vector")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise InputValidationError("weights must be finite and non-negative")
    s = w.sum()
    if s <= 0.0:
        raise DegenerateWeightsError("all weights are zero")
    return float(s * s / np.sum(np.square(w)))


def ess_from_log_weights(log_weights):
    """ESS computed from log-weights with max-subtraction for safety."""
    lw = np.asarray(log_weights, dtype=float)
    if lw.size == 0:
        raise InputValidationError("empty weight vector")
    m = np.max(lw)
    if m == -np.inf:
        raise DegenerateWeightsError("all weights are zero")
    w = np.exp(lw - m)
    return float(np.square(w.sum()) / np.sum(np.square(w)))


def normalized_weights(log_weights):
    """Exponentiate and normalize log-weights to sum to one."""
    lw = np.asarray(log_weights, dtype=float)
    m = np.max(lw) if lw.size else -np.inf
    if m == -np.inf:
        raise DegenerateWeightsError("all importance weights are zero")
    w = np.exp(lw - m)
    return w / w.sum()


def ema_update(ema, value, decay):
    """One exponential-moving-average step: new value weighted by decay."""
    if not 0.0 < decay <= 1.0:
        raise ConfigError(f"ema decay must be in (0, 1], got {decay}")
    return decay * value + (1.0 - decay) * ema


def mixture_log_density(log_q, counts):
    """Log-density of the sample-count-weighted mixture of past models.

    ``log_q`` holds per-model log-densities in its last axis; ``counts``
    are the number of samples each model contributed to the archive.
    """
    log_q = np.asarray(log_q, dtype=float)
    counts = np.asarray(counts, dtype=float)
    if counts.ndim != 1 or log_q.shape[-1] != counts.size:
        raise ValueError("counts must match the last axis of log_q")
    if np.any(counts <= 0):
        raise ValueError("counts must be positive")
    shifted = log_q + np.log(counts)
    m = np.max(shifted, axis=-1, keepdims=True)
    out = m[..., 0] + np.log(np.sum(np.exp(shifted - m), axis=-1))
    return out - np.log(counts.sum())


def solve_beta(log_pb, log_pu, log_q, beta_s, gamma, tol=1e-8):
    """Next inverse temperature via bisection on the fresh batch.

    Finds ``beta`` in ``(beta_s, 1]`` such that the batch ESS under
    ``p_b * p_u**beta / q`` equals ``gamma`` times its value at
    ``beta_s``; returns 1.0 when even the untempered target keeps the
    ESS above that level.  Bisection runs to ``tol`` on beta.
    """
    log_pb = np.asarray(log_pb, dtype=float)
    log_pu = np.asarray(log_pu, dtype=float)
    log_q = np.asarray(log_q, dtype=float)
    if not 0.0 < gamma <= 1.0:
        raise ConfigError(f"gamma must be in (0, 1], got {gamma}")
    if not 0.0 <= beta_s < 1.0:
        raise ValueError(f"beta_s must be in [0, 1), got {beta_s}")

    def n_eff(beta):
        return ess_from_log_weights(log_pb + beta * log_pu - log_q)

    n_current = n_eff(beta_s)
    if n_current <= 1.0 + 1e-9:
        raise ScheduleStallError(
            f"batch ESS at beta={beta_s:g} is degenerate ({n_current:g})")
    target = gamma * n_current
    if n_eff(1.0) >= target:
        return 1.0
    lo, hi = beta_s, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if n_eff(mid) >= target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


class SampleArchive:
    """Sliding window of training batches with cached densities.

    Every appended batch records the prior/likelihood log-densities of
    its samples and snapshots the model that generated it; the archive
    also caches each retained model's log-density on each retained batch
    so the mixture proposal density (sample-count weighted) never needs
    recomputation.  Evicting a batch drops its model snapshot and the
    cache columns that referenced it.
    """

    def __init__(self, window):
        if window < 1:
            raise ConfigError(f"window must be >= 1, got {window}")
        self.window = int(window)
        self._batches = []
        self._models = {}
        self._next_id = 0

    def __len__(self):
        return sum(b["samples"].shape[0] for b in self._batches)

    @property
    def n_batches(self):
        return len(self._batches)

    @property
    def model_ids(self):
        return [b["model_id"] for b in self._batches]

    def model(self, model_id):
        return self._models[model_id]

    def append(self, samples, log_pb, log_pu, log_q, model,
               batch_index=None):
        """Add a batch drawn from ``model`` (whose own densities are
        ``log_q``) and refresh the cross-density cache."""
        samples = np.asarray(samples, dtype=float)
        n = samples.shape[0]
        for name, arr in (("log_pb", log_pb), ("log_pu", log_pu),
                          ("log_q", log_q)):
            if np.shape(arr) != (n,):
                raise ValueError(f"{name} must have shape ({n},)")
        mid = self._next_id
        self._next_id += 1
        snapshot = model.copy()
        batch = {
            "samples": samples,
            "log_pb": np.asarray(log_pb, dtype=float),
            "log_pu": np.asarray(log_pu, dtype=float),
            "model_id": mid,
            "batch_index": self.n_batches if batch_index is None
                           else int(batch_index),
            "log_q": {mid: np.asarray(log_q, dtype=float)},
        }
        for other in self._batches:
            other["log_q"][mid] = snapshot.log_prob(other["samples"])
            batch["log_q"][other["model_id"]] = \
                self._models[other["model_id"]].log_prob(samples)
        self._models[mid] = snapshot
        self._batches.append(batch)
        if len(self._batches) > self.window:
            evicted = self._batches.pop(0)
            dropped = evicted["model_id"]
            del self._models[dropped]
            for other in self._batches:
                other["log_q"].pop(dropped, None)

    def samples(self):
        return np.concatenate([b["samples"] for b in self._batches], axis=0)

    def log_pb(self):
        return np.concatenate([b["log_pb"] for b in self._batches])

    def log_pu(self):
        return np.concatenate([b["log_pu"] for b in self._batches])

    def batch_indices(self):
        return np.concatenate([
            np.full(b["samples"].shape[0], b["batch_index"], dtype=int)
            for b in self._batches])

    def model_index_per_sample(self):
        return np.concatenate([
            np.full(b["samples"].shape[0], b["model_id"], dtype=int)
            for b in self._batches])

    def counts(self):
        """Samples contributed per retained model, in window order."""
        return np.array([b["samples"].shape[0] for b in self._batches],
                        dtype=float)

    def log_q_matrix(self):
        """Cached per-model log-densities, rows = samples, cols = window
        order of the retained models."""
        ids = self.model_ids
        return np.concatenate([
            np.column_stack([b["log_q"][mid] for mid in ids])
            for b in self._batches], axis=0)

    def mixture_log_density(self):
        return mixture_log_density(self.log_q_matrix(), self.counts())

    def log_weights(self, beta):
        """Unnormalized log importance weights of the whole archive for
        the tempered target at ``beta`` under the mixture proposal."""
        return self.log_pb() + beta * self.log_pu() - \
            self.mixture_log_density()


def archive_weights(archive, beta):
    """Normalized mixture importance weights of the archive at ``beta``."""
    return normalized_weights(archive.log_weights(beta))


@dataclass
class AnnealConfig:
    """Knobs of the annealed training driver (defaults are the standard
    operating point; desk-scale runs shrink ``batch_size``).

    ``train_minibatch`` sets the per-gradient-step minibatch drawn from
    the archive; 0 ties it to ``batch_size``.  Reduced-batch runs can
    keep reference-scale gradient statistics by holding this (and the
    window sample count) at the reference size."""

    batch_size: int = 1024
    layers: int = 8
    update_steps: int = 50
    window_batches: int = 20
    train_minibatch: int = 0
    ess_threshold: float = 0.4
    ess_discount: float = 0.95
    ema_decay: float = 0.01
    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.99
    adam_eps: float = 1e-8
    grad_clip: float = 1e6
    scale_clamp: float = 8.0
    stall_patience: int = 200
    max_batches: int = 0
    seed: int = 0

    def __post_init__(self):
        checks = [
            (self.batch_size >= 2, "batch_size must be >= 2"),
            (self.layers >= 1, "layers must be >= 1"),
            (self.update_steps >= 1, "update_steps must be >= 1"),
            (self.window_batches >= 1, "window_batches must be >= 1"),
            (self.train_minibatch >= 0, "train_minibatch must be >= 0"),
            (0.0 < self.ess_threshold < 1.0,
             "ess_threshold must be in (0, 1)"),
            (0.0 < self.ess_discount <= 1.0,
             "ess_discount must be in (0, 1]"),
            (0.0 < self.ema_decay <= 1.0, "ema_decay must be in (0, 1]"),
            (self.learning_rate > 0.0, "learning_rate must be positive"),
            (0.0 <= self.adam_beta1 < 1.0, "adam_beta1 must be in [0, 1)"),
            (0.0 <= self.adam_beta2 < 1.0, "adam_beta2 must be in [0, 1)"),
            (self.adam_eps > 0.0, "adam_eps must be positive"),
            (self.grad_clip > 0.0, "grad_clip must be positive"),
            (self.scale_clamp > 0.0, "scale_clamp must be positive"),
            (self.stall_patience >= 1, "stall_patience must be >= 1"),
            (self.max_batches >= 0, "max_batches must be >= 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)


@dataclass
class AdamState:
    step: int
    m: list
    v: list

    @classmethod
    def init(cls, params):
        return cls(0, [np.zeros_like(p) for p in params],
                   [np.zeros_like(p) for p in params])


def adam_step(params, grads, state, lr=1e-4, beta1=0.9, beta2=0.99,
              clip=1e6, eps=1e-8):
    """One bias-corrected Adam update, in place, after clipping the
    global gradient norm to ``clip``."""
    sq = 0.0
    for g in grads:
        sq += float(np.sum(np.square(g)))
    if not np.isfinite(sq):
        raise TrainingDivergedError("non-finite gradient")
    gnorm = np.sqrt(sq)
    scale = clip / gnorm if gnorm > clip else 1.0

    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        gs = g * scale
        m *= beta1
        m += (1.0 - beta1) * gs
        v *= beta2
        v += (1.0 - beta2) * np.square(gs)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


@dataclass
class BatchRecord:
    index: int
    beta: float
    n_eff: float
    n_eff_ema: float
    cum_lik_evals: int


@dataclass
class StageRecord:
    index: int
    beta: float
    n_eff: float
    n_eff_ema: float
    batches: int
    cum_lik_evals: int


@dataclass
class AnnealResult:
    """Everything a finished (or aborted) run produced.

    ``checkpoints`` holds ``(beta, model)`` pairs, one per visited
    temperature, each model trained at that temperature; the last one is
    the final model.  ``history`` has one record per training batch,
    ``stages`` one per temperature.
    """

    model: FlowModel
    checkpoints: list
    archive: SampleArchive
    history: list = field(default_factory=list)
    stages: list = field(default_factory=list)
    config: AnnealConfig = None
    n_lik_evals: int = 0
    completed: bool = False


def anneal_run(target, config):
    """Train a flow on ``target`` with the adaptive temperature ladder.

    ``target`` must expose ``dim``, ``log_components(thetas)`` returning
    per-sample ``(log prior density, log unnormalized likelihood)``, and
    ``sample_prior``; optional ``prior_loc``/``prior_scale`` vectors seed
    the flow's fixed output affine so the initial model equals the prior.
    Raises ScheduleStallError (carrying the partial result) if beta stops
    moving for ``config.stall_patience`` batches.
    """
    return _drive(target, config, None)


def preset_schedule_run(target, config, schedule):
    """Training-loop twin of ``anneal_run`` with a fixed per-batch beta
    sequence instead of the adaptive rule.  Test fixture; not a
    production path."""
    schedule = [float(b) for b in schedule]
    if not schedule:
        raise ConfigError("schedule must be non-empty")
    return _drive(target, config, schedule)


def _drive(target, config, schedule):
    rng = np.random.default_rng(config.seed)
    # Start the flow at the prior when the target publishes its first two
    # moments; the beta=0 fit is then exact from batch one instead of
    # having to learn a wide shifted Gaussian from the identity.
    model = FlowModel(target.dim, config.layers, rng,
                      scale_clamp=config.scale_clamp,
                      out_loc=getattr(target, "prior_loc", None),
                      out_scale=getattr(target, "prior_scale", None))
    adam = AdamState.init(model.parameters())
    archive = SampleArchive(config.window_batches)
    n_star = config.ess_threshold * config.batch_size

    adaptive = schedule is None
    beta = 0.0 if adaptive else schedule[0]
    ema = 0.0
    cooldown = 0
    since_progress = 0
    cum_evals = 0
    stage_start_batch = 0
    history = []
    stages = []
    checkpoints = []
    k = 0

    def close_stage(n_eff, final=False):
        stages.append(StageRecord(len(stages), beta, n_eff, ema,
                                  k - stage_start_batch + 1, cum_evals))
        checkpoints.append((beta, model.copy()))

    def partial_result(completed):
        return AnnealResult(model=model, checkpoints=checkpoints,
                            archive=archive, history=history, stages=stages,
                            config=config, n_lik_evals=cum_evals,
                            completed=completed)

    while True:
        if not adaptive and k >= len(schedule):
            close_stage(history[-1].n_eff if history else float("nan"))
            return partial_result(True)
        if config.max_batches and k >= config.max_batches:
            raise ScheduleStallError(
                f"batch budget {config.max_batches} exhausted at "
                f"beta={beta:g}", partial_result(False))

        if not adaptive and schedule[k] != beta:
            close_stage(history[-1].n_eff if history else float("nan"))
            beta = schedule[k]
            stage_start_batch = k

        samples, log_q = model.sample(config.batch_size, rng)
        log_pb, log_pu = target.log_components(samples)
        cum_evals += config.batch_size
        n_eff = ess_from_log_weights(log_pb + beta * log_pu - log_q)
        ema = ema_update(ema, n_eff, config.ema_decay)

        if adaptive:
            progressed = False
            if cooldown > 0:
                cooldown -= 1
            elif ema > n_star:
                close_stage(n_eff)
                if beta >= 1.0:
                    history.append(BatchRecord(k, beta, n_eff, ema,
                                               cum_evals))
                    return partial_result(True)
                new_beta = solve_beta(log_pb, log_pu, log_q, beta,
                                      config.ess_discount)
                progressed = new_beta - beta > _PROGRESS_EPS
                beta = min(1.0, new_beta)
                stage_start_batch = k
                cooldown = 1
            since_progress = 0 if progressed else since_progress + 1
            if since_progress >= config.stall_patience:
                history.append(BatchRecord(k, beta, n_eff, ema, cum_evals))
                raise ScheduleStallError(
                    f"no beta progress in {config.stall_patience} batches "
                    f"(beta={beta:g}, ess ema={ema:.1f}, "
                    f"threshold={n_star:.1f})", partial_result(False))

        archive.append(samples, log_pb, log_pu, log_q, model,
                       batch_index=k)
        archive_samples = archive.samples()
        archive_lw = archive.log_weights(beta)
        minibatch = config.train_minibatch or config.batch_size
        for _ in range(config.update_steps):
            idx = rng.integers(0, archive_lw.size, minibatch)
            w = normalized_weights(archive_lw[idx])
            _, grads = model.loss_and_grad(archive_samples[idx], w)
            adam_step(model.parameters(), grads, adam,
                      lr=config.learning_rate, beta1=config.adam_beta1,
                      beta2=config.adam_beta2, clip=config.grad_clip,
                      eps=config.adam_eps)

        history.append(BatchRecord(k, beta, n_eff, ema, cum_evals))
        k += 1
