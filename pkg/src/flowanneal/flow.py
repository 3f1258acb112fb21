"""Coupling-layer normalizing flow with exact hand-derived gradients.

The density model is a stack of affine coupling layers: each layer leaves
one half of the coordinates untouched and applies an elementwise affine
map to the other half, with scale and shift produced by small MLP
conditioners reading the untouched half.  The Jacobian is triangular, so
both directions and the log-determinant are cheap, and which half passes
through alternates from layer to layer.

Everything runs in plain numpy.  Training needs the gradient of the
weighted negative log-likelihood with respect to every parameter; that
reverse-mode accumulation is written out explicitly here (and verified
against finite differences in the tests) rather than delegated to an
autodiff framework.
"""

import copy

import numpy as np
from scipy.special import erf

from .errors import (DegenerateWeightsError, InputValidationError,
                     NonFiniteValueError)

_LOG_2PI = float(np.log(2.0 * np.pi))
_SQRT2 = float(np.sqrt(2.0))
_INV_SQRT_2PI = float(1.0 / np.sqrt(2.0 * np.pi))

_CHECKPOINT_FORMAT = 2


def gelu(x):
    """Gaussian-error linear unit, exact (erf) form."""
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_grad(x):
    return 0.5 * (1.0 + erf(x / _SQRT2)) \
        + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


class MlpConditioner:
    """Three-hidden-layer MLP, hidden width three times the input width.

    GELU activations on the hidden layers, linear output.  Hidden weights
    start Glorot-uniform; the output layer starts at zero so a fresh
    coupling layer is the identity map.
    """

    def __init__(self, n_in, n_out, rng):
        hidden = 3 * n_in
        sizes = [(n_in, hidden), (hidden, hidden), (hidden, hidden),
                 (hidden, n_out)]
        self.weights = []
        self.biases = []
        for i, (fan_in, fan_out) in enumerate(sizes):
            if i == len(sizes) - 1:
                w = np.zeros((fan_in, fan_out))
            else:
                limit = np.sqrt(6.0 / (fan_in + fan_out))
                w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            self.weights.append(w)
            self.biases.append(np.zeros(fan_out))

    def __call__(self, u):
        h = u
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = gelu(h @ w + b)
        return h @ self.weights[-1] + self.biases[-1]

    def forward(self, u):
        """Like ``__call__`` but also returns the cache backward() needs."""
        pre = []
        act = [u]
        h = u
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            z = h @ w + b
            h = gelu(z)
            pre.append(z)
            act.append(h)
        out = h @ self.weights[-1] + self.biases[-1]
        return out, (pre, act)

    def backward(self, cache, g_out):
        """Backpropagate ``g_out`` (n, n_out); returns (g_in, param grads).

        Parameter gradients follow the ``parameters()`` ordering.
        """
        pre, act = cache
        grads = [None] * (2 * len(self.weights))
        g = g_out
        for i in range(len(self.weights) - 1, -1, -1):
            grads[2 * i] = act[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.weights[i].T
            if i > 0:
                g = g * gelu_grad(pre[i - 1])
        return g, grads

    def parameters(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out


class CouplingLayer:
    """One affine coupling transform.

    ``parity`` selects which half passes through unchanged (0: first
    half, 1: second half).  The raw scale output is squashed through
    ``clamp * tanh(raw / clamp)`` so a single layer can never expand or
    contract by more than ``exp(clamp)``.
    """

    def __init__(self, dim, parity, rng, scale_clamp=8.0, index=0):
        v = dim // 2
        self.dim = dim
        self.parity = parity
        self.clamp = float(scale_clamp)
        self.index = index
        if parity == 0:
            self._pass = slice(0, v)
            self._trans = slice(v, dim)
        else:
            self._pass = slice(v, dim)
            self._trans = slice(0, v)
        self.scale_net = MlpConditioner(v, dim - v, rng)
        self.shift_net = MlpConditioner(v, dim - v, rng)

    def _scale_shift(self, u):
        a_raw = self.scale_net(u)
        b = self.shift_net(u)
        if not (np.all(np.isfinite(a_raw)) and np.all(np.isfinite(b))):
            raise NonFiniteValueError(
                f"conditioner output is not finite in coupling layer "
                f"{self.index}")
        return self.clamp * np.tanh(a_raw / self.clamp), b

    def forward(self, x):
        u = x[:, self._pass]
        a, b = self._scale_shift(u)
        y = np.empty_like(x)
        y[:, self._pass] = u
        y[:, self._trans] = x[:, self._trans] * np.exp(a) + b
        return y, a.sum(axis=1)

    def inverse(self, y):
        u = y[:, self._pass]
        a, b = self._scale_shift(u)
        x = np.empty_like(y)
        x[:, self._pass] = u
        x[:, self._trans] = (y[:, self._trans] - b) * np.exp(-a)
        return x, -a.sum(axis=1)

    def inverse_with_cache(self, y):
        u = y[:, self._pass]
        a_raw, cache_a = self.scale_net.forward(u)
        b, cache_b = self.shift_net.forward(u)
        if not (np.all(np.isfinite(a_raw)) and np.all(np.isfinite(b))):
            raise NonFiniteValueError(
                f"conditioner output is not finite in coupling layer "
                f"{self.index}")
        a = self.clamp * np.tanh(a_raw / self.clamp)
        e_inv = np.exp(-a)
        x_t = (y[:, self._trans] - b) * e_inv
        x = np.empty_like(y)
        x[:, self._pass] = u
        x[:, self._trans] = x_t
        cache = (cache_a, cache_b, a, e_inv, x_t)
        return x, -a.sum(axis=1), cache

    def backward_through_inverse(self, cache, g_x, g_logdet):
        """Adjoint of ``inverse_with_cache``.

        ``g_x`` is the gradient w.r.t. the inverse's output, ``g_logdet``
        (shape (n,)) the gradient w.r.t. the returned log-determinant.
        Returns the gradient w.r.t. the inverse's input plus parameter
        gradients ordered as ``parameters()``.
        """
        cache_a, cache_b, a, e_inv, x_t = cache
        g_xt = g_x[:, self._trans]
        # x_t = (y_t - b) * exp(-a), logdet = -sum(a)
        g_a = -g_xt * x_t - g_logdet[:, None]
        g_a_raw = g_a * (1.0 - np.square(a / self.clamp))
        g_b = -g_xt * e_inv
        g_u_scale, grads_scale = self.scale_net.backward(cache_a, g_a_raw)
        g_u_shift, grads_shift = self.shift_net.backward(cache_b, g_b)
        g_y = np.empty_like(g_x)
        g_y[:, self._pass] = g_x[:, self._pass] + g_u_scale + g_u_shift
        g_y[:, self._trans] = g_xt * e_inv
        return g_y, grads_scale + grads_shift

    def parameters(self):
        return self.scale_net.parameters() + self.shift_net.parameters()


def _as_batch(x, dim, what):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise InputValidationError(
            f"{what} must have shape (n, {dim}), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InputValidationError(f"{what} contains non-finite values")
    return x, single


class FlowModel:
    """Stack of coupling layers mapping latent normals to samples.

    Layer parities alternate starting with the first half passing
    through, so every coordinate is transformed by half of the layers.
    An optional fixed output affine rescales the stack's output as
    ``x = out_loc + out_scale * y``; it carries no trainable parameters,
    so a freshly initialised model (identity coupling layers, because the
    conditioner output layers start at zero) has density exactly
    ``N(out_loc, diag(out_scale**2))``.  The defaults keep the plain
    standard-normal identity.
    """

    def __init__(self, dim, n_layers, rng, scale_clamp=8.0,
                 out_loc=None, out_scale=None):
        if dim < 2 or dim % 2 != 0:
            raise InputValidationError(
                f"dim must be even and >= 2, got {dim}")
        if n_layers < 1:
            raise InputValidationError(f"n_layers must be >= 1")
        if isinstance(rng, (int, np.integer)):
            rng = np.random.default_rng(rng)
        self.dim = dim
        self.scale_clamp = float(scale_clamp)
        self.out_loc = self._affine_vector(out_loc, 0.0, "out_loc")
        self.out_scale = self._affine_vector(out_scale, 1.0, "out_scale")
        if np.any(self.out_scale <= 0.0):
            raise InputValidationError("out_scale must be strictly positive")
        self._out_log_scale = float(np.sum(np.log(self.out_scale)))
        self.layers = [
            CouplingLayer(dim, parity=i % 2, rng=rng,
                          scale_clamp=scale_clamp, index=i)
            for i in range(n_layers)
        ]

    def _affine_vector(self, value, default, what):
        if value is None:
            return np.full(self.dim, default)
        value = np.asarray(value, dtype=float)
        if value.shape != (self.dim,):
            raise InputValidationError(
                f"{what} must have shape ({self.dim},), got {value.shape}")
        if not np.all(np.isfinite(value)):
            raise InputValidationError(f"{what} contains non-finite values")
        return value.copy()

    @property
    def n_layers(self):
        return len(self.layers)

    def _log_latent(self, z):
        return -0.5 * self.dim * _LOG_2PI - 0.5 * np.sum(np.square(z), axis=1)

    def forward(self, z):
        """Push latent points through the flow; returns (x, log q(x))."""
        z, single = _as_batch(z, self.dim, "z")
        x = z
        logdet = np.zeros(z.shape[0])
        for layer in self.layers:
            x, ld = layer.forward(x)
            logdet += ld
        x = self.out_loc + self.out_scale * x
        log_q = self._log_latent(z) - logdet - self._out_log_scale
        if single:
            return x[0], float(log_q[0])
        return x, log_q

    def inverse(self, x):
        """Pull samples back to the latent space; returns (z, logdet).

        ``logdet`` is the log-Jacobian of the inverse map, so
        ``log q(x) = log N(z) + logdet``.
        """
        x, single = _as_batch(x, self.dim, "x")
        z = (x - self.out_loc) / self.out_scale
        logdet = np.full(x.shape[0], -self._out_log_scale)
        for layer in reversed(self.layers):
            z, ld = layer.inverse(z)
            logdet += ld
        if single:
            return z[0], float(logdet[0])
        return z, logdet

    def log_prob(self, x):
        x_b, single = _as_batch(x, self.dim, "x")
        z, logdet = self.inverse(x_b)
        log_q = self._log_latent(z) + logdet
        if single:
            return float(log_q[0])
        return log_q

    def sample(self, n, rng):
        """Draw ``n`` samples; returns (x, log q(x)) with exact densities."""
        z = rng.standard_normal((n, self.dim))
        return self.forward(z)

    def loss_and_grad(self, x, weights):
        """Weighted negative log-likelihood and its parameter gradient.

        ``loss = -sum_i weights[i] * log q(x[i])``.  Weights must be
        non-negative and not all zero; the caller is responsible for any
        normalization.  Returns ``(loss, grads)`` with ``grads`` aligned
        with ``parameters()``.
        """
        x, _ = _as_batch(x, self.dim, "x")
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (x.shape[0],):
            raise InputValidationError(
                f"weights must have shape ({x.shape[0]},)")
        if not np.all(np.isfinite(weights)) or np.any(weights < 0):
            raise InputValidationError(
                "weights must be finite and non-negative")
        if weights.sum() <= 0.0:
            raise DegenerateWeightsError("all importance weights are zero")

        caches = [None] * len(self.layers)
        z = (x - self.out_loc) / self.out_scale
        logdet = np.full(x.shape[0], -self._out_log_scale)
        for i in range(len(self.layers) - 1, -1, -1):
            z, ld, caches[i] = self.layers[i].inverse_with_cache(z)
            logdet += ld
        log_q = self._log_latent(z) + logdet
        loss = -float(weights @ log_q)

        # d loss / d log_q_i = -w_i; latent term contributes w_i * z_i,
        # each layer's logdet contributes through g_logdet = -w.  The
        # output affine is fixed, so it only shifts the loss by a constant.
        g = weights[:, None] * z
        g_logdet = -weights
        grads = []
        for layer, cache in zip(self.layers, caches):
            g, layer_grads = layer.backward_through_inverse(
                cache, g, g_logdet)
            grads.extend(layer_grads)
        return loss, grads

    def parameters(self):
        """Live parameter arrays (mutating them mutates the model)."""
        out = []
        for layer in self.layers:
            out.extend(layer.parameters())
        return out

    @property
    def n_params(self):
        return sum(p.size for p in self.parameters())

    def copy(self):
        return copy.deepcopy(self)

    def save(self, path):
        """Serialize to ``.npz``; ``load`` restores the exact parameters."""
        payload = {
            "format": np.array(_CHECKPOINT_FORMAT),
            "dim": np.array(self.dim),
            "n_layers": np.array(self.n_layers),
            "scale_clamp": np.array(self.scale_clamp),
            "out_loc": self.out_loc,
            "out_scale": self.out_scale,
        }
        for i, layer in enumerate(self.layers):
            for net_name in ("scale", "shift"):
                net = getattr(layer, f"{net_name}_net")
                for j, (w, b) in enumerate(zip(net.weights, net.biases)):
                    payload[f"l{i:02d}_{net_name}_w{j}"] = w
                    payload[f"l{i:02d}_{net_name}_b{j}"] = b
        np.savez(path, **payload)

    @classmethod
    def load(cls, path):
        with np.load(path) as data:
            fmt = int(data["format"])
            if fmt != _CHECKPOINT_FORMAT:
                raise InputValidationError(
                    f"unsupported checkpoint format {fmt}")
            model = cls(int(data["dim"]), int(data["n_layers"]),
                        rng=np.random.default_rng(0),
                        scale_clamp=float(data["scale_clamp"]),
                        out_loc=data["out_loc"],
                        out_scale=data["out_scale"])
            for i, layer in enumerate(model.layers):
                for net_name in ("scale", "shift"):
                    net = getattr(layer, f"{net_name}_net")
                    for j in range(len(net.weights)):
                        net.weights[j] = data[f"l{i:02d}_{net_name}_w{j}"]
                        net.biases[j] = data[f"l{i:02d}_{net_name}_b{j}"]
        return model
