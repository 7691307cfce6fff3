"""Small differentiable-computation kit.

Tanh multilayer perceptrons with hand-written reverse mode, the Adam
optimizer, global-norm gradient clipping and diagonal-Gaussian math.
Everything runs in float64.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, NumericError

LOG_STD_MIN = -10.0
LOG_STD_MAX = 2.0
HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


class Mlp:
    """Fully connected network: tanh hidden layers, identity output.

    ``weights[i]`` has shape ``(layer_sizes[i], layer_sizes[i + 1])`` so a
    batch ``x`` of shape ``(N, in)`` maps to ``x @ W + b``.
    """

    def __init__(self, layer_sizes, rng=None, out_scale=1.0):
        sizes = [int(s) for s in layer_sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ContractViolation(f"bad layer sizes {layer_sizes}")
        rng = np.random.default_rng(rng)
        self.layer_sizes = sizes
        self.weights = []
        self.biases = []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            scale = np.sqrt(2.0 / (n_in + n_out))
            if i == len(sizes) - 2:
                scale *= out_scale
            self.weights.append(rng.normal(0.0, scale, size=(n_in, n_out)))
            self.biases.append(np.zeros(n_out))

    @property
    def in_dim(self):
        return self.layer_sizes[0]

    @property
    def out_dim(self):
        return self.layer_sizes[-1]

    @property
    def n_layers(self):
        return len(self.weights)

    def params(self):
        """Parameter arrays in a fixed order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def forward(self, x):
        """Forward pass returning ``(output, cache)`` for :meth:`backward`."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[-1] != self.in_dim:
            raise ContractViolation(f"input dim {x.shape[-1]} != {self.in_dim}")
        acts = [x]
        h = x
        last = self.n_layers - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            h = z if i == last else np.tanh(z)
            acts.append(h)
        return h, acts

    def backward(self, acts, dout):
        """Backpropagate ``dout = dL/d(output)``.

        Returns ``(grads, dx)`` with ``grads`` aligned with :meth:`params`.
        """
        grads = [None] * (2 * self.n_layers)
        delta = np.asarray(dout, dtype=np.float64).reshape(acts[-1].shape)
        for i in reversed(range(self.n_layers)):
            if i != self.n_layers - 1:
                delta = delta * (1.0 - acts[i + 1] ** 2)
            grads[2 * i] = acts[i].T @ delta
            grads[2 * i + 1] = delta.sum(axis=0)
            delta = delta @ self.weights[i].T
        return grads, delta

    def __call__(self, x):
        return self.forward(x)[0]

    def copy(self):
        other = Mlp.__new__(Mlp)
        other.layer_sizes = list(self.layer_sizes)
        other.weights = [w.copy() for w in self.weights]
        other.biases = [b.copy() for b in self.biases]
        return other


def mlp_apply(net: Mlp, x):
    """Evaluate ``net`` on a single input vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != net.in_dim:
        raise ContractViolation(f"expected vector of size {net.in_dim}, got shape {x.shape}")
    return net(x)[0]


def param_grad(loss_and_grad, *args, **kwargs):
    """Run an analytic ``(loss, grads)`` function and validate the loss.

    Every loss in the package returns its exact gradients alongside the
    value; this wrapper is the single place non-finite losses are trapped.
    """
    loss, grads = loss_and_grad(*args, **kwargs)
    if not np.isfinite(loss):
        raise NumericError("non-finite loss", float(loss))
    return loss, grads


class AdamState:
    """Adam moments and step counter.

    The moments live in one flat buffer; ``first_moment`` and
    ``second_moment`` are per-parameter views shaped like the parameters.
    """

    def __init__(self, shapes, learning_rate=1e-4, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.shapes = [tuple(s) for s in shapes]
        sizes = [int(np.prod(s)) for s in self.shapes]
        self.offsets = np.cumsum([0] + sizes)
        self._m = np.zeros(self.offsets[-1])
        self._v = np.zeros(self.offsets[-1])
        self.first_moment = self._views(self._m)
        self.second_moment = self._views(self._v)
        self.step_count = 0
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon

    def _views(self, flat):
        return [flat[a:b].reshape(s) for a, b, s in zip(self.offsets[:-1], self.offsets[1:], self.shapes)]

    @classmethod
    def for_params(cls, params, learning_rate=1e-4, **kw):
        return cls([p.shape for p in params], learning_rate, **kw)


def adam_step(state: AdamState, params, grads):
    """Bias-corrected Adam update applied in place to ``params``."""
    if len(params) != len(grads) or len(params) != len(state.shapes):
        raise ContractViolation("parameter / gradient / moment counts differ")
    for p, g, shape in zip(params, grads, state.shapes):
        if p.shape != shape or np.shape(g) != shape:
            raise ContractViolation(f"shape mismatch {p.shape} vs {np.shape(g)}")
    g = np.concatenate([np.ravel(x) for x in grads])
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    lr_t = state.learning_rate * np.sqrt(1.0 - b2**t) / (1.0 - b1**t)
    eps_t = state.epsilon * np.sqrt(1.0 - b2**t)
    m, v = state._m, state._v
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * g * g
    update = lr_t * m / (np.sqrt(v) + eps_t)
    for p, a, b in zip(params, state.offsets[:-1], state.offsets[1:]):
        p -= update[a:b].reshape(p.shape)
    return params, state


def global_norm(grads):
    return float(np.sqrt(sum(float(np.sum(np.square(g))) for g in grads)))


def clip_global_norm(grads, max_norm):
    if max_norm <= 0:
        raise ContractViolation("max_norm must be positive")
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        return [np.asarray(g) * scale for g in grads]
    return [np.asarray(g) for g in grads]


def clamp_log_std(log_std):
    """Clamp to the admissible range; the mask marks entries with nonzero gradient."""
    log_std = np.asarray(log_std, dtype=np.float64)
    clamped = np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX)
    return clamped, (log_std >= LOG_STD_MIN) & (log_std <= LOG_STD_MAX)


@dataclass
class DiagGaussian:
    mean: np.ndarray
    log_std: np.ndarray = field(default=None)

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        if self.log_std is None:
            self.log_std = np.zeros_like(self.mean)
        self.log_std = np.atleast_1d(np.asarray(self.log_std, dtype=np.float64))
        if self.mean.shape != self.log_std.shape:
            raise ContractViolation("mean and log_std dimensions differ")
        if not np.all(np.isfinite(self.log_std)):
            raise NumericError("non-finite log_std", self.log_std)
        self.log_std = clamp_log_std(self.log_std)[0]

    @property
    def std(self):
        return np.exp(self.log_std)

    def sample(self, rng, size=None):
        shape = self.mean.shape if size is None else (size,) + self.mean.shape
        return self.mean + self.std * rng.standard_normal(shape)


def gaussian_logprob(mean, log_std, a):
    """Batched diagonal-Gaussian log density, summed over the last axis."""
    z = (a - mean) * np.exp(-log_std)
    return np.sum(-0.5 * z**2 - log_std - HALF_LOG_2PI, axis=-1)


def gaussian_logprob_grads(mean, log_std, a):
    """Partials of :func:`gaussian_logprob` w.r.t. mean and log_std (elementwise)."""
    inv_var = np.exp(-2.0 * log_std)
    diff = a - mean
    return diff * inv_var, diff**2 * inv_var - 1.0


def diag_gaussian_logprob(d: DiagGaussian, a):
    a = np.atleast_1d(np.asarray(a, dtype=np.float64))
    if a.shape != d.mean.shape:
        raise ContractViolation(f"action shape {a.shape} != {d.mean.shape}")
    return float(gaussian_logprob(d.mean, d.log_std, a))


def gaussian_kl(mean_p, log_std_p, mean_q, log_std_q):
    """Batched closed-form KL(p || q) between diagonal Gaussians."""
    var_ratio = np.exp(2.0 * (log_std_p - log_std_q))
    mahal = (mean_p - mean_q) ** 2 * np.exp(-2.0 * log_std_q)
    return np.sum(log_std_q - log_std_p + 0.5 * (var_ratio + mahal) - 0.5, axis=-1)


def gaussian_kl_grads_q(mean_p, log_std_p, mean_q, log_std_q):
    """Partials of :func:`gaussian_kl` w.r.t. the second argument's mean and log_std."""
    inv_var_q = np.exp(-2.0 * log_std_q)
    d_mean = (mean_q - mean_p) * inv_var_q
    d_log_std = 1.0 - (np.exp(2.0 * log_std_p) + (mean_p - mean_q) ** 2) * inv_var_q
    return d_mean, d_log_std


def diag_gaussian_kl(p: DiagGaussian, q: DiagGaussian):
    if p.mean.shape != q.mean.shape:
        raise ContractViolation("distributions have different dimensions")
    return float(gaussian_kl(p.mean, p.log_std, q.mean, q.log_std))


def finite_difference_grad(f, params, h=1e-5, max_entries=None, rng=None):
    """Central finite differences of scalar ``f()`` w.r.t. arrays in ``params``.

    ``f`` must read the arrays in place. With ``max_entries`` only a random
    subset of coordinates is probed; unprobed entries are NaN.
    """
    rng = np.random.default_rng(rng)
    out = []
    for p in params:
        g = np.full(p.shape, np.nan)
        flat_idx = np.arange(p.size)
        if max_entries is not None and p.size > max_entries:
            flat_idx = rng.choice(p.size, size=max_entries, replace=False)
        for k in flat_idx:
            idx = np.unravel_index(k, p.shape)
            old = p[idx]
            p[idx] = old + h
            fp = f()
            p[idx] = old - h
            fm = f()
            p[idx] = old
            g[idx] = (fp - fm) / (2.0 * h)
        out.append(g)
    return out


def max_relative_error(analytic, numeric, floor=1e-6):
    """Largest entrywise ``|a - n| / max(|a|, |n|, floor)`` over probed entries."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        a = np.asarray(a, dtype=np.float64)
        mask = ~np.isnan(n)
        if not mask.any():
            continue
        denom = np.maximum(np.maximum(np.abs(a[mask]), np.abs(n[mask])), floor)
        worst = max(worst, float(np.max(np.abs(a[mask] - n[mask]) / denom)))
    return worst
