"""Surrogate rewards: adversarial (AIL), trajectory matching (TM) and optimal transport (OT)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .data import Transitions
from .errors import ContractViolation, NumericError
from .numkit import Mlp

DISC_CLAMP = 1e-6
COSINE_DELTA = 1e-8


class Discriminator:
    """Logit network over concatenated ``(s, s')``; ``D = sigmoid(logit)``."""

    def __init__(self, state_dim, hidden=(128, 128), rng=None):
        self.state_dim = state_dim
        self.net = Mlp([2 * state_dim, *hidden, 1], rng=rng)

    def params(self):
        return self.net.params()

    def inputs(self, states, next_states):
        return np.concatenate([np.atleast_2d(states), np.atleast_2d(next_states)], axis=-1)

    def logits(self, states, next_states):
        return self.net(self.inputs(states, next_states))[:, 0]

    def prob(self, states, next_states):
        return expit(self.logits(states, next_states))


def _softplus(x):
    return np.logaddexp(0.0, x)


def input_gradient(net: Mlp, x):
    """Gradient of a scalar-output network w.r.t. its inputs, row by row."""
    _, acts = net.forward(x)
    g = np.ones((len(acts[0]), 1))
    for i in reversed(range(net.n_layers)):
        if i != net.n_layers - 1:
            g = g * (1.0 - acts[i + 1] ** 2)
        g = g @ net.weights[i].T
    return g


def gradient_penalty(net: Mlp, x, coef):
    """``coef * mean((||d net / d x|| - 1)^2)`` and its parameter gradient.

    The parameter gradient differentiates through the input-gradient
    computation itself (double backpropagation, written out by hand).
    """
    _, acts = net.forward(x)
    L = net.n_layers
    W = net.weights
    n = len(x)
    # backward chain: gz[l] = dout/dz_l, ga[l] = dout/da_l (a_0 = x)
    gz = [None] * (L + 1)
    ga = [None] * (L + 1)
    gz[L] = np.ones((n, 1))
    for l in range(L, 0, -1):
        ga[l - 1] = gz[l] @ W[l - 1].T
        if l - 1 >= 1:
            gz[l - 1] = ga[l - 1] * (1.0 - acts[l - 1] ** 2)
    g = ga[0]
    norm = np.sqrt(np.sum(g**2, axis=1))
    excess = norm - 1.0
    penalty = coef * float(np.mean(excess**2))

    grads_w = [np.zeros_like(w) for w in W]
    grads_b = [np.zeros_like(b) for b in net.biases]
    safe = np.where(norm > 0, norm, 1.0)
    bar_ga = (coef * 2.0 / n) * (excess / safe)[:, None] * g
    bar_act = [None] * (L + 1)
    for l in range(1, L + 1):
        grads_w[l - 1] += bar_ga.T @ gz[l]
        bar_gz = bar_ga @ W[l - 1]
        if l == L:
            break
        bar_act[l] = bar_gz * ga[l] * (-2.0 * acts[l])
        bar_ga = bar_gz * (1.0 - acts[l] ** 2)
    carry = None
    for l in range(L - 1, 0, -1):
        adj = bar_act[l] if carry is None else bar_act[l] + carry
        delta = adj * (1.0 - acts[l] ** 2)
        grads_w[l - 1] += acts[l - 1].T @ delta
        grads_b[l - 1] += delta.sum(axis=0)
        carry = delta @ W[l - 1].T
    grads = []
    for gw, gb in zip(grads_w, grads_b):
        grads += [gw, gb]
    return penalty, grads


def disc_loss(D: Discriminator, expert: Transitions, agent: Transitions, gp_coef=10.0, rng=None, mix=None):
    """Binary cross-entropy (expert = 1, agent = 0) plus a two-sided gradient penalty.

    Returns ``(loss, grads, info)``; ``info`` splits the two terms. ``mix``
    fixes the interpolation coefficients instead of drawing them from ``rng``.
    """
    if len(expert) == 0 or len(agent) == 0:
        raise ContractViolation("both pair sets must be non-empty")
    xe = D.inputs(expert.states, expert.next_states)
    xa = D.inputs(agent.states, agent.next_states)
    x = np.concatenate([xe, xa])
    out, acts = D.net.forward(x)
    logit = out[:, 0]
    if not np.all(np.isfinite(logit)):
        raise NumericError("non-finite discriminator logits")
    ne, na = len(xe), len(xa)
    le, la = logit[:ne], logit[ne:]
    bce = 0.5 * (float(np.mean(_softplus(-le))) + float(np.mean(_softplus(la))))
    dlogit = np.concatenate([0.5 * (expit(le) - 1.0) / ne, 0.5 * expit(la) / na])
    grads, _ = D.net.backward(acts, dlogit[:, None])
    gp = 0.0
    if gp_coef > 0:
        m = min(ne, na)
        if mix is None:
            mix = np.random.default_rng(rng).random(m)
        mix = np.asarray(mix, dtype=np.float64).reshape(m, 1)
        interp = mix * xe[:m] + (1.0 - mix) * xa[:m]
        gp, gp_grads = gradient_penalty(D.net, interp, gp_coef)
        grads = [g + h for g, h in zip(grads, gp_grads)]
    loss = bce + gp
    return loss, grads, {"bce": bce, "gp": gp}


def ail_reward_from_prob(d):
    d = np.clip(d, DISC_CLAMP, 1.0 - DISC_CLAMP)
    return -np.log1p(-d)


def ail_rewards(D: Discriminator, states, next_states):
    return ail_reward_from_prob(D.prob(states, next_states))


def ail_reward(D: Discriminator, s, s_next):
    return float(ail_rewards(D, s, s_next)[0])


def tm_rewards(agent_states, expert_states):
    """Negative Euclidean distance to the time-aligned expert state, truncated to the shorter run."""
    a = np.asarray(getattr(agent_states, "states", agent_states), dtype=np.float64)
    e = np.asarray(getattr(expert_states, "states", expert_states), dtype=np.float64)
    if a.shape[-1] != e.shape[-1]:
        raise ContractViolation("state dimensions differ")
    t = min(a.shape[-2], e.shape[-2])
    return -np.linalg.norm(a[..., :t, :] - e[..., :t, :], axis=-1)


def cosine_cost(agent_states, expert_states):
    x = np.asarray(agent_states, dtype=np.float64)
    y = np.asarray(expert_states, dtype=np.float64)
    dots = x @ np.swapaxes(y, -1, -2)
    norms = np.linalg.norm(x, axis=-1)[..., :, None] * np.linalg.norm(y, axis=-1)[..., None, :]
    return 1.0 - dots / (norms + COSINE_DELTA)


@dataclass
class TransportPlan:
    plan: np.ndarray
    row_target: np.ndarray
    col_target: np.ndarray
    marginal_violation: float
    sinkhorn_residual: float

    def cost(self, C):
        return np.sum(C * self.plan, axis=(-2, -1))


def _lse(x, axis):
    m = np.max(x, axis=axis, keepdims=True)
    return np.squeeze(m, axis) + np.log(np.sum(np.exp(x - m), axis=axis))


def _violation(P, a, b):
    return float(max(np.max(np.abs(P.sum(-1) - a)), np.max(np.abs(P.sum(-2) - b))))


def round_to_marginals(P, a, b):
    """Project a positive plan onto the transport polytope with marginals ``a``, ``b``.

    Rows and columns are first scaled down to their targets; the remaining
    mass deficit is added back as a rank-one correction.
    """
    r = P.sum(-1)
    P = P * np.minimum(a / np.where(r > 0, r, 1.0), 1.0)[..., :, None]
    c = P.sum(-2)
    P = P * np.minimum(b / np.where(c > 0, c, 1.0), 1.0)[..., None, :]
    # deficits are non-negative in exact arithmetic; clip round-off
    err_r = np.maximum(a - P.sum(-1), 0.0)
    err_c = np.maximum(b - P.sum(-2), 0.0)
    total = err_r.sum(-1)
    safe = np.where(total > 0, total, 1.0)
    return P + err_r[..., :, None] * err_c[..., None, :] / safe[..., None, None]


def sinkhorn(C, epsilon=0.01, iters=100, round_plan=True):
    """Log-domain Sinkhorn with uniform marginals; batched over leading axes.

    ``sinkhorn_residual`` is the marginal violation of the raw iterate;
    ``marginal_violation`` refers to the returned plan, which is rounded
    onto the exact marginals unless ``round_plan`` is False.
    """
    if epsilon <= 0 or iters < 1:
        raise ContractViolation("epsilon must be positive and iters >= 1")
    C = np.asarray(C, dtype=np.float64)
    n, m = C.shape[-2:]
    log_a, log_b = -np.log(n), -np.log(m)
    f = np.zeros(C.shape[:-1])
    g = np.zeros(C.shape[:-2] + (m,))
    for _ in range(iters):
        f = epsilon * (log_a - _lse((g[..., None, :] - C) / epsilon, -1))
        g = epsilon * (log_b - _lse((f[..., :, None] - C) / epsilon, -2))
    P = np.exp((f[..., :, None] + g[..., None, :] - C) / epsilon)
    if not np.all(np.isfinite(P)):
        raise NumericError("non-finite transport plan")
    a = np.full(C.shape[:-1], 1.0 / n)
    b = np.full(C.shape[:-2] + (m,), 1.0 / m)
    raw = _violation(P, a, b)
    if round_plan:
        P = round_to_marginals(P, a, b)
    return TransportPlan(P, a, b, _violation(P, a, b), raw)


def ot_rewards(agent_states, expert_states, epsilon=0.01, iters=100, scale=20.0):
    """``r_t = -scale * sum_t' C[t, t'] plan[t, t']`` for every agent state."""
    a = np.asarray(getattr(agent_states, "states", agent_states), dtype=np.float64)
    e = np.asarray(getattr(expert_states, "states", expert_states), dtype=np.float64)
    C = cosine_cost(a, e)
    plan = sinkhorn(C, epsilon, iters)
    return -scale * np.sum(C * plan.plan, axis=-1)
