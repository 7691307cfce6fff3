"""Mixture-density inverse dynamics model ``p(a | s, s')``.

Mixture weights and component means are separate one-hidden-layer tanh
networks of the transition features ``(s, s' - s)``; component scales are
free parameters that do not depend on the input.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ReplayBuffer, Transitions
from .errors import ContractViolation, EmptyBufferError, NumericError
from .numkit import (
    AdamState,
    Mlp,
    adam_step,
    clamp_log_std,
    gaussian_kl,
    gaussian_kl_grads_q,
    gaussian_logprob,
    gaussian_logprob_grads,
)


def logsumexp(x, axis=-1, keepdims=False):
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True)) + m
    return out if keepdims else np.squeeze(out, axis=axis)


def softmax(x, axis=-1):
    e = np.exp(x - np.max(x, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


@dataclass
class IdmConfig:
    n_components: int = 1
    hidden: int = 128
    lr: float = 1e-4
    batch_size: int = 64
    holdout: float = 0.1
    tol: float = 1e-3
    patience: int = 3
    max_epochs: int = 50
    sample_size: int = 1024
    kl_samples: int = 128


class MdnIdm:
    def __init__(self, state_dim, action_dim, n_components=1, hidden=128, rng=None):
        rng = np.random.default_rng(rng)
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.K = int(n_components)
        if self.K < 1:
            raise ContractViolation("need at least one mixture component")
        n_in = 2 * state_dim
        self.weight_net = Mlp([n_in, hidden, self.K], rng=rng, out_scale=0.1)
        self.mean_net = Mlp([n_in, hidden, self.K * action_dim], rng=rng)
        # spread the initial component means so symmetric posteriors can split
        if self.K > 1:
            self.mean_net.biases[-1][:] = np.repeat(np.linspace(-0.5, 0.5, self.K), action_dim)
        self.log_std = np.zeros((self.K, action_dim))
        self.feat_mean = np.zeros(n_in)
        self.feat_std = np.ones(n_in)
        self.normalizer_fitted = False
        self.optimizer = None

    def params(self):
        return self.weight_net.params() + self.mean_net.params() + [self.log_std]

    def fit_normalizer(self, states, next_states):
        f = np.concatenate([states, next_states - states], axis=-1)
        self.feat_mean = f.mean(axis=0)
        self.feat_std = np.maximum(f.std(axis=0), 1e-6)
        self.normalizer_fitted = True

    def features(self, states, next_states):
        s = np.atleast_2d(np.asarray(states, dtype=np.float64))
        s2 = np.atleast_2d(np.asarray(next_states, dtype=np.float64))
        if s.shape[-1] != self.state_dim or s2.shape != s.shape:
            raise ContractViolation(f"state shapes {s.shape}, {s2.shape} vs dim {self.state_dim}")
        return (np.concatenate([s, s2 - s], axis=-1) - self.feat_mean) / self.feat_std

    def _forward(self, states, next_states):
        f = self.features(states, next_states)
        logits, wcache = self.weight_net.forward(f)
        flat_means, mcache = self.mean_net.forward(f)
        means = flat_means.reshape(len(f), self.K, self.action_dim)
        return logits, means, (wcache, mcache)

    def posterior(self, states, next_states):
        """Mixture parameters ``(weights (N,K), means (N,K,A), log_std (K,A))``."""
        logits, means, _ = self._forward(states, next_states)
        return softmax(logits, axis=-1), means, clamp_log_std(self.log_std)[0]

    def sample(self, states, next_states, rng, n=1):
        w, mu, log_std = self.posterior(states, next_states)
        k = np.array([rng.choice(self.K, size=n, p=row) for row in w])
        comp = np.take_along_axis(mu, k[..., None], axis=1)
        return comp + np.exp(log_std[k]) * rng.standard_normal(comp.shape)

    def nll_and_grad(self, batch: Transitions):
        """Mean negative log-likelihood of the batch actions and its gradient."""
        a = np.atleast_2d(np.asarray(batch.actions, dtype=np.float64))
        if a.shape[-1] != self.action_dim:
            raise ContractViolation("action dimension mismatch")
        logits, means, (wcache, mcache) = self._forward(batch.states, batch.next_states)
        log_std, mask = clamp_log_std(self.log_std)
        n = len(a)
        comp_lp = gaussian_logprob(means, log_std[None], a[:, None, :])
        if self.K == 1:
            log_w = np.zeros_like(logits)
            lp = comp_lp[:, 0]
            resp = np.ones_like(logits)
        else:
            log_w = logits - logsumexp(logits, axis=-1, keepdims=True)
            joint = log_w + comp_lp
            lp = logsumexp(joint, axis=-1)
            resp = np.exp(joint - lp[:, None])
        loss = -float(lp.mean())
        d_mean, d_log_std = gaussian_logprob_grads(means, log_std[None], a[:, None, :])
        g_logits = -(resp - np.exp(log_w)) / n
        g_means = -(resp[..., None] * d_mean) / n
        g_log_std = -np.sum(resp[..., None] * d_log_std, axis=0) / n * mask
        gw, _ = self.weight_net.backward(wcache, g_logits)
        gm, _ = self.mean_net.backward(mcache, g_means.reshape(n, -1))
        return loss, gw + gm + [g_log_std]

    def nll(self, batch: Transitions):
        return self.nll_and_grad(batch)[0]

    def copy(self):
        other = MdnIdm.__new__(MdnIdm)
        other.__dict__.update(self.__dict__)
        other.weight_net = self.weight_net.copy()
        other.mean_net = self.mean_net.copy()
        other.log_std = self.log_std.copy()
        other.optimizer = None
        return other


def mdn_logprob(m: MdnIdm, s, s_next, a):
    """``log sum_k alpha_k N(a; mu_k, sigma_k)`` for a single transition."""
    a = np.atleast_1d(np.asarray(a, dtype=np.float64))
    if a.shape != (m.action_dim,):
        raise ContractViolation(f"action shape {a.shape} != ({m.action_dim},)")
    w, mu, log_std = m.posterior(s, s_next)
    comp = gaussian_logprob(mu[0], log_std, a[None, :])
    with np.errstate(divide="ignore"):
        return float(logsumexp(np.log(w[0]) + comp))


def idm_train_step(m: MdnIdm, batch: Transitions, optimizer: AdamState):
    """One Adam step on the batch NLL; returns the loss before the step."""
    if len(batch) == 0:
        raise ContractViolation("empty batch")
    loss, grads = m.nll_and_grad(batch)
    if not np.isfinite(loss):
        raise NumericError("non-finite IDM loss", loss)
    adam_step(optimizer, m.params(), grads)
    return loss


def idm_fit(m: MdnIdm, buf: ReplayBuffer, config: IdmConfig = None, rng=None):
    """Warm-started fit on a replay sample with held-out early stopping.

    Returns ``(model, epochs_run, heldout_nll)``.
    """
    config = config or IdmConfig()
    if len(buf) == 0:
        raise EmptyBufferError("IDM fit needs a non-empty replay buffer")
    rng = np.random.default_rng(rng)
    n = min(len(buf), config.sample_size)
    idx = rng.choice(len(buf), size=n, replace=False)
    data = Transitions(buf._s[idx], buf._s2[idx], buf._a[idx])
    n_hold = max(1, int(round(config.holdout * n))) if n > 1 else 0
    hold = data.take(np.arange(n_hold)) if n_hold else data
    train = data.take(np.arange(n_hold, n)) if n_hold else data
    if not m.normalizer_fitted:
        m.fit_normalizer(train.states, train.next_states)
    if m.optimizer is None:
        m.optimizer = AdamState.for_params(m.params(), config.lr)
    best = m.nll(hold)
    bad = 0
    epochs = 0
    bs = config.batch_size
    while epochs < config.max_epochs:
        epochs += 1
        order = rng.permutation(len(train))
        for start in range(0, len(order), bs):
            idm_train_step(m, train.take(order[start : start + bs]), m.optimizer)
        cur = m.nll(hold)
        if cur < best - config.tol:
            best, bad = cur, 0
        else:
            best = min(best, cur)
            bad += 1
            if bad >= config.patience:
                break
    return m, epochs, float(m.nll(hold))


def mixture_policy_kl(weights, means, idm_log_std, pol_mean, pol_log_std, rng=None, n_samples=128):
    """KL(mixture || policy Gaussian) per row, with its gradient w.r.t. the policy side.

    Closed form for a single component, Monte-Carlo with ``n_samples`` draws
    from the mixture otherwise. Returns ``(kl, d_mean, d_log_std, stderr)``;
    nothing is returned for the mixture side, which is treated as a constant.
    """
    n, K, A = means.shape
    if pol_mean.shape != (n, A):
        raise ContractViolation(f"policy mean shape {pol_mean.shape} != {(n, A)}")
    pol_log_std = np.broadcast_to(pol_log_std, (n, A))
    if K == 1:
        mu_p, ls_p = means[:, 0, :], np.broadcast_to(idm_log_std[0], (n, A))
        kl = gaussian_kl(mu_p, ls_p, pol_mean, pol_log_std)
        d_mean, d_log_std = gaussian_kl_grads_q(mu_p, ls_p, pol_mean, pol_log_std)
        return kl, d_mean, d_log_std, np.zeros(n)
    rng = np.random.default_rng(rng)
    cum = np.cumsum(weights, axis=1)
    u = rng.random((n, n_samples, 1))
    k = np.minimum((u > cum[:, None, :]).sum(-1), K - 1)
    mu_k = np.take_along_axis(means, k[..., None], axis=1)
    std_k = np.exp(idm_log_std)[k]
    a = mu_k + std_k * rng.standard_normal((n, n_samples, A))
    comp = gaussian_logprob(means[:, None, :, :], idm_log_std[None, None], a[:, :, None, :])
    with np.errstate(divide="ignore"):
        log_p = logsumexp(np.log(weights)[:, None, :] + comp, axis=-1)
    log_q = gaussian_logprob(pol_mean[:, None, :], pol_log_std[:, None, :], a)
    diff = log_p - log_q
    kl = diff.mean(axis=1)
    stderr = diff.std(axis=1, ddof=1) / np.sqrt(n_samples)
    g_mean, g_ls = gaussian_logprob_grads(pol_mean[:, None, :], pol_log_std[:, None, :], a)
    return kl, -g_mean.mean(axis=1), -g_ls.mean(axis=1), stderr


def idm_policy_kl(m: MdnIdm, policy, s, s_next, rng=None, n_samples=128):
    """KL(p(. | s, s') || pi(. | s)) for one transition (scalar)."""
    if policy.action_dim != m.action_dim:
        raise ContractViolation("IDM and policy action dimensions differ")
    w, mu, ls = m.posterior(s, s_next)
    pm, pls = policy.dist_params(np.atleast_2d(s))
    kl, _, _, _ = mixture_policy_kl(w, mu, ls, pm, pls, rng, n_samples)
    return float(kl[0])
