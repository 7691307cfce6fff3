"""Policy learning: Gaussian policy, PPO with GAE, the IDM regulariser and the training loop."""
from __future__ import annotations

import csv
import dataclasses
import time
from dataclasses import dataclass, field

import numpy as np

from . import envs
from .data import (
    DemoTrajectory,
    ReplayBuffer,
    Transitions,
    dataset_transitions,
    replay_push,
    rollout_batch,
    strip_actions,
)
from .errors import ConfigError, ContractViolation, DegenerateInput, NumericError
from .idm import IdmConfig, MdnIdm, idm_fit, mixture_policy_kl
from .numkit import (
    AdamState,
    Mlp,
    adam_step,
    clamp_log_std,
    clip_global_norm,
    gaussian_logprob,
    gaussian_logprob_grads,
)
from .rewards import Discriminator, ail_rewards, disc_loss, ot_rewards, tm_rewards

BACKENDS = ("ail", "tm", "ot", "none")
REGULARIZERS = ("idm", "bc", "none")


class GaussianPolicy:
    """State-dependent mean, state-independent log standard deviation."""

    def __init__(self, state_dim, action_dim, hidden=(128, 128), log_std_init=0.0, rng=None):
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.mean_net = Mlp([state_dim, *hidden, action_dim], rng=rng, out_scale=0.01)
        self.log_std = np.full(action_dim, float(log_std_init))

    def params(self):
        return self.mean_net.params() + [self.log_std]

    def dist_params(self, obs):
        return self.mean_net(np.atleast_2d(obs)), clamp_log_std(self.log_std)[0]

    def act(self, obs, rng=None, deterministic=False):
        single = np.ndim(obs) == 1
        mean, log_std = self.dist_params(obs)
        if not deterministic:
            mean = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
        return mean[0] if single else mean

    def logprob(self, obs, actions):
        mean, log_std = self.dist_params(obs)
        return gaussian_logprob(mean, log_std, np.atleast_2d(actions))

    def backward(self, acts, d_mean, d_log_std):
        """Gradients for :meth:`params` given dL/dmean (N, A) and dL/dlog_std (A,)."""
        grads, _ = self.mean_net.backward(acts, d_mean)
        return grads + [np.asarray(d_log_std) * clamp_log_std(self.log_std)[1]]


def gae(rewards, values, last_value, gamma=0.99, lam=0.95, dones=None):
    """Generalised advantage estimates and value targets.

    ``dones[t]`` marks that the episode ended after step ``t``; no value is
    bootstrapped across it. ``last_value`` bootstraps the final step.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if rewards.shape != values.shape:
        raise ContractViolation("rewards and values must have equal length")
    dones = np.zeros_like(rewards) if dones is None else np.asarray(dones, dtype=np.float64)
    T = len(rewards)
    adv = np.zeros(T)
    next_value, next_adv = float(last_value), 0.0
    for t in reversed(range(T)):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * live - values[t]
        next_adv = delta + gamma * lam * live * next_adv
        adv[t] = next_adv
        next_value = values[t]
    return adv, adv + values


def normalize_advantages(adv):
    adv = np.asarray(adv, dtype=np.float64)
    centred = adv - adv.mean()
    std = centred.std()
    return centred / std if std > 1e-12 else centred


def ppo_policy_loss(policy, old_logprobs, states, actions, advantages, clip=0.2, entropy_coef=0.0):
    """Clipped surrogate ``-mean(min(rho A, clip(rho) A))``. Returns ``(loss, grads, info)``."""
    mean, acts = policy.mean_net.forward(states)
    log_std = clamp_log_std(policy.log_std)[0]
    lp = gaussian_logprob(mean, log_std, actions)
    with np.errstate(over="ignore"):
        ratio = np.exp(lp - old_logprobs)
    if not np.all(np.isfinite(ratio)):
        raise NumericError("non-finite probability ratios")
    adv = np.asarray(advantages, dtype=np.float64)
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip) * adv
    n = len(adv)
    loss = -float(np.mean(np.minimum(unclipped, clipped)))
    active = unclipped <= clipped
    d_lp = np.where(active, -unclipped / n, 0.0)
    g_mean, g_ls = gaussian_logprob_grads(mean, log_std, actions)
    d_mean = d_lp[:, None] * g_mean
    d_log_std = np.sum(d_lp[:, None] * g_ls, axis=0)
    if entropy_coef:
        entropy = float(np.sum(log_std + 0.5 * np.log(2 * np.pi * np.e)))
        loss -= entropy_coef * entropy
        d_log_std = d_log_std - entropy_coef
    grads = policy.backward(acts, d_mean, d_log_std)
    info = {"clip_frac": float(np.mean(np.abs(ratio - 1.0) > clip))}
    return loss, grads, info


def value_loss(value_net: Mlp, states, returns):
    pred, acts = value_net.forward(states)
    err = pred[:, 0] - np.asarray(returns, dtype=np.float64)
    loss = float(np.mean(err**2))
    grads, _ = value_net.backward(acts, (2.0 / len(err)) * err[:, None])
    return loss, grads


def bc_loss(policy, states, actions):
    """Mean negative log-likelihood of demonstrated actions."""
    if actions is None:
        raise ContractViolation("behavioural cloning needs demonstrated actions")
    mean, acts = policy.mean_net.forward(states)
    log_std = clamp_log_std(policy.log_std)[0]
    actions = np.atleast_2d(actions)
    loss = -float(np.mean(gaussian_logprob(mean, log_std, actions)))
    g_mean, g_ls = gaussian_logprob_grads(mean, log_std, actions)
    n = len(actions)
    return loss, policy.backward(acts, -g_mean / n, -g_ls.sum(axis=0) / n)


def reg_loss_from_posterior(policy, states, weights, means, idm_log_std, rng=None, n_samples=128):
    """Mean KL(IDM posterior || policy) over a batch with the posterior held fixed."""
    mean, acts = policy.mean_net.forward(states)
    log_std = clamp_log_std(policy.log_std)[0]
    kl, d_mean, d_ls, _ = mixture_policy_kl(weights, means, idm_log_std, mean, log_std, rng, n_samples)
    n = len(kl)
    return float(kl.mean()), policy.backward(acts, d_mean / n, d_ls.sum(axis=0) / n)


def reg_loss(policy, idm: MdnIdm, batch: Transitions, rng=None, n_samples=128):
    """Regulariser on expert transitions. Gradients are returned for the policy only."""
    w, mu, ls = idm.posterior(batch.states, batch.next_states)
    return reg_loss_from_posterior(policy, batch.states, w, mu, ls, rng, n_samples)


def r_squared(predicted, reference):
    """Coefficient of determination averaged over action dimensions."""
    p = np.asarray(predicted, dtype=np.float64)
    r = np.asarray(reference, dtype=np.float64)
    if p.ndim == 1:
        p, r = p[:, None], r[:, None]
    if p.shape != r.shape or len(r) < 2:
        raise ContractViolation("need equal-length inputs with at least two rows")
    ss_tot = np.sum((r - r.mean(axis=0)) ** 2, axis=0)
    if np.any(ss_tot <= 0):
        raise DegenerateInput("reference actions have zero variance")
    ss_res = np.sum((r - p) ** 2, axis=0)
    return float(np.mean(1.0 - ss_res / ss_tot))


def compute_anchors(spec, n_episodes=50, seed=10_000):
    """Expert and zero-action mean returns on the evaluation seeds."""
    from .data import ExpertPolicy, ZeroPolicy

    seeds = seed + np.arange(n_episodes)
    expert = rollout_batch(ExpertPolicy(spec), spec, seeds)[2].mean()
    zero = rollout_batch(ZeroPolicy(spec), spec, seeds)[2].mean()
    return {"expert_return": float(expert), "random_return": float(zero)}


def normalized_return(ret, anchors):
    return (ret - anchors["random_return"]) / (anchors["expert_return"] - anchors["random_return"])


def evaluate(policy, spec, n_episodes=50, seed=10_000):
    """Deterministic (mean-action) rollouts on seeds ``seed, seed+1, ...``.

    Returns ``(mean_return, std_return, trajectories)``.
    """
    if n_episodes < 1:
        raise ContractViolation("n_episodes must be >= 1")
    states, actions, returns = rollout_batch(policy, spec, seed + np.arange(n_episodes), deterministic=True)
    trajs = [DemoTrajectory(s, a, r) for s, a, r in zip(states, actions, returns)]
    return float(returns.mean()), float(returns.std()), trajs


@dataclass
class TrainConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    ppo_clip: float = 0.2
    ppo_epochs: int = 6
    batch_size: int = 64
    rollout_length: int = 2048
    lr: float = 1e-4
    clip_norm: float = 0.5
    lambda_reg: float = 1.0
    entropy_coef: float = 0.0
    value_coef: float = 0.5
    workers: int = 1
    seed: int = 0
    reward_backend: str = "ail"
    regularizer: str = "idm"
    max_env_steps: int = 300_000
    hidden: int = 128
    log_std_init: float = 0.0
    disc_lr: float = 1e-4
    disc_updates: int = 1
    gp_coef: float = 10.0
    subsample_rate: int = 20
    sinkhorn_eps: float = 0.01
    sinkhorn_iters: int = 100
    ot_scale: float = 20.0
    eval_episodes: int = 50
    eval_every: int = 1
    eval_seed: int = 10_000
    idm: IdmConfig = field(default_factory=IdmConfig)

    def validate(self, horizon=None):
        """Check ranges; returns a copy with ``rollout_length`` snapped to whole episodes for TM/OT."""
        if self.reward_backend not in BACKENDS:
            raise ConfigError(f"reward_backend must be one of {BACKENDS}")
        if self.regularizer not in REGULARIZERS:
            raise ConfigError(f"regularizer must be one of {REGULARIZERS}")
        checks = [
            (0.0 < self.gamma <= 1.0, "gamma in (0, 1]"),
            (0.0 <= self.gae_lambda <= 1.0, "gae_lambda in [0, 1]"),
            (0.0 < self.ppo_clip < 1.0, "ppo_clip in (0, 1)"),
            (self.ppo_epochs >= 1, "ppo_epochs >= 1"),
            (self.batch_size >= 1, "batch_size >= 1"),
            (self.rollout_length >= 1, "rollout_length >= 1"),
            (self.lr > 0 and self.disc_lr > 0, "learning rates > 0"),
            (self.clip_norm > 0, "clip_norm > 0"),
            (self.lambda_reg >= 0, "lambda_reg >= 0"),
            (self.entropy_coef >= 0, "entropy_coef >= 0"),
            (self.workers >= 1, "workers >= 1"),
            (self.max_env_steps >= 1, "max_env_steps >= 1"),
            (self.subsample_rate >= 1, "subsample_rate >= 1"),
            (self.sinkhorn_eps > 0 and self.sinkhorn_iters >= 1, "sinkhorn settings"),
        ]
        for ok, what in checks:
            if not ok:
                raise ConfigError(f"invalid config: {what}")
        cfg = dataclasses.replace(self)
        if horizon and cfg.reward_backend in ("tm", "ot") and cfg.rollout_length % horizon:
            cfg.rollout_length = max(horizon, (cfg.rollout_length // horizon) * horizon)
        return cfg


METRIC_COLUMNS = (
    "iteration",
    "env_steps",
    "mean_return",
    "std_return",
    "normalized_return",
    "idm_nll",
    "reg_kl",
    "disc_loss",
    "mean_tm_reward",
    "mean_ot_reward",
)


@dataclass
class Metrics:
    iteration: int
    env_steps: int
    mean_return: float = float("nan")
    std_return: float = float("nan")
    normalized_return: float = float("nan")
    idm_nll: float = float("nan")
    reg_kl: float = float("nan")
    disc_loss: float = float("nan")
    mean_tm_reward: float = float("nan")
    mean_ot_reward: float = float("nan")
    wall_time_s: float = 0.0

    def row(self):
        return [getattr(self, c) for c in METRIC_COLUMNS]


def write_metrics_csv(path, rows):
    """Metrics CSV (deterministic columns only; wall-clock time goes elsewhere)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for m in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in m.row()])


def read_metrics_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {c: np.array([float(r[c]) for r in rows]) for c in METRIC_COLUMNS if rows and c in rows[0]}


class _Worker:
    def __init__(self, spec, seed_seq):
        self.spec = spec
        self.rng = np.random.default_rng(seed_seq)
        self.episode = 0
        self.obs = self._reset()
        self.t = 0

    def _reset(self):
        return envs.env_reset(self.spec, int(self.rng.integers(2**31))).obs


@dataclass
class Rollout:
    states: np.ndarray
    actions: np.ndarray
    applied: np.ndarray
    next_states: np.ndarray
    logprobs: np.ndarray
    dones: np.ndarray
    episode_ids: np.ndarray
    last_obs: np.ndarray
    rewards: np.ndarray = None


class Trainer:
    """Runs the interleaved loop: rollouts, replay, IDM fit, PPO, discriminator.

    ``regularizer`` selects the auxiliary policy loss: ``idm`` (KL to the
    inverse-model posterior on expert transitions), ``bc`` (likelihood of
    true expert actions) or ``none``. ``lambda_reg = 0`` removes it entirely.
    """

    def __init__(self, spec, config: TrainConfig, expert_demos, anchors=None):
        self.spec = spec
        self.cfg = config.validate(spec.horizon)
        cfg = self.cfg
        ss = np.random.SeedSequence(cfg.seed)
        init_ss, idm_ss, disc_ss, ppo_ss, expert_ss, *worker_ss = ss.spawn(5 + cfg.workers)
        init_rng = np.random.default_rng(init_ss)
        sd, ad = spec.state_dim, spec.action_dim
        hidden = (cfg.hidden, cfg.hidden)
        self.policy = GaussianPolicy(sd, ad, hidden, cfg.log_std_init, init_rng)
        self.value_net = Mlp([sd, *hidden, 1], rng=init_rng)
        self.opt = AdamState.for_params(self._pv_params(), cfg.lr)
        self.idm_rng = np.random.default_rng(idm_ss)
        self.disc_rng = np.random.default_rng(disc_ss)
        self.ppo_rng = np.random.default_rng(ppo_ss)
        self.workers = [_Worker(spec, s) for s in worker_ss]
        self.anchors = anchors or compute_anchors(spec, cfg.eval_episodes, cfg.eval_seed)

        self.expert_obs = [strip_actions(d) if isinstance(d, DemoTrajectory) else d for d in expert_demos]
        if cfg.regularizer == "bc" and self.expert_obs and not all(isinstance(d, DemoTrajectory) for d in expert_demos):
            raise ConfigError("the bc regulariser needs expert actions")
        subsample = cfg.subsample_rate if cfg.reward_backend == "ail" else None
        expert_seed = int(np.random.default_rng(expert_ss).integers(2**31))
        demo_pairs = dataset_transitions(expert_demos, subsample, expert_seed)
        self.expert_pairs = Transitions(demo_pairs.states, demo_pairs.next_states)
        self.expert_sa = demo_pairs

        self.use_reg = cfg.lambda_reg > 0 and cfg.regularizer != "none"
        self.idm = None
        self.replay = ReplayBuffer(sd, ad)
        if self.use_reg and cfg.regularizer == "idm":
            self.idm = MdnIdm(sd, ad, cfg.idm.n_components, cfg.idm.hidden, init_rng)
        self.disc = None
        if cfg.reward_backend == "ail":
            self.disc = Discriminator(sd, hidden, init_rng)
            self.disc_opt = AdamState.for_params(self.disc.params(), cfg.disc_lr)
        self.iteration = 0
        self.env_steps = 0
        self.history = []
        self._t0 = time.perf_counter()

    def _pv_params(self):
        return self.policy.params() + self.value_net.params()

    # -- rollouts ---------------------------------------------------------
    def _collect(self, w: _Worker) -> Rollout:
        n, spec = self.cfg.rollout_length, self.spec
        S = np.empty((n, spec.state_dim))
        S2 = np.empty_like(S)
        A = np.empty((n, spec.action_dim))
        Ap = np.empty_like(A)
        LP = np.empty(n)
        D = np.zeros(n)
        E = np.empty(n, dtype=np.int64)
        mean_net = self.policy.mean_net
        log_std = clamp_log_std(self.policy.log_std)[0]
        std = np.exp(log_std)
        for i in range(n):
            obs = w.obs
            mean = mean_net(obs)[0]
            a = mean + std * w.rng.standard_normal(spec.action_dim)
            if not np.all(np.isfinite(a)):
                raise NumericError("policy produced non-finite action", a)
            nxt, applied = envs.dynamics(spec, obs, a)
            S[i], A[i], Ap[i], S2[i], E[i] = obs, a, applied, nxt, w.episode
            LP[i] = gaussian_logprob(mean, log_std, a)
            w.t += 1
            if w.t >= spec.horizon:
                D[i] = 1.0
                w.episode += 1
                w.t = 0
                w.obs = w._reset()
            else:
                w.obs = nxt
        return Rollout(S, A, Ap, S2, LP, D, E, w.obs.copy())

    def _rewards(self, ro: Rollout, info):
        cfg = self.cfg
        if cfg.reward_backend == "ail":
            return ail_rewards(self.disc, ro.states, ro.next_states)
        if cfg.reward_backend == "none":
            return np.zeros(len(ro.states))
        rewards = np.empty(len(ro.states))
        starts = np.flatnonzero(np.r_[True, ro.episode_ids[1:] != ro.episode_ids[:-1]])
        ends = np.r_[starts[1:], len(ro.states)]
        ep_states, ep_experts, slices = [], [], []
        for a, b in zip(starts, ends):
            ep = int(ro.episode_ids[a])
            states = np.concatenate([ro.states[a:b], ro.next_states[b - 1 : b]])
            ep_states.append(states)
            ep_experts.append(self.expert_obs[ep % len(self.expert_obs)].states)
            slices.append(slice(a, b))
        if cfg.reward_backend == "tm":
            for st, ex, sl in zip(ep_states, ep_experts, slices):
                r = tm_rewards(st, ex)[1:]
                rewards[sl] = np.pad(r, (0, sl.stop - sl.start - len(r)))
            info.setdefault("tm", []).append(float(rewards.mean()))
        else:
            lengths = {len(s) for s in ep_states} | {len(e) for e in ep_experts}
            if len(lengths) == 1:
                r = ot_rewards(np.stack(ep_states), np.stack(ep_experts), cfg.sinkhorn_eps, cfg.sinkhorn_iters, cfg.ot_scale)
                per_ep = list(r)
            else:
                per_ep = [ot_rewards(s, e, cfg.sinkhorn_eps, cfg.sinkhorn_iters, cfg.ot_scale) for s, e in zip(ep_states, ep_experts)]
            for r, sl in zip(per_ep, slices):
                rewards[sl] = r[1:]
            info.setdefault("ot", []).append(float(rewards.mean()))
        return rewards

    # -- objective --------------------------------------------------------
    def objective(self, mb, reg_batch=None, reg_rng=None):
        """Policy surrogate + value_coef * value loss + lambda_reg * regulariser.

        ``reg_batch`` carries expert states and either the frozen posterior
        (``weights``, ``means``, ``log_std``) or true ``actions``.
        Returns ``(loss, grads, info)`` with grads over policy then value params.
        """
        cfg = self.cfg
        adv = normalize_advantages(mb["adv"])
        lp_loss, pg, _ = ppo_policy_loss(self.policy, mb["logp"], mb["states"], mb["actions"], adv, cfg.ppo_clip, cfg.entropy_coef)
        v_loss, vg = value_loss(self.value_net, mb["states"], mb["returns"])
        grads = pg + [cfg.value_coef * g for g in vg]
        loss = lp_loss + cfg.value_coef * v_loss
        info = {"reg": float("nan")}
        if self.use_reg and reg_batch is not None:
            if cfg.regularizer == "idm":
                r, rg = reg_loss_from_posterior(
                    self.policy, reg_batch["states"], reg_batch["weights"], reg_batch["means"],
                    reg_batch["log_std"], reg_rng, cfg.idm.kl_samples,
                )
            else:
                r, rg = bc_loss(self.policy, reg_batch["states"], reg_batch["actions"])
            loss += cfg.lambda_reg * r
            for i, g in enumerate(rg):
                grads[i] = grads[i] + cfg.lambda_reg * g
            info["reg"] = r
        return loss, grads, info

    def _reg_targets(self):
        if not self.use_reg:
            return None
        if self.cfg.regularizer == "idm":
            w, mu, ls = self.idm.posterior(self.expert_pairs.states, self.expert_pairs.next_states)
            return {"states": self.expert_pairs.states, "weights": w, "means": mu, "log_std": ls.copy()}
        return {"states": self.expert_sa.states, "actions": self.expert_sa.actions}

    def _ppo_update(self, rollouts, targets):
        cfg = self.cfg
        per_worker = []
        for ro in rollouts:
            values = self.value_net(ro.states)[:, 0]
            last = self.value_net(ro.last_obs)[0, 0]
            adv, ret = gae(ro.rewards, values, last, cfg.gamma, cfg.gae_lambda, ro.dones)
            per_worker.append({"states": ro.states, "actions": ro.actions, "logp": ro.logprobs, "adv": adv, "returns": ret})
        n = cfg.rollout_length
        bs = cfg.batch_size
        params = self._pv_params()
        reg_vals = []
        n_targets = 0 if targets is None else len(targets["states"])
        for _ in range(cfg.ppo_epochs):
            orders = [self.ppo_rng.permutation(n) for _ in rollouts]
            for start in range(0, n, bs):
                total = None
                for data, order in zip(per_worker, orders):
                    idx = order[start : start + bs]
                    mb = {k: v[idx] for k, v in data.items()}
                    reg_batch = None
                    if targets is not None:
                        ridx = self.ppo_rng.integers(0, n_targets, size=bs)
                        reg_batch = {k: (v if k == "log_std" else v[ridx]) for k, v in targets.items()}
                    _, grads, info = self.objective(mb, reg_batch, self.ppo_rng)
                    reg_vals.append(info["reg"])
                    total = grads if total is None else [t + g for t, g in zip(total, grads)]
                grads = [g / len(rollouts) for g in total]
                adam_step(self.opt, params, clip_global_norm(grads, cfg.clip_norm))
        return float(np.mean(reg_vals)) if targets is not None else float("nan")

    def _disc_update(self, rollouts):
        cfg = self.cfg
        agent = Transitions(
            np.concatenate([r.states for r in rollouts]),
            np.concatenate([r.next_states for r in rollouts]),
        )
        bs = cfg.batch_size
        losses = []
        for _ in range(cfg.disc_updates):
            order = self.disc_rng.permutation(len(agent))
            for start in range(0, len(order), bs):
                ab = agent.take(order[start : start + bs])
                eb = self.expert_pairs.take(self.disc_rng.integers(0, len(self.expert_pairs), size=len(ab)))
                loss, grads, _ = disc_loss(self.disc, eb, ab, cfg.gp_coef, self.disc_rng)
                adam_step(self.disc_opt, self.disc.params(), clip_global_norm(grads, cfg.clip_norm))
                losses.append(loss)
        return float(np.mean(losses))

    def train_iteration(self) -> Metrics:
        cfg = self.cfg
        info = {}
        rollouts = [self._collect(w) for w in self.workers]
        for ro in rollouts:
            ro.rewards = self._rewards(ro, info)
        for ro in rollouts:
            replay_push(self.replay, ro.states, ro.applied, ro.next_states)
        self.env_steps += cfg.workers * cfg.rollout_length
        m = Metrics(self.iteration + 1, self.env_steps)
        if self.idm is not None:
            _, _, m.idm_nll = idm_fit(self.idm, self.replay, cfg.idm, self.idm_rng)
        targets = self._reg_targets()
        m.reg_kl = self._ppo_update(rollouts, targets)
        if self.disc is not None:
            m.disc_loss = self._disc_update(rollouts)
        if "tm" in info:
            m.mean_tm_reward = float(np.mean(info["tm"]))
        if "ot" in info:
            m.mean_ot_reward = float(np.mean(info["ot"]))
        self.iteration += 1
        if self.iteration % cfg.eval_every == 0:
            self._evaluate_into(m)
        m.wall_time_s = time.perf_counter() - self._t0
        self.history.append(m)
        return m

    def _evaluate_into(self, m):
        mean, std, _ = evaluate(self.policy, self.spec, self.cfg.eval_episodes, self.cfg.eval_seed)
        m.mean_return, m.std_return = mean, std
        m.normalized_return = float(normalized_return(mean, self.anchors))

    def train(self, callback=None):
        while self.env_steps + self.cfg.workers * self.cfg.rollout_length <= self.cfg.max_env_steps:
            m = self.train_iteration()
            if callback is not None:
                callback(m)
        return self.history


def train_bc(spec, config: TrainConfig, expert_demos, anchors=None, epochs=200):
    """Supervised baseline: maximise the likelihood of expert actions. Returns ``(policy, metrics)``."""
    cfg = config.validate(spec.horizon)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])
    policy = GaussianPolicy(spec.state_dim, spec.action_dim, (cfg.hidden, cfg.hidden), cfg.log_std_init, rng)
    data = dataset_transitions(expert_demos)
    opt = AdamState.for_params(policy.params(), cfg.lr)
    t0 = time.perf_counter()
    for _ in range(epochs):
        order = rng.permutation(len(data))
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            _, grads = bc_loss(policy, data.states[idx], data.actions[idx])
            adam_step(opt, policy.params(), clip_global_norm(grads, cfg.clip_norm))
    anchors = anchors or compute_anchors(spec, cfg.eval_episodes, cfg.eval_seed)
    mean, std, _ = evaluate(policy, spec, cfg.eval_episodes, cfg.eval_seed)
    m = Metrics(epochs, 0, mean, std, float(normalized_return(mean, anchors)))
    m.wall_time_s = time.perf_counter() - t0
    return policy, [m]
