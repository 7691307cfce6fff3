"""Trajectories, expert datasets, subsampling, the FIFO replay buffer and file I/O."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import envs
from .errors import (
    ContractViolation,
    EmptyBufferError,
    EmptyResultError,
    NumericError,
    TrajectoryParseError,
)


def _as_2d(x, name):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ContractViolation(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite entries in {name}")
    return arr


@dataclass
class DemoTrajectory:
    states: np.ndarray
    actions: np.ndarray
    ep_return: float = 0.0

    def __post_init__(self):
        self.states = _as_2d(self.states, "states")
        self.actions = _as_2d(self.actions, "actions")
        if len(self.actions) != len(self.states) - 1:
            raise ContractViolation(
                f"{len(self.actions)} actions for {len(self.states)} states"
            )
        self.ep_return = float(self.ep_return)

    def __len__(self):
        return len(self.actions)

    def __eq__(self, other):
        return (
            isinstance(other, DemoTrajectory)
            and np.array_equal(self.states, other.states)
            and np.array_equal(self.actions, other.actions)
            and self.ep_return == other.ep_return
        )


@dataclass
class ObsTrajectory:
    states: np.ndarray

    def __post_init__(self):
        self.states = _as_2d(self.states, "states")
        if len(self.states) < 2:
            raise ContractViolation("an observation trajectory needs at least 2 states")

    def __len__(self):
        return len(self.states) - 1

    def __eq__(self, other):
        return isinstance(other, ObsTrajectory) and np.array_equal(self.states, other.states)


@dataclass
class Transitions:
    """A batch of ``(s, a, s')``; ``actions`` is None for observation-only data."""

    states: np.ndarray
    next_states: np.ndarray
    actions: np.ndarray | None = None

    def __len__(self):
        return len(self.states)

    def take(self, idx):
        return Transitions(
            self.states[idx],
            self.next_states[idx],
            None if self.actions is None else self.actions[idx],
        )

    @staticmethod
    def concat(parts):
        parts = list(parts)
        acts = None
        if parts and all(p.actions is not None for p in parts):
            acts = np.concatenate([p.actions for p in parts])
        return Transitions(
            np.concatenate([p.states for p in parts]),
            np.concatenate([p.next_states for p in parts]),
            acts,
        )


def strip_actions(d: DemoTrajectory) -> ObsTrajectory:
    return ObsTrajectory(d.states.copy())


def transitions_of(t, indices=None) -> Transitions:
    idx = np.arange(len(t)) if indices is None else np.asarray(indices)
    acts = t.actions[idx] if isinstance(t, DemoTrajectory) else None
    return Transitions(t.states[idx], t.states[idx + 1], acts)


def subsample_pairs(t, rate: int, seed) -> Transitions:
    """Keep ``len(t) // rate`` transitions drawn without replacement, in original order."""
    if rate < 1:
        raise ContractViolation("rate must be >= 1")
    n_keep = len(t) // rate
    if n_keep == 0:
        raise EmptyResultError(f"rate {rate} exceeds trajectory length {len(t)}")
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(t), size=n_keep, replace=False))
    return transitions_of(t, idx)


def dataset_transitions(trajs, rate=None, seed=0) -> Transitions:
    """All transitions of a dataset, optionally subsampled per trajectory."""
    if rate is None:
        return Transitions.concat(transitions_of(t) for t in trajs)
    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, 2**63 - 1, size=len(trajs))
    return Transitions.concat(subsample_pairs(t, rate, s) for t, s in zip(trajs, seeds))


class ReplayBuffer:
    """Fixed-capacity FIFO of ``(s, a, s')`` triplets stored in ring arrays."""

    def __init__(self, state_dim, action_dim, capacity=100_000):
        if capacity < 1:
            raise ContractViolation("capacity must be positive")
        self.capacity = int(capacity)
        self.state_dim = state_dim
        self.action_dim = action_dim
        self._s = np.zeros((self.capacity, state_dim))
        self._a = np.zeros((self.capacity, action_dim))
        self._s2 = np.zeros((self.capacity, state_dim))
        self._next = 0
        self._size = 0

    def __len__(self):
        return self._size

    def _order(self):
        if self._size < self.capacity:
            return np.arange(self._size)
        return (np.arange(self.capacity) + self._next) % self.capacity

    def contents(self) -> Transitions:
        """Current entries, oldest first."""
        o = self._order()
        return Transitions(self._s[o].copy(), self._s2[o].copy(), self._a[o].copy())


def replay_push(buf: ReplayBuffer, states, actions, next_states) -> ReplayBuffer:
    s = np.asarray(states, dtype=np.float64)
    a = np.asarray(actions, dtype=np.float64)
    s2 = np.asarray(next_states, dtype=np.float64)
    n = len(s)
    if n == 0:
        return buf
    for arr, dim, name in ((s, buf.state_dim, "states"), (a, buf.action_dim, "actions"), (s2, buf.state_dim, "next_states")):
        if arr.shape != (n, dim):
            raise ContractViolation(f"{name} shape {arr.shape}, expected {(n, dim)}")
    if n > buf.capacity:
        s, a, s2 = s[-buf.capacity :], a[-buf.capacity :], s2[-buf.capacity :]
        buf._next = (buf._next + n - buf.capacity) % buf.capacity
        n = buf.capacity
    idx = (buf._next + np.arange(n)) % buf.capacity
    buf._s[idx], buf._a[idx], buf._s2[idx] = s, a, s2
    buf._next = int((buf._next + n) % buf.capacity)
    buf._size = min(buf._size + n, buf.capacity)
    return buf


def replay_sample(buf: ReplayBuffer, batch_size=64, seed=None) -> Transitions:
    """Uniform sample with replacement. ``seed`` may be a Generator."""
    if len(buf) == 0:
        raise EmptyBufferError("cannot sample from an empty replay buffer")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(buf), size=batch_size)
    return Transitions(buf._s[idx], buf._s2[idx], buf._a[idx])


class ExpertPolicy:
    """The scripted PD regulator wrapped in the common policy interface."""

    def __init__(self, spec):
        self.spec = spec
        self.action_dim = spec.action_dim

    def act(self, obs, rng=None, deterministic=True):
        return envs.expert_policy(self.spec, obs)


class ZeroPolicy:
    def __init__(self, spec):
        self.action_dim = spec.action_dim

    def act(self, obs, rng=None, deterministic=True):
        return np.zeros(np.shape(obs)[:-1] + (self.action_dim,))


def collect_rollout(policy, spec, seed, deterministic=False) -> DemoTrajectory:
    """One full episode. Stored actions are the ones the environment applied."""
    if policy.action_dim != spec.action_dim:
        raise ContractViolation("policy and environment action dimensions differ")
    rng = np.random.default_rng(seed)
    obs = envs.env_reset(spec, seed).obs
    states, actions, ret = [obs], [], 0.0
    for _ in range(spec.horizon):
        a = np.asarray(policy.act(obs, rng=rng, deterministic=deterministic), dtype=np.float64)
        if not np.all(np.isfinite(a)):
            raise NumericError("policy produced non-finite action", a)
        obs, applied = envs.dynamics(spec, obs, a)
        ret += float(envs.task_reward(spec, obs))
        states.append(obs)
        actions.append(applied)
    return DemoTrajectory(np.array(states), np.array(actions), ret)


def rollout_batch(policy, spec, seeds, deterministic=True):
    """Run one episode per seed in lock-step. Returns ``(states, actions, returns)``.

    ``states`` has shape ``(n, horizon + 1, state_dim)``.
    """
    obs = envs.reset_batch(spec, seeds)
    n = len(obs)
    states = np.empty((n, spec.horizon + 1, spec.state_dim))
    actions = np.empty((n, spec.horizon, spec.action_dim))
    returns = np.zeros(n)
    states[:, 0] = obs
    for t in range(spec.horizon):
        a = policy.act(obs, deterministic=deterministic)
        obs, applied = envs.dynamics(spec, obs, a)
        returns += envs.task_reward(spec, obs)
        states[:, t + 1] = obs
        actions[:, t] = applied
    return states, actions, returns


def save_trajectories(path, dataset):
    """Write one JSON object per line: ``states``, optional ``actions``, ``ep_return``."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for t in dataset:
            rec = {"states": t.states.tolist()}
            if isinstance(t, DemoTrajectory):
                rec["actions"] = t.actions.tolist()
                rec["ep_return"] = t.ep_return
            else:
                rec["ep_return"] = 0.0
            fh.write(json.dumps(rec) + "\n")


def load_trajectories(path):
    path = Path(path)
    out = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TrajectoryParseError(path, lineno, f"malformed JSON ({exc.msg})") from None
            if not isinstance(rec, dict) or "states" not in rec:
                raise TrajectoryParseError(path, lineno, "record lacks 'states'")
            try:
                if rec.get("actions") is not None:
                    out.append(DemoTrajectory(rec["states"], rec["actions"], rec.get("ep_return", 0.0)))
                else:
                    out.append(ObsTrajectory(rec["states"]))
            except (ValueError, TypeError) as exc:
                raise TrajectoryParseError(path, lineno, str(exc)) from None
    return out
