"""Deterministic point-mass environments with closed-form inverse dynamics.

``linear_point`` is a double integrator (``v' = v + a dt``, ``x' = x + v' dt``);
``mirror_actuator`` drives the velocity by ``|a|`` so that every transition
has two mirror-image explanations.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, InfeasibleTransition

DYNAMICS_KINDS = ("linear_point", "mirror_actuator")


@dataclass(frozen=True)
class EnvSpec:
    name: str = "linear_point"
    dim: int = 1
    dt: float = 0.05
    horizon: int = 200
    dynamics_kind: str = "linear_point"
    action_bound: float = 1.0
    kp: float = 2.0
    kd: float = 1.0

    def __post_init__(self):
        if self.dynamics_kind not in DYNAMICS_KINDS:
            raise ContractViolation(f"unknown dynamics kind {self.dynamics_kind!r}")
        if self.dim < 1 or self.horizon < 1 or self.dt <= 0 or self.action_bound <= 0:
            raise ContractViolation(f"invalid env spec {self}")

    @property
    def state_dim(self):
        return 2 * self.dim

    @property
    def action_dim(self):
        return self.dim

    @property
    def action_low(self):
        return np.full(self.dim, -self.action_bound)

    @property
    def action_high(self):
        return np.full(self.dim, self.action_bound)


def make_env(name: str, **overrides) -> EnvSpec:
    """Named presets; ``name`` doubles as the dynamics kind."""
    return EnvSpec(name=name, dynamics_kind=name, **overrides)


@dataclass(frozen=True)
class EnvState:
    positions: np.ndarray
    velocities: np.ndarray
    step_index: int = 0

    @property
    def obs(self):
        return np.concatenate([self.positions, self.velocities])

    @classmethod
    def from_obs(cls, obs, step_index=0):
        obs = np.asarray(obs, dtype=np.float64)
        d = obs.shape[-1] // 2
        return cls(obs[:d].copy(), obs[d:].copy(), step_index)


def env_reset(spec: EnvSpec, seed) -> EnvState:
    rng = np.random.default_rng(seed)
    return EnvState(rng.uniform(-1.0, 1.0, spec.dim), np.zeros(spec.dim), 0)


def reset_batch(spec: EnvSpec, seeds):
    """Observations for several seeded resets, identical to :func:`env_reset`."""
    return np.stack([env_reset(spec, s).obs for s in seeds])


def dynamics(spec: EnvSpec, obs, action):
    """Vectorised one-step map on observation arrays ``(..., 2*dim)``.

    Returns ``(next_obs, applied_action)``; the applied action is the clipped
    one, i.e. the action the environment actually executed.
    """
    d = spec.dim
    x, v = obs[..., :d], obs[..., d:]
    a = np.clip(action, -spec.action_bound, spec.action_bound)
    accel = a if spec.dynamics_kind == "linear_point" else np.abs(a)
    v2 = v + accel * spec.dt
    x2 = x + v2 * spec.dt
    return np.concatenate([x2, v2], axis=-1), a


def task_reward(spec: EnvSpec, next_obs):
    """Ground-truth reward used only for evaluation: negative distance to the origin."""
    return -np.linalg.norm(next_obs[..., : spec.dim], axis=-1)


def env_step(spec: EnvSpec, s: EnvState, a):
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    if a.shape != (spec.action_dim,):
        raise ContractViolation(f"action shape {a.shape} != ({spec.action_dim},)")
    if not np.all(np.isfinite(a)):
        raise ContractViolation(f"non-finite action {a}")
    nxt, _ = dynamics(spec, s.obs, a)
    k = s.step_index + 1
    return EnvState.from_obs(nxt, k), k >= spec.horizon


def expert_policy(spec: EnvSpec, obs):
    """Scripted PD regulator, vectorised over leading axes of ``obs``."""
    d = spec.dim
    a = np.clip(-spec.kp * obs[..., :d] - spec.kd * obs[..., d:], -spec.action_bound, spec.action_bound)
    if spec.dynamics_kind == "mirror_actuator":
        a = np.abs(a)
    return a


def expert_action(spec: EnvSpec, s: EnvState):
    return expert_policy(spec, s.obs)


def analytic_inverse(spec: EnvSpec, s: EnvState, s_next: EnvState, atol=1e-9):
    """All in-bounds actions that map ``s`` to ``s_next``, as a list of vectors."""
    dv = (s_next.velocities - s.velocities) / spec.dt
    expected_x = s.positions + s_next.velocities * spec.dt
    if not np.allclose(s_next.positions, expected_x, rtol=0.0, atol=atol):
        raise InfeasibleTransition("positions inconsistent with velocities")
    slack = atol / spec.dt
    if np.any(np.abs(dv) > spec.action_bound + slack):
        raise InfeasibleTransition(f"required action {dv} exceeds bounds")
    dv = np.clip(dv, -spec.action_bound, spec.action_bound)
    if spec.dynamics_kind == "linear_point":
        return [dv]
    if np.any(dv < -slack):
        raise InfeasibleTransition("mirror actuator cannot decelerate")
    m = np.maximum(dv, 0.0)
    roots = []
    for signs in itertools.product((1.0, -1.0), repeat=spec.dim):
        cand = m * np.array(signs)
        if not any(np.array_equal(cand, r) for r in roots):
            roots.append(cand)
    return roots


def inverse_batch(spec: EnvSpec, obs, next_obs):
    """Vectorised analytic inverse for ``linear_point``; the magnitude ``m`` for the mirror case."""
    d = spec.dim
    dv = (next_obs[..., d:] - obs[..., d:]) / spec.dt
    return np.clip(dv, -spec.action_bound, spec.action_bound)
