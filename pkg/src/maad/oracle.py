"""Exact computations on small finite MDPs.

Occupancy measures come from a linear solve rather than simulation, so the
inverse-dynamics identities below can be checked to round-off. All KL
divergences use occupancies rescaled by ``1 - gamma`` into distributions.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AbsoluteContinuityError, ContractViolation, InfeasibleTransition, NumericError

ATOL = 1e-12


def _check_simplex(p, axis, name):
    if np.any(p < 0):
        raise ContractViolation(f"{name} has negative entries")
    if not np.allclose(p.sum(axis=axis), 1.0, rtol=0.0, atol=ATOL):
        raise ContractViolation(f"{name} does not sum to 1")


@dataclass
class TabularMdp:
    """``T[s, a, s'] = T(s' | s, a)``."""

    T: np.ndarray
    rho0: np.ndarray
    gamma: float = 0.9

    def __post_init__(self):
        self.T = np.asarray(self.T, dtype=np.float64)
        self.rho0 = np.asarray(self.rho0, dtype=np.float64)
        if self.T.ndim != 3 or self.T.shape[0] != self.T.shape[2]:
            raise ContractViolation(f"T must have shape (S, A, S), got {self.T.shape}")
        if self.rho0.shape != (self.T.shape[0],):
            raise ContractViolation("rho0 length differs from the number of states")
        if not 0.0 < self.gamma < 1.0:
            raise ContractViolation("gamma must lie in (0, 1)")
        _check_simplex(self.T, 2, "T")
        _check_simplex(self.rho0, 0, "rho0")

    @property
    def n_states(self):
        return self.T.shape[0]

    @property
    def n_actions(self):
        return self.T.shape[1]


@dataclass
class TabularPolicy:
    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 2:
            raise ContractViolation("policy table must be (S, A)")
        _check_simplex(self.probs, 1, "policy")


@dataclass
class OccupancyTables:
    rho_s: np.ndarray
    rho_sa: np.ndarray
    rho_ss: np.ndarray
    rho_a_given_ss: np.ndarray  # (S, S', A), zero rows where (s, s') is unreachable
    reachable: np.ndarray


def _check_pair(mdp: TabularMdp, pi: TabularPolicy):
    if pi.probs.shape != (mdp.n_states, mdp.n_actions):
        raise ContractViolation(f"policy shape {pi.probs.shape} does not match the MDP")


def posterior_table(T, probs):
    """Eq.-1 style posterior ``T(s'|s,a) pi(a|s) / sum_b T(s'|s,b) pi(b|s)`` as (S, S', A)."""
    num = np.transpose(T * probs[:, :, None], (0, 2, 1))
    den = num.sum(axis=-1, keepdims=True)
    reachable = den[..., 0] > 0
    post = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return post, reachable


def occupancy_tables(mdp: TabularMdp, pi: TabularPolicy) -> OccupancyTables:
    """Discounted occupancies from ``(I - gamma P_pi^T) rho = rho0``."""
    _check_pair(mdp, pi)
    P = np.einsum("sa,sat->st", pi.probs, mdp.T)
    A = np.eye(mdp.n_states) - mdp.gamma * P.T
    try:
        rho_s = np.linalg.solve(A, mdp.rho0)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"occupancy system is singular ({exc})") from None
    rho_sa = rho_s[:, None] * pi.probs
    rho_ss = np.einsum("sa,sat->st", rho_sa, mdp.T)
    post, reachable = posterior_table(mdp.T, pi.probs)
    return OccupancyTables(rho_s, rho_sa, rho_ss, post, reachable)


def env_inverse_posterior(mdp: TabularMdp, behavior_pi: TabularPolicy, s: int, s_next: int):
    """Exact action posterior for one transition under the behavior policy."""
    _check_pair(mdp, behavior_pi)
    num = mdp.T[s, :, s_next] * behavior_pi.probs[s]
    z = num.sum()
    if z <= 0:
        raise InfeasibleTransition(f"transition {s} -> {s_next} has zero probability")
    return num / z


def _kl(p, q):
    """KL between arrays of matching shape; terms with p = 0 contribute nothing."""
    p = np.ravel(p)
    q = np.ravel(q)
    on = p > 0
    if np.any(q[on] <= 0):
        raise AbsoluteContinuityError("p puts mass where q has none")
    return float(np.sum(p[on] * (np.log(p[on]) - np.log(q[on]))))


def _expect_log_ratio(weights, num, den):
    on = weights > 0
    if np.any(num[on] <= 0) or np.any(den[on] <= 0):
        raise AbsoluteContinuityError("zero probability inside a log-ratio")
    return float(np.sum(weights[on] * (np.log(num[on]) - np.log(den[on]))))


def idd_check(mdp: TabularMdp, pi_agent: TabularPolicy, pi_expert: TabularPolicy):
    """Return ``(kl_ild, kl_ilo, kl_idd, residual)`` with ``residual = kl_ild - kl_ilo - kl_idd``.

    ``kl_ild`` compares state-action occupancies, ``kl_ilo`` state-state
    occupancies and ``kl_idd`` the action posteriors, averaged under the
    agent's joint ``(s, a, s')`` occupancy.
    """
    _check_pair(mdp, pi_agent)
    _check_pair(mdp, pi_expert)
    c = 1.0 - mdp.gamma
    ag = occupancy_tables(mdp, pi_agent)
    ex = occupancy_tables(mdp, pi_expert)
    kl_ild = _kl(c * ag.rho_sa, c * ex.rho_sa)
    kl_ilo = _kl(c * ag.rho_ss, c * ex.rho_ss)
    # joint indexed (s, s', a) to line up with the posterior tables
    joint = c * np.transpose(ag.rho_sa[:, :, None] * mdp.T, (0, 2, 1))
    kl_idd = _expect_log_ratio(joint, ag.rho_a_given_ss, ex.rho_a_given_ss)
    return kl_ild, kl_ilo, kl_idd, kl_ild - kl_ilo - kl_idd


def behavior_joint(mdp: TabularMdp, behavior_pi: TabularPolicy):
    """Normalised ``rho(s, a, s')`` of the behavior policy, indexed (s, a, s')."""
    occ = occupancy_tables(mdp, behavior_pi)
    return (1.0 - mdp.gamma) * occ.rho_sa[:, :, None] * mdp.T


@dataclass
class BoundReport:
    lhs: float
    kl_term: float
    integral_term: float
    residual: float

    @property
    def holds(self):
        return self.lhs <= self.kl_term + self.integral_term + 1e-9

    def __iter__(self):
        return iter((self.lhs, self.kl_term, self.integral_term, self.residual))


def bound_check(mdp: TabularMdp, behavior_pi: TabularPolicy, pi_theta: TabularPolicy, joint=None) -> BoundReport:
    """Split the inverse-model divergence into a policy KL and a dynamics term.

    ``joint`` is ``rho(s, a, s')`` indexed (s, a, s'); by default the
    behavior policy's normalised occupancy. Its action conditional plays the
    role of the reference inverse model.
    """
    _check_pair(mdp, behavior_pi)
    _check_pair(mdp, pi_theta)
    J = behavior_joint(mdp, behavior_pi) if joint is None else np.asarray(joint, dtype=np.float64)
    if J.shape != mdp.T.shape:
        raise ContractViolation(f"joint shape {J.shape} != {mdp.T.shape}")
    J = np.transpose(J, (0, 2, 1))  # (s, s', a)
    pair = J.sum(axis=-1, keepdims=True)
    ref_post = np.divide(J, pair, out=np.zeros_like(J), where=pair > 0)
    theta_post, _ = posterior_table(mdp.T, pi_theta.probs)
    pi_b = np.broadcast_to(pi_theta.probs[:, None, :], J.shape)
    T_sas = np.transpose(mdp.T, (0, 2, 1))
    marg = np.broadcast_to(np.einsum("sat,sa->st", mdp.T, pi_theta.probs)[:, :, None], J.shape)
    lhs = _expect_log_ratio(J, ref_post, theta_post)
    kl_term = _expect_log_ratio(J, ref_post, pi_b)
    integral_term = _expect_log_ratio(J, marg, T_sas)
    return BoundReport(lhs, kl_term, integral_term, lhs - kl_term - integral_term)


def bound_sup_report(mdp: TabularMdp, behavior_pi: TabularPolicy, policies):
    """Empirical ``sup`` of the dynamics term over ``policies``, checked against each lhs.

    Returns ``(sup_integral, all_within)``: whether ``lhs <= kl_term + sup``
    held for every tested policy. Reported, not asserted.
    """
    reports = [bound_check(mdp, behavior_pi, p) for p in policies]
    sup = max(r.integral_term for r in reports)
    return sup, all(r.lhs <= r.kl_term + sup + 1e-9 for r in reports)


def random_policy(rng, n_states, n_actions, floor=1e-3):
    p = rng.dirichlet(np.ones(n_actions), size=n_states)
    p = np.maximum(p, floor)
    return TabularPolicy(p / p.sum(axis=1, keepdims=True))


def random_instance(rng, n_states=4, n_actions=3, gamma=0.9, floor=1e-3):
    """Dirichlet(1) transitions and start distribution plus two floored random policies."""
    rng = np.random.default_rng(rng)
    T = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    rho0 = rng.dirichlet(np.ones(n_states))
    mdp = TabularMdp(T, rho0, gamma)
    return mdp, random_policy(rng, n_states, n_actions, floor), random_policy(rng, n_states, n_actions, floor)


def run_battery(n_instances=100, seed=0, tol=1e-9):
    """Identity checks on random instances. Returns ``(rows, passed)``.

    Each row holds the instance index, both residuals, the normalisation
    error of the state occupancy and the bound flag.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n_instances):
        mdp, pa, pe = random_instance(rng)
        occ = occupancy_tables(mdp, pa)
        norm_err = abs((1.0 - mdp.gamma) * occ.rho_s.sum() - 1.0)
        _, _, _, idd_res = idd_check(mdp, pa, pe)
        rep = bound_check(mdp, pe, pa)
        rows.append(
            {
                "instance": i,
                "idd_residual": idd_res,
                "bound_residual": rep.residual,
                "occupancy_norm_error": norm_err,
                "bound_holds": rep.holds,
            }
        )
    passed = all(
        abs(r["idd_residual"]) <= tol and abs(r["bound_residual"]) <= tol and r["bound_holds"] and r["occupancy_norm_error"] <= 1e-12
        for r in rows
    )
    return rows, passed
