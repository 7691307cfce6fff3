"""Exact tabular check: the demonstration-vs-observation objective gap is the inverse dynamics disagreement.

Run: python3 demos/oracle_identities.py
"""
import numpy as np

from maad.oracle import bound_check, idd_check, random_instance

rng = np.random.default_rng(0)
print(f"{'instance':>8} {'KL_ILD':>10} {'KL_ILO':>10} {'KL_IDD':>10} {'residual':>10}")
for i in range(5):
    mdp, agent, expert = random_instance(rng)
    kl_ild, kl_ilo, kl_idd, res = idd_check(mdp, agent, expert)
    print(f"{i:>8} {kl_ild:10.5f} {kl_ilo:10.5f} {kl_idd:10.5f} {res:10.1e}")

# the regularizer bound on one instance
mdp, behavior, theta = random_instance(rng)
rep = bound_check(mdp, behavior, theta)
print(f"\nbound decomposition: lhs {rep.lhs:.5f} = kl {rep.kl_term:.5f} + integral {rep.integral_term:.5f} (residual {rep.residual:.1e})")
