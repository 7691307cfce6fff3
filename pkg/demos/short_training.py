"""A short MAAD-AIL run next to its unregularized counterpart (GAIfO) on linear_point.

Run: python3 demos/short_training.py   (a few minutes on one core)
"""
import numpy as np

from maad import envs
from maad.agent import TrainConfig, Trainer, compute_anchors
from maad.data import ExpertPolicy, collect_rollout, strip_actions

spec = envs.make_env("linear_point")
# observation-only demonstrations: the learner never sees expert actions
demos = [strip_actions(collect_rollout(ExpertPolicy(spec), spec, seed=i, deterministic=True)) for i in range(16)]
anchors = compute_anchors(spec)

runs = {
    "maad-ail": TrainConfig(max_env_steps=40_960, eval_episodes=20),
    "gaifo": TrainConfig(max_env_steps=40_960, eval_episodes=20, lambda_reg=0.0, regularizer="none"),
}
curves = {name: Trainer(spec, cfg, demos, anchors).train() for name, cfg in runs.items()}

print(f"{'steps':>7} " + " ".join(f"{n:>9}" for n in curves))
for rows in zip(*curves.values()):
    print(f"{rows[0].env_steps:>7} " + " ".join(f"{m.normalized_return:9.3f}" for m in rows))
