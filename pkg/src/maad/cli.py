"""Command-line entry point: ``maad {collect-expert,train,eval,verify,plot}``."""
from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import io
import json
import sys
import time
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import envs, oracle
from .agent import (
    GaussianPolicy,
    Trainer,
    compute_anchors,
    evaluate,
    normalized_return,
    r_squared,
    train_bc,
    write_metrics_csv,
)
from .config import (
    NEEDS_ACTIONS,
    RunConfig,
    assign_params,
    config_hash,
    format_config,
    load_checkpoint,
    load_config,
    named_params,
    parse_config,
    save_checkpoint,
    save_config,
)
from .data import DemoTrajectory, ExpertPolicy, collect_rollout, dataset_transitions, load_trajectories, save_trajectories
from .errors import ConfigError, ContractViolation, TrajectoryParseError
from .idm import MdnIdm
from .numkit import Mlp
from .rewards import sinkhorn


def anchors_path(expert_path):
    p = Path(expert_path)
    return p.with_name(p.stem + ".anchors.json")


def load_anchors(expert_path, spec, cfg):
    p = anchors_path(expert_path)
    if p.exists():
        return json.loads(p.read_text(encoding="utf-8"))
    return compute_anchors(spec, cfg.eval_episodes, cfg.eval_seed)


def collect_expert(spec, n, seed, out):
    demos = [collect_rollout(ExpertPolicy(spec), spec, seed + i, deterministic=True) for i in range(n)]
    save_trajectories(out, demos)
    anchors = compute_anchors(spec)
    anchors_path(out).write_text(json.dumps(anchors, indent=2) + "\n", encoding="utf-8")
    return demos, anchors


def _write_timing(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "env_steps", "wall_time_s"])
        for m in rows:
            w.writerow([m.iteration, m.env_steps, f"{m.wall_time_s:.3f}"])


def run_training(cfg: RunConfig, demos=None, log=None):
    """Train every seed of a resolved config; returns ``{seed: [Metrics, ...]}``.

    Writes ``config.ini`` at the output root and, per seed, ``metrics.csv``,
    ``timing.csv`` and parameter checkpoints.
    """
    cfg = cfg.resolved()
    out = cfg.output_path()
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.ini")
    h = config_hash(cfg)
    if demos is None:
        demos = load_trajectories(cfg.expert_path)
    if cfg.algorithm in NEEDS_ACTIONS and not all(isinstance(d, DemoTrajectory) for d in demos):
        raise ConfigError(f"{cfg.algorithm} needs expert actions in {cfg.expert_path}")
    anchors = load_anchors(cfg.expert_path, cfg.env, cfg.train)
    results = {}
    for seed in cfg.seeds:
        tcfg = cfg.for_seed(seed)
        seed_dir = out / f"seed_{seed}"
        seed_dir.mkdir(exist_ok=True)
        if cfg.algorithm == "bc":
            policy, rows = train_bc(cfg.env, tcfg, demos, anchors, cfg.bc_epochs)
            value_net = idm = None
        else:
            tr = Trainer(cfg.env, tcfg, demos, anchors)
            rows = tr.train(callback=(lambda m: log(f"seed {seed} {_progress(m)}")) if log else None)
            policy, value_net, idm = tr.policy, tr.value_net, tr.idm
        write_metrics_csv(seed_dir / "metrics.csv", rows)
        _write_timing(seed_dir / "timing.csv", rows)
        arrays = named_params("policy", policy.params())
        if value_net is not None:
            arrays.update(named_params("value", value_net.params()))
        save_checkpoint(seed_dir / "policy.npz", arrays, h)
        if idm is not None:
            arrays = named_params("idm", idm.params())
            arrays.update({"idm.feat_mean": idm.feat_mean, "idm.feat_std": idm.feat_std})
            save_checkpoint(seed_dir / "idm.npz", arrays, h)
        results[seed] = rows
        if log:
            log(f"seed {seed} done: {_progress(rows[-1])}")
    return results


def _progress(m):
    return f"iter {m.iteration} steps {m.env_steps} normalized_return {m.normalized_return:.3f}"


def load_policy(cfg: RunConfig, path):
    arrays, _ = load_checkpoint(path)
    hidden = (cfg.train.hidden, cfg.train.hidden)
    policy = GaussianPolicy(cfg.env.state_dim, cfg.env.action_dim, hidden)
    assign_params(arrays, "policy", policy.params())
    return policy


def load_idm(cfg: RunConfig, path):
    arrays, _ = load_checkpoint(path)
    m = MdnIdm(cfg.env.state_dim, cfg.env.action_dim, cfg.train.idm.n_components, cfg.train.idm.hidden)
    assign_params(arrays, "idm", m.params())
    m.feat_mean = arrays["idm.feat_mean"].copy()
    m.feat_std = arrays["idm.feat_std"].copy()
    m.normalizer_fitted = True
    return m


def verify_battery(n_instances=100, seed=0):
    """Oracle identities plus a handful of closed-form checks. Returns ``(rows, passed)``."""
    rows, passed = oracle.run_battery(n_instances, seed)
    T = np.zeros((2, 1, 2))
    T[0, 0, 1] = T[1, 0, 0] = 1.0
    cyc = oracle.occupancy_tables(oracle.TabularMdp(T, [1.0, 0.0], 0.5), oracle.TabularPolicy(np.ones((2, 1))))
    extra = {
        "cycle_occupancy_error": float(np.max(np.abs(cyc.rho_s - [4 / 3, 2 / 3]))),
        "sinkhorn_2x2_error": float(np.max(np.abs(sinkhorn(np.array([[0.0, 1.0], [1.0, 0.0]])).plan - np.diag([0.5, 0.5])))),
    }
    passed = passed and extra["cycle_occupancy_error"] <= 1e-12 and extra["sinkhorn_2x2_error"] <= 1e-6
    return rows, extra, passed


def _cmd_collect(args):
    spec = envs.make_env(args.env, horizon=args.horizon)
    demos, anchors = collect_expert(spec, args.n, args.seed, args.out)
    print(f"wrote {len(demos)} trajectories to {args.out}")
    print(f"expert_return {anchors['expert_return']:.4f} random_return {anchors['random_return']:.4f}")
    return 0


def _build_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    upd = {}
    if args.algorithm:
        upd["algorithm"] = args.algorithm
        if not args.config and not args.out:
            upd["output_dir"] = f"runs/{args.algorithm}"
    if args.expert:
        upd["expert_path"] = args.expert
    if args.out:
        upd["output_dir"] = args.out
    if args.seeds:
        upd["seeds"] = [int(s) for s in args.seeds.split(",")]
    cfg = dataclasses.replace(cfg, **upd)
    if args.set:
        cp = configparser.ConfigParser(interpolation=None)
        cp.read_string(format_config(cfg))
        for item in args.set:
            key, sep, value = item.partition("=")
            section, dot, name = key.strip().partition(".")
            if not sep or not dot:
                raise ConfigError(f"--set expects section.key=value, got {item!r}")
            if not cp.has_section(section):
                raise ConfigError(f"unknown section in --set: {section!r}")
            cp[section][name.strip()] = value.strip()
        buf = io.StringIO()
        cp.write(buf)
        cfg = parse_config(buf.getvalue())
    return cfg


def _cmd_train(args):
    cfg = _build_config(args).resolved()
    print(format_config(cfg), end="")
    t0 = time.perf_counter()
    results = run_training(cfg, log=print if args.verbose else None)
    for seed, rows in results.items():
        print(f"seed {seed}: final normalized_return {rows[-1].normalized_return:.4f} after {rows[-1].env_steps} steps")
    print(f"outputs in {cfg.output_path()} ({time.perf_counter() - t0:.1f}s)")
    return 0


def _cmd_eval(args):
    cfg = load_config(args.config).resolved()
    policy = load_policy(cfg, args.checkpoint)
    mean, std, _ = evaluate(policy, cfg.env, args.episodes, cfg.train.eval_seed)
    anchors = load_anchors(cfg.expert_path, cfg.env, cfg.train)
    print(f"return {mean:.4f} +/- {std:.4f} over {args.episodes} episodes")
    print(f"normalized_return {normalized_return(mean, anchors):.4f}")
    expert = args.expert or cfg.expert_path
    if Path(expert).exists():
        demos = [d for d in load_trajectories(expert) if isinstance(d, DemoTrajectory)]
        if demos:
            data = dataset_transitions(demos)
            pred = policy.act(data.states, deterministic=True)
            print(f"policy_r2 {r_squared(pred, data.actions):.4f}")
            idm_path = Path(args.idm) if args.idm else Path(args.checkpoint).with_name("idm.npz")
            if idm_path.exists():
                m = load_idm(cfg, idm_path)
                w, mu, _ = m.posterior(data.states, data.next_states)
                print(f"idm_r2 {r_squared(np.einsum('nk,nka->na', w, mu), data.actions):.4f}")
    return 0


def _cmd_verify(args):
    rows, extra, passed = verify_battery(args.instances, args.seed)
    out = Path(args.out)
    with out.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    print(f"instances {len(rows)}")
    print(f"max |idd residual| {max(abs(r['idd_residual']) for r in rows):.3e}")
    print(f"max |bound residual| {max(abs(r['bound_residual']) for r in rows):.3e}")
    print(f"bound holds on all instances: {all(r['bound_holds'] for r in rows)}")
    for k, v in extra.items():
        print(f"{k} {v:.3e}")
    print(f"residuals written to {out}")
    print("PASS" if passed else "FAIL")
    return 0 if passed else 1


def _cmd_plot(args):
    groups = defaultdict(list)
    for run in args.runs:
        run = Path(run)
        cfg = load_config(run / "config.ini")
        paths = sorted(run.glob("seed_*/metrics.csv"))
        if not paths:
            raise ConfigError(f"no metrics.csv under {run}")
        groups[(cfg.env.name, cfg.algorithm)] += paths
    from .plotting import plot_runs

    for p in plot_runs(groups, args.out, args.column):
        print(f"wrote {p}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="maad", description="Imitation from observations with an inverse-dynamics regulariser.")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("collect-expert", help="roll out the scripted expert and save demonstrations")
    c.add_argument("--env", default="linear_point", choices=envs.DYNAMICS_KINDS)
    c.add_argument("--horizon", type=int, default=200)
    c.add_argument("--n", type=int, default=16)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", default="experts.jsonl")
    c.set_defaults(func=_cmd_collect)

    t = sub.add_parser("train", help="train one algorithm for every configured seed")
    t.add_argument("--config")
    t.add_argument("--algorithm")
    t.add_argument("--expert")
    t.add_argument("--out")
    t.add_argument("--seeds", help="comma-separated, default 0,1,2")
    t.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    t.add_argument("-v", "--verbose", action="store_true")
    t.set_defaults(func=_cmd_train)

    e = sub.add_parser("eval", help="evaluate a saved policy")
    e.add_argument("--config", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--idm")
    e.add_argument("--expert")
    e.add_argument("--episodes", type=int, default=50)
    e.set_defaults(func=_cmd_eval)

    v = sub.add_parser("verify", help="run the tabular oracle battery")
    v.add_argument("--instances", type=int, default=100)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", default="verify_residuals.csv")
    v.set_defaults(func=_cmd_verify)

    pl = sub.add_parser("plot", help="learning curves from run directories")
    pl.add_argument("runs", nargs="+")
    pl.add_argument("--out", default="plots")
    pl.add_argument("--column", default="normalized_return")
    pl.set_defaults(func=_cmd_plot)
    return p


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, ContractViolation, TrajectoryParseError, FileNotFoundError) as exc:
        print(f"maad: error: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(cli_main())
