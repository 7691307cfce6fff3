"""Run configuration files, algorithm aliases and parameter checkpoints.

A run config is an INI file with ``[run]``, ``[env]``, ``[train]`` and
``[idm]`` sections. Every ``train`` writes the fully resolved file next to
its outputs so the run can be repeated exactly.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agent import TrainConfig
from .envs import EnvSpec
from .errors import ConfigError
from .idm import IdmConfig

# algorithm -> (reward backend, regularizer, forced lambda_reg or None)
ALGORITHMS = {
    "maad-ail": ("ail", "idm", None),
    "maad-tm": ("tm", "idm", None),
    "maad-ot": ("ot", "idm", None),
    "gaifo": ("ail", "none", 0.0),
    "tmo": ("tm", "none", 0.0),
    "oto": ("ot", "none", 0.0),
    "gail-bc": ("ail", "bc", None),
    "bc": ("none", "bc", None),
}
NEEDS_ACTIONS = ("bc", "gail-bc")
OUTPUT_ROOT_VAR = "MAAD_OUTPUT_ROOT"


@dataclass
class RunConfig:
    algorithm: str = "maad-ail"
    env: EnvSpec = field(default_factory=EnvSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    expert_path: str = "experts.jsonl"
    output_dir: str = "runs/maad-ail"
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    bc_epochs: int = 200

    def resolved(self) -> "RunConfig":
        """Apply the algorithm's backend / regularizer mapping and validate."""
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; choose from {sorted(ALGORITHMS)}")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        backend, reg, lam = ALGORITHMS[self.algorithm]
        train = dataclasses.replace(self.train, reward_backend=backend, regularizer=reg)
        if lam is not None:
            train.lambda_reg = lam
        train = train.validate(self.env.horizon)
        return dataclasses.replace(self, train=train, seeds=[int(s) for s in self.seeds])

    def output_path(self) -> Path:
        p = Path(self.output_dir)
        root = os.environ.get(OUTPUT_ROOT_VAR)
        return Path(root) / p if root and not p.is_absolute() else p

    def for_seed(self, seed) -> TrainConfig:
        return dataclasses.replace(self.train, seed=int(seed))


def _coerce(text, like, key):
    try:
        if isinstance(like, bool):
            return configparser.ConfigParser.BOOLEAN_STATES[text.strip().lower()]
        if isinstance(like, int):
            return int(text)
        if isinstance(like, float):
            return float(text)
    except (KeyError, ValueError):
        raise ConfigError(f"bad value for {key}: {text!r}") from None
    return text.strip()


def _fields(obj, skip=()):
    return {f.name: getattr(obj, f.name) for f in dataclasses.fields(obj) if f.name not in skip}


def _apply(obj, section, items):
    known = _fields(obj, skip=("idm",))
    updates = {}
    for key, text in items:
        if key not in known:
            raise ConfigError(f"unknown key [{section}] {key}")
        updates[key] = _coerce(text, known[key], f"[{section}] {key}")
    return dataclasses.replace(obj, **updates)


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    unknown = set(cp.sections()) - {"run", "env", "train", "idm"}
    if unknown:
        raise ConfigError(f"unknown sections {sorted(unknown)}")
    cfg = RunConfig()
    if cp.has_section("run"):
        run = dict(cp.items("run"))
        for key in list(run):
            if key not in ("algorithm", "expert_path", "output_dir", "seeds", "bc_epochs"):
                raise ConfigError(f"unknown key [run] {key}")
        seeds = cfg.seeds
        if "seeds" in run:
            try:
                seeds = [int(s) for s in run.pop("seeds").replace(",", " ").split()]
            except ValueError:
                raise ConfigError("seeds must be a comma-separated list of integers") from None
        bc_epochs = _coerce(run.pop("bc_epochs", str(cfg.bc_epochs)), 1, "[run] bc_epochs")
        cfg = dataclasses.replace(cfg, seeds=seeds, bc_epochs=bc_epochs, **{k: v.strip() for k, v in run.items()})
    env = cfg.env
    if cp.has_section("env"):
        try:
            env = _apply(env, "env", cp.items("env"))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    train = cfg.train
    if cp.has_section("train"):
        train = _apply(train, "train", cp.items("train"))
    if cp.has_section("idm"):
        train = dataclasses.replace(train, idm=_apply(train.idm, "idm", cp.items("idm")))
    return dataclasses.replace(cfg, env=env, train=train)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def _fmt(v):
    return repr(v) if isinstance(v, float) else str(v)


def format_config(cfg: RunConfig) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    cp["run"] = {
        "algorithm": cfg.algorithm,
        "expert_path": cfg.expert_path,
        "output_dir": cfg.output_dir,
        "seeds": ", ".join(str(s) for s in cfg.seeds),
        "bc_epochs": str(cfg.bc_epochs),
    }
    cp["env"] = {k: _fmt(v) for k, v in _fields(cfg.env).items()}
    cp["train"] = {k: _fmt(v) for k, v in _fields(cfg.train, skip=("idm",)).items()}
    cp["idm"] = {k: _fmt(v) for k, v in _fields(cfg.train.idm).items()}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def save_config(cfg: RunConfig, path):
    Path(path).write_text(format_config(cfg), encoding="utf-8")


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(format_config(cfg).encode("utf-8")).hexdigest()[:16]


def save_checkpoint(path, arrays: dict, cfg_hash=""):
    """Flat float64 parameter vector plus a JSON manifest of names and shapes."""
    names = list(arrays)
    parts = [np.asarray(arrays[k], dtype=np.float64) for k in names]
    manifest = [{"name": k, "shape": list(p.shape)} for k, p in zip(names, parts)]
    flat = np.concatenate([p.ravel() for p in parts]) if parts else np.zeros(0)
    np.savez(path, params=flat, manifest=json.dumps(manifest), config_hash=cfg_hash)


def load_checkpoint(path):
    """Returns ``(arrays, config_hash)``."""
    with np.load(path, allow_pickle=False) as z:
        flat = z["params"]
        manifest = json.loads(str(z["manifest"]))
        h = str(z["config_hash"])
    arrays, pos = {}, 0
    for entry in manifest:
        size = int(np.prod(entry["shape"]))
        arrays[entry["name"]] = flat[pos : pos + size].reshape(entry["shape"])
        pos += size
    if pos != len(flat):
        raise ConfigError(f"checkpoint {path} has {len(flat) - pos} unassigned values")
    return arrays, h


def named_params(prefix, params):
    return {f"{prefix}.{i}": p for i, p in enumerate(params)}


def assign_params(arrays, prefix, params):
    """Copy checkpoint arrays into existing parameter arrays in place."""
    for i, p in enumerate(params):
        src = arrays.get(f"{prefix}.{i}")
        if src is None or src.shape != p.shape:
            raise ConfigError(f"checkpoint entry {prefix}.{i} missing or mis-shaped")
        p[...] = src
