"""Command-line experiment runner.

Subcommands: ``train``, ``dipg``, ``eval``, ``compare`` and
``batch generate|train|eval``. Every command reads an optional YAML config
(``--config``) whose sections mirror the library's config objects::

    seed: 0
    n_policies: 4
    eval_episodes: 32
    similarity: mean        # mean | min aggregation of cross-pair kernels
    out: runs/default
    env:    {kind: multi_goal, horizon: 50, ...}        # EnvSpec fields
    policy: {hidden_sizes: [32], input_scale: 1.0, squash_mean: false}
    train:  {algo: ppo, lr: 0.0003, alphas: [1.0], ...} # TrainConfig fields
    kernel: {bandwidth: 1.0, selector: states_and_actions, max_steps: null, normalize: true}
    batch:  {dataset: data.csv, behavior_policy: null, episodes: 270, epsilon: 0.1,
             gamma: 1.0, alpha: 1.0, mode: geometric_mean, bandwidth: 1.0,
             normalize: true, lr: 0.01, iterations: 300}

Omitted keys take the defaults of the corresponding dataclass. Exit codes:
0 success, 2 configuration error, 1 runtime error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import yaml

from . import artifacts
from .batch import BatchConfig, BatchDataset, UniformMixture, batch_train, cwpdis, generate_dataset
from .diversity import KernelConfig
from .env import EnvSpec, make_env
from .evaluation import compare, evaluate
from .pg import TrainConfig, dipg
from .policy import Policy, spec_for_env

logger = logging.getLogger("dipg")


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names file and line."""


@dataclass(frozen=True)
class PolicyOptions:
    hidden_sizes: Tuple[int, ...] = (32,)
    input_scale: float = 1.0
    squash_mean: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(self.hidden_sizes))
        if any(not isinstance(h, int) or h < 1 for h in self.hidden_sizes):
            raise ValueError(f"hidden sizes must be positive integers, got {list(self.hidden_sizes)}")
        if not self.input_scale > 0:
            raise ValueError("input_scale must be > 0")


@dataclass(frozen=True)
class BatchSettings:
    dataset: Optional[str] = None
    behavior_policy: Optional[str] = None
    episodes: int = 270
    epsilon: float = 0.1
    gamma: float = 1.0
    alpha: float = 1.0
    mode: str = "geometric_mean"
    bandwidth: float = 1.0
    normalize: bool = True
    lr: float = 1e-2
    iterations: int = 300

    def __post_init__(self):
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        self.train_config()

    def train_config(self) -> BatchConfig:
        return BatchConfig(self.mode, self.bandwidth, self.normalize, self.lr, self.iterations)


@dataclass
class ExperimentConfig:
    env: EnvSpec = field(default_factory=EnvSpec)
    policy: PolicyOptions = field(default_factory=PolicyOptions)
    train: TrainConfig = field(default_factory=TrainConfig)
    kernel: KernelConfig = field(default_factory=KernelConfig)
    batch: BatchSettings = field(default_factory=BatchSettings)
    n_policies: int = 4
    eval_episodes: int = 32
    seed: int = 0
    similarity: str = "mean"
    out: str = "runs/default"


def _check_env(**kw):
    return EnvSpec(**kw).resolved()


_SECTIONS = {
    "env": (EnvSpec, _check_env),
    "policy": (PolicyOptions, PolicyOptions),
    "train": (TrainConfig, TrainConfig),
    "kernel": (KernelConfig, KernelConfig),
    "batch": (BatchSettings, BatchSettings),
}
_SCALARS = {"n_policies": int, "eval_episodes": int, "seed": int, "similarity": str, "out": str}


def _line_map(node, prefix=(), out=None) -> dict:
    """Map key paths to 1-based line numbers in the YAML source."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = prefix + (str(k.value),)
            out[path] = k.start_mark.line + 1
            _line_map(v, path, out)
    return out


def _type_ok(default, value) -> bool:
    if value is None:
        return True
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, int):
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, str):
        return isinstance(value, str)
    if isinstance(default, tuple):
        return isinstance(value, (list, tuple))
    return True


def _default(f):
    if f.default is not dataclasses.MISSING:
        return f.default
    if f.default_factory is not dataclasses.MISSING:
        return f.default_factory()
    return None


def _build_section(name: str, values, where):
    cls, check = _SECTIONS[name]
    if values is None:
        values = {}
    if not isinstance(values, dict):
        raise ConfigError(f"{where(name)}: section {name!r} must be a mapping")
    known = {f.name: f for f in dataclasses.fields(cls)}
    for key, val in values.items():
        if key not in known:
            raise ConfigError(f"{where(name, key)}: unknown key {name}.{key}")
        if not _type_ok(_default(known[key]), val):
            raise ConfigError(f"{where(name, key)}: {name}.{key} has the wrong type ({type(val).__name__})")
    try:
        check(**values)
    except (ValueError, TypeError) as e:
        # blame the first key that fails on its own, else the section
        for key, val in values.items():
            try:
                check(**{key: val})
            except (ValueError, TypeError) as single:
                raise ConfigError(f"{where(name, key)}: {name}.{key}: {single}") from None
        raise ConfigError(f"{where(name)}: {name}: {e}") from None
    return cls(**values)


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse and validate a YAML experiment config.

    Raises ``ConfigError`` with a ``source:line:`` prefix on any problem.
    """
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as e:
        mark = e.problem_mark or e.context_mark
        line = mark.line + 1 if mark else 1
        raise ConfigError(f"{source}:{line}: {e.problem or e}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{source}:1: top level must be a mapping")
    lines = _line_map(node)

    def where(*path):
        return f"{source}:{lines.get(tuple(path), 1)}"

    kw = {}
    for key, val in data.items():
        if key in _SECTIONS:
            kw[key] = _build_section(key, val, where)
        elif key in _SCALARS:
            typ = _SCALARS[key]
            if not isinstance(val, typ) or isinstance(val, bool):
                raise ConfigError(f"{where(key)}: {key} must be of type {typ.__name__}")
            kw[key] = val
        else:
            raise ConfigError(f"{where(key)}: unknown key {key!r}")
    if kw.get("n_policies", 1) < 1:
        raise ConfigError(f"{where('n_policies')}: n_policies must be >= 1")
    if kw.get("eval_episodes", 1) < 1:
        raise ConfigError(f"{where('eval_episodes')}: eval_episodes must be >= 1")
    if kw.get("similarity", "mean") not in ("mean", "min"):
        raise ConfigError(f"{where('similarity')}: similarity must be 'mean' or 'min'")
    cfg = ExperimentConfig(**kw)
    cfg.env = cfg.env.resolved()
    cfg.train = dataclasses.replace(cfg.train, seed=cfg.seed)
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"{path}: cannot read config ({e.strerror})") from None
    return parse_config(text, str(path))


# ---------------------------------------------------------------- helpers


def _rng(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *tags]))


def _env_and_spec(cfg: ExperimentConfig):
    env = make_env(cfg.env)
    p = cfg.policy
    return env, spec_for_env(env, p.hidden_sizes, p.input_scale, p.squash_mean)


def _check_compatible(policy: Policy, env, path) -> None:
    s = policy.spec
    if s.input_dim != env.state_dim:
        raise ValueError(f"{path}: policy expects {s.input_dim}-D states, environment has {env.state_dim}")
    if env.discrete != policy.discrete or s.n_out != (env.n_actions if env.discrete else env.action_dim):
        raise ValueError(f"{path}: policy action head does not match the environment")


def _load_policies(paths: Sequence[str], env) -> List[Policy]:
    if not paths:
        raise ConfigError("--policies: at least one policy file is required")
    out = []
    for p in paths:
        policy, _ = artifacts.load_policy(p)
        _check_compatible(policy, env, p)
        out.append(policy)
    return out


def _eval_sets(cfg, env, policies):
    return [evaluate(env, pol, cfg.eval_episodes, _rng(cfg.seed, 2, i)) for i, pol in enumerate(policies)]


def _write_report(out: Path, report) -> None:
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=1) + "\n")
    print(report.format())


def _env_record(cfg) -> dict:
    return {"env": dataclasses.asdict(cfg.env)}


# --------------------------------------------------------------- commands


def run_collection(cfg: ExperimentConfig, out: Path, n_policies: int, diverse: bool = True):
    """Train a collection and write policies, metrics, stored and evaluation
    trajectories and the comparison report into ``out``."""
    env, spec = _env_and_spec(cfg)
    collection = dipg(env, n_policies, cfg.train, spec, cfg.kernel, diverse=diverse)
    policies = [e.policy for e in collection]
    evals = _eval_sets(cfg, env, policies)
    for i, (entry, ev) in enumerate(zip(collection, evals)):
        artifacts.save_policy(out / f"policy_{i}.json", spec, entry.params, _env_record(cfg))
        artifacts.write_jsonl(out / f"metrics_{i}.jsonl", entry.metrics)
        artifacts.write_trajectories(out / f"stored_{i}.csv", entry.trajectories)
        artifacts.write_trajectories(out / f"eval_{i}.csv", ev)
    report = compare(env, evals, cfg.kernel, cfg.similarity)
    _write_report(out, report)
    return collection, report


def cmd_train(cfg, args, out):
    run_collection(cfg, out, 1)


def cmd_dipg(cfg, args, out):
    run_collection(cfg, out, cfg.n_policies, diverse=not args.random_restarts)


def cmd_eval(cfg, args, out):
    env, _ = _env_and_spec(cfg)
    policies = _load_policies(args.policies, env)
    rows = []
    for i, ev in enumerate(_eval_sets(cfg, env, policies)):
        artifacts.write_trajectories(out / f"eval_{i}.csv", ev)
        r = np.array([t.total_reward() for t in ev])
        rows.append({"policy": args.policies[i], "mean_return": float(r.mean()), "std_return": float(r.std())})
        print(f"{args.policies[i]}: return {r.mean():.3f} +/- {r.std():.3f} over {len(r)} episodes")
    (out / "eval.json").write_text(json.dumps(rows, indent=1) + "\n")


def cmd_compare(cfg, args, out):
    env, _ = _env_and_spec(cfg)
    policies = _load_policies(args.policies, env)
    _write_report(out, compare(env, _eval_sets(cfg, env, policies), cfg.kernel, cfg.similarity))


def _dataset(cfg) -> BatchDataset:
    if cfg.batch.dataset is None:
        raise ConfigError("batch.dataset: a dataset path is required")
    return BatchDataset(artifacts.read_trajectories(cfg.batch.dataset), cfg.batch.gamma)


def cmd_batch(cfg, args, out):
    env, spec = _env_and_spec(cfg)
    b = cfg.batch
    if args.action == "generate":
        paths = args.policies or ([b.behavior_policy] if b.behavior_policy else [])
        if len(paths) != 1:
            raise ConfigError("batch generate needs exactly one behavior policy (--policies or batch.behavior_policy)")
        (policy,) = _load_policies(paths, env)
        data = generate_dataset(env, UniformMixture(policy, b.epsilon), b.episodes, _rng(cfg.seed, 4), b.gamma)
        artifacts.write_trajectories(out / "dataset.csv", data.trajectories)
        print(f"wrote {len(data)} trajectories, mean return {data.mean_return():.3f}")
    elif args.action == "train":
        data = _dataset(cfg)
        known = _load_policies(args.policies, env) if args.policies else []
        params, metrics = batch_train(data, known, b.train_config(), b.alpha, spec, _rng(cfg.seed, 5))
        artifacts.save_policy(out / "batch_policy.json", spec, params, _env_record(cfg))
        artifacts.write_jsonl(out / "batch_metrics.jsonl", metrics)
        policy = Policy(spec, params)
        est = cwpdis(policy, data)
        sim = np.array([t.total_reward() for t in evaluate(env, policy, cfg.eval_episodes, _rng(cfg.seed, 6))])
        summary = {"cwpdis": est.value, "simulated_mean_return": float(sim.mean()), "min_ess": float(est.ess.min())}
        (out / "batch_summary.json").write_text(json.dumps(summary, indent=1) + "\n")
        print(f"CWPDIS {est.value:.3f}  simulated {sim.mean():.3f}  min ESS {est.ess.min():.1f}")
    else:
        data = _dataset(cfg)
        rows = []
        for path, policy in zip(args.policies, _load_policies(args.policies, env)):
            est = cwpdis(policy, data)
            rows.append({"policy": Path(path).name, "cwpdis": est.value, "ess": est.ess.tolist(), "zero_weight_steps": est.zero_weight_steps})
            print(f"{path}: CWPDIS {est.value:.6f}  ESS min {est.ess.min():.1f} final {est.ess[-1]:.1f}")
        (out / "cwpdis.json").write_text(json.dumps(rows) + "\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment config")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--out", help="output directory (overrides config 'out')")
    common.add_argument("--policies", nargs="+", default=[], metavar="FILE", help="policy JSON files")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="dipg", description="Diversity-inducing policy gradient experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train one policy")
    p = sub.add_parser("dipg", parents=[common], help="train a diverse collection")
    p.add_argument("--random-restarts", action="store_true", help="train independently (no diversity term)")
    sub.add_parser("eval", parents=[common], help="roll out policies and report returns")
    sub.add_parser("compare", parents=[common], help="quality and similarity report")
    p = sub.add_parser("batch", parents=[common], help="off-policy batch tools")
    p.add_argument("action", choices=["generate", "train", "eval"])
    return parser


COMMANDS = {"train": cmd_train, "dipg": cmd_dipg, "eval": cmd_eval, "compare": cmd_compare, "batch": cmd_batch}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config) if args.config else parse_config("")
        if args.seed is not None:
            cfg.seed = args.seed
            cfg.train = dataclasses.replace(cfg.train, seed=args.seed)
        out = Path(args.out or cfg.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise RuntimeError(f"cannot create output directory {out}: {e.strerror}") from None
        COMMANDS[args.command](cfg, args, out)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (ValueError, OSError, RuntimeError, FloatingPointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
