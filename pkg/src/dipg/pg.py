"""Policy-gradient training with an optional MMD diversity bonus.

``train_diverse_policy`` trains one policy by ascending
``J_PG + alpha * D_MMD`` against the stored trajectories of already known
policies; ``dipg`` chains it to build a collection, and ``random_restarts``
is the baseline that trains the same number of policies independently.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .diversity import KernelConfig, diversity_gradient
from .env import rollout
from .policy import Policy, PolicySpec, init_params
from .trajectory import Trajectory

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    """Optimisation settings shared by every policy in a run.

    ``alphas`` holds one diversity weight per policy; when shorter than the
    number of policies its last value is repeated.
    """

    algo: str = "ppo"
    lr: float = 3e-4
    alphas: Tuple[float, ...] = (1.0,)
    gamma: Optional[float] = None
    steps_per_policy: int = 30_000
    rollouts_per_update: int = 8
    clip: float = 0.2
    epochs: int = 4
    minibatch_size: int = 64
    betas: Tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    n_stored: int = 16
    seed: int = 0
    advantage_baseline: str = "batch"
    diversity_units: str = "raw"
    diversity_baseline: bool = False

    def __post_init__(self):
        self.alphas = tuple(float(a) for a in self.alphas)
        self.betas = tuple(float(b) for b in self.betas)
        if self.algo not in ("reinforce", "ppo"):
            raise ValueError(f"unknown algo {self.algo!r}")
        if not self.lr > 0:
            raise ValueError(f"learning rate must be > 0, got {self.lr}")
        if not 0 < self.clip < 1:
            raise ValueError(f"clip epsilon must lie in (0, 1), got {self.clip}")
        if self.rollouts_per_update < 2:
            raise ValueError("rollouts_per_update must be >= 2")
        if self.steps_per_policy < 1 or self.epochs < 1 or self.minibatch_size < 1 or self.n_stored < 1:
            raise ValueError("budgets, epochs, minibatch size and n_stored must be >= 1")
        if not self.alphas or any(a < 0 for a in self.alphas):
            raise ValueError("alphas must be a non-empty list of non-negative weights")

    def alpha(self, n: int) -> float:
        return self.alphas[min(n, len(self.alphas) - 1)]


@dataclass
class PolicyEntry:
    spec: PolicySpec
    params: np.ndarray
    trajectories: List[Trajectory] = field(default_factory=list)
    metrics: List[dict] = field(default_factory=list)

    @property
    def policy(self) -> Policy:
        return Policy(self.spec, self.params)


PolicyCollection = List[PolicyEntry]


class Adam:
    """Adaptive-moment gradient ascent."""

    def __init__(self, n: int, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad**2
        m_hat = self.m / (1 - self.b1**self.t)
        v_hat = self.v / (1 - self.b2**self.t)
        return params + self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def returns_to_go(rewards, gamma: float) -> np.ndarray:
    """g_t = sum_{t' >= t} gamma^(t'-t) r_t'."""
    if isinstance(rewards, Trajectory):
        rewards = rewards.rewards
    rewards = np.asarray(rewards, dtype=float)
    if rewards.size == 0:
        raise ValueError("empty reward sequence")
    out = np.empty_like(rewards)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def _stack(rollouts: Sequence[Trajectory]):
    states = np.concatenate([t.states for t in rollouts])
    actions = np.concatenate([t.actions for t in rollouts])
    return states, actions


def pg_gradient(policy: Policy, rollouts: Sequence[Trajectory], gamma: float, baseline="batch_mean") -> np.ndarray:
    """REINFORCE estimate: mean over rollouts of sum_t grad log pi(a_t|s_t) (g_t - b).

    ``baseline`` is ``"batch_mean"`` (mean return-to-go over every step of the
    batch), a number, or ``None`` for no baseline.
    """
    if len(rollouts) == 0:
        raise ValueError("empty rollout set")
    g = np.concatenate([returns_to_go(t.rewards, gamma) for t in rollouts])
    if baseline is None:
        b = 0.0
    elif isinstance(baseline, str):
        if baseline != "batch_mean":
            raise ValueError(f"unknown baseline {baseline!r}")
        b = g.mean()
    else:
        b = float(baseline)
    states, actions = _stack(rollouts)
    return policy.grad_log_prob(states, actions, weights=(g - b) / len(rollouts))


def _centered_returns(rollouts: Sequence[Trajectory], gamma: float, baseline: str) -> np.ndarray:
    rtg = [returns_to_go(t.rewards, gamma) for t in rollouts]
    if baseline == "time":
        T = max(len(r) for r in rtg)
        tot = np.zeros(T)
        cnt = np.zeros(T)
        for r in rtg:
            tot[: len(r)] += r
            cnt[: len(r)] += 1
        rtg = [r - tot[: len(r)] / cnt[: len(r)] for r in rtg]
    elif baseline != "batch":
        raise ValueError(f"unknown advantage baseline {baseline!r}")
    g = np.concatenate(rtg)
    return g - g.mean()


def normalized_advantages(rollouts: Sequence[Trajectory], gamma: float, baseline: str = "batch") -> np.ndarray:
    """Returns-to-go of every step, shifted to mean 0 and scaled to std 1.

    ``baseline="time"`` first subtracts, at each time index, the batch mean of
    the returns-to-go at that index. Scaling is skipped when the standard
    deviation is below 1e-8.
    """
    g = _centered_returns(rollouts, gamma, baseline)
    std = g.std()
    return g / std if std >= 1e-8 else g


def ppo_surrogate(policy: Policy, states, actions, old_logp, adv, clip: float) -> float:
    """mean_t min(r_t A_t, clip(r_t, 1-eps, 1+eps) A_t)."""
    ratio = np.exp(policy.log_prob(states, actions) - old_logp)
    return float(np.mean(np.minimum(ratio * adv, np.clip(ratio, 1 - clip, 1 + clip) * adv)))


def ppo_surrogate_grad(policy: Policy, states, actions, old_logp, adv, clip: float) -> np.ndarray:
    ratio = np.exp(policy.log_prob(states, actions) - old_logp)
    # the clipped branch is the minimum exactly when it is flat in theta
    clipped = ((adv > 0) & (ratio > 1 + clip)) | ((adv < 0) & (ratio < 1 - clip))
    coef = np.where(clipped, 0.0, ratio * adv) / len(adv)
    return policy.grad_log_prob(states, actions, weights=coef)


def ppo_update(
    policy: Policy,
    rollouts: Sequence[Trajectory],
    cfg: TrainConfig,
    gamma: float,
    rng: np.random.Generator,
    optimizer: Adam,
    extra_grad: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, float]:
    """Run ``cfg.epochs`` passes of minibatch ascent on the clipped surrogate.

    ``extra_grad`` (the weighted diversity gradient, computed once at the
    pre-update parameters) is added to every minibatch gradient. Returns the
    new parameters and the norm of the last applied gradient.
    """
    states, actions = _stack(rollouts)
    centered = _centered_returns(rollouts, gamma, cfg.advantage_baseline)
    scale = centered.std()
    adv = centered / scale if scale >= 1e-8 else centered
    if extra_grad is not None and cfg.diversity_units == "surrogate":
        # express alpha * D in the surrogate's units: per step, per return std
        extra_grad = extra_grad * len(rollouts) / (len(adv) * max(scale, 1e-8))
    elif extra_grad is not None and cfg.diversity_units == "per_step":
        extra_grad = extra_grad * len(rollouts) / len(adv)
    old_logp = policy.log_prob(states, actions)
    params = policy.params
    n = len(adv)
    grad_norm = 0.0
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            idx = order[start : start + cfg.minibatch_size]
            cur = policy.with_params(params)
            grad = ppo_surrogate_grad(cur, states[idx], actions[idx], old_logp[idx], adv[idx], cfg.clip)
            if extra_grad is not None:
                grad = grad + extra_grad
            grad_norm = float(np.linalg.norm(grad))
            params = optimizer.step(params, grad)
    return params, grad_norm


def collect(env, policy: Policy, rng: np.random.Generator, n: int) -> List[Trajectory]:
    return [rollout(env, policy, rng) for _ in range(n)]


def _streams(seed, n: int):
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in ss.spawn(n)]


def stored_sets(known: Sequence[PolicyEntry], env, n_stored: int, rng: np.random.Generator):
    """Trajectory sets for the known policies, sampling any that are missing."""
    out = []
    for entry in known:
        if not entry.trajectories:
            entry.trajectories = collect(env, entry.policy, rng, n_stored)
        out.append(entry.trajectories)
    return out


def train_diverse_policy(
    known: Sequence[PolicyEntry],
    env,
    spec: PolicySpec,
    cfg: TrainConfig,
    alpha: float,
    kernel: KernelConfig = KernelConfig(),
    seed=0,
) -> Tuple[np.ndarray, List[dict]]:
    """Train a fresh policy on ``J_PG + alpha * D_MMD`` against ``known``.

    With no known policies, or ``alpha == 0``, the diversity term is absent
    and the run is plain policy-gradient training.
    """
    init_rng, roll_rng, opt_rng, q_rng = _streams(seed, 4)
    gamma = env.gamma if cfg.gamma is None else cfg.gamma
    params = init_params(spec, init_rng)
    Q = stored_sets(known, env, cfg.n_stored, q_rng) if alpha > 0 else []
    opt = Adam(spec.n_params, cfg.lr, cfg.betas, cfg.adam_eps)
    metrics = []
    steps = 0
    update = 0
    while steps < cfg.steps_per_policy:
        policy = Policy(spec, params)
        batch = collect(env, policy, roll_rng, cfg.rollouts_per_update)
        steps += sum(len(t) for t in batch)
        d_val, argmin, div = None, None, None
        if Q:
            g_div, d_val, argmin = diversity_gradient(policy, batch, Q, kernel, cfg.diversity_baseline)
            div = alpha * g_div
        if cfg.algo == "ppo":
            params, grad_norm = ppo_update(policy, batch, cfg, gamma, opt_rng, opt, div)
        else:
            grad = pg_gradient(policy, batch, gamma)
            if div is not None:
                grad = grad + div
            grad_norm = float(np.linalg.norm(grad))
            params = opt.step(params, grad)
        if not np.all(np.isfinite(params)):
            raise FloatingPointError(f"non-finite parameters after update {update}")
        metrics.append(
            {
                "update": update,
                "env_steps": steps,
                "mean_return": float(np.mean([t.total_reward() for t in batch])),
                "d_mmd": d_val,
                "argmin_q": argmin,
                "grad_norm": grad_norm,
            }
        )
        update += 1
    return params, metrics


def _policy_seed(seed: int, n: int):
    return np.random.SeedSequence([int(seed), n])


def dipg(
    env,
    n_policies: int,
    cfg: TrainConfig,
    spec: PolicySpec,
    kernel: KernelConfig = KernelConfig(),
    diverse: bool = True,
) -> PolicyCollection:
    """Build a collection of ``n_policies`` policies, each trained against the
    previous ones. The first policy has no diversity term.

    ``diverse=False`` gives the random-restart baseline: identical budgets and
    seeds, no diversity term.
    """
    if n_policies < 1:
        raise ValueError("number of policies must be >= 1")
    collection: PolicyCollection = []
    for n in range(n_policies):
        alpha = cfg.alpha(n) if diverse else 0.0
        known = collection if diverse else []
        params, metrics = train_diverse_policy(known, env, spec, cfg, alpha, kernel, _policy_seed(cfg.seed, n))
        store_rng = np.random.default_rng(_policy_seed(cfg.seed, 1000 + n))
        entry = PolicyEntry(spec, params, metrics=metrics)
        entry.trajectories = collect(env, entry.policy, store_rng, cfg.n_stored)
        collection.append(entry)
        logger.info(
            "policy %d/%d trained: final mean return %.3f", n + 1, n_policies, metrics[-1]["mean_return"]
        )
    return collection


def random_restarts(env, n_policies: int, cfg: TrainConfig, spec: PolicySpec, kernel: KernelConfig = KernelConfig()) -> PolicyCollection:
    return dipg(env, n_policies, cfg, spec, kernel, diverse=False)
