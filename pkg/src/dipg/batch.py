"""Off-policy learning from a fixed batch of trajectories.

A policy is scored on the batch through its vector of trajectory
likelihoods. Training ascends the sum of those likelihoods minus a penalty
on the kernel similarity between the policy's likelihood vector and that of
the most similar known policy. Policies are evaluated off-policy with
consistent weighted per-decision importance sampling (CWPDIS).
"""
from __future__ import annotations

import logging
from functools import cached_property
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .env import rollout
from .pg import Adam
from .policy import Policy, PolicySpec, init_params
from .trajectory import Trajectory

logger = logging.getLogger(__name__)

MODES = ("raw_product", "geometric_mean")
LIKELIHOOD_FLOOR = 1e-300
_LOG_FLOOR = float(np.log(LIKELIHOOD_FLOOR))


@dataclass
class BatchDataset:
    """Trajectories from a behavior policy, each step carrying the
    probability the behavior policy gave to the recorded action."""

    trajectories: List[Trajectory]
    gamma: float = 1.0

    def __post_init__(self):
        if len(self.trajectories) < 1:
            raise ValueError("batch dataset needs at least one trajectory")
        first = self.trajectories[0]
        for i, t in enumerate(self.trajectories):
            if t.behavior_probs is None:
                raise ValueError(f"trajectory {i} has no behavior probabilities")
            if t.behavior_probs.shape != (len(t),):
                raise ValueError(f"trajectory {i}: one behavior probability per step expected")
            if not np.all((t.behavior_probs > 0) & (t.behavior_probs <= 1)):
                raise ValueError(f"trajectory {i}: behavior probabilities must lie in (0, 1]")
            if t.states.shape[1] != first.states.shape[1] or t.actions.shape[1:] != first.actions.shape[1:]:
                raise ValueError(f"trajectory {i} has different state/action dimensions")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def state_dim(self) -> int:
        return self.trajectories[0].states.shape[1]

    @cached_property
    def lengths(self) -> np.ndarray:
        return np.array([len(t) for t in self.trajectories])

    @cached_property
    def stacked(self) -> Tuple[np.ndarray, np.ndarray]:
        """States and actions of every step, trajectories end to end."""
        return _stack(self.trajectories)

    def mean_return(self, gamma: Optional[float] = None) -> float:
        g = self.gamma if gamma is None else gamma
        return float(np.mean([t.discounted_return(g) for t in self.trajectories]))


@dataclass
class LikelihoodVector:
    """Per-trajectory likelihoods; ``floored`` marks entries clamped to
    ``LIKELIHOOD_FLOOR`` (zero-probability actions or underflow)."""

    values: np.ndarray
    mode: str
    floored: np.ndarray

    def __len__(self) -> int:
        return len(self.values)


@dataclass
class OpeEstimate:
    value: float
    ess: np.ndarray
    zero_weight_steps: List[int] = field(default_factory=list)


@dataclass(frozen=True)
class BatchConfig:
    """Settings for ``batch_train``.

    ``bandwidth`` and ``normalize`` define the Gaussian kernel between
    likelihood vectors (squared distance divided by the batch size when
    ``normalize``).
    """

    mode: str = "geometric_mean"
    bandwidth: float = 1.0
    normalize: bool = True
    lr: float = 1e-2
    iterations: int = 300
    betas: Tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown likelihood mode {self.mode!r}; expected one of {MODES}")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be > 0")
        if not self.lr > 0:
            raise ValueError("learning rate must be > 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


def _check_mode(mode: str):
    if mode not in MODES:
        raise ValueError(f"unknown likelihood mode {mode!r}; expected one of {MODES}")


def _stack(trajs: Sequence[Trajectory]):
    return np.concatenate([t.states for t in trajs]), np.concatenate([t.actions for t in trajs])


def _arrays(data):
    """(states, actions, lengths) for a dataset or a list of trajectories."""
    if isinstance(data, BatchDataset):
        return (*data.stacked, data.lengths)
    trajs = list(data)
    return (*_stack(trajs), np.array([len(t) for t in trajs]))


def _log_likelihoods(policy: Policy, data, mode: str) -> np.ndarray:
    """log p(tau_i) per trajectory, before flooring."""
    states, actions, lengths = _arrays(data)
    with np.errstate(divide="ignore"):
        lp = np.atleast_1d(policy.log_prob(states, actions))
    bounds = np.cumsum(np.concatenate([[0], lengths]))
    total = np.add.reduceat(lp, bounds[:-1])
    return total / lengths if mode == "geometric_mean" else total


def likelihood_vector(policy: Policy, data, mode: str = "geometric_mean") -> LikelihoodVector:
    """Likelihood of every trajectory in ``data`` under ``policy``.

    ``raw_product`` is the product of action probabilities, ``geometric_mean``
    its ``1/T``-th power. Dynamics factors are left out. Entries below
    ``LIKELIHOOD_FLOOR`` are clamped to it and flagged.
    """
    _check_mode(mode)
    logl = _log_likelihoods(policy, data, mode)
    floored = ~(logl > _LOG_FLOOR)
    if floored.any():
        logger.warning("%d trajectory likelihoods floored at %g", int(floored.sum()), LIKELIHOOD_FLOOR)
    values = np.where(floored, LIKELIHOOD_FLOOR, np.exp(np.where(floored, 0.0, logl)))
    return LikelihoodVector(values, mode, floored)


def traj_likelihood(policy: Policy, traj: Trajectory, mode: str = "geometric_mean") -> float:
    return float(likelihood_vector(policy, [traj], mode).values[0])


def _likelihood_vjp(policy: Policy, data, lik: LikelihoodVector, coef: np.ndarray) -> np.ndarray:
    """sum_i coef_i * grad p(tau_i), in one weighted backward pass.

    grad p_i = p_i * score_i, scaled by 1/T_i for geometric means; floored
    entries are constant and contribute nothing.
    """
    states, actions, lengths = _arrays(data)
    w = np.where(lik.floored, 0.0, coef * lik.values)
    if lik.mode == "geometric_mean":
        w = w / lengths
    return policy.grad_log_prob(states, actions, weights=np.repeat(w, lengths))


def surrogate(policy: Policy, data, mode: str = "geometric_mean") -> float:
    """Sum of the trajectory likelihoods of the batch."""
    return float(likelihood_vector(policy, data, mode).values.sum())


def surrogate_grad(policy: Policy, data, mode: str = "geometric_mean") -> np.ndarray:
    lik = likelihood_vector(policy, data, mode)
    return _likelihood_vjp(policy, data, lik, np.ones(len(lik)))


def likelihood_kernel(u, v, bandwidth: float = 1.0, normalize: bool = True) -> float:
    """Gaussian kernel between two likelihood vectors."""
    u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ValueError("likelihood vectors differ in length")
    d = u.size if normalize else 1.0
    return float(np.exp(-np.sum((u - v) ** 2) / (2.0 * bandwidth**2 * d)))


def _known_vectors(known, data, mode: str) -> List[np.ndarray]:
    out = []
    for q in known:
        if isinstance(q, Policy):
            out.append(likelihood_vector(q, data, mode).values)
        else:
            out.append(np.asarray(getattr(q, "values", q), dtype=float))
    return out


def d_batch(policy: Policy, known, data, cfg: BatchConfig = BatchConfig()) -> Tuple[float, int]:
    """Similarity to the nearest known policy and its index.

    ``known`` holds policies or precomputed likelihood vectors. Ties go to
    the lowest index.
    """
    if len(known) == 0:
        raise ValueError("empty known set: no batch diversity term")
    u = likelihood_vector(policy, data, cfg.mode).values
    sims = [likelihood_kernel(u, v, cfg.bandwidth, cfg.normalize) for v in _known_vectors(known, data, cfg.mode)]
    i = int(np.argmax(sims))
    return sims[i], i


def batch_objective(policy: Policy, data, known_vectors: Sequence[np.ndarray], cfg: BatchConfig, alpha: float):
    """Value and gradient of ``surrogate - alpha * s*`` plus ``(s*, argmax)``.

    ``s*`` and its index are ``None`` when there are no known vectors.
    """
    if not isinstance(data, BatchDataset):
        data = list(data)
    lik = likelihood_vector(policy, data, cfg.mode)
    u = lik.values
    coef = np.ones(len(u))
    value = float(u.sum())
    s_star, idx = None, None
    if known_vectors:
        sims = [likelihood_kernel(u, v, cfg.bandwidth, cfg.normalize) for v in known_vectors]
        idx = int(np.argmax(sims))
        s_star = sims[idx]
        d = len(u) if cfg.normalize else 1.0
        # d s*/d u = -s* (u - v) / (h^2 d)
        coef = coef + alpha * s_star * (u - known_vectors[idx]) / (cfg.bandwidth**2 * d)
        value -= alpha * s_star
    return value, _likelihood_vjp(policy, data, lik, coef), s_star, idx


def batch_train(
    data: BatchDataset,
    known: Sequence = (),
    cfg: BatchConfig = BatchConfig(),
    alpha: float = 1.0,
    spec: Optional[PolicySpec] = None,
    seed=0,
    n_actions: int = 2,
) -> Tuple[np.ndarray, List[dict]]:
    """Adam ascent on ``surrogate - alpha * s*`` from fresh parameters.

    ``spec`` defaults to a one-hidden-layer categorical policy sized from the
    dataset. Returns the final parameters and one metric record per
    iteration.
    """
    if spec is None:
        spec = PolicySpec(data.state_dim, "categorical", n_actions)
    params = init_params(spec, seed)
    known_vectors = _known_vectors(known, data, cfg.mode) if alpha > 0 else []
    opt = Adam(spec.n_params, cfg.lr, cfg.betas, cfg.adam_eps)
    metrics = []
    for it in range(cfg.iterations):
        value, grad, s_star, idx = batch_objective(Policy(spec, params), data, known_vectors, cfg, alpha)
        params = opt.step(params, grad)
        if not np.all(np.isfinite(params)):
            raise FloatingPointError(f"non-finite parameters after iteration {it}")
        metrics.append(
            {"iteration": it, "objective": value, "similarity": s_star, "argmax_known": idx, "grad_norm": float(np.linalg.norm(grad))}
        )
    return params, metrics


def cwpdis(policy, data: BatchDataset, gamma: Optional[float] = None) -> OpeEstimate:
    """Consistent weighted per-decision importance sampling estimate.

    ``V = sum_t gamma^t sum_i w_it r_it / sum_i w_it`` where ``w_it`` is the
    product of ``pi(a|s) / b(a|s)`` over the first ``t + 1`` steps of
    trajectory ``i``. A trajectory that has ended keeps its final weight and
    contributes reward 0, so with unit ratios the estimate is the batch mean
    discounted return. Weights are handled in log space and rescaled per
    timestep. Timesteps whose weights are all zero contribute 0 and are
    listed in ``zero_weight_steps``; their effective sample size is 0.

    ``policy`` needs a ``log_prob(states, actions)`` method.
    """
    gamma = data.gamma if gamma is None else gamma
    trajs = data.trajectories
    lengths = data.lengths
    I, T = len(trajs), int(lengths.max())
    logw = np.full((I, T), -np.inf)
    rewards = np.zeros((I, T))
    for i, t in enumerate(trajs):
        with np.errstate(divide="ignore"):
            lr = np.atleast_1d(policy.log_prob(t.states, t.actions)) - np.log(t.behavior_probs)
        c = np.cumsum(lr)
        logw[i, : len(t)] = c
        logw[i, len(t) :] = c[-1]
        rewards[i, : len(t)] = t.rewards
    top = logw.max(axis=0)
    zero = ~np.isfinite(top)
    w = np.exp(logw - np.where(zero, 0.0, top))
    w[:, zero] = 0.0
    num = (w * rewards).sum(axis=0)
    den = w.sum(axis=0)
    per_step = np.divide(num, den, out=np.zeros(T), where=~zero)
    ess = np.divide(den**2, (w**2).sum(axis=0), out=np.zeros(T), where=~zero)
    value = float(np.sum(gamma ** np.arange(T) * per_step))
    steps = [int(t) for t in np.flatnonzero(zero)]
    if steps:
        logger.warning("all importance weights are zero at %d timesteps", len(steps))
    return OpeEstimate(value, ess, steps)


class UniformMixture:
    """Policy that follows ``policy`` with probability ``1 - epsilon`` and
    otherwise picks an action uniformly at random."""

    def __init__(self, policy: Policy, epsilon: float = 0.1):
        if not policy.discrete:
            raise ValueError("uniform mixing needs a categorical policy")
        if not 0.0 <= epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        self.policy = policy
        self.epsilon = epsilon
        self.n_actions = policy.spec.n_out

    def probs(self, states) -> np.ndarray:
        return (1.0 - self.epsilon) * self.policy.probs(states) + self.epsilon / self.n_actions

    def act(self, state, rng: np.random.Generator):
        p = self.probs(state)[0]
        cdf = np.cumsum(p)
        a = min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), self.n_actions - 1)
        return a, float(np.log(p[a]))

    def log_prob(self, states, actions):
        states = np.asarray(states, dtype=float)
        single = states.ndim == 1
        p = self.probs(np.atleast_2d(states))
        a = np.asarray(actions, dtype=np.int64).reshape(len(p))
        lp = np.log(p[np.arange(len(p)), a])
        return float(lp[0]) if single else lp


def generate_dataset(env, behavior, n_episodes: int, rng: np.random.Generator, gamma: float = 1.0) -> BatchDataset:
    """Roll out ``behavior`` and record the probability of every action taken."""
    trajs = []
    for _ in range(n_episodes):
        t = rollout(env, behavior, rng)
        t.behavior_probs = behavior.probs(t.states)[np.arange(len(t)), t.actions]
        trajs.append(t)
    return BatchDataset(trajs, gamma)
