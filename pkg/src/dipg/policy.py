"""Small tanh MLP policies with categorical or diagonal-Gaussian heads.

Parameters live in one flat vector. Layer ``l`` contributes its weight
matrix (``fan_in x fan_out``, row-major) followed by its bias; a Gaussian head
appends one state-independent log standard deviation per action dimension.
Gradients of action log-probabilities are computed by an explicit backward
pass through that fixed architecture.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .trajectory import Trajectory

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class PolicySpec:
    """Architecture of a policy network.

    Attributes:
        input_dim: state dimension.
        head: ``"categorical"`` or ``"gaussian"``.
        n_out: number of discrete actions (categorical) or action dimension
            (gaussian).
        hidden_sizes: widths of the tanh hidden layers; empty gives a linear
            (tabular on one-hot inputs) policy.
        action_bounds: informational per-dimension bounds for gaussian heads;
            clipping is done by the environment.
        init_log_std: initial log standard deviation of gaussian heads.
        input_scale: constant multiplier applied to states before the first
            layer.
        squash_mean: gaussian means become ``high * tanh(z)`` so they stay
            inside the symmetric action bounds.
    """

    input_dim: int
    head: str = "categorical"
    n_out: int = 2
    hidden_sizes: Tuple[int, ...] = (32,)
    action_bounds: Optional[Tuple[float, float]] = None
    init_log_std: float = math.log(0.5)
    input_scale: float = 1.0
    squash_mean: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be >= 1, got {self.input_dim}")
        if any(h < 1 for h in self.hidden_sizes):
            raise ValueError(f"hidden sizes must be >= 1, got {self.hidden_sizes}")
        if self.head not in ("categorical", "gaussian"):
            raise ValueError(f"unknown head {self.head!r}")
        if self.head == "categorical" and self.n_out < 2:
            raise ValueError("categorical head needs at least 2 actions")
        if self.head == "gaussian" and self.n_out < 1:
            raise ValueError("gaussian head needs action_dim >= 1")
        if self.squash_mean and (self.head != "gaussian" or self.action_bounds is None):
            raise ValueError("squash_mean needs a gaussian head with action_bounds")

    @property
    def layer_sizes(self) -> List[int]:
        return [self.input_dim, *self.hidden_sizes, self.n_out]

    @property
    def n_params(self) -> int:
        sizes = self.layer_sizes
        n = sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
        return n + (self.n_out if self.head == "gaussian" else 0)

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "head": self.head,
            "n_out": self.n_out,
            "hidden_sizes": list(self.hidden_sizes),
            "action_bounds": None if self.action_bounds is None else list(self.action_bounds),
            "init_log_std": self.init_log_std,
            "input_scale": self.input_scale,
            "squash_mean": self.squash_mean,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolicySpec":
        d = dict(d)
        d["hidden_sizes"] = tuple(d.get("hidden_sizes", (32,)))
        if d.get("action_bounds") is not None:
            d["action_bounds"] = tuple(d["action_bounds"])
        return cls(**d)


def spec_for_env(
    env, hidden_sizes: Sequence[int] = (32,), input_scale: float = 1.0, squash_mean: bool = False
) -> PolicySpec:
    if env.discrete:
        return PolicySpec(env.state_dim, "categorical", env.n_actions, tuple(hidden_sizes), input_scale=input_scale)
    bound = float(env.action_high[0])
    return PolicySpec(
        env.state_dim,
        "gaussian",
        env.action_dim,
        tuple(hidden_sizes),
        action_bounds=(-bound, bound),
        input_scale=input_scale,
        squash_mean=squash_mean,
    )


def init_params(spec: PolicySpec, seed) -> np.ndarray:
    """Gaussian weights with std 1/sqrt(fan_in), zero biases, log-std log(0.5)."""
    rng = np.random.default_rng(seed)
    chunks = []
    sizes = spec.layer_sizes
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        chunks.append(rng.standard_normal(fan_in * fan_out) / math.sqrt(fan_in))
        chunks.append(np.zeros(fan_out))
    if spec.head == "gaussian":
        chunks.append(np.full(spec.n_out, spec.init_log_std))
    return np.concatenate(chunks)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=-1, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=-1, keepdims=True))


class Policy:
    """A policy network bound to a parameter vector.

    All methods are pure functions of ``params`` and their inputs; state
    arguments may be a single vector or a ``(T, input_dim)`` batch.
    """

    def __init__(self, spec: PolicySpec, params: np.ndarray):
        params = np.asarray(params, dtype=float)
        if params.shape != (spec.n_params,):
            raise ValueError(f"expected {spec.n_params} parameters, got shape {params.shape}")
        self.spec = spec
        self.params = params
        self.layers = []
        sizes = spec.layer_sizes
        i = 0
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            W = params[i : i + fan_in * fan_out].reshape(fan_in, fan_out)
            i += fan_in * fan_out
            b = params[i : i + fan_out]
            i += fan_out
            self.layers.append((W, b))
        self.log_std = params[i:] if spec.head == "gaussian" else None

    @classmethod
    def initial(cls, spec: PolicySpec, seed) -> "Policy":
        return cls(spec, init_params(spec, seed))

    def with_params(self, params: np.ndarray) -> "Policy":
        return Policy(self.spec, params)

    @property
    def discrete(self) -> bool:
        return self.spec.head == "categorical"

    def _forward(self, states: np.ndarray):
        if self.spec.input_scale != 1.0:
            states = states * self.spec.input_scale
        acts = [states]
        h = states
        n = len(self.layers)
        for k, (W, b) in enumerate(self.layers):
            z = h @ W + b
            h = np.tanh(z) if k < n - 1 else z
            acts.append(h)
        if self.spec.squash_mean:
            acts[-1] = self.spec.action_bounds[1] * np.tanh(acts[-1])
        return acts

    def output(self, states) -> np.ndarray:
        """Logits (categorical) or action means (gaussian)."""
        s = np.atleast_2d(np.asarray(states, dtype=float))
        return self._forward(s)[-1]

    def probs(self, states) -> np.ndarray:
        return np.exp(_log_softmax(self.output(states)))

    def act(self, state, rng: np.random.Generator):
        out = self.output(state)[0]
        if not np.all(np.isfinite(out)):
            raise FloatingPointError("non-finite policy network output")
        if self.discrete:
            logp = _log_softmax(out)
            cdf = np.cumsum(np.exp(logp))
            a = min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), len(out) - 1)
            return a, float(logp[a])
        std = np.exp(self.log_std)
        eps = rng.standard_normal(len(out))
        a = out + std * eps
        logp = float(np.sum(-0.5 * eps**2 - self.log_std) - 0.5 * len(out) * LOG_2PI)
        return a, logp

    def _logp_from_output(self, out, actions):
        if self.discrete:
            lsm = _log_softmax(out)
            return lsm[np.arange(len(out)), actions]
        std = np.exp(self.log_std)
        u = (actions - out) / std
        return np.sum(-0.5 * u**2 - self.log_std, axis=-1) - 0.5 * out.shape[1] * LOG_2PI

    def log_prob(self, states, actions):
        """log pi(a|s); scalar for a single state, ``(T,)`` for a batch."""
        states = np.asarray(states, dtype=float)
        single = states.ndim == 1
        s = np.atleast_2d(states)
        a = self._as_actions(actions, len(s))
        lp = self._logp_from_output(self._forward(s)[-1], a)
        return float(lp[0]) if single else lp

    def _as_actions(self, actions, n):
        if self.discrete:
            return np.asarray(actions, dtype=np.int64).reshape(n)
        return np.asarray(actions, dtype=float).reshape(n, self.spec.n_out)

    def _backward(self, states, actions, weights):
        """Per-layer deltas of sum_t w_t log pi(a_t|s_t)."""
        acts = self._forward(states)
        out = acts[-1]
        if self.discrete:
            p = np.exp(_log_softmax(out))
            d_out = -p
            d_out[np.arange(len(out)), actions] += 1.0
            d_logstd = None
        else:
            var = np.exp(2.0 * self.log_std)
            diff = actions - out
            d_out = diff / var
            d_logstd = diff**2 / var - 1.0
            if self.spec.squash_mean:
                hi = self.spec.action_bounds[1]
                d_out = d_out * (hi - out**2 / hi)
        if weights is not None:
            d_out = d_out * weights[:, None]
            if d_logstd is not None:
                d_logstd = d_logstd * weights[:, None]
        deltas = [None] * len(self.layers)
        delta = d_out
        for k in range(len(self.layers) - 1, -1, -1):
            deltas[k] = delta
            if k > 0:
                W = self.layers[k][0]
                delta = (delta @ W.T) * (1.0 - acts[k] ** 2)
        return acts, deltas, d_logstd

    def grad_log_prob(self, states, actions, weights=None) -> np.ndarray:
        """Gradient of log pi(a|s) with respect to the flat parameters.

        For a single state returns a vector of length ``n_params``. For a batch
        returns the ``(T, n_params)`` per-step gradients, or, when ``weights``
        is given, the weighted sum ``sum_t w_t * grad log pi(a_t|s_t)``.
        """
        states = np.asarray(states, dtype=float)
        single = states.ndim == 1
        s = np.atleast_2d(states)
        a = self._as_actions(actions, len(s))
        w = None if weights is None else np.asarray(weights, dtype=float).reshape(len(s))
        acts, deltas, d_logstd = self._backward(s, a, w)
        if w is not None:
            parts = []
            for k, delta in enumerate(deltas):
                parts.append((acts[k].T @ delta).ravel())
                parts.append(delta.sum(axis=0))
            if d_logstd is not None:
                parts.append(d_logstd.sum(axis=0))
            return np.concatenate(parts)
        T = len(s)
        parts = []
        for k, delta in enumerate(deltas):
            parts.append(np.einsum("ti,tj->tij", acts[k], delta).reshape(T, -1))
            parts.append(delta)
        if d_logstd is not None:
            parts.append(d_logstd)
        g = np.concatenate(parts, axis=1)
        return g[0] if single else g

    def traj_log_prob(self, traj: Trajectory) -> float:
        return float(np.sum(self.log_prob(traj.states, traj.actions)))

    def traj_score(self, traj: Trajectory) -> np.ndarray:
        """Gradient of log p(traj) = sum_t grad log pi(a_t|s_t); no dynamics terms."""
        g = self.grad_log_prob(traj.states, traj.actions)
        return g if g.ndim == 1 else g.sum(axis=0)

    def traj_scores(self, trajs: Sequence[Trajectory]) -> np.ndarray:
        """``(len(trajs), n_params)`` matrix of trajectory scores in one pass."""
        if not trajs:
            return np.zeros((0, self.spec.n_params))
        states = np.concatenate([t.states for t in trajs])
        actions = np.concatenate([t.actions for t in trajs])
        per_step = self.grad_log_prob(states, actions)
        if per_step.ndim == 1:
            per_step = per_step[None, :]
        bounds = np.cumsum([0] + [len(t) for t in trajs])
        return np.add.reduceat(per_step, bounds[:-1], axis=0)
