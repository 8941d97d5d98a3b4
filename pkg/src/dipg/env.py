"""Episodic environments: 2-D navigation tasks and cartpole.

Environments hold no episode state. ``reset`` and ``step`` are pure functions
of their arguments plus an explicit ``numpy.random.Generator``, so many
rollouts can run side by side with independent streams.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Optional, Tuple

import numpy as np

from .trajectory import Trajectory

KINDS = ("multi_goal", "asymmetric_goals", "obstacle", "cartpole")

_NAV_DEFAULTS = {
    "multi_goal": dict(
        goals=((5.0, 0.0), (-5.0, 0.0), (0.0, 5.0), (0.0, -5.0)),
        start=(0.0, 0.0),
        horizon=50,
        barrier=None,
    ),
    "asymmetric_goals": dict(
        goals=((2.0, 0.0), (-6.0, 0.0)),
        start=(0.0, 0.0),
        horizon=60,
        barrier=None,
    ),
    "obstacle": dict(
        goals=((0.0, 4.0),),
        start=(0.0, -4.0),
        horizon=80,
        barrier=(-2.0, 2.0, -0.5, 0.5),
    ),
}


@dataclass
class EnvSpec:
    """Environment description. Geometry fields left as ``None`` take the
    per-kind defaults listed in ``_NAV_DEFAULTS``.

    ``barrier`` is ``(x_min, x_max, y_min, y_max)``.
    """

    kind: str = "multi_goal"
    horizon: Optional[int] = None
    gamma: float = 0.99
    goals: Optional[Tuple[Tuple[float, float], ...]] = None
    goal_radius: float = 0.5
    start: Optional[Tuple[float, float]] = None
    start_noise: float = 0.1
    transition_noise: float = 0.01
    action_bound: float = 0.5
    barrier: Optional[Tuple[float, float, float, float]] = None
    barrier_penalty: float = 1.0
    goal_bonus: float = 10.0
    distance_scale: float = 0.1
    # cartpole
    cart_mass: float = 1.0
    pole_mass: float = 0.1
    half_length: float = 0.5
    gravity: float = 9.8
    force_mag: float = 10.0
    dt: float = 0.02
    x_threshold: float = 2.4
    angle_threshold_deg: float = 12.0

    def resolved(self) -> "EnvSpec":
        """Copy with kind-specific defaults filled in, validated."""
        if self.kind not in KINDS:
            raise ValueError(f"unknown environment kind {self.kind!r}; expected one of {KINDS}")
        out = EnvSpec(**{f.name: getattr(self, f.name) for f in fields(self)})
        if self.kind == "cartpole":
            if out.horizon is None:
                out.horizon = 200
        else:
            d = _NAV_DEFAULTS[self.kind]
            if out.goals is None:
                out.goals = d["goals"]
            if out.start is None:
                out.start = d["start"]
            if out.horizon is None:
                out.horizon = d["horizon"]
            if out.barrier is None and self.kind == "obstacle":
                out.barrier = d["barrier"]
            out.goals = tuple(tuple(float(c) for c in g) for g in out.goals)
            out.start = tuple(float(c) for c in out.start)
            if out.barrier is not None:
                out.barrier = tuple(float(c) for c in out.barrier)
        out.validate()
        return out

    def validate(self) -> None:
        if self.horizon is not None and int(self.horizon) < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.goal_radius <= 0:
            raise ValueError(f"goal_radius must be > 0, got {self.goal_radius}")
        if self.start_noise < 0 or self.transition_noise < 0:
            raise ValueError("noise standard deviations must be >= 0")
        if self.action_bound <= 0:
            raise ValueError("action_bound must be > 0")
        if self.barrier is not None:
            x0, x1, y0, y1 = self.barrier
            if not (x0 < x1 and y0 < y1):
                raise ValueError(f"barrier rectangle is empty: {self.barrier}")


def _check_finite(name, x):
    if not np.all(np.isfinite(x)):
        raise ValueError(f"non-finite {name}: {x}")


class NavigationEnv:
    """Point mass in the plane moving toward one of several circular goals."""

    discrete = False
    state_dim = 2
    action_dim = 2

    def __init__(self, spec: EnvSpec):
        self.spec = spec
        self.kind = spec.kind
        self.horizon = int(spec.horizon)
        self.gamma = spec.gamma
        self.goals = np.asarray(spec.goals, dtype=float)
        self.start = np.asarray(spec.start, dtype=float)
        self.barrier = spec.barrier
        self.action_low = -spec.action_bound * np.ones(2)
        self.action_high = spec.action_bound * np.ones(2)

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        return self.start + self.spec.start_noise * rng.standard_normal(2)

    def goal_distances(self, pos: np.ndarray) -> np.ndarray:
        return np.linalg.norm(self.goals - pos, axis=-1)

    def in_barrier(self, pos: np.ndarray) -> bool:
        """True when ``pos`` lies strictly inside the barrier rectangle."""
        if self.barrier is None:
            return False
        x0, x1, y0, y1 = self.barrier
        return bool(x0 < pos[0] < x1 and y0 < pos[1] < y1)

    def step(self, state, action, rng: np.random.Generator):
        state = np.asarray(state, dtype=float)
        action = np.asarray(action, dtype=float)
        _check_finite("state", state)
        _check_finite("action", action)
        move = np.clip(action, self.action_low, self.action_high)
        noise = self.spec.transition_noise * rng.standard_normal(2)
        nxt = state + move + noise
        penalty = 0.0
        if self.in_barrier(nxt):
            nxt = state.copy()
            penalty = self.spec.barrier_penalty
        d = float(self.goal_distances(nxt).min())
        reward = -self.spec.distance_scale * d - penalty
        done = d <= self.spec.goal_radius
        if done:
            reward += self.spec.goal_bonus
        return nxt, reward, done

    def reached_goal(self, traj: Trajectory) -> Optional[int]:
        """Index of the goal an episode terminated in, or None."""
        if not traj.terminated or traj.final_state is None:
            return None
        d = self.goal_distances(traj.final_state)
        i = int(np.argmin(d))
        return i if d[i] <= self.spec.goal_radius else None


class CartPoleEnv:
    """Pole balanced on a cart, Euler-integrated; actions push left (0) or right (1)."""

    discrete = True
    state_dim = 4
    n_actions = 2

    def __init__(self, spec: EnvSpec):
        self.spec = spec
        self.kind = spec.kind
        self.horizon = int(spec.horizon)
        self.gamma = spec.gamma
        self.angle_threshold = spec.angle_threshold_deg * math.pi / 180.0

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(-0.05, 0.05, size=4)

    def dynamics(self, state, force: float) -> np.ndarray:
        """One Euler step under a horizontal ``force`` in newtons."""
        s = self.spec
        x, x_dot, theta, theta_dot = state
        total_mass = s.cart_mass + s.pole_mass
        pml = s.pole_mass * s.half_length
        cos, sin = math.cos(theta), math.sin(theta)
        temp = (force + pml * theta_dot**2 * sin) / total_mass
        theta_acc = (s.gravity * sin - cos * temp) / (
            s.half_length * (4.0 / 3.0 - s.pole_mass * cos**2 / total_mass)
        )
        x_acc = temp - pml * theta_acc * cos / total_mass
        return np.array(
            [
                x + s.dt * x_dot,
                x_dot + s.dt * x_acc,
                theta + s.dt * theta_dot,
                theta_dot + s.dt * theta_acc,
            ]
        )

    def step(self, state, action, rng: np.random.Generator):
        state = np.asarray(state, dtype=float)
        _check_finite("state", state)
        a = int(np.asarray(action).reshape(-1)[0]) if np.ndim(action) else int(action)
        if a not in (0, 1):
            raise ValueError(f"cartpole action must be 0 or 1, got {action}")
        force = self.spec.force_mag if a == 1 else -self.spec.force_mag
        nxt = self.dynamics(state, force)
        done = bool(abs(nxt[0]) > self.spec.x_threshold or abs(nxt[2]) > self.angle_threshold)
        return nxt, 1.0, done


def make_env(spec: EnvSpec):
    spec = spec.resolved()
    if spec.kind == "cartpole":
        return CartPoleEnv(spec)
    return NavigationEnv(spec)


def rollout(env, policy, rng: np.random.Generator, horizon: Optional[int] = None) -> Trajectory:
    """Run one episode of ``policy`` in ``env``.

    ``policy`` needs an ``act(state, rng) -> (action, log_prob)`` method.
    The episode stops at termination or after ``horizon`` steps (the env's
    own horizon when omitted).
    """
    horizon = env.horizon if horizon is None else int(horizon)
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    state = env.reset(rng)
    states, actions, rewards, logps = [], [], [], []
    done = False
    for _ in range(horizon):
        action, logp = policy.act(state, rng)
        nxt, reward, done = env.step(state, action, rng)
        states.append(state)
        actions.append(action)
        rewards.append(reward)
        logps.append(logp)
        state = nxt
        if done:
            break
    return Trajectory(
        states=np.array(states),
        actions=np.array(actions),
        rewards=np.array(rewards),
        log_probs=np.array(logps),
        terminated=bool(done),
        final_state=state,
    )
