"""Trajectory container shared by every module."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


@dataclass
class Trajectory:
    """One episode stored column-wise.

    ``states[t]`` is the state in which ``actions[t]`` was taken and
    ``rewards[t]`` received. Discrete actions are stored as an integer vector
    of shape ``(T,)``; continuous actions as ``(T, action_dim)``.

    Attributes:
        states: array of shape (T, state_dim).
        actions: array of shape (T,) or (T, action_dim).
        rewards: array of shape (T,).
        log_probs: log-probability of each action under the policy that
            generated it, if recorded.
        behavior_probs: probability of each action under the behavior policy
            (batch datasets only).
        terminated: True when the episode ended through the environment's
            termination predicate rather than the horizon.

    Equality compares the recorded columns (states, actions, rewards,
    behavior probabilities); ``log_probs``, ``terminated`` and
    ``final_state`` are rollout metadata and are ignored.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    log_probs: Optional[np.ndarray] = None
    behavior_probs: Optional[np.ndarray] = None
    terminated: bool = field(default=False, compare=False)
    final_state: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim == 1:
            self.states = self.states[:, None]
        self.rewards = np.asarray(self.rewards, dtype=float)
        acts = np.asarray(self.actions)
        self.actions = acts.astype(np.int64) if acts.dtype.kind in "iub" else acts.astype(float)
        if len(self.states) < 1:
            raise ValueError("trajectory must contain at least one step")
        if not (len(self.states) == len(self.actions) == len(self.rewards)):
            raise ValueError("states, actions and rewards must have equal length")
        if self.log_probs is not None:
            self.log_probs = np.asarray(self.log_probs, dtype=float)
        if self.behavior_probs is not None:
            self.behavior_probs = np.asarray(self.behavior_probs, dtype=float)

    def __len__(self) -> int:
        return len(self.rewards)

    @property
    def discrete(self) -> bool:
        return self.actions.ndim == 1

    def action_matrix(self) -> np.ndarray:
        """Actions as a (T, k) float matrix; discrete indices occupy one column."""
        if self.discrete:
            return self.actions[:, None].astype(float)
        return self.actions

    def discounted_return(self, gamma: float = 1.0) -> float:
        return float(np.sum(self.rewards * gamma ** np.arange(len(self))))

    def total_reward(self) -> float:
        return float(np.sum(self.rewards))

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented

        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.shape == b.shape and np.array_equal(a, b)

        return (
            same(self.states, other.states)
            and same(self.actions, other.actions)
            and same(self.rewards, other.rewards)
            and same(self.behavior_probs, other.behavior_probs)
        )


def concatenate(trajs: Sequence[Trajectory]) -> Trajectory:
    """Join trajectories end to end (steps treated independently)."""
    return Trajectory(
        states=np.concatenate([t.states for t in trajs]),
        actions=np.concatenate([t.actions for t in trajs]),
        rewards=np.concatenate([t.rewards for t in trajs]),
    )
