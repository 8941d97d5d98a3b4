"""Quality and similarity summaries of a collection of policies."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .diversity import KernelConfig, similarity_matrix
from .env import NavigationEnv, rollout
from .trajectory import Trajectory


def evaluate(env, policy, n_episodes: int, rng: np.random.Generator) -> List[Trajectory]:
    if n_episodes < 1:
        raise ValueError("need at least one evaluation episode")
    return [rollout(env, policy, rng) for _ in range(n_episodes)]


def modal_goal(env, trajs: Sequence[Trajectory]) -> Optional[int]:
    """Goal reached most often (lowest index on ties), or None if none is reached."""
    if not isinstance(env, NavigationEnv):
        return None
    counts = Counter(g for g in (env.reached_goal(t) for t in trajs) if g is not None)
    if not counts:
        return None
    best = max(counts.values())
    return min(g for g, c in counts.items() if c == best)


def barrier_side(env, trajs: Sequence[Trajectory]) -> Optional[int]:
    """Sign of the mean x position over all visited states in the barrier's
    y band; None without a barrier or when the band is never visited."""
    if not isinstance(env, NavigationEnv) or env.barrier is None:
        return None
    _, _, y0, y1 = env.barrier
    states = np.concatenate([t.states for t in trajs])
    band = states[(states[:, 1] >= y0) & (states[:, 1] <= y1)]
    if len(band) == 0:
        return None
    return int(np.sign(band[:, 0].mean()))


@dataclass
class ComparisonReport:
    """Per-policy quality plus the pairwise similarity matrix.

    ``similarity[i][j]`` aggregates the trajectory kernel over all pairs
    from the trajectory sets of policies i and j.
    """

    mean_return: List[float]
    std_return: List[float]
    similarity: List[List[float]]
    goals: List[Optional[int]] = field(default_factory=list)
    distinct_goals: Optional[int] = None
    barrier_sides: List[Optional[int]] = field(default_factory=list)

    @property
    def mean_cross_similarity(self) -> float:
        """Mean of the off-diagonal similarity entries (NaN for one policy)."""
        S = np.asarray(self.similarity)
        M = len(S)
        if M < 2:
            return float("nan")
        return float((S.sum() - np.trace(S)) / (M * (M - 1)))

    def to_dict(self) -> dict:
        return {
            "mean_return": self.mean_return,
            "std_return": self.std_return,
            "similarity": self.similarity,
            "mean_cross_similarity": None if len(self.similarity) < 2 else self.mean_cross_similarity,
            "goals": self.goals,
            "distinct_goals": self.distinct_goals,
            "barrier_sides": self.barrier_sides,
        }

    def format(self) -> str:
        lines = []
        for i, (m, s) in enumerate(zip(self.mean_return, self.std_return)):
            extra = ""
            if self.goals and self.goals[i] is not None:
                extra += f"  goal {self.goals[i]}"
            if self.barrier_sides and self.barrier_sides[i] is not None:
                extra += f"  side {'+' if self.barrier_sides[i] > 0 else '-'}"
            lines.append(f"policy {i}: return {m:.3f} +/- {s:.3f}{extra}")
        lines.append("similarity:")
        for row in self.similarity:
            lines.append("  " + " ".join(f"{v:.4f}" for v in row))
        if self.distinct_goals is not None:
            lines.append(f"distinct goals reached: {self.distinct_goals}")
        return "\n".join(lines)


def compare(
    env,
    trajectory_sets: Sequence[Sequence[Trajectory]],
    kernel: KernelConfig = KernelConfig(),
    reduce: str = "mean",
    gamma: float = 1.0,
) -> ComparisonReport:
    """Build a report from one evaluation trajectory set per policy."""
    returns = [np.array([t.discounted_return(gamma) for t in ts]) for ts in trajectory_sets]
    S = similarity_matrix(trajectory_sets, kernel, reduce)
    nav = isinstance(env, NavigationEnv)
    goals = [modal_goal(env, ts) for ts in trajectory_sets] if nav else []
    return ComparisonReport(
        mean_return=[float(r.mean()) for r in returns],
        std_return=[float(r.std()) for r in returns],
        similarity=S.tolist(),
        goals=goals,
        distinct_goals=len({g for g in goals if g is not None}) if nav else None,
        barrier_sides=[barrier_side(env, ts) for ts in trajectory_sets] if nav else [],
    )
