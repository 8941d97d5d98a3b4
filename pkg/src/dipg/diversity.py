"""Trajectory kernel, MMD^2 estimators and the diversity gradient.

The kernel compares the first ``N`` steps of two trajectories, ``N`` being
the shorter length (optionally capped), after selecting states, actions or
both and stacking them into one vector. A Gaussian kernel is applied to the
stacked vectors; by default the squared distance is divided by the vector's
dimension so one bandwidth works across lengths and environments.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .trajectory import Trajectory

SELECTORS = ("states_only", "actions_only", "states_and_actions")

# One entry per known policy, each a list of stored trajectories.
DiversitySet = Sequence[Sequence[Trajectory]]


@dataclass(frozen=True)
class KernelConfig:
    bandwidth: float = 1.0
    selector: str = "states_and_actions"
    max_steps: Optional[int] = None
    normalize: bool = True

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be > 0, got {self.bandwidth}")
        if self.selector not in SELECTORS:
            raise ValueError(f"unknown selector {self.selector!r}; expected one of {SELECTORS}")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError(f"max_steps must be >= 1, got {self.max_steps}")


def step_features(traj: Trajectory, cfg: KernelConfig) -> np.ndarray:
    """Per-step selected features, shape (T, f)."""
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    if cfg.selector == "states_only":
        return traj.states
    if cfg.selector == "actions_only":
        return traj.action_matrix()
    return np.hstack([traj.states, traj.action_matrix()])


def _shared_length(a: int, b: int, cfg: KernelConfig) -> int:
    n = min(a, b)
    return n if cfg.max_steps is None else min(n, cfg.max_steps)


def featurize(traj: Trajectory, other: Trajectory, cfg: KernelConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Stack the first N shared steps of both trajectories into flat vectors."""
    fa, fb = step_features(traj, cfg), step_features(other, cfg)
    if fa.shape[1] != fb.shape[1]:
        raise ValueError("trajectories have different state/action dimensions")
    n = _shared_length(len(fa), len(fb), cfg)
    return fa[:n].ravel(), fb[:n].ravel()


def traj_kernel(traj: Trajectory, other: Trajectory, cfg: KernelConfig = KernelConfig()) -> float:
    x, y = featurize(traj, other, cfg)
    d_norm = x.size if cfg.normalize else 1.0
    sq = float(np.sum((x - y) ** 2))
    return float(np.exp(-sq / (2.0 * cfg.bandwidth**2 * d_norm)))


def _padded(trajs: Sequence[Trajectory], cfg: KernelConfig):
    feats = [step_features(t, cfg) for t in trajs]
    lengths = np.array([len(f) for f in feats])
    t_max = lengths.max()
    out = np.zeros((len(feats), t_max, feats[0].shape[1]))
    for i, f in enumerate(feats):
        out[i, : len(f)] = f
    return out, lengths


def gram(A: Sequence[Trajectory], B: Sequence[Trajectory], cfg: KernelConfig = KernelConfig()) -> np.ndarray:
    """Matrix of ``traj_kernel(A[i], B[j])``, computed in one vectorized pass."""
    if len(A) == 0 or len(B) == 0:
        return np.zeros((len(A), len(B)))
    fa, la = _padded(A, cfg)
    fb, lb = _padded(B, cfg)
    if fa.shape[2] != fb.shape[2]:
        raise ValueError("trajectory sets have different state/action dimensions")
    t = min(fa.shape[1], fb.shape[1])
    per_step = np.sum((fa[:, None, :t, :] - fb[None, :, :t, :]) ** 2, axis=-1)
    cum = np.cumsum(per_step, axis=-1)
    n = np.minimum(la[:, None], lb[None, :])
    if cfg.max_steps is not None:
        n = np.minimum(n, cfg.max_steps)
    sq = np.take_along_axis(cum, (n - 1)[:, :, None], axis=-1)[:, :, 0]
    d_norm = n * fa.shape[2] if cfg.normalize else 1.0
    return np.exp(-sq / (2.0 * cfg.bandwidth**2 * d_norm))


def mmd2(A, B, cfg: KernelConfig = KernelConfig(), estimator: str = "biased") -> float:
    """Squared MMD between two trajectory samples.

    ``biased`` is the V-statistic (diagonal terms kept, never negative);
    ``unbiased`` is the U-statistic and drops the diagonal of the within-set
    terms.
    """
    m, n = len(A), len(B)
    if estimator == "biased":
        if m < 1 or n < 1:
            raise ValueError("biased MMD needs at least one trajectory per set")
        kxx = gram(A, A, cfg).mean()
        kyy = gram(B, B, cfg).mean()
    elif estimator == "unbiased":
        if m < 2 or n < 2:
            raise ValueError("unbiased MMD needs at least two trajectories per set")
        Kxx, Kyy = gram(A, A, cfg), gram(B, B, cfg)
        kxx = (Kxx.sum() - np.trace(Kxx)) / (m * (m - 1))
        kyy = (Kyy.sum() - np.trace(Kyy)) / (n * (n - 1))
    else:
        raise ValueError(f"unknown estimator {estimator!r}")
    return float(kxx - 2.0 * gram(A, B, cfg).mean() + kyy)


def d_mmd(P, Q: DiversitySet, cfg: KernelConfig = KernelConfig()) -> Tuple[float, int]:
    """Biased MMD^2 to the closest entry of ``Q`` and that entry's index.

    Ties go to the lowest index.
    """
    if len(Q) == 0:
        raise ValueError("empty diversity set: no diversity constraint")
    values = [mmd2(P, q, cfg, "biased") for q in Q]
    i = int(np.argmin(values))
    return float(values[i]), i


def diversity_gradient(
    policy, P: Sequence[Trajectory], Q: DiversitySet, cfg: KernelConfig = KernelConfig(), baseline: bool = False
):
    """Likelihood-ratio estimate of grad D_MMD together with D_MMD and argmin.

    With ``S_i`` the score of ``P[i]`` under ``policy`` and ``Y`` the stored
    trajectories of the closest known policy::

        2/(m(m-1)) sum_i S_i sum_{j != i} k(P_i, P_j) - 2/(m n) sum_i S_i sum_j k(P_i, Y_j)

    The within-``Q`` term carries no dependence on the parameters.

    ``baseline=True`` subtracts from each sample's coefficient the same
    quantity computed from the other ``m - 1`` samples only. That offset is
    independent of ``P[i]`` and ``E[S_i] = 0``, so the expectation is
    unchanged while most of the variance goes away. Needs ``m >= 3``.
    """
    m = len(P)
    if m < 2:
        raise ValueError("diversity gradient needs at least two policy samples")
    value, idx = d_mmd(P, Q, cfg)
    Y = Q[idx]
    Kpp = gram(P, P, cfg)
    Kpy = gram(P, Y, cfg)
    scores = policy.traj_scores(P)
    off = Kpp.sum(axis=1) - np.diag(Kpp)
    within = off / (m - 1)
    cross = Kpy.mean(axis=1)
    if baseline:
        if m < 3:
            raise ValueError("leave-one-out baseline needs at least three policy samples")
        # mean k over ordered pairs (j, l), j != l, that avoid sample i
        pair_total = off.sum()
        within_base = (pair_total - 2.0 * off) / ((m - 1) * (m - 2))
        cross_base = (cross.sum() - cross) / (m - 1)
        within = within - within_base
        cross = cross - cross_base
    return (2.0 / m) * (within - cross) @ scores, value, idx


def grad_d_mmd(policy, P, Q: DiversitySet, cfg: KernelConfig = KernelConfig()) -> np.ndarray:
    return diversity_gradient(policy, P, Q, cfg)[0]


def similarity_matrix(sets: Sequence[Sequence[Trajectory]], cfg: KernelConfig = KernelConfig(), reduce: str = "mean") -> np.ndarray:
    """Pairwise similarity between trajectory sets.

    Entry (i, j) is the mean (or min) kernel value over all pairs drawn from
    sets i and j; the diagonal is each set's mean self-similarity including
    identical pairs.
    """
    M = len(sets)
    out = np.zeros((M, M))
    agg = np.mean if reduce == "mean" else np.min
    if reduce not in ("mean", "min"):
        raise ValueError(f"unknown reduction {reduce!r}")
    for i in range(M):
        for j in range(i, M):
            out[i, j] = out[j, i] = float(agg(gram(sets[i], sets[j], cfg)))
    return out
