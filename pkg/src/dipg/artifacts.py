"""Reading and writing policies, metric streams and trajectory tables.

Floats are written with ``repr`` so every value round-trips exactly.
Trajectory tables use one row per step::

    traj_id,t,s0,...,s{d-1},a0,...,a{k-1},reward,behavior_prob

Discrete actions take a single integer column and a missing behavior
probability is an empty field.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .policy import Policy, PolicySpec
from .trajectory import Trajectory


class DatasetError(ValueError):
    """Malformed trajectory table; the message names file and line."""


def save_policy(path, spec: PolicySpec, params: np.ndarray, extra: Optional[dict] = None) -> None:
    record = {"spec": spec.to_dict(), "params": [float(x) for x in params]}
    if extra:
        record.update(extra)
    Path(path).write_text(json.dumps(record, indent=1) + "\n")


def load_policy(path) -> Tuple[Policy, dict]:
    """The policy stored at ``path`` and the raw record."""
    try:
        record = json.loads(Path(path).read_text())
        spec = PolicySpec.from_dict(record["spec"])
        return Policy(spec, np.array(record["params"], dtype=float)), record
    except (KeyError, TypeError, json.JSONDecodeError) as e:
        raise ValueError(f"{path}: not a policy file ({e})") from e


def write_jsonl(path, records: Iterable[dict]) -> None:
    with open(path, "w") as f:
        for r in records:
            f.write(json.dumps(r) + "\n")


def read_jsonl(path) -> List[dict]:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def _num(x) -> str:
    return repr(float(x))


def trajectory_header(state_dim: int, action_cols: int) -> List[str]:
    return (
        ["traj_id", "t"]
        + [f"s{i}" for i in range(state_dim)]
        + [f"a{i}" for i in range(action_cols)]
        + ["reward", "behavior_prob"]
    )


def write_trajectories(path, trajs: Sequence[Trajectory]) -> None:
    if not trajs:
        raise ValueError("no trajectories to write")
    d = trajs[0].states.shape[1]
    k = trajs[0].action_matrix().shape[1]
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(trajectory_header(d, k))
        for i, tr in enumerate(trajs):
            for t in range(len(tr)):
                acts = [str(int(tr.actions[t]))] if tr.discrete else [_num(a) for a in tr.actions[t]]
                bp = "" if tr.behavior_probs is None else _num(tr.behavior_probs[t])
                w.writerow([i, t, *[_num(s) for s in tr.states[t]], *acts, _num(tr.rewards[t]), bp])


def _is_int(tok: str) -> bool:
    try:
        int(tok)
        return True
    except ValueError:
        return False


def read_trajectories(path) -> List[Trajectory]:
    """Parse a trajectory table, in order of first appearance of each id.

    Raises ``DatasetError`` naming the offending line for malformed rows,
    out-of-order step indices or a behavior probability present on only
    some steps of a trajectory.
    """
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise DatasetError(f"{path}:1: empty file")
    header = rows[0]
    if header[:2] != ["traj_id", "t"] or header[-2:] != ["reward", "behavior_prob"]:
        raise DatasetError(f"{path}:1: header must start with traj_id,t and end with reward,behavior_prob")
    d = sum(1 for h in header if h.startswith("s"))
    k = sum(1 for h in header if h.startswith("a"))
    if header != trajectory_header(d, k) or d < 1 or k < 1:
        raise DatasetError(f"{path}:1: malformed header {','.join(header)}")
    discrete = k == 1 and all(len(r) == len(header) and _is_int(r[2 + d]) for r in rows[1:])
    order: List[str] = []
    steps = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DatasetError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        tid = row[0]
        try:
            t = int(row[1])
            s = [float(x) for x in row[2 : 2 + d]]
            a = int(row[2 + d]) if discrete else [float(x) for x in row[2 + d : 2 + d + k]]
            r = float(row[-2])
            bp = None if row[-1] == "" else float(row[-1])
        except ValueError as e:
            raise DatasetError(f"{path}:{lineno}: {e}") from None
        if not all(np.isfinite(s)) or not np.isfinite(r):
            raise DatasetError(f"{path}:{lineno}: non-finite value")
        if bp is not None and not 0.0 < bp <= 1.0:
            raise DatasetError(f"{path}:{lineno}: behavior_prob {bp} outside (0, 1]")
        if tid not in steps:
            order.append(tid)
            steps[tid] = []
        if t != len(steps[tid]):
            raise DatasetError(f"{path}:{lineno}: trajectory {tid} expected step {len(steps[tid])}, got {t}")
        if steps[tid] and (bp is None) != (steps[tid][0][3] is None):
            raise DatasetError(f"{path}:{lineno}: behavior_prob missing on some steps of trajectory {tid}")
        steps[tid].append((s, a, r, bp))
    out = []
    for tid in order:
        s, a, r, bp = zip(*steps[tid])
        out.append(
            Trajectory(
                states=np.array(s),
                actions=np.array(a, dtype=np.int64 if discrete else float),
                rewards=np.array(r),
                behavior_probs=None if bp[0] is None else np.array(bp),
            )
        )
    return out
