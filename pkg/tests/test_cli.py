import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dipg import artifacts
from dipg.artifacts import DatasetError, read_trajectories, write_trajectories
from dipg.cli import ConfigError, main, parse_config
from dipg.policy import PolicySpec
from dipg.trajectory import Trajectory

SMALL = """\
seed: 3
n_policies: 2
eval_episodes: 4
env: {kind: multi_goal, horizon: 12}
policy: {hidden_sizes: [8]}
train: {lr: 0.003, steps_per_policy: 200, rollouts_per_update: 4, n_stored: 3, minibatch_size: 16, epochs: 2}
"""


def write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def run(tmp_path, *argv, config=SMALL, out="out"):
    cfg = write(tmp_path, config)
    return main([*argv, "--config", cfg, "--out", str(tmp_path / out)])


def files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def scripted_policy(path, direction, state_dim=2):
    """Gaussian policy with constant mean ``direction`` and tiny noise."""
    spec = PolicySpec(state_dim, "gaussian", 2, (), action_bounds=(-0.5, 0.5))
    params = np.concatenate([np.zeros(2 * state_dim), direction, [-6.0, -6.0]])
    artifacts.save_policy(path, spec, params)
    return str(path)


# ------------------------------------------------------------ trajectory files


floats = st.floats(allow_nan=False, allow_infinity=False, width=64)


@st.composite
def trajectory_lists(draw):
    d = draw(st.integers(1, 3))
    discrete = draw(st.booleans())
    out = []
    for _ in range(draw(st.integers(1, 3))):
        T = draw(st.integers(1, 4))
        rows = lambda elem, n: draw(st.lists(st.lists(elem, min_size=n, max_size=n), min_size=T, max_size=T))
        states = np.array(rows(floats, d))
        if discrete:
            actions = np.array(draw(st.lists(st.integers(0, 5), min_size=T, max_size=T)))
        else:
            actions = np.array(rows(floats, 2))
        rewards = np.array(draw(st.lists(floats, min_size=T, max_size=T)))
        bp = draw(st.one_of(st.none(), st.lists(st.floats(1e-300, 1.0), min_size=T, max_size=T)))
        out.append(Trajectory(states, actions, rewards, behavior_probs=None if bp is None else np.array(bp)))
    return out


@given(trajs=trajectory_lists())
def test_trajectory_table_round_trips_exactly(trajs, tmp_path_factory):
    path = tmp_path_factory.mktemp("rt") / "t.csv"
    write_trajectories(path, trajs)
    back = read_trajectories(path)
    assert back == trajs
    for a, b in zip(back, trajs):
        if b.behavior_probs is None:
            assert a.behavior_probs is None
        else:
            assert np.array_equal(a.behavior_probs, b.behavior_probs)


@pytest.mark.parametrize(
    "body,line",
    [
        ("0,0,1.0,0,1.0,0.5\n0,0,1.0,1,1.0,0.5\n", 3),  # repeated step index
        ("0,0,1.0,0,1.0,0.5\n0,1,abc,1,1.0,0.5\n", 3),
        ("0,0,1.0,0,1.0\n", 2),
        ("0,0,1.0,0,1.0,1.5\n", 2),
        ("0,0,1.0,0,1.0,0.5\n0,1,1.0,1,1.0,\n", 3),
        ("0,0,nan,0,1.0,0.5\n", 2),
    ],
)
def test_malformed_rows_name_their_line(tmp_path, body, line):
    p = tmp_path / "bad.csv"
    p.write_text("traj_id,t,s0,a0,reward,behavior_prob\n" + body)
    with pytest.raises(DatasetError, match=f"bad.csv:{line}:"):
        read_trajectories(p)


def test_bad_header_rejected(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("id,t,s0,a0,reward\n")
    with pytest.raises(DatasetError, match="bad.csv:1:"):
        read_trajectories(p)


# ------------------------------------------------------------------- configs


def test_defaults_parse():
    cfg = parse_config("")
    assert cfg.eval_episodes == 32 and cfg.n_policies == 4 and cfg.similarity == "mean"


@pytest.mark.parametrize(
    "text,line",
    [
        ("seed: 1\ntrain:\n  lr: -1\n", 3),
        ("seed: 1\nenv:\n  kind: maze\n", 3),
        ("seed: 1\n\nbogus: 2\n", 3),
        ("train:\n  alphas: [1.0]\n  epochz: 3\n", 3),
        ("eval_episodes: 0\n", 1),
        ("kernel:\n  selector: everything\n", 2),
        ("seed: [1\n", 2),
        ("policy:\n  hidden_sizes: [0]\n", 2),
        ("batch:\n  mode: arithmetic\n", 2),
    ],
)
def test_config_errors_name_the_line(text, line):
    with pytest.raises(ConfigError, match=rf"^cfg.yaml:{line}:"):
        parse_config(text, "cfg.yaml")


def test_config_error_exit_code(tmp_path, capsys):
    assert run(tmp_path, "train", config="train:\n  lr: -1\n") == 2
    assert "cfg.yaml:2:" in capsys.readouterr().err
    assert main(["train", "--config", str(tmp_path / "missing.yaml")]) == 2


def test_runtime_error_exit_code(tmp_path):
    other = scripted_policy(tmp_path / "p.json", [0.5, 0.0], state_dim=3)
    assert run(tmp_path, "eval", "--policies", other) == 1


# ------------------------------------------------------------------ commands


def test_train_writes_artifacts_and_is_deterministic(tmp_path):
    assert run(tmp_path, "train", out="a") == 0
    assert run(tmp_path, "train", out="b") == 0
    a, b = files(tmp_path / "a"), files(tmp_path / "b")
    assert set(a) == {"policy_0.json", "metrics_0.jsonl", "stored_0.csv", "eval_0.csv", "report.json"}
    assert a == b
    metrics = artifacts.read_jsonl(tmp_path / "a" / "metrics_0.jsonl")
    assert set(metrics[0]) == {"update", "env_steps", "mean_return", "d_mmd", "argmin_q", "grad_norm"}
    assert len({int(r[0]) for r in (l.split(",") for l in a["eval_0.csv"].decode().splitlines()[1:])}) == 4


def test_seed_flag_changes_artifacts(tmp_path):
    run(tmp_path, "train", out="a")
    cfg = write(tmp_path, SMALL)
    main(["train", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "4"])
    assert files(tmp_path / "a")["policy_0.json"] != files(tmp_path / "b")["policy_0.json"]


def test_horizon_one(tmp_path):
    cfg = SMALL.replace("horizon: 12", "horizon: 1")
    assert run(tmp_path, "train", config=cfg) == 0
    trajs = read_trajectories(tmp_path / "out" / "eval_0.csv")
    assert all(len(t) == 1 for t in trajs)


def test_single_policy_dipg_report_equals_train(tmp_path):
    cfg = SMALL.replace("n_policies: 2", "n_policies: 1")
    run(tmp_path, "train", config=cfg, out="t")
    run(tmp_path, "dipg", config=cfg, out="d")
    assert files(tmp_path / "t") == files(tmp_path / "d")


def test_dipg_writes_collection_and_symmetric_report(tmp_path):
    assert run(tmp_path, "dipg", out="a") == 0
    assert run(tmp_path, "dipg", out="b") == 0
    a = files(tmp_path / "a")
    assert a == files(tmp_path / "b")
    assert {f"policy_{i}.json" for i in range(2)} <= set(a)
    rep = json.loads(a["report.json"])
    S = np.array(rep["similarity"])
    assert S.shape == (2, 2)
    assert np.max(np.abs(S - S.T)) <= 1e-12
    assert np.all((S > 0) & (S <= 1))
    m = artifacts.read_jsonl(tmp_path / "a" / "metrics_1.jsonl")
    assert all(r["d_mmd"] is not None for r in m)


def test_random_restarts_flag(tmp_path):
    assert run(tmp_path, "dipg", "--random-restarts") == 0
    m = artifacts.read_jsonl(tmp_path / "out" / "metrics_1.jsonl")
    assert all(r["d_mmd"] is None for r in m)


def test_compare_scripted_opposite_goals(tmp_path):
    left = scripted_policy(tmp_path / "left.json", [-0.5, 0.0])
    right = scripted_policy(tmp_path / "right.json", [0.5, 0.0])
    cfg = "eval_episodes: 4\nenv: {kind: multi_goal}\n"
    assert run(tmp_path, "compare", "--policies", left, right, left, config=cfg) == 0
    rep = json.loads((tmp_path / "out" / "report.json").read_text())
    S = np.array(rep["similarity"])
    assert S[0, 1] < min(S[0, 0], S[1, 1])
    # the same policy re-evaluated on another stream is as similar as itself
    assert S[0, 2] == pytest.approx(S[0, 0], abs=0.01)
    assert rep["distinct_goals"] == 2
    assert rep["goals"][0] == rep["goals"][2] != rep["goals"][1]


def test_compare_single_episode(tmp_path):
    left = scripted_policy(tmp_path / "left.json", [-0.5, 0.0])
    right = scripted_policy(tmp_path / "right.json", [0.5, 0.0])
    assert run(tmp_path, "compare", "--policies", left, right, config="eval_episodes: 1\n") == 0
    rep = json.loads((tmp_path / "out" / "report.json").read_text())
    assert rep["std_return"] == [0.0, 0.0]


def test_eval_writes_returns(tmp_path):
    p = scripted_policy(tmp_path / "right.json", [0.5, 0.0])
    assert run(tmp_path, "eval", "--policies", p, config="eval_episodes: 3\n") == 0
    rows = json.loads((tmp_path / "out" / "eval.json").read_text())
    assert len(rows) == 1 and math.isfinite(rows[0]["mean_return"])


CARTPOLE = """\
seed: 1
eval_episodes: 4
env: {kind: cartpole}
policy: {hidden_sizes: [8]}
batch: {episodes: 270, epsilon: 0.2, gamma: 0.99, iterations: 5, dataset: DATA}
"""


def test_batch_generate_train_eval(tmp_path):
    behavior = tmp_path / "behavior.json"
    spec = PolicySpec(4, "categorical", 2, (8,))
    artifacts.save_policy(behavior, spec, np.zeros(spec.n_params))
    data = tmp_path / "gen" / "dataset.csv"
    cfg = CARTPOLE.replace("DATA", str(data))
    assert run(tmp_path, "batch", "generate", "--policies", str(behavior), config=cfg, out="gen") == 0
    trajs = read_trajectories(data)
    assert len(trajs) == 270
    ids = {line.split(",")[0] for line in data.read_text().splitlines()[1:]}
    assert len(ids) == 270
    assert all(np.all(t.behavior_probs == 0.5) for t in trajs)

    # uniform behavior evaluated on itself: CWPDIS is the discounted mean return
    assert run(tmp_path, "batch", "eval", "--policies", str(behavior), config=cfg, out="ev") == 0
    est = json.loads((tmp_path / "ev" / "cwpdis.json").read_text())[0]["cwpdis"]
    assert est == pytest.approx(np.mean([t.discounted_return(0.99) for t in trajs]), abs=1e-12)

    assert run(tmp_path, "batch", "train", config=cfg, out="tr") == 0
    summary = json.loads((tmp_path / "tr" / "batch_summary.json").read_text())
    assert set(summary) == {"cwpdis", "simulated_mean_return", "min_ess"}
    assert len(artifacts.read_jsonl(tmp_path / "tr" / "batch_metrics.jsonl")) == 5


def test_batch_generate_needs_a_behavior_policy(tmp_path):
    assert run(tmp_path, "batch", "generate", config="env: {kind: cartpole}\n") == 2


def test_batch_train_reports_bad_rows(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("traj_id,t,s0,s1,s2,s3,a0,reward,behavior_prob\n0,0,0,0,0,0,1,1.0,x\n")
    assert run(tmp_path, "batch", "train", config=CARTPOLE.replace("DATA", str(bad))) == 1
    assert "bad.csv:2:" in capsys.readouterr().err
