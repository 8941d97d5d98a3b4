import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dipg.policy import Policy, PolicySpec, init_params, spec_for_env
from dipg.env import EnvSpec, make_env
from dipg.trajectory import Trajectory
from oracles import central_diff, random_actions, random_policy, rel_err


def test_parameter_count():
    spec = PolicySpec(input_dim=2, head="categorical", n_out=4, hidden_sizes=(32,))
    assert spec.n_params == 2 * 32 + 32 + 32 * 4 + 4 == 228
    assert init_params(spec, 0).shape == (228,)


def test_gaussian_head_adds_log_std():
    spec = PolicySpec(2, "gaussian", 2, (8,), action_bounds=(-0.5, 0.5))
    p = init_params(spec, 0)
    assert len(p) == 2 * 8 + 8 + 8 * 2 + 2 + 2
    np.testing.assert_array_equal(Policy(spec, p).log_std, np.log(0.5))


def test_init_is_seeded_with_zero_biases():
    spec = PolicySpec(3, "categorical", 2, (5, 4))
    a, b = init_params(spec, 7), init_params(spec, 7)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, init_params(spec, 8))
    pol = Policy(spec, a)
    for W, bias in pol.layers:
        assert np.all(bias == 0.0)
    # std 1/sqrt(fan_in) on a wide layer
    wide = PolicySpec(400, "categorical", 2, (300,))
    W = Policy(wide, init_params(wide, 0)).layers[0][0]
    assert W.std() * math.sqrt(400) == pytest.approx(1.0, rel=0.01)


@pytest.mark.parametrize(
    "kw",
    [
        dict(input_dim=0),
        dict(input_dim=2, hidden_sizes=(0,)),
        dict(input_dim=2, n_out=1),
        dict(input_dim=2, head="beta"),
        dict(input_dim=2, squash_mean=True),
    ],
)
def test_invalid_specs(kw):
    with pytest.raises(ValueError):
        PolicySpec(**kw)


def test_wrong_parameter_length():
    with pytest.raises(ValueError):
        Policy(PolicySpec(2), np.zeros(3))


def test_spec_round_trip():
    spec = PolicySpec(2, "gaussian", 2, (16, 8), action_bounds=(-0.5, 0.5), input_scale=0.25, squash_mean=True)
    assert PolicySpec.from_dict(spec.to_dict()) == spec


def test_spec_for_env():
    assert spec_for_env(make_env(EnvSpec("cartpole"))).head == "categorical"
    s = spec_for_env(make_env(EnvSpec("obstacle")))
    assert s.head == "gaussian" and s.action_bounds == (-0.5, 0.5)


def test_zero_parameters_sample_uniformly():
    spec = PolicySpec(2, "categorical", 3, (4,))
    pol = Policy(spec, np.zeros(spec.n_params))
    rng = np.random.default_rng(0)
    draws = [pol.act(np.array([0.3, -1.0]), rng) for _ in range(3000)]
    assert all(lp == pytest.approx(-math.log(3)) for _, lp in draws)
    counts = np.bincount([a for a, _ in draws], minlength=3)
    assert np.all(np.abs(counts / 3000 - 1 / 3) < 0.04)


def test_gaussian_log_prob_matches_density_formula():
    spec = PolicySpec(2, "gaussian", 2, (4,), action_bounds=(-0.5, 0.5))
    pol = Policy(spec, init_params(spec, 1))
    s = np.array([0.2, -0.1])
    a, lp = pol.act(s, np.random.default_rng(4))
    mu, sd = pol.output(s)[0], np.exp(pol.log_std)
    hand = sum(-0.5 * ((a[i] - mu[i]) / sd[i]) ** 2 - math.log(sd[i]) - 0.5 * math.log(2 * math.pi) for i in range(2))
    assert lp == pytest.approx(hand, abs=1e-12)
    assert pol.log_prob(s, a) == pytest.approx(hand, abs=1e-12)


def test_equal_seeds_equal_samples():
    spec = PolicySpec(2, "gaussian", 2, (4,), action_bounds=(-0.5, 0.5))
    pol = Policy.initial(spec, 0)
    a1, _ = pol.act(np.ones(2), np.random.default_rng(9))
    a2, _ = pol.act(np.ones(2), np.random.default_rng(9))
    assert np.array_equal(a1, a2)


def test_non_finite_output_raises():
    spec = PolicySpec(1, "categorical", 2, ())
    pol = Policy(spec, np.array([np.inf, 0.0, 0.0, 0.0]))
    with pytest.raises(FloatingPointError):
        pol.act(np.array([1.0]), np.random.default_rng(0))


def test_squashed_mean_stays_in_bounds():
    spec = PolicySpec(2, "gaussian", 2, (4,), action_bounds=(-0.5, 0.5), squash_mean=True)
    pol = Policy(spec, 50 * init_params(spec, 0))
    out = pol.output(np.random.default_rng(0).normal(size=(100, 2)) * 10)
    assert np.all(np.abs(out) <= 0.5)


def test_batch_log_prob_matches_single():
    rng = np.random.default_rng(2)
    pol = random_policy(rng, "gaussian")
    S = rng.standard_normal((5, pol.spec.input_dim))
    A = random_actions(pol, rng, 5)
    batch = pol.log_prob(S, A)
    assert batch.shape == (5,)
    np.testing.assert_allclose(batch, [pol.log_prob(S[i], A[i]) for i in range(5)], rtol=1e-12)


@given(seed=st.integers(0, 2**32 - 1), head=st.sampled_from(["categorical", "gaussian", "squashed"]))
def test_grad_log_prob_matches_finite_differences(seed, head):
    rng = np.random.default_rng(seed)
    pol = random_policy(rng, "categorical" if head == "categorical" else "gaussian", squash=head == "squashed")
    s = rng.standard_normal(pol.spec.input_dim)
    a = random_actions(pol, rng, 1)[0]
    g = pol.grad_log_prob(s, a)
    fd = central_diff(lambda p: pol.with_params(p).log_prob(s, a), pol.params)
    assert g.shape == pol.params.shape
    assert rel_err(g, fd) < 1e-4


@given(seed=st.integers(0, 2**32 - 1))
def test_weighted_gradient_is_weighted_sum(seed):
    rng = np.random.default_rng(seed)
    pol = random_policy(rng, rng.choice(["categorical", "gaussian"]))
    S = rng.standard_normal((6, pol.spec.input_dim))
    A = random_actions(pol, rng, 6)
    w = rng.standard_normal(6)
    per_step = pol.grad_log_prob(S, A)
    np.testing.assert_allclose(pol.grad_log_prob(S, A, weights=w), w @ per_step, rtol=1e-10, atol=1e-12)


def test_traj_scores_match_finite_differences_and_each_other():
    rng = np.random.default_rng(5)
    pol = random_policy(rng, "gaussian")
    trajs = []
    for T in (1, 3, 4):
        trajs.append(
            Trajectory(rng.standard_normal((T, pol.spec.input_dim)), random_actions(pol, rng, T), np.zeros(T))
        )
    scores = pol.traj_scores(trajs)
    for t, sc in zip(trajs, scores):
        fd = central_diff(lambda p: pol.with_params(p).traj_log_prob(t), pol.params)
        assert rel_err(sc, fd) < 1e-4
        np.testing.assert_allclose(sc, pol.traj_score(t), rtol=1e-12, atol=1e-14)
