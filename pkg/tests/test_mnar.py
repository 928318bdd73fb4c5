import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import enumerate_trajectories, power_iteration_chain
from pamc.errors import InvalidArgument
from pamc.mdp_env import Policy, TabularMDP, generate_random_mdp, sample_observations
from pamc.mnar import build_weights, estimate_propensity, overlap_diagnostics, stationary_visitation
from pamc.tensor_core import ObservationSet, RewardMatrix, SeededRng, StructuredReward


def _zero_mdp(p, restart=0.0, initial=None):
    p = np.asarray(p, dtype=float)
    z = RewardMatrix(np.zeros(p.shape[:2]))
    return TabularMDP(p, StructuredReward(z, z, z, 0.0, 0, 0.0), 0.9, initial, restart)


def test_single_pair_visitation():
    mdp = _zero_mdp([[[1.0]]])
    assert np.array_equal(stationary_visitation(mdp, Policy.uniform(1, 1), 7), [[1.0]])


def test_two_state_cycle_against_power_iteration():
    p = np.zeros((2, 2, 2))
    p[0, :, 1] = 1.0
    p[1, :, 0] = 1.0
    mdp = _zero_mdp(p, initial=[1.0, 0.0])
    pi = Policy.uniform(2, 2)
    d = stationary_visitation(mdp, pi, 10_000)
    assert d == pytest.approx(np.full((2, 2), 0.25), abs=1e-4)
    # oracle: average of the explicit state chain, times the policy
    chain = np.einsum("sa,sat->st", pi.probs, p)
    mu, mass = np.array([1.0, 0.0]), np.zeros(2)
    for _ in range(10_000):
        mass += mu
        mu = power_iteration_chain(chain, mu, 1)
    mass /= 10_000
    assert np.allclose(d, mass[:, None] * pi.probs, atol=1e-12)


def test_absorbing_chain_against_trajectory_enumeration():
    # 0 -> 1 -> 2 (absorbing) under action 0; action 1 stays put
    p = np.zeros((3, 2, 3))
    p[0, 0, 1] = p[1, 0, 2] = p[2, 0, 2] = 1.0
    p[0, 1, 0] = p[1, 1, 1] = p[2, 1, 2] = 1.0
    mdp = _zero_mdp(p, initial=[1.0, 0.0, 0.0])
    greedy = Policy.deterministic([0, 0, 0], 2)
    d = stationary_visitation(mdp, greedy, 20)
    oracle = enumerate_trajectories(p, greedy.probs, mdp.initial_dist, 20)
    assert np.allclose(d, oracle, atol=1e-12)
    assert d[2, 0] == pytest.approx(18 / 20)
    assert np.argmax(d) == np.ravel_multi_index((2, 0), d.shape)


def test_non_stochastic_policy_rejected():
    mdp = _zero_mdp([[[1.0]]])
    with pytest.raises(InvalidArgument):
        stationary_visitation(mdp, np.array([[0.5]]), 5)


def test_propensity_examples():
    obs = ObservationSet.from_samples(2, 2, [(0, 0, 1.0)] * 4)
    p = estimate_propensity(obs, smoothing=0)
    assert np.array_equal(p, [[1.0, 0.0], [0.0, 0.0]])
    obs = ObservationSet.from_samples(2, 2, [(0, 0, 1.0), (1, 1, 1.0)])
    p = estimate_propensity(obs, smoothing=1)
    assert p == pytest.approx(np.array([[1 / 3, 1 / 6], [1 / 6, 1 / 3]]))
    with pytest.raises(InvalidArgument):
        estimate_propensity(ObservationSet(2, 2))


def test_propensity_converges_to_visitation():
    mdp = generate_random_mdp(5, 2, 2, {"rank": 1}, rng=SeededRng(1))
    pi = Policy.deterministic([0, 1, 0, 1, 0], 2).epsilon_greedy(0.4)
    obs = sample_observations(mdp, pi, 10_000, 1.0, SeededRng(2))
    d = stationary_visitation(mdp, pi, 10_000)
    assert np.max(np.abs(estimate_propensity(obs) - d)) <= 0.02


def test_weight_examples():
    assert build_weights(np.array([[0.5]]), 0.01).weights[0, 0] == 2.0
    assert build_weights(np.array([[0.001]]), 0.01).weights[0, 0] == 100.0
    assert build_weights(np.array([[1.0]]), 0.01).weights[0, 0] == 1.0
    with pytest.raises(InvalidArgument):
        build_weights(np.array([[0.5]]), 0.0)
    with pytest.raises(InvalidArgument):
        build_weights(np.array([[1.5]]), 0.1)


@given(st.integers(0, 2**32 - 1))
def test_self_normalization_without_clipping(seed):
    gen = np.random.default_rng(seed)
    p = gen.uniform(0.02, 1.0, size=(4, 5))
    mask = gen.random((4, 5)) < 0.6
    w = build_weights(p, 0.01).weights
    assert abs(np.sum((w * p)[mask]) - mask.sum()) <= 1e-9


def test_weights_invariant_to_count_rescaling():
    samples = [(0, 0, 1.0), (0, 1, 1.0), (0, 1, 1.0), (1, 0, 1.0)]
    a = ObservationSet.from_samples(2, 2, samples)
    b = ObservationSet.from_samples(2, 2, samples * 2)
    wa = build_weights(estimate_propensity(a, 0), 0.01).weights
    wb = build_weights(estimate_propensity(b, 0), 0.01).weights
    assert np.array_equal(wa, wb)


def test_overlap_examples():
    p = np.array([[0.5, 0.25], [0.0, 0.1]])
    mask = np.array([[True, True], [False, False]])
    support = np.array([[True, False], [False, True]])
    d = overlap_diagnostics(p, mask, support)
    assert d.m_eff == pytest.approx(6.0)
    assert d.kappa == pytest.approx(0.1)
    d = overlap_diagnostics(np.full((2, 2), 0.3), mask, np.ones((2, 2), bool))
    assert d.kappa == pytest.approx(0.3) and not d.positivity_violation
    d = overlap_diagnostics(p, mask, np.array([[False, False], [True, False]]))
    assert d.kappa == 0.0 and d.positivity_violation
    with pytest.raises(InvalidArgument):
        overlap_diagnostics(p, mask, np.zeros((2, 2), bool))


def test_kappa_shrinks_with_less_exploration():
    mdp = generate_random_mdp(10, 4, 3, {"rank": 1}, rng=SeededRng(4))
    base = Policy.deterministic(np.arange(10) % 4, 4)
    support = np.zeros((10, 4), bool)
    support[np.arange(10), (np.arange(10) + 1) % 4] = True
    kappas = []
    for eps in (0.8, 0.4, 0.2, 0.1, 0.05):
        d = stationary_visitation(mdp, base.epsilon_greedy(eps), 5000)
        kappas.append(overlap_diagnostics(d, d > 0, support).kappa)
    assert all(x > y for x, y in zip(kappas, kappas[1:]))
