import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_pair, shared_pair
from retparity.divergence import discrete_metric, wasserstein1_discrete
from retparity.errors import AssumptionViolated, InvalidParameter, WitnessPreconditionViolated
from retparity.mdp import GroupPair, Mdp, Policy, occupancy_measure, random_mdp, state_visitation
from retparity.parity import (Lipschitz, SupNormBall, visitation_bound, occupancy_bound,
                              check_transition_span, disparity_report, parse_witness, absorbing_gap_pair,
                              return_disparity, transition_differences)


def test_identical_pair_zero(rng):
    mdp = random_mdp(3, 2, 0.9, rng)
    pi = Policy.random(3, 2, rng)
    pair = GroupPair(mdp, mdp)
    rep = disparity_report(pair, pi, pi)
    assert rep.delta_ret == 0.0
    assert rep.bound_visitation.total == pytest.approx(0.0, abs=1e-12)
    assert rep.bound_occupancy.total == pytest.approx(0.0, abs=1e-12)


def test_absorbing_pair_disparity_and_bound():
    pair = absorbing_gap_pair(5, 0.9)
    pi = Policy.uniform(2, 2)
    assert return_disparity(pair, pi, pi) == pytest.approx(5.0)
    b = visitation_bound(pair, pi, pi)
    assert b.reward_gap_term == 0.0 and b.policy_term == 0.0
    assert b.visitation_ipm_term == pytest.approx(10.0)
    assert b.total >= 5.0


def test_absorbing_pair_policy_independent(rng):
    for c in (1e-6, 1.0, 5.0):
        pair = absorbing_gap_pair(c, 0.5)
        vals = [return_disparity(pair, Policy.random(2, 2, rng), Policy.random(2, 2, rng)) for _ in range(100)]
        assert max(vals) - min(vals) <= 1e-9
        assert vals[0] == pytest.approx(c, abs=1e-12)


def test_absorbing_pair_invalid():
    with pytest.raises(InvalidParameter):
        absorbing_gap_pair(0.0, 0.9)
    with pytest.raises(InvalidParameter):
        absorbing_gap_pair(1.0, 1.0)


def test_shared_everything_reduces_to_visitation_term(rng):
    mdp0 = random_mdp(4, 2, 0.9, rng)
    mdp1 = Mdp(rng.dirichlet(np.ones(4)), rng.dirichlet(np.ones(4), size=(4, 2)), mdp0.reward, 0.9)
    pi = Policy.random(4, 2, rng)
    b = visitation_bound(GroupPair(mdp0, mdp1), pi, pi)
    assert b.reward_gap_term == 0.0 and b.policy_term == 0.0
    assert b.total == b.visitation_ipm_term


def test_occupancy_bound_shared_reward_is_occupancy_term(rng):
    mdp0 = random_mdp(3, 2, 0.9, rng)
    mdp1 = Mdp(mdp0.mu, rng.dirichlet(np.ones(3), size=(3, 2)), mdp0.reward, 0.9)
    pair = GroupPair(mdp0, mdp1)
    pi0, pi1 = Policy.random(3, 2, rng), Policy.random(3, 2, rng)
    b = occupancy_bound(pair, pi0, pi1)
    rho0, rho1 = occupancy_measure(mdp0, pi0), occupancy_measure(mdp1, pi1)
    assert b.total == pytest.approx(10 * mdp0.reward_bound * np.abs(rho0 - rho1).sum())


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 6), st.integers(1, 4), st.sampled_from([0.5, 0.9]), st.integers(0, 2**32 - 1))
def test_bounds_hold(m, n, gamma, seed):
    rng = np.random.default_rng(seed)
    pair = random_pair(rng, m, n, gamma)
    pi0, pi1 = Policy.random(m, n, rng), Policy.random(m, n, rng)
    rep = disparity_report(pair, pi0, pi1)
    assert rep.delta_ret <= rep.bound_visitation.total + 1e-7
    assert rep.delta_ret <= rep.bound_occupancy.total + 1e-7
    for term in (rep.bound_visitation.reward_gap_term, rep.bound_visitation.policy_term,
                 rep.bound_visitation.visitation_ipm_term, rep.bound_occupancy.occupancy_ipm_term):
        assert term >= 0


def test_lipschitz_witness(rng):
    pair = random_pair(rng, 3, 2, 0.9)
    pi0, pi1 = Policy.random(3, 2, rng), Policy.random(3, 2, rng)
    # with the discrete metric, any function bounded by R is 2R-Lipschitz
    R = max(pair.mdp0.reward_bound, pair.mdp1.reward_bound)
    w = Lipschitz(2 * R, discrete_metric(3), discrete_metric(6))
    b1 = visitation_bound(pair, pi0, pi1, w)
    mu0, mu1 = state_visitation(pair.mdp0, pi0), state_visitation(pair.mdp1, pi1)
    assert b1.visitation_ipm_term == pytest.approx(10 * 2 * R * wasserstein1_discrete(mu0, mu1, discrete_metric(3)))
    # equals the sup-norm version under the discrete metric
    assert b1.visitation_ipm_term == pytest.approx(visitation_bound(pair, pi0, pi1).visitation_ipm_term, abs=1e-6)
    assert return_disparity(pair, pi0, pi1) <= occupancy_bound(pair, pi0, pi1, w).total + 1e-7


def test_witness_parsing():
    assert isinstance(parse_witness("sup"), SupNormBall)
    assert parse_witness("lipschitz:2.5").L == 2.5
    with pytest.raises(WitnessPreconditionViolated):
        parse_witness("lipschitz:-1")
    with pytest.raises(WitnessPreconditionViolated):
        parse_witness("bogus")
    with pytest.raises(WitnessPreconditionViolated):
        Lipschitz(1.0).ipm(np.array([1.0, 0]), np.array([0, 1.0]), 1.0)


def test_span_identical_holds(rng):
    pair = shared_pair(rng, 3, 2, 0.9)
    same = GroupPair(pair.mdp0, pair.mdp0)
    res = check_transition_span(same)
    assert res.holds and res.margin == pytest.approx(0.0, abs=1e-12)


def test_span_hand_example():
    T0 = np.zeros((2, 1, 2))
    T0[:, 0, 0] = 1.0
    T1 = np.zeros((2, 1, 2))
    T1[:, 0, 1] = 1.0
    r = np.zeros((2, 1))
    pair = GroupPair(Mdp([0.5, 0.5], T0, r, 0.9), Mdp([0.5, 0.5], T1, r, 0.9))
    res = check_transition_span(pair)
    assert not res.holds
    assert res.margin == pytest.approx(2.0)
    np.testing.assert_allclose(res.witness_c, [1.0, -1.0])
    # sampling cross-check: no direction orthogonal to 1 in the box does better
    c = np.random.default_rng(0).uniform(-1, 1, size=(100000, 1))
    c = np.hstack([c, -c])
    assert (c @ transition_differences(pair).T).min(axis=1).max() <= 2.0 + 1e-12


def test_span_opposite_differences_hold(rng):
    T0 = rng.dirichlet(np.ones(3), size=(3, 2))
    T1 = T0.copy()
    p, q = rng.dirichlet(np.ones(3)), rng.dirichlet(np.ones(3))
    T0[0, 0], T1[0, 0] = p, q
    T0[1, 1], T1[1, 1] = q, p
    mu = np.full(3, 1 / 3)
    r = np.ones((3, 2))
    pair = GroupPair(Mdp(mu, T0, r, 0.9), Mdp(mu, T1, r, 0.9))
    D = transition_differences(pair)
    assert np.allclose(D[0], -D[3]) and np.abs(D[0]).sum() > 0
    assert check_transition_span(pair).holds


def test_span_assumptions_named(rng):
    pair = shared_pair(rng, 3, 2, 0.9)
    r = pair.mdp0.reward.copy()
    r[1, 0] += 0.5
    with pytest.raises(AssumptionViolated) as e:
        check_transition_span(GroupPair(pair.mdp0, Mdp(pair.mdp1.mu, pair.mdp1.transition, r, 0.9)))
    assert e.value.assumption == "shared rewards"
    with pytest.raises(AssumptionViolated) as e:
        check_transition_span(absorbing_gap_pair(1.0, 0.9))
    assert e.value.assumption == "shared initial distribution"
    mdp = random_mdp(2, 2, 0.9, rng)
    with pytest.raises(AssumptionViolated) as e:
        check_transition_span(GroupPair(mdp, mdp))
    assert e.value.assumption == "state-only rewards"
