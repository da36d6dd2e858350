import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedpm.aggregate import (
    NEVER, BayesAggregator, BetaState, ResetPolicy, bayes_update, beta_mode, estimation_error_bound,
    maybe_reset, simple_aggregate, suggest_gamma, vote_counts,
)
from fedpm.errors import AggregationError, ConfigError, ProtocolError
from fedpm.masks import EPS_THETA


def test_simple_aggregate_two_masks():
    theta = simple_aggregate([np.array([1, 0, 1]), np.array([1, 1, 0])])
    np.testing.assert_array_equal(theta, [1 - EPS_THETA, 0.5, 0.5])


def test_simple_aggregate_single_mask_is_clamped():
    np.testing.assert_array_equal(simple_aggregate([np.array([0, 1])]), [EPS_THETA, 1 - EPS_THETA])


def test_simple_aggregate_errors():
    with pytest.raises(AggregationError):
        simple_aggregate([])
    with pytest.raises(AggregationError):
        vote_counts([np.zeros(3), np.zeros(4)])


def test_vote_counts_are_integers():
    votes = vote_counts([np.array([1, 0, 1], np.uint8)] * 3)
    assert votes.dtype.kind == "i"
    np.testing.assert_array_equal(votes, [3, 0, 3])


def test_bound_values():
    assert estimation_error_bound(64, 8) == 2.0
    assert estimation_error_bound(1, 1) == 0.25
    assert estimation_error_bound(100, 10) == 2 * estimation_error_bound(100, 20)


def test_monte_carlo_error_within_bound():
    gen = np.random.default_rng(0)
    d, K, T = 64, 8, 10_000
    theta = gen.uniform(size=(K, d))
    target = theta.mean(axis=0)
    masks = gen.random((T, K, d)) < theta
    err = ((masks.mean(axis=1) - target) ** 2).sum(axis=1).mean()
    assert err <= estimation_error_bound(d, K)


def test_bayes_update_example():
    state = bayes_update(BetaState.fresh(3), np.array([2, 1, 0]), 2)
    np.testing.assert_array_equal(state.alpha, [3, 2, 1])
    np.testing.assert_array_equal(state.beta, [1, 2, 3])


def test_bayes_update_zero_votes_and_conservation():
    start = BetaState.fresh(4, 2.0)
    state = bayes_update(start, np.zeros(4, np.int64), 5)
    np.testing.assert_array_equal(state.alpha, start.alpha)
    np.testing.assert_array_equal(state.beta, start.beta + 5)
    votes = np.array([0, 1, 4, 5])
    after = bayes_update(state, votes, 5)
    np.testing.assert_array_equal(after.alpha + after.beta - state.alpha - state.beta, 5)


def test_bayes_update_rejects_bad_votes():
    with pytest.raises(ProtocolError):
        bayes_update(BetaState.fresh(2), np.array([3, 0]), 2)
    with pytest.raises(ProtocolError):
        bayes_update(BetaState.fresh(2), np.array([-1, 0]), 2)
    with pytest.raises(ProtocolError):
        bayes_update(BetaState.fresh(2), np.array([0, 0, 0]), 2)


def test_beta_mode_values():
    state = BetaState(np.array([3.0, 1.0]), np.array([2.0, 1.0]))
    theta = beta_mode(state)
    assert theta[0] == pytest.approx(2 / 3, abs=1e-15)
    assert theta[1] == 0.5


def test_reset_then_one_round_equals_simple():
    masks = [np.array([1, 1, 0]), np.array([1, 0, 0])]
    agg = BayesAggregator(3, 1.0, ResetPolicy(1))
    theta = agg(masks)
    np.testing.assert_array_equal(theta, [1 - EPS_THETA, 0.5, EPS_THETA])
    np.testing.assert_array_equal(theta, simple_aggregate(masks))


def test_maybe_reset_schedule():
    policy = ResetPolicy(3)
    state = BetaState.fresh(2)
    for _ in range(3):
        state = bayes_update(maybe_reset(state, policy), np.array([1, 0]), 1)
    assert state.rounds_since_reset == 3
    reset = maybe_reset(state, policy)
    np.testing.assert_array_equal(reset.alpha, [1.0, 1.0])
    np.testing.assert_array_equal(reset.beta, [1.0, 1.0])


def test_never_reset_accumulates():
    policy = ResetPolicy(NEVER)
    state = BetaState.fresh(1)
    totals = []
    for _ in range(10):
        state = bayes_update(maybe_reset(state, policy), np.array([1]), 2)
        totals.append(float(state.alpha[0] + state.beta[0]))
    assert totals == sorted(totals) and totals[-1] == 2 + 20


def test_suggest_gamma():
    assert suggest_gamma(1.0) == 1
    assert suggest_gamma(0.1) == 10
    assert suggest_gamma(0.5) == 2
    with pytest.raises(ConfigError):
        suggest_gamma(0.0)


def test_reset_policy_rejects_negative():
    with pytest.raises(ConfigError):
        ResetPolicy(-1)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 12), st.integers(1, 40), st.integers(0, 2 ** 32 - 1))
def test_bayes_gamma_one_equals_simple(K, d, seed):
    gen = np.random.default_rng(seed)
    agg = BayesAggregator(d, 1.0, ResetPolicy(1))
    for _ in range(3):
        masks = list((gen.random((K, d)) < gen.random(d)).astype(np.uint8))
        np.testing.assert_array_equal(agg(masks), simple_aggregate(masks))
