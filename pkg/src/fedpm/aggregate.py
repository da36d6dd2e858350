"""Server-side aggregation of binary uplinks.

Two policies share the same inputs (a list of decoded 0/1 masks):

* plain averaging, an unbiased estimate of the clients' mean probability;
* a per-parameter Beta posterior updated with the clients' votes, whose
  mode is broadcast, with the prior reset every ``gamma`` rounds.
"""
from dataclasses import dataclass

import numpy as np

from .errors import AggregationError, ConfigError, ProtocolError
from .masks import EPS_THETA, clamp

NEVER = 0


def simple_aggregate(masks):
    if len(masks) == 0:
        raise AggregationError("cannot aggregate an empty list of masks")
    try:
        stacked = np.asarray([np.asarray(m) for m in masks], dtype=np.float64)
    except ValueError:
        raise AggregationError("masks must be equal-length vectors") from None
    if stacked.ndim != 2:
        raise AggregationError("masks must be equal-length vectors")
    return clamp(stacked.mean(axis=0))


def vote_counts(masks):
    """Per-coordinate number of ones across the uplinks (integer vector)."""
    if len(masks) == 0:
        raise AggregationError("cannot aggregate an empty list of masks")
    total = np.zeros(np.asarray(masks[0]).shape, dtype=np.int64)
    for m in masks:
        m = np.asarray(m)
        if m.shape != total.shape:
            raise AggregationError("masks must be equal-length vectors")
        total += m.astype(np.int64)
    return total


def estimation_error_bound(d, K):
    """Upper bound d / (4K) on E||mean(masks) - mean(theta)||^2."""
    if d < 1 or K < 1:
        raise ConfigError("d and K must be >= 1")
    return d / (4.0 * K)


@dataclass(frozen=True)
class ResetPolicy:
    """Reset the Beta priors every ``gamma`` rounds; ``gamma=NEVER`` disables resets."""
    gamma: int = 1

    def __post_init__(self):
        if self.gamma < 0:
            raise ConfigError("gamma must be >= 1 (or NEVER)")

    @property
    def never(self):
        return self.gamma == NEVER


@dataclass(frozen=True)
class BetaState:
    alpha: np.ndarray
    beta: np.ndarray
    lambda0: float = 1.0
    rounds_since_reset: int = 0

    @classmethod
    def fresh(cls, d, lambda0=1.0):
        if lambda0 <= 0:
            raise ConfigError("lambda0 must be > 0")
        return cls(np.full(d, float(lambda0)), np.full(d, float(lambda0)), float(lambda0), 0)


def bayes_update(state, m_agg, K):
    m_agg = np.asarray(m_agg)
    if m_agg.shape != state.alpha.shape:
        raise ProtocolError(f"vote vector length {m_agg.shape} != d={state.alpha.shape}")
    if m_agg.size and (m_agg.min() < 0 or m_agg.max() > K):
        raise ProtocolError(f"vote counts must lie in [0, {K}]")
    return BetaState(
        state.alpha + m_agg,
        state.beta + (K - m_agg),
        state.lambda0,
        state.rounds_since_reset + 1,
    )


def beta_mode(state):
    num = state.alpha - 1.0
    den = state.alpha + state.beta - 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        theta = np.where(den == 0, 0.5, num / np.where(den == 0, 1.0, den))
    return clamp(theta)


def maybe_reset(state, policy):
    if policy.never or state.rounds_since_reset < policy.gamma:
        return state
    return BetaState.fresh(state.alpha.shape[0], state.lambda0)


def suggest_gamma(rho):
    """Reset period around 1/rho (rounds needed, on average, to revisit every client)."""
    if not rho > 0 or rho > 1:
        raise ConfigError("participation ratio must lie in (0, 1]")
    return max(1, int(round(1.0 / rho)))


class BayesAggregator:
    """Stateful server aggregator: reset check, posterior update, then mode."""

    def __init__(self, d, lambda0=1.0, policy=ResetPolicy(1)):
        self.state = BetaState.fresh(d, lambda0)
        self.policy = policy

    def __call__(self, masks):
        votes = vote_counts(masks)
        self.state = maybe_reset(self.state, self.policy)
        self.state = bayes_update(self.state, votes, len(masks))
        return beta_mode(self.state)


class SimpleAggregator:
    def __call__(self, masks):
        return simple_aggregate(masks)


__all__ = [
    "EPS_THETA", "NEVER", "BetaState", "ResetPolicy", "BayesAggregator", "SimpleAggregator",
    "simple_aggregate", "vote_counts", "estimation_error_bound", "bayes_update", "beta_mode",
    "maybe_reset", "suggest_gamma",
]
