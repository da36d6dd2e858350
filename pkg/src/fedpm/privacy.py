"""Gaussian-mechanism toolkit for probability masks.

Client probabilities live in [c, 1-c]; the mechanism adds Gaussian noise and
clips back into that interval. Clipping biases the released value towards the
centre, so the server inverts the (monotone) map theta -> E[clip(theta + eta)]
with a lookup table. All logarithms are natural.
"""
from dataclasses import dataclass
import math

import numpy as np
from scipy.special import ndtr

from .errors import PrivacyError


@dataclass(frozen=True)
class DPConfig:
    epsilon: float
    delta: float
    clip: float
    d: int

    def __post_init__(self):
        if not self.epsilon > 0:
            raise PrivacyError("epsilon must be > 0")
        if not 0 < self.delta < 1:
            raise PrivacyError("delta must lie in (0, 1)")
        if not 0 < self.clip <= 0.5:
            raise PrivacyError("clip must lie in (0, 0.5]")
        if self.d < 1:
            raise PrivacyError("d must be >= 1")

    @property
    def sensitivity(self):
        return (1.0 - 2.0 * self.clip) * math.sqrt(self.d)


def gaussian_sigma(cfg):
    """Noise std for (epsilon, delta)-DP with l2 sensitivity (1-2c) sqrt(d)."""
    if math.isinf(cfg.epsilon):
        return 0.0
    return math.sqrt(2.0 * math.log(1.25 / cfg.delta)) * cfg.sensitivity / cfg.epsilon


def clip(values, c):
    return np.clip(values, c, 1.0 - c)


def privatize(theta, sigma, c, gen):
    theta = np.asarray(theta, dtype=np.float64)
    tol = 1e-12
    if theta.size and (theta.min() < c - tol or theta.max() > 1.0 - c + tol):
        raise PrivacyError(f"theta must lie in [{c}, {1 - c}] before privatization")
    if sigma == 0:
        return clip(theta, c)
    return clip(theta + gen.normal(0.0, sigma, size=theta.shape), c)


def expected_clipped(theta, sigma, c):
    """E[clip(theta + eta)] for eta ~ N(0, sigma^2), clipped to [c, 1-c].

    Splits the integral at the two clip points: the tails contribute c and
    1-c times their Gaussian mass, the middle contributes theta times its
    mass plus the truncated first moment of eta.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if sigma == 0:
        return theta.copy() if theta.ndim else float(theta)
    a = (c - theta) / sigma
    b = (1.0 - c - theta) / sigma
    phi_a, phi_b = ndtr(a), ndtr(b)
    first_moment = sigma / math.sqrt(2.0 * math.pi) * (np.exp(-0.5 * a * a) - np.exp(-0.5 * b * b))
    value = c * phi_a + theta * (phi_b - phi_a) + first_moment + (1.0 - c) * (1.0 - phi_b)
    return value if value.ndim else float(value)


@dataclass(frozen=True)
class BiasTable:
    sigma: float
    c: float
    x: np.ndarray
    y: np.ndarray

    @property
    def monotone(self):
        return bool(np.all(np.diff(self.y) >= 0))

    @property
    def resolution(self):
        return (1.0 - 2.0 * self.c) / (len(self.x) - 1)


def build_bias_table(sigma, c, Q=1024):
    if Q < 2:
        raise PrivacyError("bias table needs Q >= 2 points")
    x = np.linspace(c, 1.0 - c, Q)
    return BiasTable(float(sigma), float(c), x, np.asarray(expected_clipped(x, sigma, c)))


@dataclass(frozen=True)
class Correction:
    value: np.ndarray
    interpolated: bool


def correct_bias(estimate, table, with_flag=False):
    """Invert theta -> E[clip(theta + eta)] using ``table``.

    Monotone tables are inverted by linear interpolation between the
    bracketing points; otherwise the nearest tabulated output is used and the
    result is flagged as not interpolated.
    """
    est = np.asarray(estimate, dtype=np.float64)
    if table.sigma == 0:
        out = est.copy()
        interpolated = True
    elif table.monotone:
        y = table.y
        # flat stretches at the ends make np.interp ambiguous; keep strictly increasing points
        keep = np.concatenate([[True], np.diff(y) > 0])
        out = np.interp(est, y[keep], table.x[keep])
        interpolated = True
    else:
        nearest = np.abs(table.y[None, :] - est.reshape(-1, 1)).argmin(axis=1)
        out = table.x[nearest].reshape(est.shape)
        interpolated = False
    out = out if out.ndim else float(out)
    if with_flag:
        return Correction(out, interpolated)
    return out


def renyi_binary(alpha, p):
    """Renyi divergence of order alpha between Bern(p) and Bern(1-p), in nats."""
    if not alpha > 1:
        raise PrivacyError("alpha must be > 1")
    if p <= 0 or p >= 1:
        raise PrivacyError("divergence is infinite for p in {0, 1}")
    s = p ** alpha * (1 - p) ** (1 - alpha) + (1 - p) ** alpha * p ** (1 - alpha)
    return math.log(s) / (alpha - 1)


def amplified_epsilon(eps, d, alpha, c):
    """Privacy budget after releasing one Bernoulli sample of the privatized mask."""
    return min(eps, d * renyi_binary(alpha, c))


def rdp_to_dp(alpha, eps_rdp, delta):
    if not alpha > 1:
        raise PrivacyError("alpha must be > 1")
    if not 0 < delta <= 1:
        raise PrivacyError("delta must lie in (0, 1]")
    return eps_rdp + math.log(1.0 / delta) / (alpha - 1)


def private_mean_estimate(thetas, sigma, c, gen, table=None):
    """Server estimate of the clients' mean mask under the clipped Gaussian mechanism.

    Each row of ``thetas`` is privatized, released as one Bernoulli sample,
    and the samples are averaged. With ``table`` the average is mapped back
    through the inverse of the clipping bias.
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
    noisy = privatize(thetas, sigma, c, gen)
    samples = gen.random(noisy.shape) < noisy
    estimate = samples.mean(axis=0)
    if table is not None:
        estimate = np.asarray(correct_bias(np.clip(estimate, c, 1.0 - c), table))
    return estimate
