"""Client-side probabilistic mask training.

Masks are plain numpy arrays: scores and probabilities are float64 vectors,
sampled binary masks are uint8 vectors of 0/1.
"""
from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import ClientError, ConfigError, DivergedError, ShapeError

EPS_THETA = 1e-6


OPTIMIZERS = ("adam", "sgd")


@dataclass(frozen=True)
class ClientConfig:
    learning_rate: float = 0.1
    local_epochs: int = 3
    batch_size: int = 128
    optimizer: str = "adam"

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}")
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.local_epochs < 1:
            raise ConfigError("local_epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")


def clamp(theta, eps=EPS_THETA):
    return np.clip(np.asarray(theta, dtype=np.float64), eps, 1.0 - eps)


def sigmoid(s):
    s = np.asarray(s, dtype=np.float64)
    # exp(-|s|) never overflows; pick the branch per sign
    e = np.exp(-np.abs(s))
    theta = np.where(s >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return clamp(theta)


def inv_sigmoid(theta):
    theta = clamp(theta)
    return np.log(theta) - np.log1p(-theta)


def sample_mask(theta, gen):
    """One independent Bernoulli draw per coordinate."""
    theta = np.asarray(theta, dtype=np.float64)
    return (gen.random(theta.shape) < theta).astype(np.uint8)


def masked_weights(mask, weights):
    values = weights.values if isinstance(weights, nn.FrozenWeights) else np.asarray(weights)
    mask = np.asarray(mask)
    if mask.shape != values.shape:
        raise ShapeError(f"mask length {mask.shape} != weight length {values.shape}")
    return values * mask


def ste_score_grad(grad_w_dot, weights, theta):
    """Score gradient through w_dot = m * w with m treated as theta (identity STE)."""
    values = weights.values if isinstance(weights, nn.FrozenWeights) else np.asarray(weights)
    grad_w_dot = np.asarray(grad_w_dot, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    if not grad_w_dot.shape == values.shape == theta.shape:
        raise ShapeError("grad, weights and theta must have equal length")
    return grad_w_dot * values * theta * (1.0 - theta)


class Adam:
    """Adam on the score vector; state starts fresh for every local training run."""

    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, params, grad):
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * grad
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        params -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class SGD:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params, grad):
        params -= self.lr * grad


def make_optimizer(cfg):
    return Adam(cfg.learning_rate) if cfg.optimizer == "adam" else SGD(cfg.learning_rate)


def train_scores(theta_global, weights, dataset, cfg, gen, round_index=None, client=None):
    """Run the local optimizer on the scores for ``cfg.local_epochs`` epochs.

    Returns ``(scores, epoch_losses)`` where ``epoch_losses[e]`` is the mean
    minibatch loss seen during epoch ``e``.
    """
    arch = weights.arch
    n = len(dataset)
    if n == 0:
        raise ClientError(f"client {client} has an empty dataset")
    theta_global = np.asarray(theta_global, dtype=np.float64)
    if theta_global.shape != (arch.num_params,):
        raise ShapeError(f"theta length {theta_global.shape} != d={arch.num_params}")
    scores = inv_sigmoid(theta_global)
    opt = make_optimizer(cfg)
    epoch_losses = []
    for _ in range(cfg.local_epochs):
        order = gen.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            theta = sigmoid(scores)
            mask = sample_mask(theta, gen)
            w_dot = masked_weights(mask, weights)
            logits, cache = nn.forward(arch, w_dot, dataset.samples[idx])
            loss, grad_logits = nn.loss_and_grad(logits, dataset.labels[idx])
            if not np.isfinite(loss):
                raise DivergedError("non-finite local loss", round_index, client)
            grad_w = nn.backward(arch, cache, grad_logits)
            opt.step(scores, ste_score_grad(grad_w, weights, theta))
            losses.append(loss)
        epoch_losses.append(float(np.mean(losses)))
    return scores, epoch_losses


def local_train(theta_global, weights, dataset, cfg, gen, round_index=None, client=None):
    """Train locally from the broadcast mask and return the sampled uplink mask."""
    scores, _ = train_scores(theta_global, weights, dataset, cfg, gen, round_index, client)
    return sample_mask(sigmoid(scores), gen)
