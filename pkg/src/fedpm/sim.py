"""Federated simulation loop, final-model distillation and the SignSGD baseline."""
from dataclasses import dataclass, field
import logging
import time

import numpy as np

from . import codec, nn, rng
from .aggregate import BayesAggregator, ResetPolicy, SimpleAggregator, suggest_gamma
from .data import load_mnist, partition_iid, partition_noniid, synth_split
from .errors import ConfigError, DataError, DivergedError, ProtocolError, ShapeError
from .masks import sample_mask, sigmoid, train_scores
from .privacy import DPConfig, gaussian_sigma, privatize

log = logging.getLogger(__name__)


@dataclass
class RoundMetrics:
    round: int
    accuracy: float
    bpp: float
    ones_frequency: float
    entropy_bpp: float
    theta_mean: float
    participants: list
    wall_time: float = field(default=0.0, compare=False)


@dataclass
class ExperimentResult:
    config: object
    metrics: list
    artifact: bytes
    initial_accuracy: float
    weight_seed: int
    thetas: list = field(default_factory=list, repr=False)

    @property
    def final_accuracy(self):
        return self.metrics[-1].accuracy


def derive_weight_seed(master_seed):
    """64-bit SEED for the frozen weights, derived from the master seed."""
    return int(rng.stream(master_seed, "weight-seed").integers(0, 2 ** 63, dtype=np.int64))


def load_data(cfg):
    if cfg.dataset == "mnist":
        if not cfg.data_dir:
            raise ConfigError("dataset=mnist needs data_dir")
        train, test = load_mnist(cfg.data_dir, "train"), load_mnist(cfg.data_dir, "test")
    else:
        train, test = synth_split(cfg.data_seed, cfg.synthetic_train, cfg.synthetic_test,
                                  cfg.arch[0], cfg.arch[-1], cfg.synthetic_separation)
    if train.num_features != cfg.arch[0] or test.num_features != cfg.arch[0]:
        raise ShapeError(f"data has {train.num_features} features, arch expects {cfg.arch[0]}")
    return train, test


def make_shards(cfg, train):
    gen = rng.stream(cfg.seed, "partition")
    if cfg.partition == "iid":
        return partition_iid(train, cfg.num_clients, gen)
    return partition_noniid(train, cfg.num_clients, cfg.c_max, gen)


def global_init(cfg):
    """Frozen weights and the initial broadcast probability mask."""
    arch = cfg.network
    weights = nn.init_frozen_weights(arch, derive_weight_seed(cfg.seed))
    scores = rng.stream(cfg.seed, "server-scores").normal(0.0, cfg.score_init_std, arch.num_params)
    return weights, sigmoid(scores)


def distill_final(theta, mode="threshold", alpha_ths=0.5, seed=0):
    """Binary mask for the final model: hard threshold (ties -> 0) or one Bernoulli draw."""
    theta = np.asarray(theta, dtype=np.float64)
    if mode == "threshold":
        return (theta > alpha_ths).astype(np.uint8)
    if mode == "sample":
        return sample_mask(theta, rng.stream(seed, "final-mask"))
    raise ConfigError(f"unknown distillation mode {mode!r}")


def accuracy(arch, effective_weights, test):
    if len(test) == 0:
        raise DataError("test set is empty")
    if test.num_features != arch.num_inputs:
        raise ShapeError(f"test set has {test.num_features} features, arch expects {arch.num_inputs}")
    return float(np.mean(nn.predict(arch, effective_weights, test.samples) == test.labels))


def evaluate(artifact, test):
    """Top-1 accuracy of the sparse network stored in a model file."""
    arch, seed, mask = codec.deserialize_model(artifact)
    weights = nn.init_frozen_weights(arch, seed)
    return accuracy(arch, weights.values * mask, test)


def evaluate_theta(theta, weights, test, mode="threshold", alpha_ths=0.5, seed=0):
    mask = distill_final(theta, mode, alpha_ths, seed)
    return accuracy(weights.arch, weights.values * mask, test)


def _make_aggregator(cfg, d):
    if cfg.aggregation == "simple":
        return SimpleAggregator()
    gamma = suggest_gamma(cfg.rho) if cfg.gamma == -1 else cfg.gamma
    return BayesAggregator(d, cfg.lambda0, ResetPolicy(gamma))


def client_update(cfg, t, k, theta_global, weights, shard, dp_sigma=None):
    """One client's round: local training, optional privatization, uplink bytes."""
    gen = rng.stream(cfg.seed, "client", k, t)
    scores, _ = train_scores(theta_global, weights, shard, cfg.client_config(), gen,
                             round_index=t, client=k)
    theta = sigmoid(scores)
    if dp_sigma is not None:
        c = cfg.dp_clip
        theta = privatize(np.clip(theta, c, 1.0 - c), dp_sigma, c, gen)
    return codec.encode_mask(sample_mask(theta, gen)).to_bytes()


def run_experiment(cfg, data=None, keep_thetas=False, progress=None):
    """Run ``cfg.rounds`` rounds of FedPM (or the SignSGD baseline)."""
    cfg.validate()
    train, test = data if data is not None else load_data(cfg)
    if cfg.baseline == "signsgd":
        return run_signsgd(cfg, (train, test))
    shards = make_shards(cfg, train)
    weights, theta = global_init(cfg)
    arch, d = weights.arch, weights.arch.num_params
    server_digest = weights.digest()
    dp_sigma = None
    if cfg.dp_enabled:
        dp_sigma = gaussian_sigma(DPConfig(cfg.dp_epsilon, cfg.dp_delta, cfg.dp_clip, d))
    aggregator = _make_aggregator(cfg, d)
    server_gen = rng.stream(cfg.seed, "server", "participants")
    initial_accuracy = evaluate_theta(theta, weights, test, cfg.distill, cfg.alpha_ths,
                                      seed=_eval_seed(cfg, 0))
    metrics, thetas = [], [theta] if keep_thetas else []
    for t in range(1, cfg.rounds + 1):
        start = time.perf_counter()
        participants = sorted(int(k) for k in server_gen.choice(cfg.num_clients, cfg.clients_per_round,
                                                                 replace=False))
        masks, rates, freqs, entropies = [], [], [], []
        for k in participants:
            # each client rebuilds w_init from the broadcast SEED
            client_weights = nn.init_frozen_weights(arch, weights.seed)
            if client_weights.digest() != server_digest:
                raise ProtocolError(f"frozen weights diverged at client {k}, round {t}")
            uplink = client_update(cfg, t, k, theta, client_weights, shards[k], dp_sigma)
            coded = codec.CodedMask.from_bytes(uplink)
            masks.append(codec.decode_mask(coded))
            rates.append(8 * len(uplink) / d)
            freqs.append(coded.frequency)
            entropies.append(codec.empirical_entropy(coded.frequency))
        theta = aggregator(masks)
        if keep_thetas:
            thetas.append(theta)
        acc = evaluate_theta(theta, weights, test, cfg.distill, cfg.alpha_ths, seed=_eval_seed(cfg, t))
        m = RoundMetrics(t, acc, float(np.mean(rates)), float(np.mean(freqs)),
                         float(np.mean(entropies)), float(np.mean(theta)), participants,
                         time.perf_counter() - start)
        metrics.append(m)
        log.info("round %d: acc=%.4f bpp=%.4f p1=%.3f", t, acc, m.bpp, m.ones_frequency)
        if progress is not None:
            progress(m)
    final_mask = distill_final(theta, cfg.distill, cfg.alpha_ths, seed=_eval_seed(cfg, cfg.rounds))
    artifact = codec.serialize_model(arch, weights.seed, final_mask)
    return ExperimentResult(cfg, metrics, artifact, initial_accuracy, weights.seed, thetas)


def _eval_seed(cfg, t):
    return int(rng.stream(cfg.seed, "distill", t).integers(0, 2 ** 63, dtype=np.int64))


def majority_vote(signs):
    """Elementwise sign of the summed +/-1 votes; ties give 0."""
    return np.sign(np.sum(np.asarray(signs, dtype=np.int64), axis=0)).astype(np.float64)


def signsgd_round(global_weights, arch, shards, cfg, server_lr, gens, t=None, participants=None):
    """One SignSGD round with majority vote.

    Each client runs dense local SGD from ``global_weights`` and uplinks the
    sign of its weight change, coded as a binary mask (1 = non-negative).
    Returns ``(new_weights, mean_bpp)``.
    """
    participants = range(len(shards)) if participants is None else participants
    signs, rates = [], []
    for k, gen in zip(participants, gens):
        local = dense_local_train(global_weights, arch, shards[k], cfg, gen, t, k)
        bits = (local - global_weights >= 0).astype(np.uint8)
        uplink = codec.encode_mask(bits).to_bytes()
        decoded = codec.decode_mask(uplink)
        signs.append(2 * decoded.astype(np.int64) - 1)
        rates.append(8 * len(uplink) / arch.num_params)
    return global_weights + server_lr * majority_vote(signs), float(np.mean(rates))


def dense_local_train(weights, arch, shard, cfg, gen, t=None, k=None):
    w = np.array(weights, dtype=np.float64)
    n = len(shard)
    for _ in range(cfg.local_epochs):
        order = gen.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            logits, cache = nn.forward(arch, w, shard.samples[idx])
            loss, g = nn.loss_and_grad(logits, shard.labels[idx])
            if not np.isfinite(loss):
                raise DivergedError("non-finite local loss", t, k)
            w -= cfg.learning_rate * nn.backward(arch, cache, g)
    return w


def run_signsgd(cfg, data):
    train, test = data
    shards = make_shards(cfg, train)
    arch = cfg.network
    frozen = nn.init_frozen_weights(arch, derive_weight_seed(cfg.seed))
    w = np.array(frozen.values)
    server_gen = rng.stream(cfg.seed, "server", "participants")
    initial_accuracy = accuracy(arch, w, test)
    metrics = []
    for t in range(1, cfg.rounds + 1):
        start = time.perf_counter()
        participants = sorted(int(k) for k in server_gen.choice(cfg.num_clients, cfg.clients_per_round,
                                                                 replace=False))
        gens = [rng.stream(cfg.seed, "client", k, t) for k in participants]
        w, bpp = signsgd_round(w, arch, shards, cfg.client_config(), cfg.server_lr, gens, t, participants)
        acc = accuracy(arch, w, test)
        metrics.append(RoundMetrics(t, acc, bpp, 0.5, 1.0, float("nan"), participants,
                                    time.perf_counter() - start))
        log.info("signsgd round %d: acc=%.4f bpp=%.4f", t, acc, bpp)
    return ExperimentResult(cfg, metrics, b"", initial_accuracy, frozen.seed)
