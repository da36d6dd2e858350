"""Bias-free dense network over a flat weight vector.

The network never owns its weights: ``forward`` takes the effective weight
vector (the masked frozen weights) so the same architecture can be evaluated
under any mask without copying parameters around.
"""
from dataclasses import dataclass, field
import hashlib
import math

import numpy as np

from . import rng
from .errors import ArchitectureError, DataError, ShapeError, UsageError

ACTIVATIONS = ("relu", "identity")


@dataclass(frozen=True)
class Layer:
    fan_in: int
    fan_out: int
    activation: str = "relu"


@dataclass(frozen=True)
class NetworkArch:
    layers: tuple

    def __post_init__(self):
        layers = tuple(Layer(*l) if not isinstance(l, Layer) else l for l in self.layers)
        object.__setattr__(self, "layers", layers)
        if not layers:
            raise ArchitectureError("architecture needs at least one layer")
        for i, layer in enumerate(layers):
            if layer.fan_in < 1 or layer.fan_out < 1:
                raise ArchitectureError(f"layer {i} has non-positive dimension")
            if layer.activation not in ACTIVATIONS:
                raise ArchitectureError(f"layer {i}: unknown activation {layer.activation!r}")
            if i and layers[i - 1].fan_out != layer.fan_in:
                raise ArchitectureError(
                    f"layer {i} fan_in {layer.fan_in} != layer {i - 1} fan_out {layers[i - 1].fan_out}"
                )
        if layers[-1].activation != "identity":
            raise ArchitectureError("last layer must use identity activation (logits)")

    @classmethod
    def mlp(cls, sizes):
        """``mlp([784, 200, 200, 10])``: ReLU hidden layers, identity output."""
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2:
            raise ArchitectureError("mlp needs at least input and output sizes")
        n = len(sizes) - 1
        return cls(tuple(
            Layer(sizes[i], sizes[i + 1], "identity" if i == n - 1 else "relu") for i in range(n)
        ))

    @property
    def sizes(self):
        return [self.layers[0].fan_in] + [l.fan_out for l in self.layers]

    @property
    def num_params(self):
        return sum(l.fan_in * l.fan_out for l in self.layers)

    @property
    def num_inputs(self):
        return self.layers[0].fan_in

    @property
    def num_outputs(self):
        return self.layers[-1].fan_out

    def offsets(self):
        out, pos = [], 0
        for l in self.layers:
            out.append(pos)
            pos += l.fan_in * l.fan_out
        out.append(pos)
        return out

    def unflatten(self, vector):
        """Views of ``vector`` as per-layer (fan_in, fan_out) matrices."""
        vector = np.asarray(vector)
        if vector.shape != (self.num_params,):
            raise ShapeError(f"expected weight vector of length {self.num_params}, got {vector.shape}")
        off = self.offsets()
        return [vector[off[i]:off[i + 1]].reshape(l.fan_in, l.fan_out) for i, l in enumerate(self.layers)]

    def describe(self):
        return "-".join(str(s) for s in self.sizes)


def kaiming_sigma(fan_in):
    """Kaiming normal std for ReLU in fan-in mode: sqrt(2 / fan_in)."""
    if fan_in < 1:
        raise ArchitectureError("fan_in must be >= 1")
    return math.sqrt(2.0 / fan_in)


@dataclass(frozen=True)
class FrozenWeights:
    seed: int
    arch: NetworkArch
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values.setflags(write=False)

    def digest(self):
        return hashlib.sha256(self.values.tobytes()).hexdigest()

    def layer_sigmas(self):
        """Per-parameter magnitude |w_i| (the owning layer's sigma)."""
        return np.concatenate([
            np.full(l.fan_in * l.fan_out, kaiming_sigma(l.fan_in)) for l in self.arch.layers
        ])


WEIGHT_STREAM = "frozen-weights"


def init_frozen_weights(arch, seed):
    """Signed-constant weights: each entry is +/-sigma_layer with probability 1/2.

    Layer ``l`` draws from its own Philox stream keyed by (seed, l); entry
    ``j`` of that layer uses the j-th raw word, so the values do not depend on
    the sizes of other layers.
    """
    seed = int(seed)
    if not 0 <= seed < 2 ** 64:
        raise ArchitectureError("seed must fit in 64 unsigned bits")
    parts = []
    for index, layer in enumerate(arch.layers):
        n = layer.fan_in * layer.fan_out
        words = rng.counter_bits(seed, (WEIGHT_STREAM, index), n)
        sign = np.where((words >> np.uint64(63)) == 1, 1.0, -1.0)
        parts.append(sign * kaiming_sigma(layer.fan_in))
    return FrozenWeights(seed, arch, np.concatenate(parts))


@dataclass
class ForwardCache:
    arch: NetworkArch
    weights: list
    inputs: list
    pre: list

    @property
    def num_layers(self):
        return len(self.pre)


def _check_input(arch, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != arch.num_inputs:
        raise ShapeError(f"input must have {arch.num_inputs} features, got shape {x.shape}")
    return x


def forward(arch, effective_weights, x):
    """Dense forward pass. Returns ``(logits, cache)``."""
    mats = arch.unflatten(np.asarray(effective_weights, dtype=np.float64))
    h = _check_input(arch, x)
    inputs, pre = [], []
    for layer, w in zip(arch.layers, mats):
        inputs.append(h)
        z = h @ w
        pre.append(z)
        h = np.maximum(z, 0.0) if layer.activation == "relu" else z
    return h, ForwardCache(arch, mats, inputs, pre)


def predict(arch, effective_weights, x, batch_size=4096):
    x = _check_input(arch, x)
    mats = arch.unflatten(np.asarray(effective_weights, dtype=np.float64))
    out = []
    for start in range(0, len(x), batch_size):
        h = x[start:start + batch_size]
        for layer, w in zip(arch.layers, mats):
            h = h @ w
            if layer.activation == "relu":
                np.maximum(h, 0.0, out=h)
        out.append(np.argmax(h, axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def loss_and_grad(logits, labels):
    """Mean softmax cross-entropy and its gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim == 1:
        logits = logits[None, :]
    labels = np.asarray(labels).reshape(-1)
    n, k = logits.shape
    if labels.shape[0] != n:
        raise ShapeError(f"{labels.shape[0]} labels for {n} logit rows")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise DataError(f"labels must lie in [0, {k})")
    labels = labels.astype(np.int64)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(log_norm - shifted[rows, labels]))
    grad = np.exp(shifted - log_norm[:, None])
    grad[rows, labels] -= 1.0
    return loss, grad / n


def backward(arch, cache, grad_logits):
    """Gradient of the loss w.r.t. the flat effective weight vector."""
    if cache.arch != arch or cache.num_layers != len(arch.layers):
        raise UsageError("forward cache does not belong to this architecture")
    g = np.asarray(grad_logits, dtype=np.float64)
    if g.shape != cache.pre[-1].shape:
        raise UsageError(f"grad_logits shape {g.shape} does not match cached logits {cache.pre[-1].shape}")
    grads = [None] * len(arch.layers)
    for i in range(len(arch.layers) - 1, -1, -1):
        if arch.layers[i].activation == "relu":
            g = g * (cache.pre[i] > 0)
        grads[i] = cache.inputs[i].T @ g
        if i:
            g = g @ cache.weights[i].T
    return np.concatenate([gr.reshape(-1) for gr in grads])
