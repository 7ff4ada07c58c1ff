"""Small fully connected networks with hand-written reverse mode and Adam."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .geometry import SampleSet

LEAKY_SLOPE = 0.01
DEFAULT_HIDDEN = (256, 256, 256)
DEFAULT_LIFTING_DIM = 16


def _act(name, a):
    if name == "leaky_relu":
        return np.maximum(a, LEAKY_SLOPE * a)
    if name == "tanh":
        return np.tanh(a)
    raise ValueError(f"unknown activation {name!r}")


def _act_backprop(name, delta, a, h):
    if name == "leaky_relu":
        return np.where(a > 0, delta, LEAKY_SLOPE * delta)
    return delta * (1.0 - h * h)


@dataclass
class MLP:
    """Fully connected network with a linear output layer.

    ``weights[l]`` has shape (out, in) and the layer computes
    ``h @ weights[l].T + biases[l]``.
    """

    layer_sizes: tuple
    weights: list
    biases: list
    activation: str = "leaky_relu"

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("parameter count does not match layer_sizes")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.layer_sizes[l + 1], self.layer_sizes[l])
            if w.shape != shape or b.shape != (shape[0],):
                raise ValueError(f"layer {l} has shape {w.shape}, expected {shape}")
        _act(self.activation, np.zeros(1))

    @classmethod
    def init(cls, layer_sizes, seed=0, activation="leaky_relu"):
        """Fan-in scaled uniform initialization, U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
        sizes = tuple(int(s) for s in layer_sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"invalid layer sizes {layer_sizes}")
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(sizes, weights, biases, activation)

    @classmethod
    def zeros(cls, layer_sizes, activation="leaky_relu"):
        sizes = tuple(int(s) for s in layer_sizes)
        weights = [np.zeros((o, i)) for i, o in zip(sizes[:-1], sizes[1:])]
        return cls(sizes, weights, [np.zeros(o) for o in sizes[1:]], activation)

    @property
    def n_params(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self):
        return copy.deepcopy(self)

    def get_flat(self) -> np.ndarray:
        """Parameters in layer order: weights row-major, then biases."""
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(self.weights, self.biases)])

    def set_flat(self, flat):
        flat = np.asarray(flat, dtype=float)
        if flat.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {flat.size}")
        pos = 0
        for l, w in enumerate(self.weights):
            self.weights[l] = flat[pos : pos + w.size].reshape(w.shape).copy()
            pos += w.size
            nb = self.biases[l].size
            self.biases[l] = flat[pos : pos + nb].copy()
            pos += nb
        return self

    def forward(self, x, keep=False, dtype=np.float64):
        """Evaluate the network; ``dtype`` sets the compute precision."""
        h = np.asarray(x, dtype=dtype)
        cache = [h]
        last = len(self.weights) - 1
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = h @ w.T.astype(dtype, copy=False) + b.astype(dtype, copy=False)
            h = a if l == last else _act(self.activation, a)
            if keep:
                cache += [a, h]
        return (h, cache) if keep else h

    def backward(self, cache, upstream):
        """Parameter gradients of ``sum(upstream * output)``, as a flat vector."""
        out = cache[-1]
        upstream = np.asarray(upstream, dtype=out.dtype)
        if upstream.shape != out.shape:
            raise ValueError(f"upstream shape {upstream.shape} does not match output {out.shape}")
        grads = []
        delta = upstream
        for l in range(len(self.weights) - 1, -1, -1):
            h_in = cache[2 * l]
            grads.append((delta.T @ h_in, delta.sum(axis=0)))
            if l == 0:
                break
            delta = delta @ self.weights[l].astype(out.dtype, copy=False)
            a, h = cache[2 * l - 1], cache[2 * l]
            delta = _act_backprop(self.activation, delta, a, h)
        grads.reverse()
        return np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads]).astype(np.float64)


class MappingNetwork(MLP):
    """MLP from the unit ball to R^(3+K): point coordinates then K lifting coordinates."""

    @property
    def lifting_dim(self):
        return self.layer_sizes[-1] - 3


def init_network(layer_sizes=None, lifting_dim=DEFAULT_LIFTING_DIM, seed=0) -> MappingNetwork:
    if layer_sizes is None:
        layer_sizes = (3, *DEFAULT_HIDDEN, 3 + lifting_dim)
    layer_sizes = tuple(layer_sizes)
    if lifting_dim < 1:
        raise ValueError("lifting_dim must be >= 1")
    if layer_sizes[0] != 3 or layer_sizes[-1] != 3 + lifting_dim:
        raise ValueError(f"layer sizes {layer_sizes} do not map R^3 to R^{3 + lifting_dim}")
    net = MappingNetwork.init(layer_sizes, seed=seed)
    return net


@dataclass
class LiftedEmbedding:
    rows: np.ndarray

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=float)
        if self.rows.ndim != 2 or self.rows.shape[1] < 4:
            raise ValueError("embedding rows must have at least 4 columns")

    def __len__(self):
        return len(self.rows)

    @property
    def X(self):
        return self.rows[:, :3]

    @property
    def W(self):
        return self.rows[:, 3:]

    @property
    def lifting_dim(self):
        return self.rows.shape[1] - 3

    def predicted_geodesic(self, i, j):
        return np.linalg.norm(self.rows[i] - self.rows[j], axis=-1)


def _samples(samples):
    return samples.samples if isinstance(samples, SampleSet) else np.asarray(samples, dtype=float)


def forward(net: MLP, samples) -> LiftedEmbedding:
    return LiftedEmbedding(net.forward(_samples(samples)))


def backward(net: MLP, samples, upstream) -> np.ndarray:
    _, cache = net.forward(_samples(samples), keep=True)
    return net.backward(cache, upstream)


# --- Adam ---------------------------------------------------------------


@dataclass
class AdamConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n), 0)

    def copy(self):
        return AdamState(self.m.copy(), self.v.copy(), self.t)


def adam_step(state: AdamState, params, grads, config: AdamConfig = AdamConfig()):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``."""
    t = state.t + 1
    m = config.beta1 * state.m + (1 - config.beta1) * grads
    v = config.beta2 * state.v + (1 - config.beta2) * grads * grads
    m_hat = m / (1 - config.beta1 ** t)
    v_hat = v / (1 - config.beta2 ** t)
    new = params - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon)
    return new, AdamState(m, v, t)


# --- code-conditioned hypernetwork ----------------------------------------


@dataclass
class HyperNetwork:
    """Linear generator ``theta = base + G @ code`` for a fixed target architecture."""

    code_dim: int
    target_sizes: tuple
    G: np.ndarray
    base: np.ndarray
    codes: dict = field(default_factory=dict)

    def __post_init__(self):
        n = MappingNetwork.zeros(self.target_sizes).n_params
        if self.G.shape != (n, self.code_dim) or self.base.shape != (n,):
            raise ValueError("generator output size does not match the target network")

    @classmethod
    def init(cls, code_dim, target_sizes, seed=0, spread=0.1):
        target_sizes = tuple(target_sizes)
        base = MappingNetwork.init(target_sizes, seed=seed).get_flat()
        rng = np.random.default_rng(seed + 1)
        G = rng.uniform(-spread, spread, size=(base.size, code_dim)) * np.abs(base)[:, None].mean()
        return cls(code_dim, target_sizes, G, base)

    def generate(self, code) -> MappingNetwork:
        net = MappingNetwork.zeros(self.target_sizes)
        return net.set_flat(self.base + self.G @ np.asarray(code, dtype=float))
