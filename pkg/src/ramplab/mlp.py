"""Dense feed-forward Q-network with exact reverse-mode gradients.

Rectifier hidden layers, identity output, double precision throughout.
Gradients are available both for parameters (training) and for the input
vector (adversarial perturbation). No framework, just numpy.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

CHECKPOINT_MAGIC = b"RLQNET01"
CHECKPOINT_VERSION = 1


class TrainingFault(RuntimeError):
    """Non-finite gradients reached the optimizer."""


class CheckpointError(ValueError):
    """Unreadable or incompatible network checkpoint."""


@dataclass
class GradientBundle:
    weight_grads: list[np.ndarray]
    bias_grads: list[np.ndarray]
    input_grad: np.ndarray


class QNetwork:
    """Multi-layer perceptron mapping a state vector to one value per action."""

    def __init__(self, layer_dims: tuple[int, ...], weights: list[np.ndarray], biases: list[np.ndarray]):
        if len(layer_dims) < 2:
            raise ValueError("need at least input and output dims")
        if len(weights) != len(layer_dims) - 1 or len(biases) != len(layer_dims) - 1:
            raise ValueError("parameter count does not match layer_dims")
        for k in range(len(weights)):
            if weights[k].shape != (layer_dims[k + 1], layer_dims[k]):
                raise ValueError(f"weight {k} has shape {weights[k].shape}")
            if biases[k].shape != (layer_dims[k + 1],):
                raise ValueError(f"bias {k} has shape {biases[k].shape}")
        self.layer_dims = tuple(int(d) for d in layer_dims)
        self.weights = weights
        self.biases = biases

    @classmethod
    def initialized(cls, layer_dims: tuple[int, ...], rng: np.random.Generator) -> "QNetwork":
        """Fan-in-scaled uniform init (He-style bound sqrt(6/fan_in))."""
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            bound = np.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(tuple(layer_dims), weights, biases)

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def n_actions(self) -> int:
        return self.layer_dims[-1]

    def copy(self) -> "QNetwork":
        return QNetwork(
            self.layer_dims,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )

    # -- forward -------------------------------------------------------------

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.input_dim:
            raise ValueError(f"input has {x.shape[-1]} features, expected {self.input_dim}")
        return x

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Q-values for one state vector."""
        x = self._check_input(x)
        if x.ndim != 1:
            raise ValueError("forward takes a single state; use forward_batch")
        return self.forward_batch(x[None, :])[0]

    def forward_batch(self, x: np.ndarray) -> np.ndarray:
        x = self._check_input(np.atleast_2d(x))
        a = x
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w.T + b
            a = z if k == last else np.maximum(z, 0.0)
        return a

    def _forward_cached(self, x: np.ndarray) -> list[np.ndarray]:
        activations = [x]
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = activations[-1] @ w.T + b
            activations.append(z if k == last else np.maximum(z, 0.0))
        return activations

    # -- backward ------------------------------------------------------------

    def backward(self, x: np.ndarray, output_grad: np.ndarray) -> GradientBundle:
        """Exact gradients of sum(output_grad * q(x)) w.r.t. parameters and input."""
        x = self._check_input(x)
        single = x.ndim == 1
        x2 = np.atleast_2d(x)
        g = np.atleast_2d(np.asarray(output_grad, dtype=float))
        if g.shape != (x2.shape[0], self.n_actions):
            raise ValueError(
                f"output grad shape {g.shape} does not match batch {x2.shape[0]} x {self.n_actions}"
            )
        acts = self._forward_cached(x2)
        weight_grads = [np.zeros_like(w) for w in self.weights]
        bias_grads = [np.zeros_like(b) for b in self.biases]
        delta = g
        for k in range(len(self.weights) - 1, -1, -1):
            weight_grads[k] = delta.T @ acts[k]
            bias_grads[k] = delta.sum(axis=0)
            if k > 0:
                delta = (delta @ self.weights[k]) * (acts[k] > 0.0)
        input_grad = delta @ self.weights[0]
        if single:
            input_grad = input_grad[0]
        return GradientBundle(weight_grads, bias_grads, input_grad)

    def input_gradient(self, x: np.ndarray, action: int) -> np.ndarray:
        """Gradient of q(x)[action] with respect to the input vector."""
        if not (0 <= action < self.n_actions):
            raise ValueError(f"action {action} outside 0..{self.n_actions - 1}")
        onehot = np.zeros(self.n_actions)
        onehot[action] = 1.0
        return self.backward(x, onehot).input_grad

    # -- persistence -----------------------------------------------------------

    def save(self, path) -> None:
        """Versioned binary checkpoint: magic, version, dims, then parameters
        (weights row-major, then bias, per layer) as little-endian float64."""
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(self.layer_dims)))
            fh.write(struct.pack(f"<{len(self.layer_dims)}I", *self.layer_dims))
            for w, b in zip(self.weights, self.biases):
                fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
                fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "QNetwork":
        try:
            with open(path, "rb") as fh:
                raw = fh.read()
        except OSError as exc:
            raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
        if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path} is not a network checkpoint (bad magic)")
        off = len(CHECKPOINT_MAGIC)
        try:
            version, n_dims = struct.unpack_from("<II", raw, off)
            off += 8
            if version != CHECKPOINT_VERSION:
                raise CheckpointError(f"unsupported checkpoint version {version}")
            dims = struct.unpack_from(f"<{n_dims}I", raw, off)
            off += 4 * n_dims
            weights, biases = [], []
            for fan_in, fan_out in zip(dims[:-1], dims[1:]):
                w_bytes = 8 * fan_out * fan_in
                w = np.frombuffer(raw, dtype="<f8", count=fan_out * fan_in, offset=off)
                off += w_bytes
                b = np.frombuffer(raw, dtype="<f8", count=fan_out, offset=off)
                off += 8 * fan_out
                weights.append(w.reshape(fan_out, fan_in).copy())
                biases.append(b.copy())
        except (struct.error, ValueError) as exc:
            raise CheckpointError(f"truncated or corrupt checkpoint {path}") from exc
        if off != len(raw):
            raise CheckpointError(f"trailing bytes in checkpoint {path}")
        return cls(tuple(dims), weights, biases)


def _validate_grads(grads: GradientBundle) -> None:
    for arr in (*grads.weight_grads, *grads.bias_grads):
        if not np.all(np.isfinite(arr)):
            raise TrainingFault("non-finite parameter gradient")


class SgdOptimizer:
    def __init__(self, learning_rate: float = 1e-3):
        self.lr = learning_rate

    def apply(self, net: QNetwork, grads: GradientBundle) -> None:
        _validate_grads(grads)
        for w, gw in zip(net.weights, grads.weight_grads):
            w -= self.lr * gw
        for b, gb in zip(net.biases, grads.bias_grads):
            b -= self.lr * gb


class AdamOptimizer:
    """Adam with the customary defaults; state is per-parameter moments."""

    def __init__(self, learning_rate: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: list[np.ndarray] | None = None
        self._v: list[np.ndarray] | None = None

    def apply(self, net: QNetwork, grads: GradientBundle) -> None:
        _validate_grads(grads)
        flat = list(grads.weight_grads) + list(grads.bias_grads)
        params = list(net.weights) + list(net.biases)
        if self._m is None:
            self._m = [np.zeros_like(p) for p in params]
            self._v = [np.zeros_like(p) for p in params]
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, flat, self._m, self._v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def make_optimizer(kind: str, learning_rate: float):
    if kind == "adam":
        return AdamOptimizer(learning_rate)
    if kind == "sgd":
        return SgdOptimizer(learning_rate)
    raise ValueError(f"unknown optimizer {kind!r} (choose adam or sgd)")
