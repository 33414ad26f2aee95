"""Small fully connected networks on flat float64 parameter vectors, with hand-written backprop."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MLP:
    """ReLU hidden layers; output is ``tanh`` or linear.

    Parameters are stored flat as ``W1, b1, W2, b2, ...`` with ``W`` of shape
    ``(fan_in, fan_out)`` in row-major order.
    """

    sizes: tuple[int, ...]
    out_act: str = "linear"

    def __post_init__(self) -> None:
        if len(self.sizes) < 2:
            raise ValueError("an MLP needs at least input and output sizes")
        if self.out_act not in ("linear", "tanh"):
            raise ValueError(f"unknown output activation {self.out_act!r}")

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    @property
    def n_params(self) -> int:
        return sum(a * b + b for a, b in zip(self.sizes[:-1], self.sizes[1:]))

    def layers(self, theta: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        if theta.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got shape {theta.shape}")
        out = []
        pos = 0
        for a, b in zip(self.sizes[:-1], self.sizes[1:]):
            w = theta[pos : pos + a * b].reshape(a, b)
            pos += a * b
            out.append((w, theta[pos : pos + b]))
            pos += b
        return out

    def init(self, rng: np.random.Generator) -> np.ndarray:
        """Uniform in ``+-1/sqrt(fan_in)`` for weights and biases."""
        parts = []
        for a, b in zip(self.sizes[:-1], self.sizes[1:]):
            bound = 1.0 / np.sqrt(a)
            parts.append(rng.uniform(-bound, bound, size=a * b))
            parts.append(rng.uniform(-bound, bound, size=b))
        return np.concatenate(parts)

    def forward(self, theta: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Returns ``(output, cache)``; ``x`` is ``(batch, in_dim)``."""
        layers = self.layers(theta)
        acts = [x]
        h = x
        for k, (w, b) in enumerate(layers):
            z = h @ w + b
            if k < len(layers) - 1:
                h = np.maximum(z, 0.0)
            elif self.out_act == "tanh":
                h = np.tanh(z)
            else:
                h = z
            acts.append(h)
        return h, acts

    def __call__(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        return self.forward(theta, x)[0]

    def backward(
        self, theta: np.ndarray, cache: list[np.ndarray], grad_out: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """Gradient of ``sum(grad_out * output)`` w.r.t. parameters and input."""
        layers = self.layers(theta)
        grads: list[np.ndarray] = []
        out = cache[-1]
        if self.out_act == "tanh":
            delta = grad_out * (1.0 - out * out)
        else:
            delta = grad_out
        for k in range(len(layers) - 1, -1, -1):
            w, _ = layers[k]
            h_in = cache[k]
            grads.append(delta.sum(axis=0))
            grads.append((h_in.T @ delta).reshape(-1))
            delta = delta @ w.T
            if k > 0:
                delta = delta * (cache[k] > 0)
        grads.reverse()
        return np.concatenate(grads), delta
