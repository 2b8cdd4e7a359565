"""Stacks of small ReLU networks with hand-written backpropagation and Adam.

A :class:`MlpStack` holds ``K`` independent networks of identical shape so
that all potentials of a hedge are evaluated with a handful of batched
matrix products.  Parameters live in one flat buffer; the per-layer arrays
are views into it, which lets the optimizer update everything at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["MlpStack", "Adam", "relu"]


def relu(z):
    return np.maximum(z, 0.0)


def _views(flat: np.ndarray, shapes):
    out, k = [], 0
    for s in shapes:
        n = int(np.prod(s))
        out.append(flat[k:k + n].reshape(s))
        k += n
    return out


class MlpStack:
    """``K`` networks ``in -> hidden[0] -> ... -> 1`` with rectifier activations.

    ``layers[l] = (W, b)`` with ``W`` of shape ``(K, n_in, n_out)`` and
    ``b`` of shape ``(K, n_out)``.
    """

    def __init__(self, layers):
        self.shapes = [s for W, b in layers for s in (np.shape(W), np.shape(b))]
        self.flat = np.concatenate([np.asarray(p, dtype=float).ravel() for W, b in layers for p in (W, b)])
        self._bind()

    def _bind(self):
        v = _views(self.flat, self.shapes)
        self.layers = list(zip(v[0::2], v[1::2]))

    @classmethod
    def init(cls, n_nets: int, input_dim: int, hidden=(64, 64), rng=None) -> "MlpStack":
        rng = np.random.default_rng() if rng is None else rng
        sizes = [input_dim, *hidden, 1]
        layers = []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(n_in)
            W = rng.uniform(-bound, bound, size=(n_nets, n_in, n_out))
            b = rng.uniform(-bound, bound, size=(n_nets, n_out))
            layers.append((W, b))
        return cls(layers)

    @classmethod
    def zeros(cls, n_nets: int, input_dim: int, hidden=(64, 64)) -> "MlpStack":
        sizes = [input_dim, *hidden, 1]
        return cls([(np.zeros((n_nets, i, o)), np.zeros((n_nets, o))) for i, o in zip(sizes[:-1], sizes[1:])])

    def copy(self) -> "MlpStack":
        return MlpStack([(W.copy(), b.copy()) for W, b in self.layers])

    @property
    def n_nets(self) -> int:
        return self.layers[0][0].shape[0]

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def hidden(self) -> tuple[int, ...]:
        return tuple(W.shape[2] for W, _ in self.layers[:-1])

    def params(self) -> list[np.ndarray]:
        """Per-layer views ``[W0, b0, W1, b1, ...]`` into :attr:`flat`."""
        return [p for layer in self.layers for p in layer]

    def forward(self, X: np.ndarray, keep: bool = False):
        """Evaluate on ``X`` of shape ``(K, N, input_dim)``; returns ``(K, N)``.

        With ``keep=True`` also returns the activations needed by :meth:`backward`.
        """
        acts = [X]
        a = X
        last = len(self.layers) - 1
        for l, (W, b) in enumerate(self.layers):
            z = np.matmul(a, W)
            z += b[:, None, :]
            if l != last:
                np.maximum(z, 0.0, out=z)
                if keep:
                    acts.append(z)
            a = z
        out = a[..., 0]
        return (out, acts) if keep else out

    def backward(self, acts: list[np.ndarray], g: np.ndarray) -> np.ndarray:
        """Gradient of ``sum(g * out)`` as a flat array aligned with :attr:`flat`."""
        grad = np.empty_like(self.flat)
        views = _views(grad, self.shapes)
        delta = g[..., None]  # (K, N, 1)
        for l in range(len(self.layers) - 1, -1, -1):
            W, _ = self.layers[l]
            a_prev = acts[l]
            np.matmul(a_prev.transpose(0, 2, 1), delta, out=views[2 * l])
            np.sum(delta, axis=1, out=views[2 * l + 1])
            if l > 0:
                delta = np.matmul(delta, W.transpose(0, 2, 1))
                delta *= a_prev > 0
        return grad


@dataclass
class Adam:
    """Adam with the usual defaults on a single flat parameter vector."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None

    def update(self, param: np.ndarray, grad: np.ndarray) -> None:
        if self.m is None:
            self.m = np.zeros_like(param)
            self.v = np.zeros_like(param)
        self.step += 1
        c1 = 1.0 - self.beta1**self.step
        c2 = 1.0 - self.beta2**self.step
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * grad
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * grad * grad
        param -= (self.lr / c1) * self.m / (np.sqrt(self.v / c2) + self.eps)
