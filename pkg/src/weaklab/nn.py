"""Tiny numpy neural-net kit with hand-written backward passes.

Everything trained here is small enough that explicit gradients beat a
framework: they stay bit-deterministic, dependency-free, and directly
checkable against finite differences.
"""

from __future__ import annotations

import numpy as np


class Linear:
    def __init__(self, rng: np.random.Generator, n_in: int, n_out: int):
        self.W = rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_in, n_out))
        self.b = np.zeros(n_out)
        self.gW = np.zeros_like(self.W)
        self.gb = np.zeros_like(self.b)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return x @ self.W + self.b

    def backward(self, x: np.ndarray, dy: np.ndarray) -> np.ndarray:
        """Accumulates parameter gradients, returns the input gradient."""
        self.gW += x.T @ dy
        self.gb += dy.sum(axis=0)
        return dy @ self.W.T

    def parameters(self):
        yield self.W, self.gW
        yield self.b, self.gb


class MLP:
    """Linear layers with tanh between them; the last layer stays linear."""

    def __init__(self, rng: np.random.Generator, dims: list[int]):
        if len(dims) < 2:
            raise ValueError("need at least input and output dims")
        self.layers = [Linear(rng, dims[i], dims[i + 1]) for i in range(len(dims) - 1)]

    def forward(self, x: np.ndarray):
        cache = []
        out = x
        for i, layer in enumerate(self.layers):
            pre = layer.forward(out)
            if i < len(self.layers) - 1:
                post = np.tanh(pre)
            else:
                post = pre
            cache.append((out, post))
            out = post
        return out, cache

    def backward(self, dy: np.ndarray, cache) -> np.ndarray:
        grad = dy
        for i in range(len(self.layers) - 1, -1, -1):
            x_in, post = cache[i]
            if i < len(self.layers) - 1:
                grad = grad * (1.0 - post**2)
            grad = self.layers[i].backward(x_in, grad)
        return grad

    def parameters(self):
        for layer in self.layers:
            yield from layer.parameters()


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_backward(softmax: np.ndarray, d_softmax: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the logits given the softmax output and its gradient."""
    inner = np.sum(d_softmax * softmax, axis=1, keepdims=True)
    return softmax * (d_softmax - inner)


def l2_normalize_rows(x: np.ndarray, eps: float = 1e-12):
    norms = np.sqrt(np.sum(x**2, axis=1, keepdims=True))
    norms = np.maximum(norms, eps)
    return x / norms, norms


def l2_normalize_rows_backward(normalized: np.ndarray, norms: np.ndarray, d_out: np.ndarray) -> np.ndarray:
    inner = np.sum(d_out * normalized, axis=1, keepdims=True)
    return (d_out - normalized * inner) / norms


class NesterovSGD:
    """SGD with Nesterov momentum: v <- mu v + g; p <- p - lr (g + mu v).
    Gradients are globally norm-clipped first; the negative-set loss can
    spike as the allowed probability mass approaches zero."""

    def __init__(
        self,
        params: list[tuple[np.ndarray, np.ndarray]],
        momentum: float = 0.9,
        grad_clip: float = 5.0,
    ):
        self.params = params
        self.momentum = momentum
        self.grad_clip = grad_clip
        self.velocity = [np.zeros_like(p) for p, _ in params]

    def step(self, lr: float) -> None:
        if self.grad_clip > 0:
            total = np.sqrt(sum(float(np.sum(g**2)) for _, g in self.params))
            if total > self.grad_clip:
                scale = self.grad_clip / total
                for _, g in self.params:
                    g *= scale
        for (p, g), v in zip(self.params, self.velocity):
            v *= self.momentum
            v += g
            p -= lr * (g + self.momentum * v)

    def zero_grads(self) -> None:
        for _, g in self.params:
            g.fill(0.0)


def cosine_lr(initial: float, step: int, total_steps: int) -> float:
    """Cosine decay from ``initial`` at step 0 to exactly 0 at the last step."""
    if total_steps <= 1:
        return 0.0 if step > 0 else initial
    frac = min(max(step, 0), total_steps - 1) / (total_steps - 1)
    return initial * 0.5 * (1.0 + np.cos(np.pi * frac))
