"""Shared numpy MLP machinery: init, batched forward/backward, Adam.

Training uses fast matrix products; the exact sequential-sum contract only
applies to single-state inference in :mod:`unfoldrl.policies`.
"""

from __future__ import annotations

import numpy as np


def he_uniform_init(sizes, rng: np.random.Generator):
    """Layer list [(W, b)] for the given [in, h1, ..., out] sizes.

    Weights are uniform on +-sqrt(6 / fan_in); biases start at zero.
    """
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        b = np.zeros(fan_out)
        layers.append((w, b))
    return layers


def forward(layers, x: np.ndarray):
    """Batched forward pass.  Returns (output, activations).

    ``activations[i]`` is the input to layer i; the final raw output is not
    appended.  Hidden layers use relu, the last layer is affine.
    """
    acts = [np.asarray(x, dtype=np.float64)]
    h = acts[0]
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        z = h @ w.T + b
        h = z if i == last else np.maximum(z, 0.0)
        if i != last:
            acts.append(h)
    return h, acts


def backward(layers, acts, dout: np.ndarray):
    """Gradients [(dW, db)] given d(loss)/d(output) for the batch."""
    grads = [None] * len(layers)
    delta = dout
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        grads[i] = (delta.T @ acts[i], delta.sum(axis=0))
        if i > 0:
            delta = (delta @ w) * (acts[i] > 0.0)
    return grads


class Adam:
    """Standard Adam over a layer list, with bias correction."""

    def __init__(self, layers, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [(np.zeros_like(w), np.zeros_like(b)) for w, b in layers]
        self.v = [(np.zeros_like(w), np.zeros_like(b)) for w, b in layers]

    def step(self, layers, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        out = []
        for i, ((w, b), (gw, gb)) in enumerate(zip(layers, grads)):
            mw, mb = self.m[i]
            vw, vb = self.v[i]
            mw = self.beta1 * mw + (1.0 - self.beta1) * gw
            mb = self.beta1 * mb + (1.0 - self.beta1) * gb
            vw = self.beta2 * vw + (1.0 - self.beta2) * gw * gw
            vb = self.beta2 * vb + (1.0 - self.beta2) * gb * gb
            self.m[i] = (mw, mb)
            self.v[i] = (vw, vb)
            w = w - self.lr * (mw / c1) / (np.sqrt(vw / c2) + self.eps)
            b = b - self.lr * (mb / c1) / (np.sqrt(vb / c2) + self.eps)
            out.append((w, b))
        return out


def weighted_softmax_ce(scores: np.ndarray, labels: np.ndarray, weights: np.ndarray):
    """Weighted cross entropy; returns (loss, d(loss)/d(scores)).

    The weight total is the denominator, so a sample with integer weight k
    contributes exactly like k unit-weight copies.
    """
    shifted = scores - scores.max(axis=1, keepdims=True)
    expo = np.exp(shifted)
    probs = expo / expo.sum(axis=1, keepdims=True)
    n = scores.shape[0]
    total = float(weights.sum())
    picked = probs[np.arange(n), labels]
    loss = float(np.sum(weights * -np.log(np.maximum(picked, 1e-300)))) / total
    dscores = probs.copy()
    dscores[np.arange(n), labels] -= 1.0
    dscores *= (weights / total)[:, None]
    return loss, dscores


def weighted_mse(preds: np.ndarray, targets: np.ndarray, weights: np.ndarray):
    """Weighted squared error summed over output dims; returns (loss, grad)."""
    diff = preds - targets
    total = float(weights.sum())
    loss = float(np.sum(weights[:, None] * diff * diff)) / total
    grad = 2.0 * (weights / total)[:, None] * diff
    return loss, grad
