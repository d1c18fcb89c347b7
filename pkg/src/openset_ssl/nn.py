"""Small fully-connected networks with hand-written backprop and Adam."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ValidationError

ACTIVATIONS = ("tanh", "relu", "identity")


def _act(name, z):
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    return z


def _act_grad(name, z, a, da):
    if name == "tanh":
        return da * (1.0 - a * a)
    if name == "relu":
        return da * (z > 0.0)
    return da


@dataclass
class MLP:
    """Row-major MLP: ``h_{l+1} = act_l(h_l @ W_l + b_l)``.

    ``params`` alternates weights and biases: ``[W0, b0, W1, b1, ...]``.
    """

    params: list
    activations: list

    def __post_init__(self):
        if len(self.params) != 2 * len(self.activations):
            raise ValidationError("need one (W, b) pair per activation")
        for l, act in enumerate(self.activations):
            if act not in ACTIVATIONS:
                raise ValidationError(f"unknown activation {act!r}")
            W, b = self.params[2 * l], self.params[2 * l + 1]
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise ValidationError(f"layer {l}: inconsistent shapes {W.shape} / {b.shape}")
            if l and W.shape[0] != self.params[2 * l - 2].shape[1]:
                raise ValidationError(f"layer {l}: input width does not match previous layer")

    @property
    def sizes(self):
        return [self.params[0].shape[0]] + [W.shape[1] for W in self.params[0::2]]

    def forward(self, X):
        """Return ``(output, cache)``; raises NumericError on non-finite activations."""
        h = X
        cache = []
        for l, act in enumerate(self.activations):
            z = h @ self.params[2 * l] + self.params[2 * l + 1]
            a = _act(act, z)
            if not np.all(np.isfinite(a)):
                raise NumericError("non-finite activation", layer=l)
            cache.append((h, z, a))
            h = a
        return h, cache

    def __call__(self, X):
        return self.forward(X)[0]

    def backward(self, cache, dout):
        """Gradients of a scalar loss w.r.t. params, given dL/d(output)."""
        grads = [None] * len(self.params)
        da = dout
        for l in range(len(self.activations) - 1, -1, -1):
            h, z, a = cache[l]
            dz = _act_grad(self.activations[l], z, a, da)
            grads[2 * l] = h.T @ dz
            grads[2 * l + 1] = dz.sum(axis=0)
            if l:
                da = dz @ self.params[2 * l].T
        return grads

    def copy(self):
        return MLP([p.copy() for p in self.params], list(self.activations))

    def to_dict(self):
        return {
            "sizes": self.sizes,
            "activations": list(self.activations),
            "layers": [
                {
                    "weight_shape": list(self.params[2 * l].shape),
                    "weight": self.params[2 * l].ravel().tolist(),
                    "bias": self.params[2 * l + 1].tolist(),
                }
                for l in range(len(self.activations))
            ],
        }

    @classmethod
    def from_dict(cls, d):
        params = []
        for layer in d["layers"]:
            params.append(np.array(layer["weight"], dtype=np.float64).reshape(layer["weight_shape"]))
            params.append(np.array(layer["bias"], dtype=np.float64))
        return cls(params, list(d["activations"]))


def init_mlp(sizes, activations, rng) -> MLP:
    """Glorot-uniform weights, zero biases."""
    if len(sizes) != len(activations) + 1:
        raise ValidationError("len(sizes) must be len(activations) + 1")
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        params.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        params.append(np.zeros(fan_out))
    return MLP(params, list(activations))


def softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


class Adam:
    def __init__(self, params, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        """Update ``params`` in place."""
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
