"""Dense feed-forward networks with hand-written backpropagation.

Hidden layers use softplus (a smooth rectifier, so finite-difference
gradient checks stay well conditioned); output layers are linear. The
classifier's sigmoid lives in the loss and prediction code, which work
on logits for numerical stability.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch

ACT_SOFTPLUS = "softplus"
ACT_LINEAR = "linear"


def softplus(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _act(name, pre):
    if name == ACT_SOFTPLUS:
        return softplus(pre)
    if name == ACT_LINEAR:
        return pre
    raise ValueError(f"unknown activation {name!r}")


def _act_grad(name, pre):
    if name == ACT_SOFTPLUS:
        return sigmoid(pre)
    if name == ACT_LINEAR:
        return np.ones_like(pre)
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class MlpParams:
    weights: list        # (fan_in, fan_out) per layer
    biases: list         # (fan_out,) per layer
    activations: list    # activation name per layer

    @property
    def input_dim(self):
        return self.weights[0].shape[0]

    @property
    def output_dim(self):
        return self.weights[-1].shape[1]

    def arrays(self):
        return list(self.weights) + list(self.biases)

    def copy(self):
        return MlpParams([w.copy() for w in self.weights],
                         [b.copy() for b in self.biases],
                         list(self.activations))

    def checksum(self):
        return float(sum(np.sum(w) for w in self.weights)
                     + sum(np.sum(b) for b in self.biases))


def init_mlp(widths, rng, output_activation=ACT_LINEAR):
    """Fan-in scaled uniform init; hidden layers softplus."""
    weights, biases, acts = [], [], []
    for i in range(len(widths) - 1):
        fan_in, fan_out = widths[i], widths[i + 1]
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
        acts.append(ACT_SOFTPLUS if i < len(widths) - 2 else output_activation)
    return MlpParams(weights, biases, acts)


def mlp_forward(params, x):
    """Forward pass; returns (output, cache for exact backprop).

    Accepts a single vector or a (batch, dim) matrix.
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.shape[1] != params.input_dim:
        raise DimensionMismatch(
            f"input dim {x.shape[1]} != first layer dim {params.input_dim}")
    cache = []
    h = x
    for w, b, act in zip(params.weights, params.biases, params.activations):
        pre = h @ w + b
        cache.append((h, pre))
        h = _act(act, pre)
    return (h[0] if squeeze else h), cache


def mlp_backward(params, cache, d_out):
    """Backpropagate d(loss)/d(output); returns (grads, d_input).

    ``grads`` mirrors MlpParams; gradients are summed over the batch.
    """
    d_out = np.asarray(d_out, dtype=np.float64)
    if d_out.ndim == 1:
        d_out = d_out[None, :]
    d_w = [None] * len(params.weights)
    d_b = [None] * len(params.weights)
    grad = d_out
    for i in range(len(params.weights) - 1, -1, -1):
        h_in, pre = cache[i]
        grad = grad * _act_grad(params.activations[i], pre)
        d_w[i] = h_in.T @ grad
        d_b[i] = grad.sum(axis=0)
        grad = grad @ params.weights[i].T
    return MlpParams(d_w, d_b, list(params.activations)), grad


class Adam:
    """Per-parameter adaptive moments over a list of arrays."""

    def __init__(self, arrays, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]

    def step(self, arrays, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for a, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            a -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def bce_with_logits(logits, targets):
    """Mean binary cross-entropy and d(loss)/d(logit) per sample.

    Gradient is for the MEAN loss (already divided by batch size).
    """
    logits = np.asarray(logits, dtype=np.float64).reshape(-1)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    per = np.maximum(logits, 0.0) - logits * targets + np.log1p(np.exp(-np.abs(logits)))
    grad = (sigmoid(logits) - targets) / logits.size
    return float(per.mean()), grad
