"""Small MLP building blocks on top of the autodiff engine.

Modules hold named Tensor parameters; `parameters()` yields (name, tensor)
pairs in a fixed order so checkpoints and optimizers are reproducible.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor


def xavier_uniform(rng, fan_in, fan_out):
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


class Linear:
    def __init__(self, rng, fan_in, fan_out, zero_init=False):
        if zero_init:
            w = np.zeros((fan_in, fan_out))
        else:
            w = xavier_uniform(rng, fan_in, fan_out)
        self.W = Tensor(w, requires_grad=True)
        self.b = Tensor(np.zeros(fan_out), requires_grad=True)

    def __call__(self, x):
        return x @ self.W + self.b

    def parameters(self):
        return [("W", self.W), ("b", self.b)]


_ACTIVATIONS = {
    "leaky_relu": lambda t: t.leaky_relu(0.02),
    "relu": lambda t: t.relu(),
    "sigmoid": lambda t: t.sigmoid(),
    "identity": lambda t: t,
}


class MLP:
    """Fully connected stack: hidden activations + a final activation."""

    def __init__(self, rng, widths, hidden_act="leaky_relu", final_act="identity",
                 zero_init_last=False):
        self.layers = []
        for i in range(len(widths) - 1):
            zero = zero_init_last and i == len(widths) - 2
            self.layers.append(Linear(rng, widths[i], widths[i + 1], zero_init=zero))
        self.hidden_act = _ACTIVATIONS[hidden_act]
        self.final_act = _ACTIVATIONS[final_act]

    def __call__(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = self.hidden_act(x)
        return self.final_act(x)

    def parameters(self):
        out = []
        for i, layer in enumerate(self.layers):
            for n, p in layer.parameters():
                out.append((f"l{i}.{n}", p))
        return out
