"""Mixture-of-experts expression head.

A softmax gate mixes the expert logits; the mixed logit goes through one
sigmoid. Each expert is dense -> batch norm -> ReLU -> dense. One expert is
the plain MLP head.
"""

from __future__ import annotations

import numpy as np

from .feature_store import N_CLASSES
from .nn import BatchNorm, Dense, Module, ReLU, sigmoid, softmax, softmax_backward


class Expert(Module):
    def __init__(self, dim_in, hidden, n_classes, rng, dtype=np.float32):
        super().__init__()
        self.fc1 = self.add("fc1", Dense(dim_in, hidden, rng, dtype))
        self.bn = self.add("bn", BatchNorm(hidden, dtype))
        self.act = ReLU()
        self.fc2 = self.add("fc2", Dense(hidden, n_classes, rng, dtype))

    def forward(self, x):
        return self.fc2.forward(self.act.forward(self.bn.forward(self.fc1.forward(x))))

    def backward(self, dy):
        return self.fc1.backward(self.bn.backward(self.act.backward(self.fc2.backward(dy))))


class MoE(Module):
    def __init__(self, dim_in, rng, n_experts=3, hidden=1024, n_classes=N_CLASSES,
                 dtype=np.float32):
        super().__init__()
        if n_experts < 1:
            raise ValueError("need at least one expert")
        self.n_experts = n_experts
        self.dim_in = dim_in
        self.gate = None
        if n_experts > 1:
            self.gate = self.add("gate", Dense(dim_in, n_experts, rng, dtype))
        self.experts = [
            self.add(f"expert{e}", Expert(dim_in, hidden, n_classes, rng, dtype))
            for e in range(n_experts)
        ]
        self._cache = None

    def logits(self, V):
        """Gate-weighted expert logits, B x n_classes."""
        if self.n_experts == 1:
            g = np.ones((V.shape[0], 1), dtype=V.dtype)
        else:
            g = softmax(self.gate.forward(V))
        outs = [ex.forward(V) for ex in self.experts]
        o = sum(g[:, e:e + 1] * out for e, out in enumerate(outs))
        self._cache = (g, outs)
        return o

    def forward(self, V):
        return sigmoid(self.logits(V))

    def gate_weights(self, V):
        if self.n_experts == 1:
            return np.ones((V.shape[0], 1), dtype=V.dtype)
        return softmax(V @ self.gate.params["W"].T + self.gate.params["b"])

    def backward_logits(self, do):
        g, outs = self._cache
        dV = np.zeros((do.shape[0], self.dim_in), dtype=do.dtype)
        for e, (ex, out) in enumerate(zip(self.experts, outs)):
            dV += ex.backward(do * g[:, e:e + 1])
        if self.n_experts > 1:
            dg = np.stack([(do * out).sum(axis=1) for out in outs], axis=1)
            dV += self.gate.backward(softmax_backward(g, dg))
        return dV

    def backward(self, dp):
        g, outs = self._cache
        o = sum(g[:, e:e + 1] * out for e, out in enumerate(outs))
        p = sigmoid(o)
        return self.backward_logits(dp * p * (1 - p))
