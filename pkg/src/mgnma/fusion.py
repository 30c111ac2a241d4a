"""Modal attention fusion with modal dropout.

Each modality vector v_i gets a scalar score w_i . v_i; a softmax over the
modalities gives weights alpha_i, and the weighted vectors alpha_i * v_i are
concatenated and projected to the fused dimension. During training whole
modalities are replaced by zeros with probability ``modal_dropout_p`` before
scoring, so a dropped modality scores 0 and contributes an exact zero segment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import Dense, Module, softmax, softmax_backward


@dataclass
class FusedBatch:
    V: np.ndarray
    alpha: np.ndarray
    dropout_mask: np.ndarray  # True where the modality was zeroed


class ModalFusion(Module):
    """Fusion over an ordered list of modalities.

    With ``attention=False`` the layer is plain concatenation + projection
    (the ablation baseline); modal dropout applies either way.
    """

    def __init__(self, dims, fused_dim, rng, modal_dropout_p=0.25, attention=True,
                 dtype=np.float32, names=None):
        super().__init__()
        if len(dims) < 1:
            raise ValueError("fusion needs at least one modality")
        if not 0.0 <= modal_dropout_p < 1.0:
            raise ValueError("modal_dropout_p must lie in [0, 1)")
        self.dims = tuple(int(d) for d in dims)
        self.names = tuple(names) if names is not None else tuple(f"m{i}" for i in range(len(dims)))
        self.fused_dim = fused_dim
        self.modal_dropout_p = modal_dropout_p
        self.attention = attention
        self.offsets = np.concatenate([[0], np.cumsum(self.dims)])
        if attention:
            for name, d in zip(self.names, self.dims):
                # small nonzero init so scores are not all tied at the start
                self.add_param(f"w.{name}", (rng.standard_normal(d) * 0.01).astype(dtype))
        self.proj = self.add("proj", Dense(int(self.offsets[-1]), fused_dim, rng, dtype))
        self._cache = None

    @property
    def n_modalities(self):
        return len(self.dims)

    def forward(self, vs, rng=None):
        """Fuse a list of B x d_i arrays; returns the B x fused_dim feature."""
        return self.forward_batch(vs, rng).V

    def forward_batch(self, vs, rng=None) -> FusedBatch:
        if len(vs) != self.n_modalities:
            raise ValueError(f"expected {self.n_modalities} modalities, got {len(vs)}")
        for v, d, name in zip(vs, self.dims, self.names):
            if v.ndim != 2 or v.shape[1] != d:
                raise ValueError(f"modality {name}: expected dim {d}, got shape {v.shape}")
        B = vs[0].shape[0]
        dtype = self.proj.params["W"].dtype
        dropped = np.zeros((B, self.n_modalities), dtype=bool)
        if self.training and self.modal_dropout_p > 0.0:
            if rng is None:
                raise ValueError("train-mode fusion with modal dropout needs an rng")
            dropped = rng.random((B, self.n_modalities)) < self.modal_dropout_p
        keep = (~dropped).astype(dtype)
        vs = [v.astype(dtype, copy=False) * keep[:, i:i + 1] for i, v in enumerate(vs)]

        if self.attention:
            scores = np.stack(
                [v @ self.params[f"w.{n}"] for v, n in zip(vs, self.names)], axis=1)
            alpha = softmax(scores)
        else:
            alpha = np.ones((B, self.n_modalities), dtype=dtype)
        u = np.concatenate([v * alpha[:, i:i + 1] for i, v in enumerate(vs)], axis=1)
        V = self.proj.forward(u)
        self._cache = (vs, alpha, keep)
        return FusedBatch(V, alpha, dropped)

    def backward(self, dV):
        vs, alpha, keep = self._cache
        du = self.proj.backward(dV)
        segs = [du[:, self.offsets[i]:self.offsets[i + 1]] for i in range(self.n_modalities)]
        if not self.attention:
            return [g * keep[:, i:i + 1] for i, g in enumerate(segs)]
        dalpha = np.stack([(g * v).sum(axis=1) for g, v in zip(segs, vs)], axis=1)
        dscores = softmax_backward(alpha, dalpha)
        dvs = []
        for i, (g, v, name) in enumerate(zip(segs, vs, self.names)):
            w = self.params[f"w.{name}"]
            self.grads[f"w.{name}"] += dscores[:, i] @ v
            dv = g * alpha[:, i:i + 1] + dscores[:, i:i + 1] * w
            dvs.append(dv * keep[:, i:i + 1])
        return dvs
