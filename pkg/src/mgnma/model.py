"""Frame-level expression model: modal fusion followed by the MoE head."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .feature_store import N_CLASSES
from .fusion import ModalFusion
from .moe import MoE
from .nn import Module, sigmoid


@dataclass
class ModelConfig:
    modalities: list = field(default_factory=lambda: ["image", "audio", "action", "subtitle", "video_theme"])
    dims: list = field(default_factory=lambda: [1536, 128, 512, 768, 1024])
    fused_dim: int = 1024
    hidden: int = 1024
    n_experts: int = 3
    fusion: str = "maf"  # "maf" or "concat"
    modal_dropout_p: float = 0.25
    n_classes: int = N_CLASSES

    def __post_init__(self):
        if len(self.modalities) != len(self.dims):
            raise ValueError("modalities and dims differ in length")
        if self.fusion not in ("maf", "concat"):
            raise ValueError(f"unknown fusion {self.fusion!r}")

    def to_json(self):
        return asdict(self)


class FrameModel(Module):
    def __init__(self, config: ModelConfig, seed=0, dtype=np.float32):
        super().__init__()
        self.config = config
        rng = np.random.default_rng(seed)
        self.fusion = self.add("fusion", ModalFusion(
            config.dims, config.fused_dim, rng,
            modal_dropout_p=config.modal_dropout_p,
            attention=config.fusion == "maf",
            dtype=dtype, names=config.modalities))
        self.moe = self.add("moe", MoE(
            config.fused_dim, rng, n_experts=config.n_experts, hidden=config.hidden,
            n_classes=config.n_classes, dtype=dtype))

    def logits(self, vs, rng=None):
        return self.moe.logits(self.fusion.forward(vs, rng))

    def forward(self, vs, rng=None):
        return sigmoid(self.logits(vs, rng))

    def backward_logits(self, do):
        return self.fusion.backward(self.moe.backward_logits(do))

    def predict(self, vs, batch_size=4096):
        """Eval-mode probabilities for B x d_i inputs, in chunks."""
        was_training = self.training
        self.eval()
        try:
            n = vs[0].shape[0]
            out = [self.forward([v[i:i + batch_size] for v in vs])
                   for i in range(0, n, batch_size)]
        finally:
            self.train(was_training)
        return np.concatenate(out, axis=0)
