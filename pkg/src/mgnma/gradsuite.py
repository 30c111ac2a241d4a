"""Finite-difference checks for every differentiable block, on toy shapes."""

from __future__ import annotations

import numpy as np

from .fusion import ModalFusion
from .model import FrameModel, ModelConfig
from .moe import MoE
from .nn import BatchNorm, Dense, Module, ReLU, bce_loss, bce_with_logits, grad_check, sigmoid, softmax, softmax_backward
from .video_level import NetVLAD, VideoConfig, VideoLevelModel


class Fragment:
    """Adapts a module plus forward/backward callables to ``grad_check``."""

    def __init__(self, module: Module, forward, backward):
        self.module = module
        self._forward = forward
        self._backward = backward

    def forward(self, *inputs):
        return self._forward(*inputs)

    def backward(self, dout):
        return self._backward(dout)

    def named_parameters(self):
        return self.module.named_parameters()

    def named_gradients(self):
        return self.module.named_gradients()

    def zero_grad(self):
        self.module.zero_grad()


def _dense(rng):
    layer = Dense(5, 4, rng).astype(np.float64)
    return Fragment(layer, layer.forward, layer.backward), [rng.standard_normal((3, 5))]


def _dense_sigmoid_bce(rng):
    layer = Dense(5, 4, rng).astype(np.float64)
    y = rng.random((3, 4))
    cache = {}

    def fwd(x):
        cache["p"] = sigmoid(layer.forward(x))
        loss, cache["dp"] = bce_loss(cache["p"], y)
        return loss

    def bwd(_):
        p = cache["p"]
        return layer.backward(cache["dp"] * p * (1 - p))

    return Fragment(layer, fwd, bwd), [rng.standard_normal((3, 5))]


def _softmax(rng):
    cache = {}

    def fwd(z):
        cache["s"] = softmax(z)
        return cache["s"]

    return Fragment(Module(), fwd, lambda ds: softmax_backward(cache["s"], ds)), [rng.standard_normal((4, 5))]


def _batchnorm(rng, training):
    bn = BatchNorm(4).astype(np.float64)
    bn.params["gamma"][:] = rng.uniform(0.5, 1.5, 4)
    bn.params["beta"][:] = rng.standard_normal(4)
    bn.buffers["running_mean"][:] = rng.standard_normal(4)
    bn.buffers["running_var"][:] = rng.uniform(0.5, 2.0, 4)
    bn.train(training)
    return Fragment(bn, bn.forward, bn.backward), [rng.standard_normal((6, 4))]


def _relu(rng):
    act = ReLU()
    x = rng.standard_normal((4, 5))
    x[np.abs(x) < 0.05] += 0.1
    return Fragment(Module(), act.forward, act.backward), [x]


def _fusion(rng, attention=True):
    fusion = ModalFusion((4, 4), 3, rng, modal_dropout_p=0.0, attention=attention).astype(np.float64)
    for k in fusion.params:
        fusion.params[k][:] = rng.standard_normal(fusion.params[k].shape)
    fusion.train()
    return (Fragment(fusion, lambda a, b: fusion.forward([a, b]), fusion.backward),
            [rng.standard_normal((5, 4)), rng.standard_normal((5, 4))])


def _netvlad(rng):
    vlad = NetVLAD(3, 2, 4, rng).astype(np.float64)
    return Fragment(vlad, vlad.forward, vlad.backward), [rng.standard_normal((2, 4, 3))]


def _moe(rng, training):
    moe = MoE(6, rng, n_experts=2, hidden=4, n_classes=3).astype(np.float64)
    for ex in moe.experts:
        ex.bn.buffers["running_mean"][:] = rng.standard_normal(4) * 0.1
        ex.bn.buffers["running_var"][:] = rng.uniform(0.5, 2.0, 4)
    moe.train(training)
    return Fragment(moe, moe.logits, moe.backward_logits), [rng.standard_normal((5, 6))]


def _frame_model(rng):
    cfg = ModelConfig(modalities=["image", "audio", "video_theme"], dims=[4, 3, 2], fused_dim=5,
                      hidden=4, n_experts=3, fusion="maf", modal_dropout_p=0.0, n_classes=3)
    model = FrameModel(cfg, seed=int(rng.integers(1 << 30))).astype(np.float64)
    model.train()
    y = rng.random((6, 3))
    cache = {}

    def fwd(a, b, c):
        loss, _, cache["do"] = bce_with_logits(model.logits([a, b, c]), y)
        return loss

    def bwd(_):
        return model.backward_logits(cache["do"])

    inputs = [rng.standard_normal((6, d)) for d in cfg.dims]
    return Fragment(model, fwd, bwd), inputs


def _video_model(rng):
    cfg = VideoConfig(n_frames=4, n_clusters=2, pooled_dim=3, embed_dim=4, n_classes=3)
    model = VideoLevelModel(cfg, (3, 2, 2), seed=int(rng.integers(1 << 30))).astype(np.float64)
    model.train()
    y = rng.random((4, 3))
    cache = {}

    def fwd(a, b, c):
        loss, _, cache["do"] = bce_with_logits(model.logits([a, b, c]), y)
        return loss

    def bwd(_):
        return model.backward_logits(cache["do"])

    inputs = [rng.standard_normal((4, 4, 3)), rng.standard_normal((4, 4, 2)), rng.standard_normal((4, 2))]
    return Fragment(model, fwd, bwd), inputs


CASES = {
    "dense": _dense,
    "dense+sigmoid+bce": _dense_sigmoid_bce,
    "softmax": _softmax,
    "relu": _relu,
    "batchnorm/train": lambda rng: _batchnorm(rng, True),
    "batchnorm/eval": lambda rng: _batchnorm(rng, False),
    "fusion/maf": _fusion,
    "fusion/concat": lambda rng: _fusion(rng, attention=False),
    "netvlad": _netvlad,
    "moe/eval": lambda rng: _moe(rng, False),
    "moe/train": lambda rng: _moe(rng, True),
    "frame_model": _frame_model,
    "video_model": _video_model,
}


def run_suite(seed=0, tolerance=1e-4, h=1e-5, cases=None):
    """Check each case in 64-bit mode; returns {name: GradCheckReport}."""
    out = {}
    for name in cases or CASES:
        rng = np.random.default_rng(seed)
        fragment, inputs = CASES[name](rng)
        out[name] = grad_check(fragment, inputs, tolerance=tolerance, h=h, seed=seed)
    return out
