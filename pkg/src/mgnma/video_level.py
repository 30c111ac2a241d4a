"""Video-level expression network and its exported theme embedding.

Image and audio frames (uniformly subsampled to a fixed count) are pooled by
separate NetVLAD layers, fused with the title vector by modal attention, and
passed through projection -> batch norm -> ReLU. That ReLU output is the
exported ``video_theme`` embedding; a final dense layer + sigmoid predicts the
video's mean expression vector during training.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import kernels
from .evaluator import pearson
from .feature_store import (
    FRAME_RATE, N_CLASSES, FeatureTrack, load_manifest, load_video, uniform_subsample, write_track,
)
from .fusion import ModalFusion
from .nn import BatchNorm, Dense, Module, ReLU, glorot_uniform, sigmoid, softmax, softmax_backward
from .trainer import TrainConfig, TrainError, fit, split_records

NORM_EPS = 1e-12


def _l2_normalize(v):
    n = np.sqrt((v * v).sum(axis=-1, keepdims=True) + NORM_EPS)
    return v / n, n


def _l2_normalize_backward(u, n, du):
    return (du - u * (u * du).sum(axis=-1, keepdims=True)) / n


class NetVLAD(Module):
    """Soft-assignment residual pooling over a set of frame features.

    Input B x n x dim, output B x pooled_dim. Per-cluster residuals are
    L2-normalised, flattened, L2-normalised again and projected.
    """

    def __init__(self, dim, n_clusters, pooled_dim, rng, dtype=np.float32):
        super().__init__()
        if n_clusters < 1:
            raise ValueError("need at least one cluster")
        self.dim = dim
        self.n_clusters = n_clusters
        self.assign = self.add("assign", Dense(dim, n_clusters, rng, dtype))
        self.add_param("centers", glorot_uniform(rng, n_clusters, dim, dtype))
        self.proj = self.add("proj", Dense(n_clusters * dim, pooled_dim, rng, dtype))
        self._cache = None

    def descriptor(self, X):
        """Normalised VLAD descriptor before the output projection, B x (K*dim)."""
        X = np.asarray(X)
        if X.ndim == 2:
            X = X[None]
        if X.shape[-1] != self.dim:
            raise ValueError(f"NetVLAD expects dim {self.dim}, got {X.shape[-1]}")
        if X.shape[1] < 1:
            raise ValueError("NetVLAD needs at least one frame")
        a = softmax(self.assign.forward(X))
        V = kernels.vlad_aggregate(a, X, self.params["centers"])
        Vn, n1 = _l2_normalize(V)
        f = Vn.reshape(X.shape[0], -1)
        g, n2 = _l2_normalize(f)
        self._cache = (X, a, Vn, n1, g, n2)
        return g

    def forward(self, X):
        return self.proj.forward(self.descriptor(X))

    def backward(self, dy):
        X, a, Vn, n1, g, n2 = self._cache
        dg = self.proj.backward(dy)
        df = _l2_normalize_backward(g, n2, dg)
        dV = _l2_normalize_backward(Vn, n1, df.reshape(Vn.shape))
        da, dx, dc = kernels.vlad_aggregate_backward(a, X, self.params["centers"], dV)
        self.grads["centers"] += dc
        dx = dx + self.assign.backward(softmax_backward(a, da))
        return dx


@dataclass
class VideoConfig:
    n_frames: int = 80
    n_clusters: int = 8
    pooled_dim: int = 1024
    embed_dim: int = 1024
    modal_dropout_p: float = 0.0
    learning_rate: float = 1e-4
    batch_size: int = 1536
    epochs: int = 30
    seed: int = 0
    n_classes: int = N_CLASSES

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, doc):
        return cls(**{k: v for k, v in doc.items() if k in cls.__dataclass_fields__})


SMALL_VIDEO = dict(n_clusters=4, pooled_dim=16, embed_dim=16, learning_rate=1e-2, epochs=300)


def video_config(preset=None, **overrides) -> VideoConfig:
    base = dict(SMALL_VIDEO) if preset == "small" else {}
    base.update(overrides)
    return VideoConfig(**base)


class VideoLevelModel(Module):
    def __init__(self, config: VideoConfig, dims, seed=0, dtype=np.float32):
        """``dims`` = (image_dim, audio_dim, title_dim)."""
        super().__init__()
        self.config = config
        self.dims = tuple(int(d) for d in dims)
        rng = np.random.default_rng(seed)
        c = config
        self.vlad_image = self.add("vlad_image", NetVLAD(dims[0], c.n_clusters, c.pooled_dim, rng, dtype))
        self.vlad_audio = self.add("vlad_audio", NetVLAD(dims[1], c.n_clusters, c.pooled_dim, rng, dtype))
        self.fusion = self.add("fusion", ModalFusion(
            (c.pooled_dim, c.pooled_dim, dims[2]), c.embed_dim, rng,
            modal_dropout_p=c.modal_dropout_p, dtype=dtype, names=("image", "audio", "title")))
        self.bn = self.add("bn", BatchNorm(c.embed_dim, dtype))
        self.act = ReLU()
        self.out = self.add("out", Dense(c.embed_dim, c.n_classes, rng, dtype))

    def embed(self, inputs, rng=None):
        image, audio, title = inputs
        v = [self.vlad_image.forward(image), self.vlad_audio.forward(audio), title]
        return self.act.forward(self.bn.forward(self.fusion.forward(v, rng)))

    def logits(self, inputs, rng=None):
        return self.out.forward(self.embed(inputs, rng))

    def backward_logits(self, do):
        dh = self.bn.backward(self.act.backward(self.out.backward(do)))
        d_img, d_aud, d_title = self.fusion.backward(dh)
        return [self.vlad_image.backward(d_img), self.vlad_audio.backward(d_aud), d_title]


def video_target(labels):
    """Per-class mean over frames."""
    labels = np.asarray(labels, dtype=np.float64)
    if labels.ndim != 2 or labels.shape[0] < 1:
        raise ValueError("labels must be a T x C matrix with T >= 1")
    return labels.mean(axis=0)


def video_inputs(records, n_frames):
    image = np.stack([uniform_subsample(r._track("image"), n_frames).values for r in records])
    audio = np.stack([uniform_subsample(r._track("audio"), n_frames).values for r in records])
    title = np.stack([r._track("title").values[0] for r in records])
    return [image, audio, title]


def _mean_profile_correlation(pred, target):
    return float(np.mean([pearson(p, t) for p, t in zip(pred, target)]))


def train_video_level(records, config: VideoConfig):
    """Returns (model, report, optimizer); snapshot metric is the mean over
    validation videos of the correlation between predicted and true mean
    expression profiles."""
    train_recs = split_records(records, "train")
    val_recs = split_records(records, "validation")
    if len(train_recs) < 2:
        raise TrainError("video-level training needs at least 2 train videos")
    if not val_recs:
        raise TrainError("dataset has no validation split")
    xs = video_inputs(train_recs, config.n_frames)
    y = np.stack([video_target(r.labels.values) for r in train_recs]).astype(np.float32)
    val_xs = video_inputs(val_recs, config.n_frames)
    val_y = np.stack([video_target(r.labels.values) for r in val_recs])
    model = VideoLevelModel(config, [xs[0].shape[2], xs[1].shape[2], xs[2].shape[1]], seed=config.seed)

    def validate(m):
        return _mean_profile_correlation(predict_video_level(m, val_xs), val_y)

    loop = TrainConfig(learning_rate=config.learning_rate,
                       batch_size=max(2, min(config.batch_size, len(train_recs))),
                       epochs=config.epochs, seed=config.seed, modalities=["image", "audio", "title"])
    return fit(model, xs, y, loop, validate)


def predict_video_level(model, inputs):
    model.eval()
    return sigmoid(model.logits(inputs))


def export_video_feature(model: VideoLevelModel, records) -> dict:
    """Eval-mode hidden embedding per video as a T=1 ``video_theme`` track."""
    model.eval()
    out = {}
    for rec in records:
        # one video per forward pass, so a video's vector never depends on
        # which other videos happen to share its batch
        row = model.embed(video_inputs([rec], model.config.n_frames))[0]
        rate = Fraction(FRAME_RATE) / rec.T
        out[rec.video_id] = FeatureTrack("video_theme", rate, row[None, :]).validate()
    return out


def export_to_dataset(model: VideoLevelModel, manifest_path, out_manifest=None, suffix="exported"):
    """Write exported theme tracks next to each video and point the manifest at them."""
    manifest = load_manifest(manifest_path)
    target = Path(out_manifest) if out_manifest else Path(manifest_path)
    if target.resolve().parent != manifest.root.resolve():
        raise ValueError("output manifest must live in the dataset directory")
    for entry in manifest.entries:
        rec = load_video(manifest, entry)
        track = export_video_feature(model, [rec])[rec.video_id]
        rel = str(Path(entry.files["labels"]["path"]).parent / f"video_theme.{suffix}.mgf")
        write_track(track, manifest.root / rel)
        r = track.rate_hz
        entry.files["video_theme"] = {"path": rel, "dim": track.dim, "rate": [r.numerator, r.denominator]}
    manifest.save(target)
    return target
