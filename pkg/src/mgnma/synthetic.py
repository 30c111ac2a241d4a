"""Synthetic dense-affect datasets with planted multi-granularity signal.

Every video draws latent factors at three timescales:

* per-frame factors for ``image`` and ``audio`` (white noise at 6 Hz),
* clip factors for ``action`` and ``subtitle`` (white noise smoothed by a
  +/-16 frame moving average),
* a per-video theme: a vector ``theta`` and a scalar mood ``mu``, encoded by
  both ``title`` and ``video_theme``.

The 15 expression targets are ``y = 0.5 * (1 + tanh(z / 2))`` with::

    z = sum_m sqrt(s_m) * M_m u_m(t)
        + sqrt(s_video) * (sqrt(a) * M_theme [theta, mu]
                           + sqrt(1 - a) * mu * M_mood u_image(t))
        + sqrt(1 - sum s) * e(t) + noise_floor * eps(t)

where ``M`` are fixed unit-row mixing matrices, ``e`` is an unobserved
per-frame factor and ``eps`` Gaussian noise. The theme offset is constant
within a video, so it only shows up in per-video label means; the mood term
lets the theme change how frames map to expressions, which is what the
per-video correlation can see.

with ``a = THEME_OFFSET_SHARE``. Each track is an invertible affine map of
``[latent, distractors]``.

With ``corrupt_rate > 0`` each frame-level track of a video is, with that
probability, replaced by an encoding of an unrelated latent plus a fixed
per-modality signature vector. A model that can tell such tracks apart (the
signature makes this possible) gains from down-weighting them per sample.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .feature_store import (
    CANONICAL_DIMS, FRAME_RATE, N_CLASSES, FeatureTrack, Manifest, ManifestEntry,
    file_entry, stack_frames, write_track,
)

SIGNAL_KEYS = ("image", "audio", "action", "subtitle", "video")
TRACK_KEYS = ("image", "audio", "action", "subtitle", "title", "video_theme")
_FRAME_KEYS = ("image", "audio", "action", "subtitle")

SMALL_DIMS = {"image": 16, "audio": 8, "action": 8, "subtitle": 8, "title": 8, "video_theme": 16}
DEFAULT_SIGNAL = {"image": 0.08, "audio": 0.12, "action": 0.12, "subtitle": 0.2, "video": 0.25}
THEME_OFFSET_SHARE = 0.25


class SynthSpecError(ValueError):
    pass


@dataclass
class SynthSpec:
    n_videos: int = 40
    frames_per_video: int = 120
    seed: int = 0
    dims: dict = field(default_factory=lambda: {k: CANONICAL_DIMS[k] for k in TRACK_KEYS})
    signal: dict = field(default_factory=lambda: dict(DEFAULT_SIGNAL))
    noise_floor: float = 0.1
    latent_dim: int = 4
    clip_halfwidth: int = 16
    corrupt_rate: float = 0.0
    splits: tuple = (0.6, 0.25, 0.15)
    dataset_name: str = "synthetic"

    def validate(self) -> "SynthSpec":
        if self.n_videos < 1 or self.frames_per_video < 2:
            raise SynthSpecError("need n_videos >= 1 and frames_per_video >= 2")
        unknown = set(self.signal) - set(SIGNAL_KEYS)
        if unknown:
            raise SynthSpecError(f"unknown signal keys {sorted(unknown)}")
        if any(v < 0 for v in self.signal.values()):
            raise SynthSpecError("signal strengths must be non-negative")
        if sum(self.signal.values()) > 1.0 + 1e-12:
            raise SynthSpecError("signal strengths must sum to at most 1")
        if self.noise_floor < 0:
            raise SynthSpecError("noise_floor must be non-negative")
        if not 0.0 <= self.corrupt_rate <= 1.0:
            raise SynthSpecError("corrupt_rate must lie in [0, 1]")
        if self.latent_dim < 1:
            raise SynthSpecError("latent_dim must be >= 1")
        for k in TRACK_KEYS:
            need = self.latent_dim + (1 if k in ("title", "video_theme") else 0)
            if self.dims.get(k, 0) < need:
                raise SynthSpecError(f"dim of {k} must be >= {need}")
        if len(self.splits) != 3 or any(f < 0 for f in self.splits) or abs(sum(self.splits) - 1) > 1e-9:
            raise SynthSpecError("splits must be three non-negative fractions summing to 1")
        return self

    def to_json(self):
        d = asdict(self)
        d["splits"] = list(self.splits)
        return d

    @classmethod
    def from_json(cls, doc):
        doc = dict(doc)
        if "splits" in doc:
            doc["splits"] = tuple(doc["splits"])
        base = cls()
        if "dims" in doc:
            doc["dims"] = {**base.dims, **doc["dims"]}
        return cls(**doc)


def preset(name: str, **overrides) -> SynthSpec:
    if name == "small":
        spec = SynthSpec(dims=dict(SMALL_DIMS), corrupt_rate=0.25, dataset_name="synthetic-small")
    elif name in ("default", "full"):
        spec = SynthSpec()
    elif name == "noise":
        spec = SynthSpec(dims=dict(SMALL_DIMS), signal={k: 0.0 for k in SIGNAL_KEYS},
                         dataset_name="synthetic-noise")
    else:
        raise SynthSpecError(f"unknown preset {name!r}")
    for k, v in overrides.items():
        if k == "dims":
            spec.dims = {**spec.dims, **v}
        elif k == "signal":
            spec.signal = dict(v)
        else:
            setattr(spec, k, v)
    return spec.validate()


def _unit_rows(rng, rows, cols):
    m = rng.standard_normal((rows, cols))
    return m / np.linalg.norm(m, axis=1, keepdims=True)


@dataclass
class _Encoders:
    mixing: dict      # signal key -> 15 x k
    mood: np.ndarray  # 15 x k, mood x image interaction
    maps: dict        # track -> (R, b)
    signature: dict   # track -> offset marking a corrupted track


def _encoders(spec: SynthSpec) -> _Encoders:
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(0,)))
    k = spec.latent_dim
    mixing = {key: _unit_rows(rng, N_CLASSES, k) for key in _FRAME_KEYS}
    mixing["video"] = _unit_rows(rng, N_CLASSES, k + 1)
    mood = _unit_rows(rng, N_CLASSES, k)
    maps, signature = {}, {}
    for name in TRACK_KEYS:
        d = spec.dims[name]
        R = rng.standard_normal((d, d)) / np.sqrt(d)
        b = rng.normal(0.0, 0.1, size=d)
        maps[name] = (R, b)
        sig = rng.standard_normal(d)
        signature[name] = 2.0 * sig / np.linalg.norm(sig)
    return _Encoders(mixing, mood, maps, signature)


def _clip_factor(rng, T, k, halfwidth):
    w = 2 * halfwidth + 1
    raw = rng.standard_normal((T + 2 * halfwidth, k))
    c = np.cumsum(np.vstack([np.zeros((1, k)), raw]), axis=0)
    return (c[w:] - c[:-w]) / np.sqrt(w)


def _encode(maps, name, latent, rng):
    R, b = maps[name]
    T = latent.shape[0]
    distract = rng.standard_normal((T, R.shape[0] - latent.shape[1]))
    return np.hstack([latent, distract]) @ R.T + b


def generate_video(spec: SynthSpec, index: int, enc: _Encoders | None = None) -> dict:
    """Tracks of one video as float32 arrays keyed by modality (plus ``labels``)."""
    enc = enc or _encoders(spec)
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(1, index)))
    T, k = spec.frames_per_video, spec.latent_dim
    s = {key: float(spec.signal.get(key, 0.0)) for key in SIGNAL_KEYS}

    u = {
        "image": rng.standard_normal((T, k)),
        "audio": rng.standard_normal((T, k)),
        "action": _clip_factor(rng, T, k, spec.clip_halfwidth),
        "subtitle": _clip_factor(rng, T, k, spec.clip_halfwidth),
    }
    theta = rng.standard_normal(k)
    mood = rng.standard_normal()
    unexplained = rng.standard_normal((T, N_CLASSES))
    noise = rng.standard_normal((T, N_CLASSES))

    z = np.zeros((T, N_CLASSES))
    for key in _FRAME_KEYS:
        z += np.sqrt(s[key]) * (u[key] @ enc.mixing[key].T)
    theme = (THEME_OFFSET_SHARE ** 0.5 * (enc.mixing["video"] @ np.append(theta, mood))
             + (1.0 - THEME_OFFSET_SHARE) ** 0.5 * mood * (u["image"] @ enc.mood.T))
    z += np.sqrt(s["video"]) * theme
    z += np.sqrt(max(0.0, 1.0 - sum(s.values()))) * unexplained
    z += spec.noise_floor * noise
    labels = np.clip(0.5 * (1.0 + np.tanh(z / 2.0)), 0.0, 1.0)

    corrupt = rng.random(len(_FRAME_KEYS)) < spec.corrupt_rate
    out = {}
    for name, bad in zip(_FRAME_KEYS, corrupt):
        if bad:
            fake = rng.standard_normal(u[name].shape)
            out[name] = _encode(enc.maps, name, fake, rng) + enc.signature[name]
        else:
            out[name] = _encode(enc.maps, name, u[name], rng)
    theme_latent = np.concatenate([theta, [mood]])[None, :]
    for name in ("title", "video_theme"):
        out[name] = _encode(enc.maps, name, theme_latent, rng)
    out["labels"] = labels
    return {name: v.astype(np.float32) for name, v in out.items()}


def split_of(spec: SynthSpec, index: int) -> str:
    n_train = int(round(spec.splits[0] * spec.n_videos))
    n_val = int(round(spec.splits[1] * spec.n_videos))
    if index < n_train:
        return "train"
    if index < n_train + n_val:
        return "validation"
    return "test"


def generate(spec: SynthSpec, out_dir: str | os.PathLike) -> Path:
    """Write a dataset (tracks + manifest.json) to ``out_dir``; returns the manifest path."""
    spec.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    enc = _encoders(spec)
    T = spec.frames_per_video
    entries = []
    for i in range(spec.n_videos):
        vid = f"vid{i:04d}"
        vdir = out_dir / vid
        vdir.mkdir(exist_ok=True)
        files = {}
        for name, values in generate_video(spec, i, enc).items():
            rate = Fraction(FRAME_RATE) if values.shape[0] == T else Fraction(FRAME_RATE) / T
            track = FeatureTrack(name, rate, values)
            rel = f"{vid}/{name}.mgf"
            write_track(track, out_dir / rel)
            files[name] = file_entry(rel, track)
        entries.append(ManifestEntry(vid, split_of(spec, i), files))
    manifest = Manifest(spec.dataset_name, entries, out_dir)
    path = out_dir / "manifest.json"
    manifest.save(path)
    (out_dir / "synth_spec.json").write_text(json.dumps(spec.to_json(), indent=2) + "\n", encoding="utf-8")
    return path


def ridge_probe(train_records, eval_records, modalities, lam=1.0):
    """Closed-form ridge regression from concatenated features to labels.

    Returns per-video predictions for ``eval_records``; an oracle for how
    much linearly recoverable signal a set of modalities carries.
    """
    xs, y, _ = stack_frames(train_records, modalities)
    X = np.hstack([*xs, np.ones((y.shape[0], 1), dtype=np.float32)]).astype(np.float64)
    A = X.T @ X + lam * np.eye(X.shape[1])
    W = np.linalg.solve(A, X.T @ y.astype(np.float64))
    preds = {}
    for rec in eval_records:
        Xe = np.hstack([*(rec.frame_matrix(m) for m in modalities), np.ones((rec.T, 1))])
        preds[rec.video_id] = Xe @ W
    return preds
