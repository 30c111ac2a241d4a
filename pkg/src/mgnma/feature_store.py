"""Dense feature tracks on disk, dataset manifests and frame alignment.

A track file ("MGF1") is laid out as::

    b"MGF1"                       4 bytes
    name_length                   u32 little-endian
    modality_name                 UTF-8, name_length bytes
    T, dim                        u32, u32
    rate_numerator, rate_denom    u32, u32
    values                        T*dim float32 little-endian, row-major

The same container stores model parameters and predictions.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MAGIC = b"MGF1"
FRAME_RATE = Fraction(6)
N_CLASSES = 15

MODALITIES = (
    "image", "audio", "action", "subtitle", "title", "video_theme",
    "labels", "prediction", "custom",
)
FRAME_ALIGNED = ("image", "audio", "action", "subtitle", "labels")
CANONICAL_DIMS = {
    "image": 1536,
    "audio": 128,
    "action": 512,
    "subtitle": 768,
    "title": 768,
    "video_theme": 1024,
    "labels": N_CLASSES,
}
SPLITS = ("train", "validation", "test")

_U32 = struct.Struct("<I")
_DIMS = struct.Struct("<IIII")


class FeatureStoreError(Exception):
    pass


class TrackFormatError(FeatureStoreError):
    pass


class BadMagicError(TrackFormatError):
    pass


class TruncatedTrackError(TrackFormatError):
    pass


class TrackInvariantError(FeatureStoreError):
    pass


class NonFiniteError(TrackInvariantError):
    pass


class LabelRangeError(TrackInvariantError):
    pass


class AlignmentError(FeatureStoreError):
    pass


class ManifestError(FeatureStoreError):
    pass


@dataclass(frozen=True, eq=False)
class FeatureTrack:
    modality_name: str
    rate_hz: Fraction
    values: np.ndarray

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float32)
        if values.ndim == 1:
            values = values[None, :]
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "rate_hz", Fraction(self.rate_hz))

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def validate(self) -> "FeatureTrack":
        if self.modality_name not in MODALITIES:
            raise TrackInvariantError(f"unknown modality {self.modality_name!r}")
        check_values(self.values, self.modality_name)
        if self.rate_hz <= 0:
            raise TrackInvariantError(f"rate must be positive, got {self.rate_hz}")
        return self


def check_values(values: np.ndarray, name: str = "custom") -> None:
    if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
        raise TrackInvariantError(f"{name}: need a T x dim matrix with T, dim >= 1, got {values.shape}")
    if not np.isfinite(values).all():
        raise NonFiniteError(f"{name}: values contain NaN or Inf")
    if name == "labels":
        if values.shape[1] != N_CLASSES:
            raise TrackInvariantError(f"labels must have dim {N_CLASSES}, got {values.shape[1]}")
        if values.min() < 0.0 or values.max() > 1.0:
            raise LabelRangeError("labels outside [0, 1]")


def encode_tensor(name: str, values: np.ndarray, rate: Fraction = Fraction(1)) -> bytes:
    values = np.ascontiguousarray(values, dtype="<f4")
    rate = Fraction(rate)
    raw_name = name.encode("utf-8")
    return b"".join((
        MAGIC,
        _U32.pack(len(raw_name)),
        raw_name,
        _DIMS.pack(values.shape[0], values.shape[1], rate.numerator, rate.denominator),
        values.tobytes(),
    ))


def decode_tensor(buf: bytes) -> tuple[str, Fraction, np.ndarray]:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagicError(f"bad magic {buf[:4]!r}")
    pos = 4
    if len(buf) < pos + 4:
        raise TruncatedTrackError("header truncated")
    (n,) = _U32.unpack_from(buf, pos)
    pos += 4
    if len(buf) < pos + n + _DIMS.size:
        raise TruncatedTrackError("header truncated")
    try:
        name = buf[pos:pos + n].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise TrackFormatError("modality name is not UTF-8") from exc
    pos += n
    T, dim, num, den = _DIMS.unpack_from(buf, pos)
    pos += _DIMS.size
    if den == 0 or num == 0:
        raise TrackInvariantError("rate must be a positive rational")
    expected = T * dim * 4
    payload = buf[pos:]
    if len(payload) < expected:
        raise TruncatedTrackError(f"payload has {len(payload)} bytes, header declares {expected}")
    if len(payload) > expected:
        raise TrackFormatError(f"{len(payload) - expected} trailing bytes after payload")
    values = np.frombuffer(payload, dtype="<f4").reshape(T, dim).astype(np.float32)
    return name, Fraction(num, den), values


def write_track(track: FeatureTrack, path: str | os.PathLike) -> None:
    track.validate()
    Path(path).write_bytes(encode_tensor(track.modality_name, track.values, track.rate_hz))


def read_track(path: str | os.PathLike) -> FeatureTrack:
    name, rate, values = decode_tensor(Path(path).read_bytes())
    return FeatureTrack(name, rate, values).validate()


# -- records and manifests -------------------------------------------------


@dataclass(frozen=True)
class VideoRecord:
    video_id: str
    tracks: dict
    labels: FeatureTrack
    split: str = "train"

    @property
    def T(self) -> int:
        return self.labels.T

    def validate(self) -> "VideoRecord":
        if self.split not in SPLITS:
            raise ManifestError(f"{self.video_id}: unknown split {self.split!r}")
        for name, track in self.tracks.items():
            if name in FRAME_ALIGNED and track.T != self.T:
                raise AlignmentError(
                    f"{self.video_id}: {name} has T={track.T}, labels have T={self.T}")
        return self

    def frame_matrix(self, modality: str) -> np.ndarray:
        """All frames of one modality mapped onto the label frame grid, T x dim."""
        track = self._track(modality)
        return track.values[frame_indices(track, self.T, self.labels.rate_hz)]

    def _track(self, modality: str) -> FeatureTrack:
        if modality == "labels":
            return self.labels
        try:
            return self.tracks[modality]
        except KeyError:
            raise AlignmentError(f"{self.video_id}: missing modality {modality!r}") from None


@dataclass(frozen=True)
class AlignedSample:
    modalities: tuple
    vectors: tuple
    labels: np.ndarray


def frame_indices(track: FeatureTrack, n_frames: int, frame_rate: Fraction = FRAME_RATE) -> np.ndarray:
    """Row of `track` nearest in time to each target frame; ties take the earlier row."""
    if track.T == 1:
        return np.zeros(n_frames, dtype=np.int64)
    r = track.rate_hz / Fraction(frame_rate)
    num, den = r.numerator, r.denominator
    t = np.arange(n_frames, dtype=np.int64)
    # nearest row to x = t*num/den with halves rounded down: ceil(x - 1/2)
    a = 2 * t * num - den
    idx = -((-a) // (2 * den))
    return np.clip(idx, 0, track.T - 1)


def align_sample(record: VideoRecord, frame_index: int, modalities: Sequence[str]) -> AlignedSample:
    if not 0 <= frame_index < record.T:
        raise AlignmentError(f"frame index {frame_index} out of range [0, {record.T})")
    vectors = []
    for name in modalities:
        track = record._track(name)
        row = frame_indices(track, frame_index + 1, record.labels.rate_hz)[frame_index]
        vectors.append(track.values[row])
    return AlignedSample(tuple(modalities), tuple(vectors), record.labels.values[frame_index])


def uniform_subsample(track: FeatureTrack, n: int) -> FeatureTrack:
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    T = track.T
    if n == 1:
        idx = np.array([T // 2])
    else:
        i = np.arange(n, dtype=np.int64)
        # round(i*(T-1)/(n-1)), halves up
        idx = (2 * i * (T - 1) + (n - 1)) // (2 * (n - 1))
    return FeatureTrack(track.modality_name, track.rate_hz * Fraction(n, T), track.values[idx])


@dataclass
class ManifestEntry:
    video_id: str
    split: str
    files: dict = field(default_factory=dict)  # modality -> {"path", "dim", "rate"}


@dataclass
class Manifest:
    dataset_name: str
    entries: list
    root: Path = Path(".")

    def validate(self) -> "Manifest":
        ids = [e.video_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ManifestError("duplicate video ids in manifest")
        for e in self.entries:
            if e.split not in SPLITS:
                raise ManifestError(f"{e.video_id}: unknown split {e.split!r}")
            if "labels" not in e.files:
                raise ManifestError(f"{e.video_id}: no labels track")
            for name, info in e.files.items():
                if not (self.root / info["path"]).is_file():
                    raise ManifestError(f"{e.video_id}: missing file {info['path']}")
        return self

    def to_json(self) -> dict:
        return {
            "dataset_name": self.dataset_name,
            "entries": [
                {"video_id": e.video_id, "split": e.split, "files": e.files}
                for e in self.entries
            ],
        }

    def save(self, path: str | os.PathLike) -> None:
        path = Path(path)
        path.write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def modalities(self) -> set:
        names = set()
        for e in self.entries:
            names.update(e.files)
        return names


def file_entry(path: str, track: FeatureTrack) -> dict:
    r = track.rate_hz
    return {"path": path, "dim": track.dim, "rate": [r.numerator, r.denominator]}


def load_manifest(path: str | os.PathLike) -> Manifest:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    doc = json.loads(path.read_text(encoding="utf-8"))
    entries = [ManifestEntry(e["video_id"], e["split"], dict(e["files"])) for e in doc["entries"]]
    return Manifest(doc["dataset_name"], entries, path.parent).validate()


def load_video(manifest: Manifest, entry: ManifestEntry) -> VideoRecord:
    tracks = {}
    for name, info in entry.files.items():
        track = read_track(manifest.root / info["path"])
        if track.modality_name != name:
            raise ManifestError(f"{entry.video_id}: file for {name} holds {track.modality_name}")
        if track.dim != info["dim"]:
            raise ManifestError(
                f"{entry.video_id}: {name} has dim {track.dim}, manifest declares {info['dim']}")
        if "rate" in info and track.rate_hz != Fraction(*info["rate"]):
            raise ManifestError(f"{entry.video_id}: {name} rate differs from manifest")
        tracks[name] = track
    labels = tracks.pop("labels")
    return VideoRecord(entry.video_id, tracks, labels, entry.split).validate()


def load_dataset(manifest: Manifest | str | os.PathLike,
                 splits: Iterable[str] | None = None) -> list:
    if not isinstance(manifest, Manifest):
        manifest = load_manifest(manifest)
    wanted = set(splits) if splits is not None else None
    return [load_video(manifest, e) for e in manifest.entries
            if wanted is None or e.split in wanted]


def stack_frames(records: Sequence[VideoRecord], modalities: Sequence[str]):
    """Pool the frames of several videos.

    Returns ``(features, labels, offsets)``: one N x dim array per modality,
    the N x 15 label matrix, and row offsets so video i owns rows
    ``offsets[i]:offsets[i + 1]``.
    """
    feats = [[] for _ in modalities]
    labels = []
    offsets = [0]
    for rec in records:
        for i, name in enumerate(modalities):
            feats[i].append(rec.frame_matrix(name))
        labels.append(rec.labels.values)
        offsets.append(offsets[-1] + rec.T)
    if not records:
        raise AlignmentError("no videos to stack")
    return ([np.concatenate(f, axis=0) for f in feats],
            np.concatenate(labels, axis=0), np.array(offsets))
