"""Checkpoints: one MGF1 file per tensor plus a JSON index."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .feature_store import decode_tensor, encode_tensor
from .model import FrameModel, ModelConfig
from .nn import Adam

FORMAT = "mgnma-checkpoint/1"


def _as_2d(a):
    a = np.asarray(a)
    if a.ndim == 0:
        return a.reshape(1, 1)
    if a.ndim == 1:
        return a.reshape(1, -1)
    return a.reshape(a.shape[0], -1)


def _write_tensors(directory: Path, prefix: str, tensors: dict) -> list:
    index = []
    for i, name in enumerate(sorted(tensors)):
        value = tensors[name]
        rel = f"tensors/{prefix}{i:04d}.mgf"
        (directory / rel).write_bytes(encode_tensor(name, _as_2d(value)))
        index.append({"name": name, "file": rel, "shape": list(np.shape(value))})
    return index


def _read_tensors(directory: Path, index: list) -> dict:
    out = {}
    for item in index:
        name, _, values = decode_tensor((directory / item["file"]).read_bytes())
        if name != item["name"]:
            raise ValueError(f"{item['file']} holds {name!r}, index says {item['name']!r}")
        out[name] = values.reshape(item["shape"])
    return out


def save_checkpoint(directory, model, kind: str, config: dict, optimizer: Adam | None = None,
                    extra: dict | None = None) -> Path:
    directory = Path(directory)
    (directory / "tensors").mkdir(parents=True, exist_ok=True)
    doc = {
        "format": FORMAT,
        "kind": kind,
        "config": config,
        "tensors": _write_tensors(directory, "p", model.state_dict()),
    }
    if optimizer is not None:
        doc["optimizer"] = {
            "learning_rate": optimizer.learning_rate,
            "beta1": optimizer.beta1,
            "beta2": optimizer.beta2,
            "epsilon": optimizer.epsilon,
            "step_count": optimizer.step_count,
            "tensors": _write_tensors(directory, "o", optimizer.state_dict()),
        }
    if extra:
        doc.update(extra)
    (directory / "index.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return directory


def load_checkpoint(directory):
    """Rebuild the model stored in ``directory``; returns (model, index, optimizer or None)."""
    from .video_level import VideoConfig, VideoLevelModel

    directory = Path(directory)
    doc = json.loads((directory / "index.json").read_text(encoding="utf-8"))
    if doc.get("format") != FORMAT:
        raise ValueError(f"not a checkpoint: {directory}")
    if doc["kind"] == "frame":
        model = FrameModel(ModelConfig(**doc["config"]))
    elif doc["kind"] == "video":
        model = VideoLevelModel(VideoConfig.from_json(doc["config"]), doc["dims"])
    else:
        raise ValueError(f"unknown checkpoint kind {doc['kind']!r}")
    model.load_state_dict(_read_tensors(directory, doc["tensors"]))
    model.eval()
    opt = None
    if "optimizer" in doc:
        o = doc["optimizer"]
        opt = Adam(o["learning_rate"], o["beta1"], o["beta2"], o["epsilon"])
        opt.load_state_dict(_read_tensors(directory, o["tensors"]), o["step_count"])
    return model, doc, opt
