"""Per-video correlation metric, reports and probability ensembling."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels


class EvaluationError(ValueError):
    pass


def pearson(x, y, return_flag=False):
    """Pearson correlation of two equal-length series.

    A constant series makes the correlation undefined; it then scores 0 and,
    with ``return_flag``, is reported as degenerate.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise EvaluationError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise EvaluationError("need at least 2 points")
    r, degenerate = kernels.pearson_columns(x[:, None], y[:, None])
    if return_flag:
        return float(r[0]), bool(degenerate[0])
    return float(r[0])


@dataclass
class EvalReport:
    video_ids: list
    r: np.ndarray            # videos x classes
    degenerate: np.ndarray   # videos x classes, bool

    @property
    def per_video(self):
        return self.r.mean(axis=1)

    @property
    def overall(self):
        return float(self.per_video.mean()) if len(self.video_ids) else 0.0

    @property
    def n_degenerate(self):
        return int(self.degenerate.sum())

    def to_json(self):
        return {
            "overall": self.overall,
            "n_videos": len(self.video_ids),
            "n_degenerate": self.n_degenerate,
            "per_video": {v: float(m) for v, m in zip(self.video_ids, self.per_video)},
            "per_expression_mean": [float(m) for m in self.r.mean(axis=0)] if len(self.video_ids) else [],
            "r": {v: [float(x) for x in row] for v, row in zip(self.video_ids, self.r)},
            "degenerate": {v: [bool(x) for x in row] for v, row in zip(self.video_ids, self.degenerate)},
        }

    def save(self, json_path, csv_path=None):
        Path(json_path).write_text(json.dumps(self.to_json(), indent=2) + "\n", encoding="utf-8")
        if csv_path is not None:
            self.write_csv(csv_path)

    def write_csv(self, path):
        n_classes = self.r.shape[1] if self.r.ndim == 2 else 0
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["video_id", *[f"expr_{j}" for j in range(n_classes)], "mean"])
            for vid, row, m in zip(self.video_ids, self.r, self.per_video):
                w.writerow([vid, *[f"{x:.6f}" for x in row], f"{m:.6f}"])
            if len(self.video_ids):
                w.writerow(["mean", *[f"{x:.6f}" for x in self.r.mean(axis=0)], f"{self.overall:.6f}"])


def evaluate(predictions: dict, labels: dict) -> EvalReport:
    """Correlation per (video, expression), averaged over expressions then videos.

    ``predictions`` and ``labels`` map video id to T x C arrays; every labelled
    video must have a prediction of the same shape.
    """
    ids = sorted(labels)
    rows, flags = [], []
    for vid in ids:
        if vid not in predictions:
            raise EvaluationError(f"no prediction for video {vid}")
        p = np.asarray(predictions[vid])
        y = np.asarray(labels[vid])
        if p.shape != y.shape:
            raise EvaluationError(f"{vid}: prediction shape {p.shape} != label shape {y.shape}")
        if y.shape[0] < 2:
            raise EvaluationError(f"{vid}: need at least 2 frames")
        r, deg = kernels.pearson_columns(p, y)
        rows.append(r)
        flags.append(deg)
    n_classes = np.asarray(labels[ids[0]]).shape[1] if ids else 0
    r = np.array(rows).reshape(len(ids), n_classes)
    deg = np.array(flags, dtype=bool).reshape(len(ids), n_classes)
    return EvalReport(ids, r, deg)


def ensemble(prediction_sets: list) -> dict:
    """Elementwise mean of probability tracks over several models."""
    if not prediction_sets:
        raise EvaluationError("nothing to ensemble")
    keys = set(prediction_sets[0])
    for s in prediction_sets[1:]:
        if set(s) != keys:
            raise EvaluationError("prediction sets cover different videos")
    out = {}
    for vid in sorted(keys):
        arrs = [np.asarray(s[vid]) for s in prediction_sets]
        if any(a.shape != arrs[0].shape for a in arrs):
            raise EvaluationError(f"{vid}: prediction sets cover different frames")
        out[vid] = np.mean(np.stack(arrs).astype(np.float64), axis=0).astype(arrs[0].dtype)
    return out
