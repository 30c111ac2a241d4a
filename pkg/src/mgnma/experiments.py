"""Modality-ladder ablation and method comparison harnesses."""

from __future__ import annotations

import numpy as np

from .evaluator import ensemble, evaluate
from .trainer import predict_records, split_records, train, train_config

LADDER = [
    ["image"],
    ["image", "audio"],
    ["image", "audio", "action"],
    ["image", "audio", "action", "subtitle"],
    ["image", "audio", "action", "subtitle", "video_theme"],
]
LADDER_LABELS = [
    "Image",
    "Image+Audio",
    "Image+Audio+Action",
    "Image+Audio+Action+Subtitle",
    "Image+Audio+Action+Subtitle+Video",
]
# the ladder runs on the single-expert concatenation baseline
LADDER_MODEL = dict(fusion="concat", n_experts=1)

METHODS = {
    "MLP": dict(fusion="concat", n_experts=1),
    "MOE": dict(fusion="concat", n_experts=3),
    "MAF+MOE": dict(fusion="maf", n_experts=3),
}


def ablation_ladder(records, seed, preset="small", model=None, **overrides):
    """Best validation correlation for each rung of the modality ladder."""
    model = LADDER_MODEL if model is None else model
    scores = []
    for mods in LADDER:
        cfg = train_config(preset, seed=seed, modalities=mods, **{**model, **overrides})
        scores.append(train(records, cfg)[1].best_correlation)
    return scores


def is_nondecreasing(scores):
    return all(b >= a for a, b in zip(scores, scores[1:]))


def ensemble_trial(records, seeds, preset="small", **overrides):
    """Train one MAF+MOE model per seed on the same data.

    Returns ``(ensemble_correlation, single_model_correlations)`` on the
    validation split.
    """
    val = split_records(records, "validation")
    labels = {r.video_id: r.labels.values for r in val}
    preds, singles = [], []
    for s in seeds:
        cfg = train_config(preset, seed=s, **{**METHODS["MAF+MOE"], **overrides})
        model = train(records, cfg)[0]
        p = predict_records(model, val)
        preds.append(p)
        singles.append(evaluate(p, labels).overall)
    return evaluate(ensemble(preds), labels).overall, singles


def compare_methods(records, seed, preset="small", ensemble_size=5, **overrides):
    """Validation correlation of MLP, MOE, MAF+MOE and a seed ensemble of MAF+MOE."""
    out = {}
    for name, model in METHODS.items():
        cfg = train_config(preset, seed=seed, **{**model, **overrides})
        out[name] = train(records, cfg)[1].best_correlation
    seeds = [seed * 1000 + j for j in range(ensemble_size)]
    ens, singles = ensemble_trial(records, seeds, preset, **overrides)
    out["Ensemble"] = ens
    out["Ensemble/single_mean"] = float(np.mean(singles))
    return out


def format_table(rows, header=("Input", "Correlation")):
    width = max(len(header[0]), *(len(r[0]) for r in rows))
    lines = [f"{header[0]:<{width}}  {header[1]}", "-" * (width + 2 + len(header[1]))]
    lines += [f"{name:<{width}}  {value:.5f}" for name, value in rows]
    return "\n".join(lines)
