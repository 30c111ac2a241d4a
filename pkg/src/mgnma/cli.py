"""Command line entry point: ``mgnma <subcommand> ...``.

Exit codes: 0 success, 2 bad usage, 3 missing or invalid input, 4 numerical
failure. Failures print one JSON line on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import experiments, synthetic
from .checkpoint import load_checkpoint, save_checkpoint
from .evaluator import EvaluationError, ensemble, evaluate
from .feature_store import (
    FRAME_RATE, FeatureStoreError, FeatureTrack, load_dataset, read_track, write_track,
)
from .gradsuite import run_suite
from .nn import NumericalError
from .trainer import TrainConfig, TrainError, predict_records, train, train_config
from .video_level import VideoConfig, export_to_dataset, train_video_level, video_config

log = logging.getLogger("mgnma")

EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_NUMERICAL = 4


class CliError(Exception):
    def __init__(self, code, kind, message):
        super().__init__(message)
        self.code = code
        self.kind = kind


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _fail(EXIT_USAGE, "usage", message)


def _fail(code, kind, message):
    sys.stderr.write(json.dumps({"error": kind, "code": code, "message": str(message)}) + "\n")
    sys.exit(code)


def _read_config(path):
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise CliError(EXIT_INPUT, "missing_input", f"config file not found: {p}")
    return json.loads(p.read_text(encoding="utf-8"))


def _merge(base: dict, config: dict, flags: dict) -> dict:
    """flags > config file > defaults; flags left as None do not override."""
    out = dict(base)
    out.update(config)
    out.update({k: v for k, v in flags.items() if v is not None})
    return out


def _write_json(path, doc):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _checkpoint_dir(path):
    p = Path(path)
    if (p / "checkpoint" / "index.json").is_file():
        return p / "checkpoint"
    if (p / "index.json").is_file():
        return p
    raise CliError(EXIT_INPUT, "missing_input", f"no checkpoint at {p}")


def _parse_signal(items):
    if not items:
        return None
    out = {}
    for item in items:
        key, _, value = item.partition("=")
        out[key] = float(value)
    return out


# -- subcommands ------------------------------------------------------------


def cmd_synth(args):
    config = _read_config(args.config)
    overrides = _merge({}, config, {
        "seed": args.seed, "n_videos": args.n_videos, "frames_per_video": args.frames,
        "noise_floor": args.noise_floor, "corrupt_rate": args.corrupt_rate,
        "signal": _parse_signal(args.signal),
    })
    spec = synthetic.preset(args.preset, **overrides)
    path = synthetic.generate(spec, args.out)
    print(path)


def _frame_train_config(args):
    base = asdict(train_config(args.preset))
    flags = {
        "seed": args.seed, "epochs": args.epochs, "learning_rate": args.lr,
        "batch_size": args.batch_size, "fusion": args.fusion, "n_experts": args.experts,
        "hidden": args.hidden, "fused_dim": args.fused_dim, "modal_dropout_p": args.dropout,
        "modalities": args.modalities.split(",") if args.modalities else None,
    }
    return TrainConfig.from_json(_merge(base, _read_config(args.config), flags)).validate()


def cmd_train(args):
    cfg = _frame_train_config(args)
    run = Path(args.run_dir)
    run.mkdir(parents=True, exist_ok=True)
    _write_json(run / "config.json", {"command": "train", "manifest": str(args.manifest), **cfg.to_json()})
    records = load_dataset(args.manifest)
    model, report, opt = train(records, cfg)
    save_checkpoint(run / "checkpoint", model, "frame", model.config.to_json(), opt)
    report.save(run / "report.json")
    print(json.dumps({"best_epoch": report.best_epoch, "val_correlation": report.best_correlation}))


def cmd_train_video(args):
    base = asdict(video_config(args.preset))
    flags = {"seed": args.seed, "epochs": args.epochs, "learning_rate": args.lr,
             "batch_size": args.batch_size, "n_clusters": args.clusters,
             "embed_dim": args.embed_dim, "pooled_dim": args.pooled_dim,
             "modal_dropout_p": args.dropout}
    cfg = VideoConfig.from_json(_merge(base, _read_config(args.config), flags))
    run = Path(args.run_dir)
    run.mkdir(parents=True, exist_ok=True)
    _write_json(run / "config.json", {"command": "train-video", "manifest": str(args.manifest), **cfg.to_json()})
    records = load_dataset(args.manifest)
    model, report, opt = train_video_level(records, cfg)
    save_checkpoint(run / "checkpoint", model, "video", cfg.to_json(), opt, extra={"dims": list(model.dims)})
    report.save(run / "report.json")
    print(json.dumps({"best_epoch": report.best_epoch, "val_correlation": report.best_correlation}))


def cmd_export_video(args):
    model, doc, _ = load_checkpoint(_checkpoint_dir(args.checkpoint))
    if doc["kind"] != "video":
        raise CliError(EXIT_INPUT, "invalid_input", "checkpoint is not a video-level model")
    print(export_to_dataset(model, args.manifest, args.out_manifest))


def cmd_predict(args):
    model, doc, _ = load_checkpoint(_checkpoint_dir(args.checkpoint))
    if doc["kind"] != "frame":
        raise CliError(EXIT_INPUT, "invalid_input", "checkpoint is not a frame-level model")
    records = load_dataset(args.manifest, splits=[args.split])
    if not records:
        raise CliError(EXIT_INPUT, "missing_input", f"no videos in split {args.split!r}")
    preds = predict_records(model, records)
    save_predictions(preds, args.out)
    print(args.out)


def save_predictions(preds: dict, out_dir, rate=FRAME_RATE):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    index = {}
    for vid, p in sorted(preds.items()):
        rel = f"{vid}.mgf"
        write_track(FeatureTrack("prediction", Fraction(rate), p), out / rel)
        index[vid] = rel
    _write_json(out / "predictions.json", {"videos": index})


def load_predictions(directory) -> dict:
    d = Path(directory)
    idx = d / "predictions.json"
    if not idx.is_file():
        raise CliError(EXIT_INPUT, "missing_input", f"no predictions.json in {d}")
    videos = json.loads(idx.read_text(encoding="utf-8"))["videos"]
    return {vid: read_track(d / rel).values for vid, rel in videos.items()}


def cmd_eval(args):
    preds = load_predictions(args.predictions)
    records = load_dataset(args.manifest, splits=[args.split])
    report = evaluate(preds, {r.video_id: r.labels.values for r in records})
    out = Path(args.out) if args.out else Path(args.predictions) / "eval.json"
    report.save(out, out.with_suffix(".csv"))
    print(f"overall_correlation {report.overall:.6f}")
    print(f"videos {len(report.video_ids)} degenerate_pairs {report.n_degenerate}")


def cmd_ensemble(args):
    sets = [load_predictions(p) for p in args.predictions]
    save_predictions(ensemble(sets), args.out)
    print(args.out)


def cmd_gradcheck(args):
    reports = run_suite(seed=args.seed, tolerance=args.tolerance)
    failed = []
    for name, rep in reports.items():
        status = "PASS" if rep.passed else "FAIL"
        print(f"{status} {name} max_rel_error={rep.max_rel_error:.3e}")
        if not rep.passed:
            failed.append(name)
    if failed:
        raise CliError(EXIT_NUMERICAL, "gradcheck_failed", ",".join(failed))


def _ablate_datasets(args, run):
    """Yield (seed, records) pairs for the requested seeds."""
    for seed in args.seeds:
        if args.manifest:
            yield seed, load_dataset(args.manifest)
        else:
            spec = synthetic.preset(args.synth_preset, seed=seed)
            path = synthetic.generate(spec, run / "data" / f"seed{seed}")
            yield seed, load_dataset(path)


def cmd_ablate(args):
    run = Path(args.run_dir)
    run.mkdir(parents=True, exist_ok=True)
    _write_json(run / "config.json", {k: v for k, v in vars(args).items() if k != "func"})
    if args.table == 1:
        per_seed = {}
        for seed, records in _ablate_datasets(args, run):
            per_seed[seed] = experiments.ablation_ladder(records, seed, preset=args.preset)
        means = np.mean([per_seed[s] for s in per_seed], axis=0)
        rows = list(zip(experiments.LADDER_LABELS, means))
        doc = {
            "table": 1,
            "rows": [{"input": n, "mean_correlation": float(m),
                      "per_seed": {str(s): per_seed[s][i] for s in per_seed}}
                     for i, (n, m) in enumerate(rows)],
            "nondecreasing_seeds": sum(experiments.is_nondecreasing(v) for v in per_seed.values()),
            "n_seeds": len(per_seed),
        }
    else:
        per_seed = {}
        for seed, records in _ablate_datasets(args, run):
            per_seed[seed] = experiments.compare_methods(records, seed, preset=args.preset)
        names = ["MLP", "MOE", "MAF+MOE", "Ensemble"]
        rows = [(n, float(np.mean([per_seed[s][n] for s in per_seed]))) for n in names]
        doc = {
            "table": 2,
            "rows": [{"method": n, "mean_correlation": m,
                      "per_seed": {str(s): per_seed[s][n] for s in per_seed}} for n, m in rows],
            "ensemble_single_mean": {str(s): per_seed[s]["Ensemble/single_mean"] for s in per_seed},
        }
    _write_json(run / f"table{args.table}.json", doc)
    header = ("Input", "Correlation") if args.table == 1 else ("Method", "Correlation")
    print(experiments.format_table(rows, header))


# -- parser -----------------------------------------------------------------


def build_parser():
    p = _Parser(prog="mgnma", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--preset", default="small", choices=["small", "default", "full", "noise"])
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--n-videos", type=int)
    s.add_argument("--frames", type=int)
    s.add_argument("--noise-floor", type=float)
    s.add_argument("--corrupt-rate", type=float)
    s.add_argument("--signal", nargs="*", metavar="KEY=STRENGTH")
    s.add_argument("--config")
    s.set_defaults(func=cmd_synth)

    def train_flags(q):
        q.add_argument("--manifest", required=True)
        q.add_argument("--run-dir", required=True)
        q.add_argument("--preset", choices=["small", "full"], default="full")
        q.add_argument("--config")
        q.add_argument("--seed", type=int)
        q.add_argument("--epochs", type=int)
        q.add_argument("--lr", type=float)
        q.add_argument("--batch-size", type=int)
        q.add_argument("--dropout", type=float, help="modal dropout probability")

    t = sub.add_parser("train", help="train the frame-level model")
    train_flags(t)
    t.add_argument("--modalities", help="comma-separated, e.g. image,audio,video_theme")
    t.add_argument("--fusion", choices=["maf", "concat"])
    t.add_argument("--experts", type=int)
    t.add_argument("--hidden", type=int)
    t.add_argument("--fused-dim", type=int)
    t.set_defaults(func=cmd_train)

    tv = sub.add_parser("train-video", help="train the video-level network")
    train_flags(tv)
    tv.add_argument("--clusters", type=int)
    tv.add_argument("--pooled-dim", type=int)
    tv.add_argument("--embed-dim", type=int)
    tv.set_defaults(func=cmd_train_video)

    e = sub.add_parser("export-video", help="write video_theme tracks from a video-level model")
    e.add_argument("--manifest", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--out-manifest")
    e.set_defaults(func=cmd_export_video)

    pr = sub.add_parser("predict", help="write per-frame predictions")
    pr.add_argument("--manifest", required=True)
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--split", default="validation", choices=["train", "validation", "test"])
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_predict)

    ev = sub.add_parser("eval", help="per-video correlation report")
    ev.add_argument("--manifest", required=True)
    ev.add_argument("--predictions", required=True)
    ev.add_argument("--split", default="validation", choices=["train", "validation", "test"])
    ev.add_argument("--out")
    ev.set_defaults(func=cmd_eval)

    en = sub.add_parser("ensemble", help="average several prediction sets")
    en.add_argument("--predictions", nargs="+", required=True)
    en.add_argument("--out", required=True)
    en.set_defaults(func=cmd_ensemble)

    g = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--tolerance", type=float, default=1e-4)
    g.set_defaults(func=cmd_gradcheck)

    a = sub.add_parser("ablate", help="modality ladder (--table 1) or method comparison (--table 2)")
    a.add_argument("--run-dir", required=True)
    a.add_argument("--table", type=int, choices=[1, 2], default=1)
    a.add_argument("--manifest", help="use this dataset for every seed instead of synthesising")
    a.add_argument("--synth-preset", default="small")
    a.add_argument("--preset", choices=["small", "full"], default="small", help="training preset")
    a.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except CliError as exc:
        _fail(exc.code, exc.kind, exc)
    except NumericalError as exc:
        _fail(EXIT_NUMERICAL, "numerical", exc)
    except (FeatureStoreError, FileNotFoundError, TrainError, EvaluationError,
            synthetic.SynthSpecError) as exc:
        _fail(EXIT_INPUT, "invalid_input", exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
