"""Command-line front end: ``dzl synth | train | score | eval | flow-debug``.

Settings come from built-in defaults, then an optional JSON ``--config``
file (keys mirror the long flags with ``_`` for ``-``), then explicit
flags. The resolved settings are written into every output.

Exit codes: 0 success, 1 usage error, 2 I/O or data error. JSON results
go to stdout, progress logs to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, fields

import numpy as np

from .flow import FlowParams, compute_flow, write_flow_debug
from .metrics import auc, average_precision
from .model import CheckpointError
from .scoring import DZLScorer, ScoringError, classify, score_report
from .synth import SynthConfig, generate_corpus, read_manifest
from .video_io import ClipFormatError, load_clip

log = logging.getLogger("dzl")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    out: str = None
    epochs: int = 100
    hidden: int = 64
    layers: int = 2
    repeats: int = 8
    threshold: float = None
    percentile: float = 80.0
    zone_k: int = 100
    working_size: int = 512
    learning_rate: float = 1e-3
    train_shuffles: int = 4
    theta: float = 0.5
    shuffle_points: bool = False

    def to_dict(self):
        return asdict(self)

    def scorer(self):
        return DZLScorer(
            working_size=self.working_size or None,
            percentile=self.percentile,
            zone_k=self.zone_k,
            theta=self.theta,
            n_train_shuffles=self.train_shuffles,
            n_repeats=self.repeats,
            hidden_size=self.hidden,
            n_layers=self.layers,
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            threshold=self.threshold,
            shuffle_points=bool(self.shuffle_points),
            random_state=self.seed,
        )


_RUN_KEYS = {f.name for f in fields(RunConfig)}


def resolve_config(args):
    """Defaults, overlaid by the JSON config file, overlaid by explicit flags."""
    values = {}
    if args.config:
        try:
            with open(args.config) as fh:
                loaded = json.load(fh)
        except OSError as exc:
            raise OSError(f"cannot read config {args.config}: {exc}") from exc
        except ValueError as exc:
            raise UsageError(f"config {args.config} is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = set(loaded) - _RUN_KEYS
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        values.update(loaded)
    for key in _RUN_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    cfg = RunConfig(**values)
    if cfg.threshold is not None and not 0.0 < cfg.threshold < 1.0:
        raise UsageError("--threshold must lie in (0, 1)")
    if not 0.0 < cfg.percentile < 100.0:
        raise UsageError("--percentile must lie in (0, 100)")
    for name in ("zone_k", "hidden", "layers", "repeats", "train_shuffles"):
        if getattr(cfg, name) < 1:
            raise UsageError(f"--{name.replace('_', '-')} must be >= 1")
    if cfg.epochs < 0:
        raise UsageError("--epochs must be >= 0")
    if cfg.working_size and cfg.working_size < 8:
        raise UsageError("--working-size must be 0 (native) or >= 8")
    return cfg


def _emit(obj):
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _load_manifest_clips(path):
    entries = read_manifest(path)
    clips = [load_clip(e["path"]) for e in entries]
    return entries, clips


_TRUTH = {"normal": 0, "abnormal": 1, 0: 0, 1: 1}


def _truths(entries):
    """Manifest truths as 0/1 (1 = abnormal); accepts the labels or the integers."""
    try:
        return np.array([_TRUTH[e["truth"]] for e in entries])
    except (KeyError, TypeError) as exc:
        raise ValueError("manifest entries need a 'truth' of 'normal' or 'abnormal'") from exc


# -- commands ------------------------------------------------------------------


def cmd_synth(args, cfg):
    if not cfg.out:
        raise UsageError("synth needs --out DIR")
    if args.normal < 1 or args.abnormal < 1:
        raise UsageError("--normal and --abnormal must be >= 1")
    synth_cfg = SynthConfig(width=args.size, height=args.size, T=args.frames)
    manifest = generate_corpus(
        args.normal, args.abnormal, cfg.out, severity=tuple(args.severity), seed=cfg.seed, cfg=synth_cfg
    )
    _write_json(os.path.join(cfg.out, "run_config.json"), {"run_config": cfg.to_dict(), "synth": synth_cfg.to_dict()})
    _emit({"manifest": os.path.join(cfg.out, "manifest.json"), "clips": len(manifest), "run_config": cfg.to_dict()})
    return EXIT_OK


def cmd_train(args, cfg):
    if not cfg.out:
        raise UsageError("train needs --out CHECKPOINT")
    entries, clips = _load_manifest_clips(args.manifest)
    y = None
    if cfg.threshold is None:
        y = _truths(entries)
        if y.min() == y.max():
            log.warning("training manifest has a single class; call threshold falls back to 0.5")
            y = None
    scorer = cfg.scorer()

    def report(epoch, params, record):
        log.info("epoch %d loss %.4f accuracy %.4f", epoch, record["loss"], record["accuracy"])

    scorer.fit(clips, y, callback=report)
    scorer.save(cfg.out, extra={"run_config": cfg.to_dict()})
    history_path = os.path.splitext(cfg.out)[0] + ".history.csv"
    with open(history_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "loss", "accuracy"])
        for r in scorer.history_:
            writer.writerow([r["epoch"], repr(r["loss"]), repr(r["accuracy"])])
    _emit(
        {
            "checkpoint": cfg.out,
            "history": history_path,
            "clips": len(clips),
            "threshold": scorer.threshold_,
            "run_config": cfg.to_dict(),
        }
    )
    return EXIT_OK


def _loaded_scorer(args, cfg):
    scorer, header = DZLScorer.load(args.model)
    # settings given at scoring time override those stored with the model
    overrides = {}
    for key, param in (("repeats", "n_repeats"), ("percentile", "percentile"), ("zone_k", "zone_k")):
        if getattr(args, key, None) is not None:
            overrides[param] = getattr(cfg, key)
    if args.working_size is not None:
        overrides["working_size"] = cfg.working_size or None
    if args.seed is not None or args.config:
        overrides["random_state"] = cfg.seed
    if overrides:
        scorer.set_params(**overrides)
        if scorer.model_.params_.input_dim != 2 * scorer.zone_k:
            raise ScoringError(
                f"dimension mismatch: checkpoint has {scorer.model_.params_.input_dim} inputs, "
                f"zone_k={scorer.zone_k} needs {2 * scorer.zone_k}"
            )
    threshold = cfg.threshold if args.threshold is not None else scorer.threshold_
    return scorer, threshold


def cmd_score(args, cfg):
    scorer, threshold = _loaded_scorer(args, cfg)
    clip = load_clip(args.clip)
    score = scorer.dzl_score(clip, seed=scorer.random_state)
    report = score_report(score, classify(score, threshold))
    report["run_config"] = cfg.to_dict()
    if cfg.out:
        _write_json(cfg.out, report)
    _emit(report)
    return EXIT_OK


def cmd_eval(args, cfg):
    if not cfg.out:
        raise UsageError("eval needs --out DIR")
    entries = read_manifest(args.manifest)
    y = _truths(entries)
    if y.min() == y.max():
        raise UsageError("AUC is undefined: the manifest holds only one class")
    scorer, threshold = _loaded_scorer(args, cfg)
    rows = []
    for i, e in enumerate(entries):
        score = scorer.dzl_score(load_clip(e["path"]), seed=scorer.random_state)
        call = classify(score, threshold)
        rows.append((e["file"], score.score, int(y[i]), call.call))
        log.info("%s score %.4f %s", e["file"], score.score, call.call)
    os.makedirs(cfg.out, exist_ok=True)
    csv_path = os.path.join(cfg.out, "scores.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "score", "truth", "call"])
        for cid, s, t, c in rows:
            writer.writerow([cid, repr(s), t, c])
    scores = np.array([r[1] for r in rows])
    summary = {
        "auc": auc(y, scores),
        "ap": average_precision(y, scores),
        "n": len(rows),
        "n_abnormal": int(y.sum()),
        "threshold": threshold,
        "accuracy": float(np.mean((scores < threshold).astype(int) == y)),
        "scores_csv": csv_path,
        "run_config": cfg.to_dict(),
    }
    _write_json(os.path.join(cfg.out, "summary.json"), summary)
    _emit(summary)
    return EXIT_OK


def cmd_flow_debug(args, cfg):
    if not cfg.out:
        raise UsageError("flow-debug needs --out DIR")
    clip = load_clip(args.clip)
    if not 0 <= args.frame < len(clip) - 1:
        raise UsageError(f"--frame must lie in [0, {len(clip) - 2}] for a {len(clip)}-frame clip")
    if cfg.working_size:
        clip = clip.resized(cfg.working_size, cfg.working_size)
    flow = compute_flow(clip[args.frame], clip[args.frame + 1], FlowParams())
    os.makedirs(cfg.out, exist_ok=True)
    stem = os.path.join(cfg.out, f"flow_{args.frame:04d}")
    write_flow_debug(flow, stem + "_mag.pgm", stem + "_vec.csv", stride=args.stride)
    mag = np.hypot(flow[..., 0], flow[..., 1])
    _emit(
        {
            "frame": args.frame,
            "magnitude_pgm": stem + "_mag.pgm",
            "vectors_csv": stem + "_vec.csv",
            "mean_magnitude": float(mag.mean()),
            "max_magnitude": float(mag.max()),
            "run_config": cfg.to_dict(),
        }
    )
    return EXIT_OK


# -- argument parsing ------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; the contract here is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p, model=True):
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--config", help="JSON file with default settings; flags win")
    p.add_argument("--out", help="output path")
    p.add_argument("--working-size", type=int, dest="working_size", help="resize frames to N x N (0 = native)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    if model:
        p.add_argument("--epochs", type=int)
        p.add_argument("--hidden", type=int, help="GRU hidden size")
        p.add_argument("--layers", type=int, help="GRU layers")
        p.add_argument("--repeats", type=int, help="shuffles averaged per score")
        p.add_argument("--threshold", type=float, help="abnormal iff score < threshold")
        p.add_argument("--percentile", type=float, help="effective-zone percentile")
        p.add_argument("--zone-k", type=int, dest="zone_k", help="tracked zone points")
        p.add_argument("--learning-rate", type=float, dest="learning_rate")
        p.add_argument("--train-shuffles", type=int, dest="train_shuffles", help="shuffled copies per training clip")
        p.add_argument("--theta", type=float, help="fraction of frames displaced")
        p.add_argument(
            "--shuffle-points",
            action="store_const",
            const=True,
            dest="shuffle_points",
            help="randomly reorder zone points on every training visit",
        )


def build_parser():
    parser = _Parser(prog="dzl", description="Disarranged zone learning for angiography-like clips.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic corpus and manifest")
    _common(p, model=False)
    p.add_argument("--normal", type=int, default=40)
    p.add_argument("--abnormal", type=int, default=40)
    p.add_argument("--severity", type=float, nargs=2, default=[0.2, 0.5], metavar=("LO", "HI"))
    p.add_argument("--size", type=int, default=512, help="frame width and height")
    p.add_argument("--frames", type=int, default=40)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on a manifest and write a checkpoint")
    p.add_argument("manifest")
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score one clip")
    p.add_argument("clip")
    p.add_argument("--model", required=True, help="checkpoint from 'train'")
    _common(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="score a manifest and report AUC / AP")
    p.add_argument("manifest")
    p.add_argument("--model", required=True)
    _common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("flow-debug", help="dump the flow between frames i and i+1")
    p.add_argument("clip")
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--stride", type=int, default=8, help="vector CSV sampling stride")
    _common(p, model=False)
    p.set_defaults(func=cmd_flow_debug)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # bad usage or --help; hand back the code
        return exc.code
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = resolve_config(args)
        return args.func(args, cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"dzl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ClipFormatError, CheckpointError, ScoringError, KeyError, ValueError) as exc:
        print(f"dzl: error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
