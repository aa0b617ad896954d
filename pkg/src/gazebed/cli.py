"""Command-line entry point: ``gazebed <subcommand> [options]``.

Settings come from an optional TOML file (``--config``) with the sections
``[data]``, ``[synth]``, ``[gaze]``, ``[model]`` and ``[train]``; command-line
flags override the file.  Every run writes into its own directory under
``--out`` and every output file starts with a ``# gazebed ...`` header
carrying the config hash, seed and git revision.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import subprocess
import sys
from dataclasses import fields

import numpy as np

from .analysis import kde_density, mrmr_rank
from .evaluation import evaluate, format_score
from .gaze_features import FEATURE_NAMES, GazeConfig, extract_windowed
from .ingest import EMOTIONS, IngestError, load_dataset
from .model import CrossmodalNet, ModelConfig
from .synthetic import SynthConfig, generate, write_dataset
from .trainer import TrainConfig, load_checkpoint, prepare_features, train, write_metrics_log

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

logger = logging.getLogger("gazebed")

SECTIONS = {
    "data": {"train_manifest", "validation_manifest", "manifest", "fps"},
    "synth": {f.name for f in fields(SynthConfig)},
    "gaze": {f.name for f in fields(GazeConfig)},
    "model": {f.name for f in fields(ModelConfig)} - {"audio_dim", "gaze_dim"},
    "train": {f.name for f in fields(TrainConfig)},
    "analysis": {"top_k", "bins", "grid"},
}


class UsageError(Exception):
    """Bad configuration; reported like an argparse error (exit 2)."""


# -- config -----------------------------------------------------------------------

def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise UsageError(f"{path}: {exc}") from exc
    for section, values in raw.items():
        if section not in SECTIONS or not isinstance(values, dict):
            raise UsageError(f"{path}: unknown section [{section}]")
        unknown = set(values) - SECTIONS[section]
        if unknown:
            raise UsageError(f"{path}: unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
    return raw


def _override(cfg: dict, section: str, key: str, value) -> None:
    if value is not None:
        cfg.setdefault(section, {})[key] = value


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def git_revision() -> str:
    here = os.path.dirname(os.path.abspath(__file__))
    try:
        out = subprocess.run(
            ["git", "rev-parse", "--short=12", "HEAD"], cwd=here, capture_output=True, text=True, timeout=5
        )
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() if out.returncode == 0 and out.stdout.strip() else "unknown"


class Run:
    """Resolved configuration plus the per-run output directory."""

    def __init__(self, command: str, cfg: dict, out_root: str, seed: int):
        self.command = command
        self.cfg = cfg
        self.seed = seed
        self.hash = config_hash({"command": command, **cfg})
        self.header = f"gazebed command={command} config_hash={self.hash} seed={seed} git={git_revision()}"
        self.dir = os.path.join(out_root, f"{command}-{self.hash}")
        os.makedirs(self.dir, exist_ok=True)
        with open(self.path("config.json"), "w") as fh:
            fh.write(f"// {self.header}\n")
            json.dump({"command": command, **cfg}, fh, indent=2, sort_keys=True, default=str)
            fh.write("\n")

    def path(self, name: str) -> str:
        return os.path.join(self.dir, name)

    def csv_writer(self, name: str):
        fh = open(self.path(name), "w", newline="")
        fh.write(f"# {self.header}\n")
        return fh, csv.writer(fh, lineterminator="\n")


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def _gaze_config(cfg: dict) -> GazeConfig:
    return GazeConfig(**cfg.get("gaze", {}))


def _load(path: str, cfg: dict):
    utts = load_dataset(path, fps=float(cfg.get("data", {}).get("fps", 30.0)))
    for uid, reason in utts.dropped:
        logger.warning("dropped %s: %s", uid, reason)
    if not utts:
        raise IngestError(f"{path}: no usable utterances")
    return utts


def _require(cfg: dict, key: str, flag: str) -> str:
    value = cfg.get("data", {}).get(key)
    if not value:
        raise UsageError(f"missing {flag} (or [data] {key} in the config)")
    return value


# -- subcommands ------------------------------------------------------------------

def cmd_extract_features(args, cfg) -> int:
    _override(cfg, "data", "manifest", args.manifest)
    _override(cfg, "data", "fps", args.fps)
    cfg["extract"] = {"mode": args.mode}
    run = Run("extract-features", cfg, args.out, 0)
    utts = _load(_require(cfg, "manifest", "--manifest"), cfg)
    gcfg = _gaze_config(cfg)
    if args.mode == "averaged":
        fh, w = run.csv_writer("gaze_averaged.csv")
        with fh:
            w.writerow(["id", "label", *FEATURE_NAMES])
            for u in utts:
                w.writerow([u.id, u.label_name, *map(_fmt, extract_windowed(u, gcfg).mean(axis=0))])
    else:
        os.makedirs(run.path("windowed"), exist_ok=True)
        for u in utts:
            fh, w = run.csv_writer(os.path.join("windowed", f"{u.id}.csv"))
            with fh:
                w.writerow(["frame", *FEATURE_NAMES])
                for fr, row in zip(u.frames, extract_windowed(u, gcfg)):
                    w.writerow([fr.frame_index, *map(_fmt, row)])
    print(f"{len(utts)} utterances -> {run.dir}")
    return 0


def cmd_synth(args, cfg) -> int:
    _override(cfg, "synth", "seed", args.seed)
    sc = SynthConfig(**cfg.get("synth", {}))
    cfg["synth"] = sc.to_dict()
    run = Run("synth", cfg, args.out, sc.seed)
    manifests = write_dataset(generate(sc), run.dir, [run.header])
    for split, path in manifests.items():
        print(f"{split}: {path}")
    return 0


def cmd_train(args, cfg) -> int:
    _override(cfg, "data", "train_manifest", args.train_manifest)
    _override(cfg, "data", "validation_manifest", args.validation_manifest)
    _override(cfg, "data", "fps", args.fps)
    for key in ("seed", "epochs", "lr", "batch_size", "mode", "triplet_weight", "margin"):
        _override(cfg, "train", key, getattr(args, key))
    for key in ("gaze_mode", "fusion_mode", "embedding_dim"):
        _override(cfg, "model", key, getattr(args, key))
    tc = TrainConfig(**cfg.get("train", {}))
    mcfg = dict(cfg.get("model", {}))
    cfg["train"] = tc.to_dict()
    run = Run("train", cfg, args.out, tc.seed)

    gcfg = _gaze_config(cfg)
    gaze_mode = mcfg.get("gaze_mode", "averaged")
    max_len = mcfg.get("max_seq_len")
    train_utts = _load(_require(cfg, "train_manifest", "--train-manifest"), cfg)
    val_path = cfg.get("data", {}).get("validation_manifest")
    train_fs = prepare_features(train_utts, gaze_mode, gcfg, max_len)
    val_fs = prepare_features(_load(val_path, cfg), gaze_mode, gcfg, max_len) if val_path else None
    mcfg.setdefault("visual_dim", train_fs.visual[0].shape[1])
    mc = ModelConfig(audio_dim=train_fs.audio.shape[1], **mcfg)

    result = train(train_fs, val_fs, mc, tc, gcfg)
    write_metrics_log(run.path("metrics_log.csv"), result.log, [run.header])
    result.model.save(run.path("model.npz"), {"header": run.header, "config_hash": run.hash})
    if result.best_epoch is not None:
        scores = ", ".join(f"{m} {format_score(result.best_val_f1(m))}" for m in tc.test_modalities)
        print(f"best epoch {result.best_epoch}: {scores}")
    print(f"checkpoint: {run.path('model.npz')}")
    return 0


def cmd_evaluate(args, cfg) -> int:
    _override(cfg, "data", "manifest", args.manifest)
    _override(cfg, "data", "fps", args.fps)
    with open(args.checkpoint, "rb") as fh:
        ckpt_digest = hashlib.sha256(fh.read()).hexdigest()[:16]
    cfg["evaluate"] = {"checkpoint_sha256": ckpt_digest, "test_modality": args.test_modality}
    model = load_checkpoint(args.checkpoint)
    run = Run("evaluate", cfg, args.out, model.train_config.seed)
    fs = model.features(_load(_require(cfg, "manifest", "--manifest"), cfg))
    m = evaluate(model, fs, args.test_modality)
    names = EMOTIONS[: len(m.per_class_f1)]

    fh, w = run.csv_writer("metrics.csv")
    with fh:
        w.writerow(["test_modality", "metric", "class", "value"])
        w.writerow([m.test_modality, "micro_f1", "all", _fmt(m.micro_f1)])
        for name, v in zip(names, m.per_class_f1):
            w.writerow([m.test_modality, "f1", name, _fmt(v)])
    fh, w = run.csv_writer("confusion.csv")
    with fh:
        w.writerow(["true\\predicted", *names])
        for name, row in zip(names, m.confusion):
            w.writerow([name, *row])
    fh, w = run.csv_writer("predictions.csv")
    with fh:
        w.writerow(["id", "true", "predicted"])
        for uid, t, p in zip(fs.ids, m.truths, m.predictions):
            w.writerow([uid, EMOTIONS[t], EMOTIONS[p]])
    print(m.summary())
    return 0


def cmd_rank_features(args, cfg) -> int:
    _override(cfg, "data", "manifest", args.manifest)
    _override(cfg, "data", "fps", args.fps)
    _override(cfg, "analysis", "top_k", args.top_k)
    _override(cfg, "analysis", "bins", args.bins)
    a = cfg.setdefault("analysis", {})
    top_k, bins = int(a.setdefault("top_k", 5)), int(a.setdefault("bins", 3))
    run = Run("rank-features", cfg, args.out, 0)
    utts = _load(_require(cfg, "manifest", "--manifest"), cfg)
    gcfg = _gaze_config(cfg)
    X = np.vstack([extract_windowed(u, gcfg).mean(axis=0) for u in utts])
    y = np.array([u.label for u in utts])

    fh, w = run.csv_writer("ranking.csv")
    with fh:
        fh.write(f"# mrmr scheme=MID (relevance minus mean redundancy) one-vs-rest bins={bins} "
                 f"discretization=equal-frequency mi=nats features=averaged-gaze\n")
        w.writerow(["class", "rank", "feature", "score"])
        for c in np.unique(y):
            if np.all(y == c):
                logger.warning("class %s is the only class present; skipped", EMOTIONS[c])
                continue
            res = mrmr_rank(X, y, int(c), top_k=min(top_k, X.shape[1]), n_bins=bins)
            for rank, (j, s) in enumerate(zip(res.indices, res.scores), start=1):
                w.writerow([EMOTIONS[c], rank, FEATURE_NAMES[j], _fmt(s)])
    print(f"ranking: {run.path('ranking.csv')}")
    return 0


def cmd_gaze_density(args, cfg) -> int:
    _override(cfg, "data", "manifest", args.manifest)
    _override(cfg, "data", "fps", args.fps)
    _override(cfg, "analysis", "grid", args.grid)
    grid = int(cfg.setdefault("analysis", {}).setdefault("grid", 100))
    run = Run("gaze-density", cfg, args.out, 0)
    utts = _load(_require(cfg, "manifest", "--manifest"), cfg)
    min_conf = _gaze_config(cfg).min_confidence
    points: dict[int, list] = {}
    for u in utts:
        points.setdefault(u.label, []).extend(
            (fr.gaze_angle_x, fr.gaze_angle_y) for fr in u.frames if fr.success and fr.confidence >= min_conf
        )
    for c in sorted(points):
        pts = np.asarray(points[c], dtype=np.float64)
        if len(pts) < 2:
            logger.warning("class %s has fewer than two gaze points; skipped", EMOTIONS[c])
            continue
        dens = kde_density(pts, grid=grid)
        fh, w = run.csv_writer(f"density_{EMOTIONS[c]}.csv")
        with fh:
            fh.write(f"# kde gaussian scott bandwidth_x={dens.bandwidth[0]!r} bandwidth_y={dens.bandwidth[1]!r} "
                     f"points={len(pts)}\n")
            w.writerow(["gaze_angle_x", "gaze_angle_y", "density"])
            for iy, yv in enumerate(dens.y):
                for ix, xv in enumerate(dens.x):
                    w.writerow([_fmt(xv), _fmt(yv), _fmt(dens.density[iy, ix])])
    print(f"density grids: {run.dir}")
    return 0


def cmd_describe(args, cfg) -> int:
    for key in ("gaze_mode", "fusion_mode", "embedding_dim"):
        _override(cfg, "model", key, getattr(args, key))
    mcfg = dict(cfg.get("model", {}))
    mcfg.setdefault("visual_dim", SynthConfig().visual_dim)
    net = CrossmodalNet(ModelConfig(**mcfg))
    print(net.describe())
    return 0


# -- parser -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gazebed", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="TOML config file")
        p.add_argument("--out", default="runs", help="root for per-run output directories (default: runs)")
        p.set_defaults(func=func)
        return p

    def data_flags(p, manifest=True):
        if manifest:
            p.add_argument("--manifest", help="utterance manifest CSV")
        p.add_argument("--fps", type=float, help="frame rate for manifests without an fps column")

    def model_flags(p):
        p.add_argument("--gaze-mode", choices=("none", "windowed", "averaged"))
        p.add_argument("--fusion-mode", choices=("early", "model_level"))
        p.add_argument("--embedding-dim", type=int)

    p = add("extract-features", cmd_extract_features, "compute the 103 gaze features")
    data_flags(p)
    p.add_argument("--mode", choices=("windowed", "averaged"), default="windowed")

    p = add("synth", cmd_synth, "write a synthetic dataset with manifests")
    p.add_argument("--seed", type=int)

    p = add("train", cmd_train, "train a model and save a checkpoint")
    data_flags(p, manifest=False)
    p.add_argument("--train-manifest")
    p.add_argument("--validation-manifest")
    model_flags(p)
    p.add_argument("--mode", choices=("crossmodal", "monomodal_audio", "monomodal_visual"))
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--triplet-weight", type=float)
    p.add_argument("--margin", type=float)

    p = add("evaluate", cmd_evaluate, "score a checkpoint with one test modality")
    data_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test-modality", choices=("audio", "video"), required=True)

    p = add("rank-features", cmd_rank_features, "one-vs-rest mRMR ranking of gaze features")
    data_flags(p)
    p.add_argument("--top-k", type=int)
    p.add_argument("--bins", type=int)

    p = add("gaze-density", cmd_gaze_density, "per-class KDE grids of gaze direction")
    data_flags(p)
    p.add_argument("--grid", type=int)

    p = add("describe", cmd_describe, "print parameter counts per module")
    model_flags(p)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"gazebed: error: {exc}", file=sys.stderr)
        return 2
    except (IngestError, ValueError, TypeError, OSError, FloatingPointError) as exc:
        print(f"gazebed: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
