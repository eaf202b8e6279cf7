"""``hdformer`` command line: synth, preprocess, tokenize-stats, train, eval, roc.

Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure.
``HDFORMER_OUT_DIR`` overrides ``out_dir`` for every subcommand that writes.
"""

from __future__ import annotations

import argparse
import csv
import io as _io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, apply_overrides, config_from_flat, dump_config, flatten, load_config, parse_experts_flag
from .errors import ConfigError, DataError, HDformerError
from .io import ManifestEntry, atomic_write_bytes, atomic_write_text, load_records, write_manifest, write_waveform
from .metrics import roc_auc, roc_csv
from .signal import SegmentSet
from .tsa import cost_table
from . import training

log = logging.getLogger("hdformer")

OUT_ENV = "HDFORMER_OUT_DIR"


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    overrides = list(getattr(args, "set", None) or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    if getattr(args, "epochs", None) is not None:
        overrides.append(f"train.epochs={args.epochs}")
    if getattr(args, "data", None):
        overrides.append(f"data={args.data}")
    if getattr(args, "out_dir", None):
        overrides.append(f"out_dir={args.out_dir}")
    apply_overrides(cfg, overrides)
    if getattr(args, "experts", None):
        experts, enabled = parse_experts_flag(args.experts)
        cfg.tsa.experts = experts
        cfg.moe.enabled = enabled
    if os.environ.get(OUT_ENV):
        cfg.out_dir = os.environ[OUT_ENV]
    return cfg


def _out(cfg: ExperimentConfig) -> Path:
    p = Path(cfg.out_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def load_dataset(cfg: ExperimentConfig) -> SegmentSet:
    """Segments from ``cfg.data`` (manifest or .npz cache), else a synthetic cohort."""
    if not cfg.data:
        return training.build_segments(training.synth_corpus(cfg), cfg)
    path = Path(cfg.data)
    if not path.exists():
        raise DataError(f"data path {path} does not exist")
    if path.suffix == ".npz":
        with np.load(path) as z:
            data = SegmentSet(z["values"], z["labels"], [str(s) for s in z["subject_ids"]])
        data.check(cfg.signal.L)
        return data
    return training.build_segments(load_records(path), cfg)


def _split(cfg: ExperimentConfig, data: SegmentSet):
    labels = dict(zip(data.subject_ids, data.labels.tolist()))
    return training.split_subjects(labels, cfg.train.split, cfg.seed)


def _write_report(out: Path, report, scores, data: SegmentSet, cfg: ExperimentConfig, extra: dict) -> None:
    report.extra.update(extra)
    report.extra["seed"] = cfg.seed
    atomic_write_text(out / "metrics.json", report.to_json())
    atomic_write_text(out / "metrics.csv", f"{report.csv_header()}\n{report.csv_row()}\n")
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["subject_id", "label", "score"])
    for sid, y, s in zip(data.subject_ids, data.labels.tolist(), scores.tolist()):
        w.writerow([sid, y, repr(float(s))])
    atomic_write_text(out / "scores.csv", buf.getvalue())
    if report.roc is not None:
        atomic_write_text(out / "roc.csv", roc_csv(report.roc))


# ---- subcommands ------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = _config(args)
    if args.n_subjects is not None:
        cfg.signal.n_subjects = args.n_subjects
    cfg.validate()
    out = _out(cfg)
    records = training.synth_corpus(cfg)
    entries = []
    for r in records:
        rel = f"records/{r.subject_id}.ppg"
        write_waveform(out / rel, r.samples, int(r.fs))
        entries.append(ManifestEntry(rel, r.subject_id, r.label, int(r.fs)))
    write_manifest(out / "manifest.csv", entries)
    print(out / "manifest.csv")
    return 0


def cmd_preprocess(args) -> int:
    cfg = _config(args)
    if not cfg.data:
        raise ConfigError("preprocess needs --data pointing at a manifest")
    cfg.validate()
    data = training.build_segments(load_records(cfg.data), cfg)
    out = _out(cfg) / (args.output or "segments.npz")
    buf = _io.BytesIO()
    np.savez(buf, values=data.values, labels=data.labels, subject_ids=np.array(data.subject_ids))
    atomic_write_bytes(out, buf.getvalue())
    print(f"{out}: {len(data)} segments of {cfg.signal.L} samples")
    return 0


def cmd_tokenize_stats(args) -> int:
    cfg = _config(args).validate()
    t = cfg.tsa
    rows = cost_table(t.stats_lengths_s, 128, t.T, t.stats_k, t.stats_block, t.stats_budget)
    text = "variant,L,k_or_b,tokens,pairs\n" + "".join(r.csv_row() + "\n" for r in rows)
    if args.output:
        atomic_write_text(args.output, text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_train(args) -> int:
    cfg = _config(args).validate()
    out = _out(cfg)
    data = load_dataset(cfg)
    train_ids, val_ids, test_ids = _split(cfg, data)
    model = training.build_model(cfg)
    result = training.train(model, data.subset(train_ids), cfg, data.subset(val_ids) if val_ids else None)
    flat = dict(flatten(cfg))
    meta = {"best_epoch": result.best_epoch, "train": train_ids, "val": val_ids, "test": test_ids}
    save_checkpoint(out / "checkpoint.hdfc", model.state_dict(), flat, meta)
    atomic_write_text(out / "config.txt", dump_config(cfg))
    lines = ["epoch,train_loss,val_loss"]
    for i, tl in enumerate(result.train_losses):
        vl = repr(result.val_losses[i]) if i < len(result.val_losses) else ""
        lines.append(f"{i},{tl!r},{vl}")
    atomic_write_text(out / "loss_curve.csv", "\n".join(lines) + "\n")
    eval_ids = test_ids or val_ids or train_ids
    test = data.subset(eval_ids)
    report, scores = training.evaluate(model, test, cfg.train.threshold, cfg.train.aggregation)
    _write_report(out, report, scores, test, cfg, {"split": "test", "best_epoch": result.best_epoch})
    print(report.csv_header())
    print(report.csv_row())
    return 0


def cmd_eval(args) -> int:
    state, flat, meta = load_checkpoint(args.checkpoint)
    cfg = config_from_flat(flat)
    overrides = list(args.set or [])
    if args.data:
        overrides.append(f"data={args.data}")
    if args.out_dir:
        overrides.append(f"out_dir={args.out_dir}")
    apply_overrides(cfg, overrides)
    if os.environ.get(OUT_ENV):
        cfg.out_dir = os.environ[OUT_ENV]
    cfg.validate()
    model = training.build_model(cfg)
    model.load_state_dict(state)
    data = load_dataset(cfg)
    if args.split == "all":
        subset = data
    else:
        ids = meta.get(args.split) or _split(cfg, data)[("train", "val", "test").index(args.split)]
        subset = data.subset(ids)
    if len(subset) == 0:
        raise DataError(f"split {args.split!r} holds no segments")
    report, scores = training.evaluate(model, subset, cfg.train.threshold, cfg.train.aggregation)
    out = _out(cfg) / (args.name or "eval")
    out.mkdir(parents=True, exist_ok=True)
    _write_report(out, report, scores, subset, cfg, {"split": args.split})
    print(report.csv_header())
    print(report.csv_row())
    return 0


def cmd_roc(args) -> int:
    with open(args.scores, newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows or "label" not in rows[0] or "score" not in rows[0]:
        raise DataError(f"{args.scores}: expected a CSV with 'label' and 'score' columns")
    labels = np.array([int(r["label"]) for r in rows])
    scores = np.array([float(r["score"]) for r in rows])
    roc = roc_auc(scores, labels)
    if args.output:
        atomic_write_text(args.output, roc_csv(roc))
    print(json.dumps({"auc": roc.auc, "n": len(rows)}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hdformer", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out-dir")
        if data:
            sp.add_argument("--data", help="manifest or preprocessed .npz")

    sp = sub.add_parser("synth", help="write a synthetic cohort (waveforms + manifest)")
    common(sp, data=False)
    sp.add_argument("--n-subjects", type=int)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("preprocess", help="resample, denoise, normalise and segment a manifest")
    common(sp)
    sp.add_argument("--output", help="file name inside out_dir (default segments.npz)")
    sp.set_defaults(func=cmd_preprocess)

    sp = sub.add_parser("tokenize-stats", help="token and attention-pair counts per attention layout")
    common(sp, data=False)
    sp.add_argument("--output", help="CSV path (default stdout)")
    sp.set_defaults(func=cmd_tokenize_stats)

    sp = sub.add_parser("train", help="train a model and evaluate it on the held-out split")
    common(sp)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--experts", help="'moe', 'single:T', or a list such as 'T,2T,T/4'")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data")
    sp.add_argument("--out-dir")
    sp.add_argument("--set", action="append", metavar="KEY=VALUE")
    sp.add_argument("--split", choices=["train", "val", "test", "all"], default="test")
    sp.add_argument("--name", help="output subdirectory (default eval)")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("roc", help="ROC points and AUC from a scores CSV")
    sp.add_argument("--scores", required=True)
    sp.add_argument("--output")
    sp.set_defaults(func=cmd_roc)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print("config error:", file=sys.stderr)
        for problem in e.problems:
            print(f"  - {problem}", file=sys.stderr)
        return e.exit_code
    except HDformerError as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
