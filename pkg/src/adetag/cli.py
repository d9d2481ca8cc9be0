"""Command-line entry point: convert, train, evaluate, predict,
export-attention, gradcheck.

Every command emits a run manifest (config echo, seed, input digests,
outputs, wall-clock seconds) so runs are replayable. Exit codes: 0 ok,
1 usage/config, 2 data error, 3 numeric divergence.
"""

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, load_config, parse_overrides
from .data import DataError, build_vocabs, count_sentences, drop_overlaps, \
    parse_raw, read_jsonl, reformulate, split, write_jsonl
from .evaluator import evaluate, export_attention, predict_sample
from .gradcheck import format_table, run_all
from .network import CheckpointError, load_checkpoint
from .trainer import DivergenceError, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DIVERGED = 3


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(path, command, config_echo, seed, inputs, outputs, started):
    manifest = {
        "command": command,
        "config": config_echo,
        "seed": seed,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "seconds": time.monotonic() - started,
        "engine_version": __version__,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return path


def cmd_convert(args):
    started = time.monotonic()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    records, rejects = parse_raw(args.raw)
    sentences_ingested = count_sentences(records)
    kept, dropped = drop_overlaps(records)
    samples, quarantined = reformulate(kept)
    train_set, test_set, val_set = split(samples, args.seed)

    paths = {name: out_dir / f"{name}.jsonl"
             for name in ("train", "test", "val")}
    write_jsonl(train_set, paths["train"])
    write_jsonl(test_set, paths["test"])
    write_jsonl(val_set, paths["val"])

    rejects_path = out_dir / "rejects.txt"
    with open(rejects_path, "w", encoding="utf-8") as fh:
        for lineno, reason, line in rejects:
            fh.write(f"line {lineno}: {reason}: {line}\n")
        for sample_id, reason in quarantined:
            fh.write(f"sample {sample_id}: quarantined: {reason}\n")

    stats = {
        "records_parsed": len(records),
        "lines_rejected": len(rejects),
        "sentences_ingested": sentences_ingested,
        "overlap_dropped_sentences": count_sentences(dropped),
        "overlap_dropped_records": len(dropped),
        "samples_quarantined": len(quarantined),
        "samples": {"train": len(train_set), "test": len(test_set),
                    "val": len(val_set)},
    }
    stats_path = out_dir / "stats.json"
    with open(stats_path, "w", encoding="utf-8") as fh:
        json.dump(stats, fh, indent=2, sort_keys=True)

    print(f"ingested {stats['sentences_ingested']} sentences "
          f"({stats['records_parsed']} relation records)")
    print(f"dropped {stats['overlap_dropped_sentences']} sentences with "
          f"overlapping drug/effect spans")
    print(f"samples: train {len(train_set)}, test {len(test_set)}, val {len(val_set)}")
    if rejects or quarantined:
        print(f"rejected {len(rejects)} lines, quarantined {len(quarantined)} "
              f"samples; see {rejects_path}")

    outputs = list(paths.values()) + [rejects_path, stats_path]
    _write_manifest(out_dir / "manifest.json", "convert", {"seed": args.seed},
                    args.seed, [args.raw], outputs, started)
    return EXIT_DATA if rejects else EXIT_OK


def _load_train_config(args):
    overrides = parse_overrides(args.set or [])
    config = load_config(args.config, overrides)
    if args.seed is not None:
        config.seed = args.seed
    if "ADETAG_WORKERS" in os.environ and "workers" not in overrides:
        config.workers = int(os.environ["ADETAG_WORKERS"])
    config.validate()
    return config


def cmd_train(args):
    started = time.monotonic()
    config = _load_train_config(args)
    out_dir = Path(args.out)
    train_set = read_jsonl(args.train)
    val_set = read_jsonl(args.val)

    result = train(config, train_set, val_set, out_dir, log=print)
    print(f"best epoch {result.best_epoch} "
          f"(val macro F1 {result.best_metric:.2f}); "
          f"checkpoint at {result.checkpoint_prefix}")

    inputs = [args.train, args.val] + ([args.config] if args.config else [])
    outputs = [out_dir / "history.jsonl",
               result.checkpoint_prefix + ".json",
               result.checkpoint_prefix + ".bin",
               result.checkpoint_prefix + ".vocab.json"]
    _write_manifest(out_dir / "manifest.json", "train", config.to_dict(),
                    config.seed, inputs, outputs, started)
    return EXIT_OK


def cmd_evaluate(args):
    started = time.monotonic()
    model = load_checkpoint(args.checkpoint)
    samples = read_jsonl(args.data)
    workers = args.workers or int(os.environ.get("ADETAG_WORKERS", "1"))
    report = evaluate(model, samples, workers=workers)

    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
    print(f"ER  token P/R/F1: {report.er[0]:.2f}/{report.er[1]:.2f}/{report.er[2]:.2f}")
    print(f"ADE token P/R/F1: {report.ade[0]:.2f}/{report.ade[1]:.2f}/{report.ade[2]:.2f}")
    print(f"report written to {out_path}")

    _write_manifest(out_path.with_suffix(".manifest.json"), "evaluate",
                    model.config.to_dict(), model.config.seed,
                    [args.checkpoint + ".json", args.checkpoint + ".bin", args.data],
                    [out_path], started)
    return EXIT_OK


def cmd_predict(args):
    started = time.monotonic()
    model = load_checkpoint(args.checkpoint)
    samples = read_jsonl(args.data)

    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as fh:
        for sample in samples:
            ents, ades = predict_sample(model, sample)
            d = sample.to_dict()
            d["entity_labels"] = ents
            d["ade_labels"] = ades
            fh.write(json.dumps(d, ensure_ascii=True) + "\n")
    print(f"predictions for {len(samples)} samples written to {out_path}")

    _write_manifest(out_path.with_suffix(".manifest.json"), "predict",
                    model.config.to_dict(), model.config.seed,
                    [args.checkpoint + ".json", args.checkpoint + ".bin", args.data],
                    [out_path], started)
    return EXIT_OK


def cmd_export_attention(args):
    started = time.monotonic()
    model = load_checkpoint(args.checkpoint)
    samples = read_jsonl(args.data)
    wanted = [s for s in samples if s.id == args.sample_id]
    if not wanted:
        raise DataError(f"sample id {args.sample_id!r} not found in {args.data}")

    export_attention(model, wanted[0], args.out, fmt=args.format)
    print(f"attention matrix for {args.sample_id} written to {args.out}")

    _write_manifest(Path(args.out).with_suffix(".manifest.json"), "export-attention",
                    model.config.to_dict(), model.config.seed,
                    [args.checkpoint + ".json", args.checkpoint + ".bin", args.data],
                    [args.out], started)
    return EXIT_OK


def cmd_gradcheck(args):
    started = time.monotonic()
    rows = run_all(seed=args.seed if args.seed is not None else 0)
    print(format_table(rows))
    all_pass = all(row.passed for row in rows)
    print("gradcheck:", "PASS" if all_pass else "FAIL")

    out_path = Path(args.out)
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump({"rows": [{"op": r.name, "max_rel_error": r.max_rel_error,
                             "tolerance": r.tolerance, "passed": r.passed}
                            for r in rows],
                   "passed": all_pass}, fh, indent=2)
    _write_manifest(out_path.with_suffix(".manifest.json"), "gradcheck",
                    {}, args.seed or 0, [], [out_path], started)
    return EXIT_OK if all_pass else EXIT_DATA


def build_parser():
    parser = _Parser(prog="adetag",
                     description="joint entity / adverse drug event tagger")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="raw pipe-delimited corpus -> split JSONL")
    p.add_argument("raw", help="pipe-delimited relation file")
    p.add_argument("--out", "-o", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=13, help="split shuffle seed")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("train", help="train a model from split JSONL")
    p.add_argument("--config", "-c", help="key = value config file")
    p.add_argument("--train", required=True, help="training JSONL")
    p.add_argument("--val", required=True, help="validation JSONL")
    p.add_argument("--out", "-o", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override config seed")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any config key (repeatable)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on a dataset")
    p.add_argument("checkpoint", help="checkpoint path prefix")
    p.add_argument("data", help="evaluation JSONL")
    p.add_argument("--out", "-o", default="report.json")
    p.add_argument("--workers", type=int, default=0,
                   help="parallel scoring workers (default from ADETAG_WORKERS)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="tag a JSONL file with a checkpoint")
    p.add_argument("checkpoint", help="checkpoint path prefix")
    p.add_argument("data", help="input JSONL")
    p.add_argument("--out", "-o", required=True, help="output JSONL")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("export-attention", help="dump one sample's attention matrix")
    p.add_argument("checkpoint", help="checkpoint path prefix")
    p.add_argument("data", help="JSONL containing the sample")
    p.add_argument("--sample-id", required=True)
    p.add_argument("--format", choices=("csv", "image"), default="csv")
    p.add_argument("--out", "-o", required=True)
    p.set_defaults(func=cmd_export_attention)

    p = sub.add_parser("gradcheck", help="finite-difference check every op")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", "-o", default="gradcheck.json")
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, CheckpointError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
