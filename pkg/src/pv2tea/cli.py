"""Command line entry point: generate-data, train, evaluate, ablate, report.

Settings resolve in three layers: a flat ``key=value`` config file, then
``PV2_<KEY>`` environment variables, then command-line flags.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import glob
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .data import (DatasetConfig, DatasetFormatError, ValueType, build_vocabulary, config_to_dict,
                   generate_dataset, load_dataset, load_vocabulary, read_header, save_dataset, save_vocabulary)
from .encoders import load_checkpoint, save_checkpoint
from .evaluation import macro_prf, source_aware_report, write_report
from .experiments import predict_split, retrieval_on, run_ablation
from .neighborhood import write_weights_csv
from .training import TrainConfig, train

log = logging.getLogger("pv2tea")

EXIT_OK, EXIT_USER, EXIT_INTERNAL = 0, 1, 2
ENV_PREFIX = "PV2_"


class UserError(Exception):
    pass


def _fields(cls):
    return {f.name: f for f in dataclasses.fields(cls)}


def _coerce(name, raw, default):
    if isinstance(raw, str):
        text = raw.strip()
    else:
        return raw
    try:
        if isinstance(default, bool):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise UserError(f"invalid value for {name}: {raw!r}") from None
    return text


def parse_config_file(path) -> dict:
    out = {}
    if path is None:
        return out
    p = Path(path)
    if not p.exists():
        raise UserError(f"config file not found: {path}")
    for lineno, line in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UserError(f"{path}: line {lineno}: expected key=value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    unknown = _unknown_keys(out, DatasetConfig, TrainConfig)
    if unknown:
        raise UserError(f"{path}: unknown config key(s): {', '.join(unknown)}")
    return out


def resolve(cls, file_values: dict, cli_values: dict):
    """Build a dataclass from defaults <- config file <- env <- CLI flags."""
    fields = _fields(cls)
    defaults = cls()
    merged = {}
    for name in fields:
        default = getattr(defaults, name)
        if isinstance(default, ValueType):
            default = default.value
        value = default
        if name in file_values:
            value = _coerce(name, file_values[name], default)
        env = os.environ.get(ENV_PREFIX + name.upper())
        if env is not None:
            value = _coerce(name, env, default)
        if cli_values.get(name) is not None:
            value = cli_values[name]
        merged[name] = value
    try:
        return cls(**merged)
    except ValueError as exc:
        raise UserError(str(exc)) from None


def _unknown_keys(file_values: dict, *classes):
    known = set()
    for cls in classes:
        known |= set(_fields(cls))
    return sorted(set(file_values) - known)


def _write_config(path, *objs):
    lines = []
    for obj in objs:
        d = config_to_dict(obj) if isinstance(obj, DatasetConfig) else dataclasses.asdict(obj)
        for k in sorted(d):
            lines.append(f"{k}={d[k]}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _config_hash(*objs) -> str:
    payload = []
    for obj in objs:
        d = config_to_dict(obj) if isinstance(obj, DatasetConfig) else dataclasses.asdict(obj)
        payload.append(d)
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:10]


def _load_data_dir(data_dir):
    data_dir = Path(data_dir)
    train_path, test_path, vocab_path = data_dir / "train.jsonl", data_dir / "test.jsonl", data_dir / "vocab.json"
    for p in (train_path, vocab_path):
        if not p.exists():
            raise UserError(f"missing dataset file: {p}")
    return train_path, test_path, vocab_path


def cmd_generate(args) -> int:
    file_values = parse_config_file(args.config)
    cli = {"seed": args.seed, "n_samples": args.n_samples}
    config = resolve(DatasetConfig, file_values, cli)
    try:
        config.validate()
    except ValueError as exc:
        raise UserError(f"invalid dataset config: {exc}") from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_samples, test_samples = generate_dataset(config)
    header = config.header()
    save_dataset(train_samples, out / "train.jsonl", header)
    save_dataset(test_samples, out / "test.jsonl", header)
    save_vocabulary(build_vocabulary(config), out / "vocab.json")
    _write_config(out / "config.txt", config)
    n_image = sum(s.gold_source.value == "IMAGE" for s in test_samples)
    n_noisy = sum(s.noise_flag for s in train_samples)
    print(f"train={len(train_samples)} (noisy={n_noisy}) test={len(test_samples)} "
          f"(IMAGE={n_image}, TEXT={len(test_samples) - n_image}) -> {out}")
    return EXIT_OK


def _train_cli_values(args) -> dict:
    cli = {"epochs": args.epochs, "seed": args.seed, "lr": args.lr}
    for flag in ("s1", "s2", "s3"):
        if getattr(args, f"no_{flag}"):
            cli[flag] = False
    return cli


def _dims(header):
    return dict(n_categories=header["C"], n_values=header["V"], value_type=ValueType(header["value_type"]),
                T_max=header["T_max"])


def cmd_train(args) -> int:
    file_values = parse_config_file(args.config)
    config = resolve(TrainConfig, file_values, _train_cli_values(args))
    try:
        config.validate()
    except ValueError as exc:
        raise UserError(f"invalid train config: {exc}") from None
    train_path, _, vocab_path = _load_data_dir(args.data)
    header = read_header(train_path)
    samples = load_dataset(train_path)
    if not samples:
        raise UserError(f"training file {train_path} holds no samples")
    vocab = load_vocabulary(vocab_path)

    run_dir = Path(args.out) / f"run-{_config_hash(config)}-seed{config.seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    _write_config(run_dir / "config.txt", config)
    result = train(samples, vocab, config, **_dims(header))
    save_checkpoint(result.state, run_dir / "checkpoint.json",
                    extra={"dataset_header": header, "train_config": dataclasses.asdict(config)})
    result.metrics.write_csv(run_dir / "metrics.csv")
    if args.dump_weights:
        write_weights_csv(result.weight_history, run_dir / "weights.csv", [s.noise_flag for s in samples])
    print(f"trained {config.epochs} epochs ({len(result.metrics.steps)} steps, "
          f"{result.metrics.wall_clock:.1f}s) -> {run_dir}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise UserError(f"checkpoint not found: {ckpt}")
    test_path = Path(args.test)
    if not test_path.exists():
        raise UserError(f"test file not found: {test_path}")
    vocab_path = Path(args.vocab) if args.vocab else test_path.parent / "vocab.json"
    if not vocab_path.exists():
        raise UserError(f"vocabulary file not found: {vocab_path}")
    state, extra = load_checkpoint(ckpt)
    header = read_header(test_path)
    trained_on = extra.get("dataset_header")
    if trained_on is not None:
        keys = ("version", "P", "d_img", "T_max", "C", "V", "value_type")
        diff = [k for k in keys if trained_on.get(k) != header.get(k)]
        if diff:
            raise UserError(f"checkpoint/dataset mismatch on {', '.join(diff)}")
    samples = load_dataset(test_path)
    if not samples:
        raise UserError(f"test file {test_path} holds no samples")
    vocab = load_vocabulary(vocab_path)
    use_pruning = extra.get("train_config", {}).get("s2", True)
    value_type = ValueType(header["value_type"])

    records, gates = predict_split(state, samples, vocab, use_pruning)
    if args.source_aware:
        if any(r.gold_source is None for r in records):
            raise UserError("--source-aware needs gold_source on every test sample")
        report = source_aware_report(records, value_type)
    else:
        report = macro_prf(records, value_type)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    extra_out = {"checkpoint": str(ckpt.name), "test_file": str(test_path.name)}
    if args.retrieval:
        pairs = samples[: args.retrieval_pairs]
        retrieval = retrieval_on(state, pairs)
        extra_out["retrieval"] = retrieval
        (out / "retrieval.json").write_text(json.dumps(retrieval, indent=1, sort_keys=True) + "\n")
    write_report(report, out / "report.json", out / "report.csv", extra_out)
    if args.dump_masks:
        if gates is None:
            raise UserError("--dump-masks needs a model trained with pruning (S2) on")
        with open(out / "masks.jsonl", "w", encoding="utf-8") as fh:
            for s, g in zip(samples, gates):
                fh.write(json.dumps({"id": s.id, "gates": g.tolist()}) + "\n")
    line = "macro P={P:.4f} R={R:.4f} F1={F1:.4f}".format(**report.macro)
    if report.gap is not None:
        line += " | GAP F1={:.4f}".format(report.gap["F1"])
    if args.retrieval:
        line += " | T@1={T@1:.3f} I@1={I@1:.3f}".format(**extra_out["retrieval"])
    print(line)
    return EXIT_OK


def cmd_ablate(args) -> int:
    file_values = parse_config_file(args.config)
    config = resolve(TrainConfig, file_values, _train_cli_values(args))
    try:
        config.validate()
    except ValueError as exc:
        raise UserError(f"invalid train config: {exc}") from None
    train_path, test_path, vocab_path = _load_data_dir(args.data)
    if not test_path.exists():
        raise UserError(f"missing dataset file: {test_path}")
    header = read_header(train_path)
    train_samples, test_samples = load_dataset(train_path), load_dataset(test_path)
    if not train_samples or not test_samples:
        raise UserError("ablation needs non-empty train and test files")
    vocab = load_vocabulary(vocab_path)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    result = run_ablation(train_samples, test_samples, vocab, config, seeds, jobs=args.jobs,
                          log=lambda row: log.info("%s", row), **_dims(header))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_config(out / "config.txt", config)
    (out / "ablation.json").write_text(json.dumps(result, indent=1, sort_keys=True) + "\n")
    with open(out / "ablation.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["seed", "variant", "P", "R", "F1", "GAP_F1"],
                                extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for row in result["per_seed"]:
            writer.writerow(row)
        for row in result["averaged"]:
            writer.writerow({"seed": "mean", **row})
    print(f"dataset hash {result['dataset_hash']}")
    print(f"{'variant':<8} {'P':>7} {'R':>7} {'F1':>7}")
    for row in result["averaged"]:
        print(f"{row['variant']:<8} {row['P']:7.4f} {row['R']:7.4f} {row['F1']:7.4f}")
    return EXIT_OK


def cmd_report(args) -> int:
    """Collate evaluate outputs into one source-aware table (rows: run x split)."""
    paths = []
    for pattern in args.reports:
        paths.extend(sorted(glob.glob(pattern)) or [pattern])
    rows = []
    for path in paths:
        p = Path(path)
        if p.is_dir():
            p = p / "report.json"
        if not p.exists():
            raise UserError(f"report not found: {p}")
        obj = json.loads(p.read_text(encoding="utf-8"))
        name = p.parent.name
        rows.append({"run": name, "split": "ALL", **obj["macro"]})
        splits = obj.get("splits", {})
        for split in ("TEXT", "IMAGE"):
            sub = splits.get(split)
            if sub is not None:
                rows.append({"run": name, "split": split, **sub["macro"]})
        if obj.get("gap") is not None:
            rows.append({"run": name, "split": "GAP", **obj["gap"]})
    if not rows:
        raise UserError("no reports given")
    fh = sys.stdout if args.out is None else open(args.out, "w", newline="", encoding="utf-8")
    try:
        writer = csv.DictWriter(fh, fieldnames=["run", "split", "P", "R", "F1"], lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pv2tea", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-data", help="write train/test JSONL and vocab.json")
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--n-samples", dest="n_samples", type=int)
    g.set_defaults(func=cmd_generate)

    def train_flags(p):
        p.add_argument("--config")
        p.add_argument("--data", required=True, help="directory written by generate-data")
        p.add_argument("--out", required=True)
        p.add_argument("--epochs", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--lr", type=float)
        for flag in ("s1", "s2", "s3"):
            p.add_argument(f"--no-{flag}", dest=f"no_{flag}", action="store_true")

    t = sub.add_parser("train", help="train one model")
    train_flags(t)
    t.add_argument("--dump-weights", dest="dump_weights", action=argparse.BooleanOptionalAction, default=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="evaluate a checkpoint on a test file")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--test", required=True)
    e.add_argument("--vocab")
    e.add_argument("--out", required=True)
    e.add_argument("--source-aware", dest="source_aware", action="store_true")
    e.add_argument("--retrieval", action="store_true")
    e.add_argument("--retrieval-pairs", dest="retrieval_pairs", type=int, default=200)
    e.add_argument("--dump-masks", dest="dump_masks", action="store_true")
    e.set_defaults(func=cmd_evaluate)

    a = sub.add_parser("ablate", help="full model vs. w/o S1/S2/S3 under shared seeds")
    train_flags(a)
    a.add_argument("--seeds", default="0")
    a.add_argument("--jobs", type=int, default=1, help="train variants in this many processes")
    a.set_defaults(func=cmd_ablate)

    r = sub.add_parser("report", help="collate report.json files into one CSV table")
    r.add_argument("reports", nargs="+", help="report.json files, evaluate output dirs, or globs")
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UserError, DatasetFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
