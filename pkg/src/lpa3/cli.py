"""Command-line entry point: ``lpa3 {train,augment,tcs-report,verify-theory}``.

Every subcommand accepts ``--config PATH``, ``--seed N`` and ``--out DIR``;
any config key can be overridden with ``--<section>-<key> VALUE``, writing
underscores as dashes (``--train-learning-rate 0.01``). The worker count for attack fan-out comes from the
``LPA3_WORKERS`` environment variable only.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import infotheory
from .attack import negative_attack
from .config import ConfigError, RunConfig, dump_config, load_config, section_keys
from .data import load_dataset
from .metrics import MetricsWriter, dumps
from .network import CheckpointError, load_checkpoint, save_checkpoint
from .rng import substream
from .selection import TCSTracker
from .trainer import attack_chunks, predict_probs, train

log = logging.getLogger("lpa3")

SUBCOMMAND_SECTIONS = {
    "train": ("data", "train", "attack", "weak_aug"),
    "augment": ("data", "attack", "augment"),
    "tcs-report": ("data", "tcs"),
    "verify-theory": ("theory",),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lpa3", description="Label-preserving adversarial augmentation toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "train": "semi-supervised training; writes metrics.jsonl, metrics.csv and checkpoints",
        "augment": "generate hard positives for a dataset split from a checkpoint",
        "tcs-report": "time-consistency scores across an ordered list of checkpoints",
        "verify-theory": "run the exact information-theory checks",
    }
    for name, sections in SUBCOMMAND_SECTIONS.items():
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", metavar="PATH", help="INI config file")
        p.add_argument("--seed", type=int, help="master seed (overrides [run] seed)")
        p.add_argument("--out", metavar="DIR", help="output directory (overrides [run] out)")
        group = p.add_argument_group("config overrides")
        for section in sections:
            for key in section_keys(section):
                flag = f"--{section.replace('_', '-')}-{key.replace('_', '-')}"
                group.add_argument(flag, dest=f"cfg::{section}::{key}", metavar="VALUE", default=None)
    return parser


def config_from_args(args) -> RunConfig:
    overrides: dict[str, dict[str, str]] = {}
    for dest, value in vars(args).items():
        if dest.startswith("cfg::") and value is not None:
            _, section, key = dest.split("::")
            overrides.setdefault(section, {})[key] = value
    if args.seed is not None:
        overrides.setdefault("run", {})["seed"] = str(args.seed)
    if args.out is not None:
        overrides.setdefault("run", {})["out"] = args.out
    return load_config(args.config, overrides)


def _out_dir(cfg: RunConfig) -> Path:
    out = cfg.out
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _split(splits, name: str):
    if name not in ("labeled", "unlabeled", "test"):
        raise ConfigError(f"split must be labeled, unlabeled or test, got {name!r}")
    return getattr(splits, name)


# ---------------------------------------------------------------- commands


def cmd_train(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    (out / "config.ini").write_text(dump_config(cfg), encoding="utf-8")
    splits = load_dataset(cfg.data)
    with MetricsWriter(out / "metrics.jsonl", out / "metrics.csv") as writer:
        result = train(splits, cfg.train, out_dir=out, writer=writer)
    save_checkpoint(result.net, out / "final.bin")
    last = result.history[-1] if result.history else {}
    print(f"trained {len(result.history)} epochs; test accuracy {last.get('test_accuracy', float('nan')):.4f}; "
          f"outputs in {out}")
    return 0


def cmd_augment(cfg: RunConfig) -> int:
    a = cfg.augment
    if not a.checkpoint:
        raise ConfigError("augment needs a checkpoint ([augment] checkpoint or --augment-checkpoint)")
    out = _out_dir(cfg)
    net = load_checkpoint(a.checkpoint)
    batch = _split(load_dataset(cfg.data), a.split)
    if a.count:
        batch = batch.subset(np.arange(min(a.count, len(batch))))
    if a.labels == "true":
        if np.any(batch.labels < 0):
            raise ConfigError("labels = true needs a labeled split")
        y = batch.labels
    elif a.labels == "pseudo":
        y = predict_probs(net, batch.inputs).argmax(axis=1)
    else:
        raise ConfigError(f"labels must be pseudo or true, got {a.labels!r}")
    params = cfg.train.attack
    noise = substream(cfg.seed, "attack-noise").standard_normal(batch.inputs.shape)
    parts = attack_chunks(net, batch.inputs, y, params, noise, cfg.train.attack_chunk)
    x_prime = np.concatenate([p.x_prime for p in parts])
    arrays = {"ids": batch.ids, "labels": y, "x": batch.inputs, "x_prime": x_prime}
    if a.negative:
        neg_noise = substream(cfg.seed, "negative-noise").standard_normal(batch.inputs.shape)
        arrays["x_negative"] = negative_attack(net, batch.inputs, params, noise=neg_noise).x_prime
    np.savez_compressed(out / "augmented.npz", **arrays)
    offset = 0
    satisfied = 0
    with open(out / "augment_diagnostics.jsonl", "w", encoding="utf-8") as fh:
        for p in parts:
            ids = batch.ids[offset: offset + len(p.x_prime)]
            for rec in p.diagnostics(ids):
                fh.write(dumps(rec) + "\n")
                satisfied += rec["satisfied"]
            offset += len(p.x_prime)
    print(f"augmented {len(batch)} samples; constraint satisfied for {satisfied}; outputs in {out}")
    return 0


def cmd_tcs_report(cfg: RunConfig) -> int:
    t = cfg.tcs
    if not t.checkpoints:
        raise ConfigError("tcs-report needs an ordered list of checkpoints ([tcs] checkpoints)")
    out = _out_dir(cfg)
    batch = _split(load_dataset(cfg.data), t.split)
    tracker = None
    for path in t.checkpoints:
        net = load_checkpoint(path)
        if tracker is None:
            tracker = TCSTracker(batch.ids, net.num_classes, t.gamma_c)
        tracker.update(batch.ids, predict_probs(net, batch.inputs))
    chosen = set(tracker.select(batch.ids, t.tau_pct).tolist())
    with open(out / "tcs_report.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "c", "selected"])
        for i, c in zip(tracker.ids, tracker.c):
            w.writerow([int(i), repr(float(c)), int(int(i) in chosen)])
    print(f"scored {len(batch)} samples over {len(t.checkpoints)} checkpoints; selected {len(chosen)}; "
          f"report in {out / 'tcs_report.csv'}")
    return 0


def cmd_verify_theory(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    joints = [(Path(p).stem, infotheory.DiscreteJoint.read(p)) for p in cfg.theory.tables]
    results = infotheory.verify_suite(cfg.seed, joints, cfg.theory.n_random)
    with open(out / "theory_report.jsonl", "w", encoding="utf-8") as fh:
        for r in results:
            fh.write(json.dumps({"check": r.name, "passed": r.passed, **r.detail}) + "\n")
            print(f"{'PASS' if r.passed else 'FAIL'} {r.name}")
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


COMMANDS = {"train": cmd_train, "augment": cmd_augment, "tcs-report": cmd_tcs_report,
            "verify-theory": cmd_verify_theory}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(args)
        return COMMANDS[args.command](cfg)
    except (ConfigError, CheckpointError, ValueError, OSError) as exc:
        print(f"lpa3 {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
