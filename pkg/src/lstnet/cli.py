"""``lstnet`` command-line entry point.

Subcommands: ``train-translator``, ``train-classifier``, ``translate``,
``evaluate``, ``pipeline`` (all of the former in order) and ``gradcheck``.
Every command that writes output echoes its resolved configuration to
``<out>/config.json``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import config as C
from .checkpoint import CheckpointError
from .data import DataFormatError, LabeledDataset, load_mnist, load_usps, toy_labeled
from .evaluation import (REFERENCE_ACCURACY, Classifier, EvalReport, evaluate_adaptation, train_classifier,
                         translate_dataset)
from .gradcheck import SCOPES, main_suite
from .networks import ShapeError
from .trainer import load_checkpoint, train_loop

log = logging.getLogger("lstnet")

DIRECTIONS = {"2to1": (2, 1), "1to2": (1, 2)}
TOY_TEST_OFFSET = 1000  # toy test split is drawn from seed + offset


class UsageError(Exception):
    pass


# data ---------------------------------------------------------------------

def load_split(cfg: dict, domain: int, split: str) -> LabeledDataset:
    """Labelled images of one domain; ``data.limit``/``eval.limit`` cap train/test sizes."""
    seed = cfg["seed"]
    if cfg["data.source"] == "toy":
        if split == "train":
            pair = toy_labeled(seed, cfg["data.toy_n"])
        else:
            pair = toy_labeled(seed + TOY_TEST_OFFSET, cfg["data.toy_test_n"])
        ds = pair[domain - 1]
    elif domain == 1:
        if not cfg["data.mnist_dir"]:
            raise UsageError("data.mnist_dir is not set (use --set data.mnist_dir=PATH)")
        ds = load_mnist(cfg["data.mnist_dir"], split, cfg["data.strict"])
    else:
        key = f"data.usps_{split}"
        if not cfg[key]:
            raise UsageError(f"{key} is not set (use --set {key}=PATH)")
        ds = load_usps(cfg[key], split if cfg["data.strict"] else None)
        ds.split = split
    limit = cfg["data.limit"] if split == "train" else cfg["eval.limit"]
    if limit is not None and limit < len(ds):
        ds = ds.subset(limit, seed)
    return ds


# output helpers -------------------------------------------------------------

def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def echo_config(cfg: dict, command: str) -> Path:
    out = _out_dir(cfg)
    (out / "config.json").write_text(C.dumps({**cfg, "command": command}) + "\n")
    return out


def _to_uint8(images: np.ndarray) -> np.ndarray:
    return np.clip(np.round((np.asarray(images, dtype=np.float64)[..., 0] + 1.0) * 127.5), 0, 255).astype(np.uint8)


def contact_sheet(source: np.ndarray, translated: np.ndarray, path, pairs: int = 64, columns: int = 8) -> None:
    """Write a PNG grid of (source | translated) pairs, both scaled to a common cell size."""
    from PIL import Image

    n = min(pairs, len(source))
    cell = max(source.shape[1], translated.shape[1], source.shape[2], translated.shape[2])
    rows = max(1, -(-n // columns))
    gap = 2
    sheet = Image.new("L", (columns * (2 * cell + gap) + gap, rows * (cell + gap) + gap), 128)
    src_u8, dst_u8 = _to_uint8(source[:n]), _to_uint8(translated[:n])
    for i in range(n):
        r, c = divmod(i, columns)
        x0, y0 = gap + c * (2 * cell + gap), gap + r * (cell + gap)
        for j, img in enumerate((src_u8[i], dst_u8[i])):
            tile = Image.fromarray(img).resize((cell, cell), Image.NEAREST)
            sheet.paste(tile, (x0 + j * cell, y0))
    sheet.save(path)


# commands -------------------------------------------------------------------

def cmd_train_translator(cfg: dict, args) -> int:
    d1, d2 = load_split(cfg, 1, "train"), load_split(cfg, 2, "train")
    out = echo_config(cfg, "train-translator")
    train_cfg = C.train_config(cfg)
    build = C.build_config(cfg, {1: d1.image_shape, 2: d2.image_shape})
    log.info("training translator on %d + %d images for %d steps", len(d1), len(d2), train_cfg.max_steps)
    with open(out / "losses.jsonl", "w") as fh:
        trainer, _ = train_loop(d1.images, d2.images, train_cfg, build, log_file=fh, checkpoint_dir=out)
    log.info("wrote %s", out / "final.lstn")
    return 0


def cmd_train_classifier(cfg: dict, args) -> int:
    domain = args.domain
    train = load_split(cfg, domain, "train")
    test = load_split(cfg, domain, "test")
    out = echo_config(cfg, f"train-classifier --domain {domain}")
    clf, acc = train_classifier(train, C.classifier_hyper(cfg), test)
    path = out / f"classifier_{domain}.lstn"
    clf.save(path, {"domain": domain, "test_accuracy": acc})
    summary = {"domain": domain, "test_accuracy": acc, "n_train": len(train), "n_test": len(test),
               "reference": REFERENCE_ACCURACY[f"classifier_{domain}"] if cfg["data.source"] == "mnist-usps" else None}
    (out / f"classifier_{domain}.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary))
    return 0


def _checkpoint(args, cfg) -> Path:
    path = Path(args.checkpoint) if args.checkpoint else Path(cfg["out"]) / "final.lstn"
    if not path.exists():
        raise UsageError(f"checkpoint {path} does not exist (pass --checkpoint PATH)")
    return path


def cmd_translate(cfg: dict, args) -> int:
    model, _ = load_checkpoint(_checkpoint(args, cfg))
    source_domain, _target = DIRECTIONS[args.direction]
    src = load_split(cfg, source_domain, "test")
    out = echo_config(cfg, f"translate --direction {args.direction}")
    translated = translate_dataset(src.images, args.direction, model, cfg["eval.batch_size"])
    np.savez_compressed(out / f"translated_{args.direction}.npz", source=src.images, translated=translated, labels=src.labels)
    contact_sheet(src.images, translated, out / f"contact_{args.direction}.png")
    log.info("translated %d images (%s) into %s", len(src), args.direction, out)
    return 0


def _classifier(path: Optional[str], cfg: dict, domain: int) -> Classifier:
    path = Path(path) if path else Path(cfg["out"]) / f"classifier_{domain}.lstn"
    if not path.exists():
        raise UsageError(f"classifier {path} does not exist (pass --classifier{domain} PATH)")
    clf, _ = Classifier.load(path)
    return clf


def evaluate_direction(cfg: dict, model, classifier: Classifier, direction: str) -> EvalReport:
    source_domain, target_domain = DIRECTIONS[direction]
    src = load_split(cfg, source_domain, "test")
    translated = translate_dataset(src.images, direction, model, cfg["eval.batch_size"])
    target_acc = classifier.accuracy(load_split(cfg, target_domain, "test"))
    report = evaluate_adaptation(classifier, translated, src.labels, direction, target_acc)
    if src.image_shape == classifier.input_shape:
        report.baseline_accuracy = classifier.accuracy(src)
    if cfg["data.source"] != "mnist-usps":
        report.reference = None
    return report


def cmd_evaluate(cfg: dict, args) -> int:
    model, _ = load_checkpoint(_checkpoint(args, cfg))
    directions = [args.direction] if args.direction else ["2to1", "1to2"]
    classifiers = {d: _classifier(getattr(args, f"classifier{d}"), cfg, d)
                   for d in {DIRECTIONS[x][1] for x in directions}}
    out = echo_config(cfg, "evaluate")
    reports = {}
    for direction in directions:
        rep = evaluate_direction(cfg, model, classifiers[DIRECTIONS[direction][1]], direction)
        reports[direction] = rep.to_dict()
        ref = f"{rep.reference:.4f}" if rep.reference is not None else "n/a"
        base = f"{rep.baseline_accuracy:.4f}" if rep.baseline_accuracy is not None else "n/a"
        print(f"{direction}: accuracy {rep.accuracy:.4f}  (untranslated {base}, reference {ref}, n={rep.n})")
    (out / "eval.json").write_text(json.dumps(reports, indent=2) + "\n")
    return 0


def cmd_pipeline(cfg: dict, args) -> int:
    """Classifiers for both domains, the translator, then both evaluation directions."""
    for domain in (1, 2):
        args.domain = domain
        cmd_train_classifier(cfg, args)
    cmd_train_translator(cfg, args)
    args.checkpoint, args.direction = None, None
    status = cmd_evaluate(cfg, args)
    echo_config(cfg, "pipeline")
    return status


def cmd_gradcheck(cfg: dict, args) -> int:
    ok, text = main_suite(args.scope)
    print(text)
    return 0 if ok else 1


COMMANDS = {
    "train-translator": cmd_train_translator,
    "train-classifier": cmd_train_classifier,
    "translate": cmd_translate,
    "evaluate": cmd_evaluate,
    "pipeline": cmd_pipeline,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of dotted keys (nested objects also accepted)")
    common.add_argument("--preset", choices=sorted(C.PRESETS))
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key; repeatable")
    common.add_argument("--seed", type=int)
    common.add_argument("--max-steps", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--quiet", action="store_true", help="only warnings on standard error")

    parser = argparse.ArgumentParser(prog="lstnet", description="Latent-space translation network for domain adaptation")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train-translator", parents=[common], help="train encoders, generators and discriminators")
    p = sub.add_parser("train-classifier", parents=[common], help="train a digit classifier on one domain")
    p.add_argument("--domain", type=int, choices=(1, 2), required=True)
    p = sub.add_parser("translate", parents=[common], help="translate a test split and write a contact sheet")
    p.add_argument("--checkpoint")
    p.add_argument("--direction", choices=sorted(DIRECTIONS), required=True)
    for name in ("evaluate", "pipeline"):
        p = sub.add_parser(name, parents=[common],
                           help="translate-then-classify accuracy" if name == "evaluate" else "classifiers, translator and evaluation")
        p.add_argument("--classifier1")
        p.add_argument("--classifier2")
        if name == "evaluate":
            p.add_argument("--checkpoint")
            p.add_argument("--direction", choices=sorted(DIRECTIONS))
    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    p.add_argument("--scope", choices=sorted([*SCOPES, "all"]), default="all")
    return parser


def resolve_args(args) -> dict:
    overrides = dict(C.parse_override(item) for item in args.overrides)
    for key, value in (("seed", args.seed), ("train.max_steps", args.max_steps), ("out", args.out)):
        if value is not None:
            overrides[key] = value
    return C.resolve(args.preset, args.config, overrides)


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr, force=True)
    try:
        cfg = resolve_args(args)
        return COMMANDS[args.command](cfg, args)
    except (UsageError, C.ConfigError, DataFormatError, CheckpointError, ShapeError, FileNotFoundError, ValueError) as exc:
        print(f"lstnet {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
