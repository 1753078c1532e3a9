"""Command-line entry point: ``refvos {dataset build,train,eval,infer,selfcheck}``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import tensors as T
from .config import Config
from .errors import ContractError, InputError, NumericalError

EXIT_OK, EXIT_INPUT, EXIT_CONTRACT, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    # argparse's own status 2 would read as a contract violation
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--seed", type=int, help="overrides train.seed (and data.seed for dataset build)")
    p.add_argument("--precision", type=int, choices=(32, 64))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="refvos", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    ds = sub.add_parser("dataset", help="synthetic dataset tools")
    ds_sub = ds.add_subparsers(dest="action", required=True)
    build = ds_sub.add_parser("build", help="generate train/val splits")
    _common(build)
    build.add_argument("--out", help="dataset root (default: data.root)")
    build.add_argument("--force", action="store_true", help="overwrite a non-empty directory")

    tr = sub.add_parser("train", help="train a model")
    _common(tr)
    tr.add_argument("--data", help="dataset root (default: data.root)")
    tr.add_argument("--out", required=True, help="run directory for checkpoint, log and config")
    tr.add_argument("--steps", type=int, help="number of optimiser steps (0 saves the initialisation)")
    tr.add_argument("--force", action="store_true", help="overwrite an existing run directory")

    ev = sub.add_parser("eval", help="score a checkpoint on a split")
    _common(ev)
    ev.add_argument("--checkpoint", help="model checkpoint (not needed with --bypass)")
    ev.add_argument("--data", help="dataset root (default: data.root)")
    ev.add_argument("--split", default="val")
    ev.add_argument("--bypass", action="store_true", help="score ground truth against itself")
    ev.add_argument("--out", help="also write the report here")

    inf = sub.add_parser("infer", help="predict masks and overlays for one clip")
    _common(inf)
    inf.add_argument("--checkpoint", required=True)
    inf.add_argument("--clip", required=True, help="clip directory with frames/ and ref.txt")
    inf.add_argument("--out", required=True)

    sc = sub.add_parser("selfcheck", help="gradient and oracle checks")
    _common(sc)
    return parser


def resolve_config(args) -> Config:
    cfg = Config.load(args.config) if args.config else Config()
    for item in args.set:
        if "=" not in item:
            raise InputError(f"--set expects KEY=VALUE, got {item!r}")
        key, val = item.split("=", 1)
        cfg[key.strip()] = val
    if args.seed is not None:
        cfg["train.seed"] = args.seed
    if args.precision is not None:
        cfg["train.precision"] = args.precision
    return cfg


def _cmd_dataset(args, cfg) -> int:
    from .datagen import dataset_build

    if args.seed is not None:
        cfg["data.seed"] = args.seed
    root = Path(args.out or cfg["data.root"])
    counts = dataset_build(cfg, root, force=args.force)
    cfg.replace(data__root=str(root)).save(root / "dataset.cfg")
    for split, n in counts.items():
        print(f"split={split} clips={n}")
    return EXIT_OK


def _cmd_train(args, cfg) -> int:
    from .model import ReferringSegmenter
    from .train import load_split, save_model, train

    if args.data:
        cfg["data.root"] = args.data
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise InputError(f"{out} exists and is not empty (use --force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)
    clips = load_split(cfg, cfg["data.train_split"])
    model = ReferringSegmenter(cfg)
    cfg.save(out / "config.txt")
    with open(out / "train.log", "w") as log:
        def emit(line):
            print(line)
            log.write(line + "\n")
            log.flush()
        result = train(model, clips, cfg, log=emit, steps=args.steps)
        emit(f"done steps={result.steps} seconds={result.seconds:.1f}")
    save_model(model, out / "model.ckpt", cfg)
    return EXIT_OK


def _cmd_eval(args, cfg) -> int:
    from .train import evaluate, format_report, load_model, load_split

    if args.data:
        cfg["data.root"] = args.data
    clips = load_split(cfg, args.split)
    if args.bypass:
        model = None
    elif not args.checkpoint:
        raise InputError("eval needs --checkpoint unless --bypass is given")
    else:
        model = load_model(args.checkpoint, cfg)
    text = format_report(evaluate(model, clips, cfg, bypass=args.bypass))
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return EXIT_OK


def _cmd_infer(args, cfg) -> int:
    from .train import infer, load_model

    model = load_model(args.checkpoint, cfg)
    for path in infer(model, args.clip, args.out, cfg):
        print(path)
    return EXIT_OK


def _cmd_selfcheck(args, cfg) -> int:
    from . import selfcheck

    results = selfcheck.run(cfg["train.seed"])
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name} {detail}")
    if not all(ok for _, ok, _ in results):
        raise NumericalError("self-check failed")
    return EXIT_OK


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_INPUT
    try:
        cfg = resolve_config(args)
        T.set_precision(cfg["train.precision"])
        if args.command == "dataset":
            return _cmd_dataset(args, cfg)
        handler = {"train": _cmd_train, "eval": _cmd_eval, "infer": _cmd_infer,
                   "selfcheck": _cmd_selfcheck}[args.command]
        return handler(args, cfg)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ContractError as exc:
        print(f"contract violation: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    finally:
        T.set_precision(32)


if __name__ == "__main__":
    sys.exit(main())
