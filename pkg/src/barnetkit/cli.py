"""Command line entry point.

Subcommands cover the whole experiment loop: generate data, train,
evaluate a checkpoint, run the gradient-check suite, run the ablation
grid, and benchmark the attention blocks.  Every run artifact is a
plain text or CSV file so diffs and reruns stay comparable.
"""

import argparse
import sys
from pathlib import Path

from .bench import format_rows, run_bench
from .checkpoint import load_checkpoint
from .config import RunConfig, load_config
from .data import load_dataset, make_dataset, write_mask
from .errors import BarnetError, ConfigError, DataError, ParseError
from .gradsuite import format_summary, run_suite, suite_passed
from .model import BarnetMini
from .training import (ensure_dataset, evaluate, run_ablation, run_training)

__all__ = ["main", "build_parser"]


def build_parser():
    parser = argparse.ArgumentParser(
        prog="barnetkit",
        description="Train and probe a miniature bilinear-attention "
                    "segmentation network on synthetic scenes.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, steps=False, checkpoint=False, variant=False,
               seed_help="override the config's seed"):
        p.add_argument("--config", type=Path, default=None,
                       help="flat key = value config file "
                            "(defaults apply when omitted)")
        p.add_argument("--seed", type=int, default=None, help=seed_help)
        p.add_argument("--out", type=Path, default=None,
                       help="output directory")
        if steps:
            p.add_argument("--steps", type=int, default=None,
                           help="override the config's step count")
        if checkpoint:
            p.add_argument("--checkpoint", type=Path, required=True,
                           help="checkpoint file to evaluate")
        if variant:
            p.add_argument("--no-bam", action="store_true",
                           help="drop the bilinear attention blocks")
            p.add_argument("--no-arf", action="store_true",
                           help="drop the adaptive fusion blocks")
            p.add_argument("--gate", choices=("sigmoid", "softmax"),
                           default=None, help="fusion gate activation")

    common(sub.add_parser("gen-data", help="render the synthetic dataset"))
    common(sub.add_parser("train", help="train a model and write "
                          "loss.csv + model.ckpt"),
           steps=True, variant=True)
    common(sub.add_parser("eval", help="score a checkpoint on the test "
                          "split; writes report.csv, confusion.csv, and "
                          "predicted masks"), checkpoint=True)
    grad = sub.add_parser("gradcheck", help="finite-difference check of "
                          "every operation and the full network")
    grad.add_argument("--seeds", type=int, default=10,
                      help="number of random seeds per check")
    ablate = sub.add_parser("ablate", help="train the 4-variant grid and "
                            "write a comparison CSV")
    common(ablate, steps=True,
           seed_help="first of the consecutive training seeds")
    ablate.add_argument("--runs", type=int, default=5,
                        help="seeds per variant (median is reported)")
    bench = sub.add_parser("bench", help="time the attention blocks "
                           "across sizes")
    bench.add_argument("--out", type=Path, default=None,
                       help="where to write bench.csv")
    bench.add_argument("--repeats", type=int, default=9,
                       help="timings per cell (median is kept)")
    return parser


def _load_run_config(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "steps", None) is not None:
        overrides["steps"] = args.steps
    if getattr(args, "no_bam", False):
        overrides["use_bam"] = False
    if getattr(args, "no_arf", False):
        overrides["use_arf"] = False
    if getattr(args, "gate", None) is not None:
        overrides["gate"] = args.gate
    return cfg.replace(**overrides) if overrides else cfg


def _cmd_gen_data(args):
    cfg = _load_run_config(args)
    if args.seed is not None:
        cfg = cfg.replace(data_seed=args.seed)
    root = Path(args.out) if args.out else Path(cfg.data_root)
    manifest = make_dataset(cfg.scene_config(), cfg.train_count,
                            cfg.test_count, root)
    print(f"wrote {cfg.train_count} train + {cfg.test_count} test "
          f"samples under {root} ({manifest})")
    return 0


def _cmd_train(args):
    cfg = _load_run_config(args)
    out = args.out if args.out else Path("runs") / "train"
    result = run_training(cfg, out, log=print)
    test_set = load_dataset(result["data_root"], "test")
    report, _ = evaluate(result["model"], test_set, cfg.num_classes)
    (Path(out) / "report.csv").write_text(report.to_csv())
    print(f"checkpoint: {result['checkpoint']}")
    print(f"test mIoU {report.mean_iou:.4f}  mDice {report.mean_dice:.4f}")
    return 0


def _cmd_eval(args):
    cfg = _load_run_config(args)
    out = args.out if args.out else Path("runs") / "eval"
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    model = BarnetMini(**cfg.model_kwargs())
    load_checkpoint(model, args.checkpoint,
                    expected_hash=cfg.config_hash())
    test_set = load_dataset(ensure_dataset(cfg), "test")
    report, preds = evaluate(model, test_set, cfg.num_classes)
    (out / "report.csv").write_text(report.to_csv())
    (out / "confusion.csv").write_text(report.confusion_csv())
    pred_dir = out / "preds"
    pred_dir.mkdir(exist_ok=True)
    for sample, pred in zip(test_set, preds):
        index = sample.meta.get("seed", 0)
        write_mask(pred_dir / f"{index:05d}.pgm", pred)
    print(f"mIoU {report.mean_iou:.4f}  mDice {report.mean_dice:.4f}")
    print(f"report: {out / 'report.csv'}")
    return 0


def _cmd_gradcheck(args):
    entries = run_suite(seeds=range(args.seeds))
    print(format_summary(entries))
    return 0 if suite_passed(entries) else 1


def _cmd_ablate(args):
    cfg = _load_run_config(args)
    out = args.out if args.out else Path("runs") / "ablate"
    first = args.seed if args.seed is not None else 0
    seeds = range(first, first + args.runs)
    results = run_ablation(cfg, out, seeds=seeds, log=print)
    print(f"{'variant':12s} {'params':>8s} {'median mIoU':>12s}")
    for r in results:
        print(f"{r['variant']:12s} {r['params']:8d} "
              f"{r['median_miou']:12.4f}")
    print(f"grid written to {Path(out) / 'ablate.csv'}")
    return 0


def _cmd_bench(args):
    rows = run_bench(repeats=args.repeats)
    text = format_rows(rows)
    print(text, end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "bench.csv").write_text(text)
        print(f"written to {out / 'bench.csv'}")
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "gradcheck": _cmd_gradcheck,
    "ablate": _cmd_ablate,
    "bench": _cmd_bench,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, ParseError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except BarnetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
