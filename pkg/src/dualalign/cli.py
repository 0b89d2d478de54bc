"""Command-line entry point.

Subcommands: gen-data, train, eval, stylize, gradcheck, ablate. Every
command is deterministic given its seed and config; output files carry no
wall-clock fields. Exit codes: 0 success, 1 usage or config error, 2 data
or I/O error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import figures
from .config import Config, load_config, serialize_config
from .errors import ConfigError, DataError, NumericalError
from .evaluate import SWEEPS, ablate, ablation_csv, evaluate_model
from .formats import read_ppm, resolve_checkpoint_stem, write_ppm
from .generator import synthesize
from .gradcheck import run_suite
from .scenes import CLASS_NAMES, DiskDataset, make_benchmark, write_benchmark
from .tensor import Tensor
from .trainer import load_models, train
from .align import stats_arrays


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _load(args) -> Config:
    cfg = load_config(getattr(args, "config", None))
    seed = getattr(args, "seed", None)
    if seed is not None:
        cfg.override_seeds(seed)
    return cfg


def cmd_gen_data(args) -> int:
    cfg = _load(args)
    dataset = make_benchmark(
        seed=cfg.benchmark_seed, n_source=cfg.num_source,
        n_target_train=cfg.num_target_train, n_target_eval=cfg.num_target_eval,
        height=cfg.height, width=cfg.width, target_shift=cfg.target_shift())
    write_benchmark(dataset, args.out)
    print(f"wrote {cfg.num_source}/{cfg.num_target_train}/{cfg.num_target_eval} "
          f"scenes to {args.out}")
    return 0


def _progress(stage, it, losses):
    if it % 100 == 0:
        print(f"[{stage}] iter {it}: seg={losses.seg:.4g} gen={losses.gen:.4g} "
              f"total={losses.total:.4g}", file=sys.stderr)


def cmd_train(args) -> int:
    cfg = _load(args)
    dataset = DiskDataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(serialize_config(cfg))
    result = train(cfg.train_config(), dataset, out_dir=out,
                   resume=args.resume, progress=_progress)
    figures.training_curves(result.metrics, out / "metrics.png",
                            pretrain=result.pre_metrics or None)
    print(f"trained {cfg.mode} for {cfg.iterations} iterations; "
          f"final checkpoint at {out / 'final.manifest'}")
    return 0


def cmd_eval(args) -> int:
    stem = resolve_checkpoint_stem(args.checkpoint)
    models, _, _ = load_models(stem)
    dataset = DiskDataset(args.data)
    report = evaluate_model(models.segnet, dataset.target_eval)
    csv_text = report.csv()
    sys.stdout.write(csv_text)
    report_path = stem.parent / (stem.name + "_report.csv")
    report_path.write_text(csv_text)
    names = CLASS_NAMES if len(report.per_class) == len(CLASS_NAMES) else None
    figures.iou_report(report.per_class, report.mean_iou,
                       stem.parent / (stem.name + "_report.png"), class_names=names)
    return 0


def cmd_stylize(args) -> int:
    stem = resolve_checkpoint_stem(args.checkpoint)
    models, config, _ = load_models(stem)
    source = read_ppm(args.source)
    target = read_ppm(args.target)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sample = synthesize(models.generator, Tensor(source[None]), Tensor(target[None]))
    synth = sample.image.data[0]
    write_ppm(out / "source.ppm", source)
    write_ppm(out / "target.ppm", target)
    write_ppm(out / "synthesized.ppm", synth)
    figures.stylize_panel(source, target, synth, out / "stylize.png")
    mu_t, _ = stats_arrays(models.generator.encode(Tensor(target[None]))[3].data)
    mu_s, _ = stats_arrays(models.generator.encode(sample.image)[3].data)
    gap = float(np.mean(np.abs(mu_s - mu_t)))
    print(f"wrote stylization to {out} (deep-feature mean gap to target: {gap:.4g})")
    return 0


def cmd_gradcheck(args) -> int:
    results = run_suite()
    failed = False
    for name, err, threshold in results:
        status = "ok" if err < threshold else "FAIL"
        if err >= threshold:
            failed = True
        print(f"{name:<28} max_rel_err={err:.3e}  (threshold {threshold:g})  {status}")
    if failed:
        raise NumericalError("gradient check failed; see the report above")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load(args)
    dataset = DiskDataset(args.data)
    values = args.values.split(",") if args.values else None
    rows = ablate(cfg.train_config(), dataset, args.sweep, values=values,
                  n_seeds=cfg.ablate_seeds,
                  progress=lambda v, s, m: print(
                      f"[{args.sweep}={v}] seed {s}: mIoU {m:.4f}", file=sys.stderr))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_text = ablation_csv(rows)
    (out / "ablation.csv").write_text(csv_text)
    figures.ablation_chart(rows, out / "ablation.png")
    sys.stdout.write(csv_text)
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="dualalign",
                     description="Channel-wise alignment for synthetic-to-real "
                                 "segmentation, at desk scale.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the two-domain scene benchmark")
    p.add_argument("--config", type=Path, help="key = value config file")
    p.add_argument("--out", type=Path, required=True, help="dataset directory")
    p.add_argument("--seed", type=int, help="override every config seed")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train on a generated dataset")
    p.add_argument("--config", type=Path)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--resume", action="store_true",
                   help="continue from the latest checkpoint in --out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on target_eval")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stylize", help="restyle one source image toward a target")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--source", type=Path, required=True)
    p.add_argument("--target", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_stylize)

    p = sub.add_parser("gradcheck", help="run the double-precision gradient suite")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="sweep one knob and report mIoU per setting")
    p.add_argument("--sweep", choices=sorted(SWEEPS), required=True)
    p.add_argument("--values", help="comma-separated subset of the sweep's settings")
    p.add_argument("--config", type=Path)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
