"""Command-line entry point: ``pdan {inspect,train,sr,eval,degrade}``.

Exit codes: 0 success, 1 usage error, 2 validation/verification failure,
3 numeric failure.  ``PDAN_NUM_THREADS`` caps the BLAS thread pool.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

from .arch import ConfigError, build_network
from .checkpoint import CheckpointError, load_checkpoint
from .config import load_run_config
from .cost import network_cost, verify_counts
from .dataset import PairDataset, read_png, write_png
from .imaging import DegradationSpec, degrade
from .tensor import NonFiniteError
from .train import dump_config, evaluate, super_resolve, train

log = logging.getLogger("pdan")

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="SECTION.KEY=VALUE", help="override a config entry (repeatable)")
    p.add_argument("--scale", type=int, choices=(2, 3, 4))
    p.add_argument("--attention", choices=("none", "se", "cbam", "joint"))
    p.add_argument("--blocks", type=int, help="number of dense attention blocks")


def _run_config(args):
    overrides = list(args.overrides)
    for flag, key in (("scale", "model.scale"), ("attention", "model.attention"),
                      ("blocks", "model.num_blocks")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append(f"{key}={value}")
    return load_run_config(args.config, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pdan", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("inspect", help="parameter / FLOP report")
    _model_flags(p)
    p.add_argument("--hr-size", type=int, default=512)
    p.add_argument("--format", choices=("table", "csv"), default="table")

    p = sub.add_parser("train", help="train with the L1 objective")
    _model_flags(p)
    p.add_argument("--data", required=True, help="HR image directory or manifest")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--steps", type=int, help="stop after this many total steps")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("sr", help="super-resolve PNG images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scale", type=int, choices=(2, 3, 4), help="expected checkpoint scale")
    p.add_argument("--output", required=True, help="output directory")
    p.add_argument("inputs", nargs="+")

    p = sub.add_parser("eval", help="Y-channel PSNR/SSIM on a benchmark directory")
    p.add_argument("--checkpoint")
    p.add_argument("--mode", choices=("model", "bicubic", "oracle"), default="model")
    p.add_argument("--scale", type=int, choices=(2, 3, 4))
    p.add_argument("--benchmark", required=True)
    p.add_argument("--kind", choices=("bi", "bd", "dn"), default="bi")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--shave", type=int, help="border pixels to ignore (default: scale)")
    p.add_argument("--csv", default="metrics.csv", help="per-image CSV output path")

    p = sub.add_parser("degrade", help="synthesise LR images")
    p.add_argument("--kind", choices=("bi", "bd", "dn"), default="bi")
    p.add_argument("--scale", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True, help="output directory, or a .png path for one input")
    p.add_argument("inputs", nargs="+")
    return parser


def cmd_inspect(args) -> int:
    run = _run_config(args)
    report = network_cost(run.model, args.hr_size)
    verdict = verify_counts(build_network(run.model), report)
    print(report.to_csv() if args.format == "csv" else report.to_table())
    print(report.summary())
    print(verdict)
    return EXIT_OK if verdict.ok else EXIT_INVALID


def cmd_train(args) -> int:
    run = _run_config(args)
    cfg = run.train
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    run_dir = Path(args.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    if run.source_text:
        (run_dir / "config.ini").write_text(run.source_text)
    dump_config(run_dir / "resolved_config.json", {
        "model": run.model.to_dict(), "train": dataclasses.asdict(cfg),
        "data": dataclasses.asdict(run.data),
        "overrides": args.overrides})
    dataset = PairDataset.from_path(args.data, run.data)
    model = build_network(run.model)
    result = train(model, dataset, cfg, run_dir=run_dir, max_steps=args.steps, resume=args.resume)
    last = result.history[-1] if result.history else None
    print(f"trained to step {result.step}" + (f", last loss {last[3]:.6f}" if last else ""))
    return EXIT_OK


def cmd_sr(args) -> int:
    model = load_checkpoint(args.checkpoint)
    s = model.config.scale
    if args.scale is not None and args.scale != s:
        raise ConfigError(f"checkpoint is x{s}, --scale asked for x{args.scale}")
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    for path in map(Path, args.inputs):
        sr = super_resolve(model, read_png(path))
        target = out_dir / f"{path.stem}_x{s}.png"
        write_png(target, sr)
        print(f"{path} -> {target} ({sr.shape[2]}x{sr.shape[1]})")
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.mode == "model":
        if not args.checkpoint:
            raise ConfigError("--checkpoint is required in model mode")
        upscaler = load_checkpoint(args.checkpoint)
        scale = upscaler.config.scale
        if args.scale is not None and args.scale != scale:
            raise ConfigError(f"checkpoint is x{scale}, --scale asked for x{args.scale}")
    else:
        if args.scale is None:
            raise ConfigError(f"--scale is required in {args.mode} mode")
        upscaler, scale = args.mode, args.scale
    spec = DegradationSpec(args.kind, scale, seed=args.seed)
    result = evaluate(upscaler, args.benchmark, spec, args.shave)
    result.write_csv(args.csv)
    for r in result.rows:
        print(f"{r.image}: {r.psnr:.2f} dB / {r.ssim:.4f}  (bicubic {r.bicubic_psnr:.2f} dB)")
    print(f"mean: {result.mean_psnr:.2f} dB / {result.mean_ssim:.4f}  "
          f"(bicubic {result.mean_bicubic_psnr:.2f} dB) over {len(result.rows)} images")
    return EXIT_OK


def cmd_degrade(args) -> int:
    spec = DegradationSpec(args.kind, args.scale, seed=args.seed)
    if spec.kind in ("BD", "DN") and spec.scale != 3:
        print(f"warning: {spec.kind} is conventionally evaluated at x3; using x{spec.scale}",
              file=sys.stderr)
    out = Path(args.output)
    single = out.suffix.lower() == ".png"
    if single and len(args.inputs) != 1:
        raise ConfigError("a .png --output needs exactly one input")
    if not single:
        out.mkdir(parents=True, exist_ok=True)
    for path in map(Path, args.inputs):
        lr = degrade(read_png(path).astype("float64"), spec)
        target = out if single else out / f"{path.stem}.png"
        write_png(target, lr)
        print(f"{path} -> {target} ({lr.shape[2]}x{lr.shape[1]})")
    return EXIT_OK


COMMANDS = {"inspect": cmd_inspect, "train": cmd_train, "sr": cmd_sr, "eval": cmd_eval,
            "degrade": cmd_degrade}


def _limit_threads():
    n = os.environ.get("PDAN_NUM_THREADS")
    if not n:
        return None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(int(n))


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    limiter = _limit_threads()
    try:
        return COMMANDS[args.command](args)
    except NonFiniteError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, CheckpointError, ValueError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    finally:
        if limiter is not None:
            limiter.restore_original_limits()


if __name__ == "__main__":
    sys.exit(main())
