"""``echoir`` command line.

Subcommands: gradcheck | bilevel-demo | degrade | train | eval | upsample.
Global flags (accepted before or after the subcommand): --config, --seed,
--out, --precision, --deterministic.

Exit codes: 0 success; 1 failed check (gradcheck breach, bilevel tolerance
miss); 2 divergence / non-finite values; 3 contract violation (bad config,
bad input file, shape error).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from .. import tensor as T
from ..asblo import TOY_KINDS, DivergenceError, InfeasibleError, asblo_train, make_toy_problem, toy_schedule, write_trace
from ..gradcheck import format_report, run_suite
from ..tensor import ConfigError, ShapeError, Tensor
from ..upsampler import EchoUpsampler
from .checkpoint import CheckpointError
from .config import load_config, override
from .degrade import KINDS, DegradationSpec, degrade
from .imageio import ImageFormatError, load_image, save_image

EXIT_OK, EXIT_FAIL, EXIT_DIVERGED, EXIT_CONTRACT = 0, 1, 2, 3
BILEVEL_TOLERANCE = 0.02


def _bool(text: str) -> bool:
    t = text.lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _global_flags(default=None) -> argparse.ArgumentParser:
    # default=SUPPRESS on the subparser copy keeps a flag given before the
    # subcommand from being reset by the subparser's own default.
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", metavar="PATH", default=default)
    p.add_argument("--seed", type=int, default=default)
    p.add_argument("--out", metavar="DIR", default=default)
    p.add_argument("--precision", choices=("wide", "standard"), default=default)
    p.add_argument("--deterministic", type=_bool, metavar="BOOL", default=default)
    return p


def _run_config(args):
    cfg = load_config(args.config)
    return override(cfg, seed=args.seed, output_dir=args.out, precision=args.precision,
                    deterministic=args.deterministic)


# -- subcommands --------------------------------------------------------------------

def cmd_gradcheck(args) -> int:
    results = run_suite()
    print(format_report(results))
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_OK if not failed else EXIT_FAIL


def cmd_bilevel_demo(args) -> int:
    beta0 = args.beta0 if args.beta0 is not None else (0.0 if args.problem == "quadratic" else 1.0)
    problem = make_toy_problem(args.problem, beta0=beta0)
    kw = dict(start=args.schedule_start, decay=args.schedule_decay, every=args.schedule_every,
              floor=args.schedule_floor, kappa=args.kappa)
    if args.inner_steps is not None:
        kw["inner_steps"] = args.inner_steps
    sched = toy_schedule(**kw)
    try:
        trace = asblo_train(problem, sched, args.outer_steps, args.outer_lr)
    except (DivergenceError, InfeasibleError, FloatingPointError) as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    write_trace(trace, sys.stdout)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_trace(trace, os.path.join(args.out, "trace.csv"))
    beta = float(problem.beta[0])
    if not np.isfinite(beta):
        return EXIT_DIVERGED
    phi = problem.phi(beta)
    print(f"final beta={beta!r} phi_hat={trace[-1].F_val!r} phi(beta)={phi!r} beta_star={problem.beta_star!r}")
    return EXIT_OK if abs(beta - problem.beta_star) <= BILEVEL_TOLERANCE else EXIT_FAIL


def cmd_degrade(args) -> int:
    clean = load_image(args.input)
    seed = args.seed if args.seed is not None else 0
    spec = DegradationSpec(kind=args.kind, noise_std=args.noise_std / 255.0, rain_density=args.rain_density,
                           blur_kernel=args.blur_kernel, seed=seed)
    save_image(args.output, degrade(clean, spec))
    print(f"{args.output}: {spec.describe()} seed={seed}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .train import train

    cfg = _run_config(args)
    result = train(cfg)
    if cfg.optimizer == "SL":
        print(f"final training L1 {result['losses'][-1]:.6f}; outputs in {cfg.output_dir}")
    else:
        print(f"final validation L1 {result['final_val']:.6f}; outputs in {cfg.output_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .train import evaluate

    cfg = _run_config(args)
    if args.checkpoint and not os.path.isfile(args.checkpoint):
        raise FileNotFoundError(args.checkpoint)
    workers = 1
    if args.parallel:
        workers = max(1, int(os.environ.get("ECHOIR_THREADS", "1")))
    res = evaluate(cfg, args.checkpoint, split=args.split, workers=workers)
    m = res["mean"]
    print(f"mean PSNR {m['psnr_degraded']:.3f} -> {m['psnr_restored']:.3f} dB, "
          f"SSIM {m['ssim_degraded']:.4f} -> {m['ssim_restored']:.4f}")
    return EXIT_OK


def cmd_upsample(args) -> int:
    low, guide = load_image(args.input), load_image(args.guide)
    if guide.shape[1:] != (2 * low.shape[1], 2 * low.shape[2]):
        raise ShapeError(f"guide {guide.shape[1:]} must be twice the input {low.shape[1:]}")
    up = EchoUpsampler(3, 3, embed=3, radius=args.radius, combine=args.combine, reduce=False,
                       sigma_spatial=args.sigma_spatial, sigma_range=args.sigma_range, dtype=T.WIDE)
    for layer in (up.mlp1, up.mlp2):  # identity embedding: compare guide colours directly
        layer.weight.data[...] = np.eye(3).reshape(3, 3, 1, 1)
        layer.bias.data[...] = 0.0
    with T.no_grad():
        out = up(Tensor(low), Tensor(guide)).data
    save_image(args.output, out)
    print(f"{args.output}: {low.shape[2]}x{low.shape[1]} -> {out.shape[2]}x{out.shape[1]}")
    return EXIT_OK


# -- parser -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="echoir", description=__doc__.splitlines()[0],
                                     parents=[_global_flags()])
    sub = parser.add_subparsers(dest="command", required=True)
    common = _global_flags(argparse.SUPPRESS)

    sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every op")

    p = sub.add_parser("bilevel-demo", parents=[common], help="AS-BLO on an analytic toy problem")
    p.add_argument("--problem", choices=TOY_KINDS, default="quadratic")
    p.add_argument("--outer-steps", type=int, default=300)
    p.add_argument("--outer-lr", type=float, default=1e-2)
    p.add_argument("--beta0", type=float)
    p.add_argument("--schedule-start", type=float, default=0.1)
    p.add_argument("--schedule-decay", type=float, default=0.5)
    p.add_argument("--schedule-every", type=int, default=25)
    p.add_argument("--schedule-floor", type=float, default=1e-4)
    p.add_argument("--kappa", type=float, default=1.0)
    p.add_argument("--inner-steps", type=int)

    p = sub.add_parser("degrade", parents=[common], help="apply a seeded synthetic degradation")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--kind", choices=KINDS, default="gaussian_noise")
    p.add_argument("--noise-std", type=float, default=25.0, help="in 1/255 units")
    p.add_argument("--rain-density", type=float, default=0.004)
    p.add_argument("--blur-kernel", type=int, default=3)

    sub.add_parser("train", parents=[common], help="train from a run config")

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--checkpoint", metavar="PATH")
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--parallel", action="store_true",
                   help="fan out over images (ECHOIR_THREADS workers); no bitwise guarantee")

    p = sub.add_parser("upsample", parents=[common], help="guided 2x upsampling of an image")
    p.add_argument("input")
    p.add_argument("guide")
    p.add_argument("output")
    p.add_argument("--radius", type=int, default=2)
    p.add_argument("--combine", choices=("add", "multiply"), default="multiply")
    p.add_argument("--sigma-spatial", type=float, default=1.0)
    p.add_argument("--sigma-range", type=float, default=0.1)
    return parser


COMMANDS = {"gradcheck": cmd_gradcheck, "bilevel-demo": cmd_bilevel_demo, "degrade": cmd_degrade,
            "train": cmd_train, "eval": cmd_eval, "upsample": cmd_upsample}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (DivergenceError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, ShapeError, ImageFormatError, CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT


if __name__ == "__main__":
    sys.exit(main())
