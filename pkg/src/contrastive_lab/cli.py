"""Command-line interface.

Exit codes, one per failure family so scripts can branch without parsing:
0 success, 1 unexpected internal error, 2 invalid config or usage,
3 verification found violations, 4 numerical-domain error during a run,
5 required artifact missing (config file, checkpoints).  Every failure
prints exactly one line to stderr: ``ERROR <ExceptionName>: <message>``.
"""

from __future__ import annotations

import argparse
import sys

from .diagnostics import SUITE_NAMES
from .errors import ConfigInvalid, ContrastiveLabError
from .harness import (fmt, load_config, run_bias, run_eval, run_gaps,
                      run_grid, run_train, run_verify)

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_VIOLATIONS = 3
EXIT_NUMERIC = 4
EXIT_MISSING = 5

DEFAULT_GRID_AXIS = "1,2,4,8"


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="contrastive-lab",
        description="Desk-scale contrastive-learning laboratory: training, "
                    "parameter grids, and numerical verification of the "
                    "bound inequalities.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, config_required=True):
        p.add_argument("--config", required=config_required,
                       help="JSON experiment config")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config master seed")
        p.add_argument("--out", default=".", help="output directory")

    add_common(sub.add_parser("train", help="train one encoder, emit metrics.csv"))
    grid = sub.add_parser("grid", help="train every (alpha, lambda) cell, emit grid.csv")
    add_common(grid)
    grid.add_argument("--alphas", default=DEFAULT_GRID_AXIS,
                      help="comma-separated alpha values")
    grid.add_argument("--lambdas", default=DEFAULT_GRID_AXIS,
                      help="comma-separated lambda values")
    grid.add_argument("--losses", default="balanced,generalized",
                      help="comma-separated loss selectors for the grid")

    verify = sub.add_parser("verify", help="run randomized inequality suites")
    verify.add_argument("--trials", type=int, default=10_000)
    verify.add_argument("--suite", default="all",
                        help=f"one of {', '.join(SUITE_NAMES)}, a comma list, or 'all'")
    verify.add_argument("--seed", type=int, default=0)
    verify.add_argument("--out", default=".", help="output directory")
    verify.add_argument("--corrupt", action="store_true",
                        help="negative control: flip every measured gap sign")

    add_common(sub.add_parser("bias", help="prototype bias of the latest checkpoint"))
    add_common(sub.add_parser("gaps", help="bound-gap curve over stored checkpoints"))
    add_common(sub.add_parser("eval", help="kNN and linear-probe accuracy of the "
                                           "latest checkpoint"))
    return parser


def _cmd_train(args) -> int:
    config = load_config(args.config, seed_override=args.seed)
    result = run_train(config, args.out)
    if result.rows:
        last = result.rows[-1]
        print(f"epoch={last.epoch} loss_total={fmt(last.loss_total)} "
              f"knn_acc={fmt(last.knn_acc)} metrics={result.metrics_path}")
    else:
        print(f"epoch=0 metrics={result.metrics_path}")
    return EXIT_OK


def _parse_axis(text: str, flag: str) -> list[float]:
    try:
        values = [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise ConfigInvalid(f"bad {flag} list {text!r}: {exc}") from exc
    if not values:
        raise ConfigInvalid(f"{flag} list is empty")
    return values


def _cmd_grid(args) -> int:
    config = load_config(args.config, seed_override=args.seed)
    selectors = tuple(tok.strip() for tok in args.losses.split(",") if tok.strip())
    rows = run_grid(config, _parse_axis(args.alphas, "--alphas"),
                    _parse_axis(args.lambdas, "--lambdas"),
                    selectors=selectors, out_dir=args.out)
    best = max(rows, key=lambda r: r["knn_acc"])
    print(f"cells={len(rows)} best_loss={best['loss']} best_alpha={fmt(best['alpha'])} "
          f"best_lambda={fmt(best['lambda'])} best_knn_acc={fmt(best['knn_acc'])}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    if args.trials < 1:
        raise ConfigInvalid(f"--trials must be >= 1, got {args.trials}")
    if args.suite == "all":
        suites = None
    else:
        suites = tuple(tok.strip() for tok in args.suite.split(",") if tok.strip())
        unknown = set(suites) - set(SUITE_NAMES)
        if unknown:
            raise ConfigInvalid(f"unknown suite(s) {sorted(unknown)}")
    results = run_verify(args.trials, args.seed, suites=suites,
                         corrupt=args.corrupt, out_dir=args.out)
    for r in results:
        print(f"suite={r.suite} trials={r.trials} violations={r.violations} "
              f"max_violation={fmt(r.max_violation)} mean_gap={fmt(r.mean_gap)}")
        if r.excluded:
            print(f"INFO {r.suite}: excluded={r.excluded} "
                  f"precondition_rate={fmt(r.excluded / r.trials)}", file=sys.stderr)
    return EXIT_VIOLATIONS if any(r.violations for r in results) else EXIT_OK


def _cmd_bias(args) -> int:
    config = load_config(args.config, seed_override=args.seed)
    out = run_bias(config, args.out)
    print(f"epoch={out['epoch']} bias_mc={fmt(out['bias_mc'])} "
          f"bias_single={fmt(out['bias_single'])}")
    return EXIT_OK


def _cmd_gaps(args) -> int:
    config = load_config(args.config, seed_override=args.seed)
    rows = run_gaps(config, args.out)
    for epoch, attract, repel in rows:
        print(f"epoch={epoch} gap_attract_mean={fmt(attract)} "
              f"gap_repel_mean={fmt(repel)}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    config = load_config(args.config, seed_override=args.seed)
    knn, probe = run_eval(config, args.out)
    print(f"knn_acc={fmt(knn.top1_accuracy)} probe_acc={fmt(probe.top1_accuracy)} "
          f"n_test={knn.n_test}")
    return EXIT_OK


_COMMANDS = {
    "train": _cmd_train,
    "grid": _cmd_grid,
    "verify": _cmd_verify,
    "bias": _cmd_bias,
    "gaps": _cmd_gaps,
    "eval": _cmd_eval,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigInvalid as exc:
        print(f"ERROR {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"ERROR {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except ContrastiveLabError as exc:
        print(f"ERROR {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except Exception as exc:  # pragma: no cover - safety net
        print(f"ERROR {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
