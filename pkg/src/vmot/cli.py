"""Command line entry point ``vmot``.

Subcommands::

    vmot gaussian        [--config FILE] [--seed N] [--budget desk|paper] [--formulation ...] [--out DIR]
    vmot empirical       [same flags]
    vmot lp              [same flags] [--instance DIR] [--direction max|min]
    vmot extract-density CHAIN.csv [--spot S] [--ref R] [--out DIR]

The exit code is 0 when every enabled check passes, 1 when a check fails
and 2 on invalid input.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .distributions import DomainError, save_tabulated_csv
from .experiments import RUNNERS, ExperimentConfig, load_config
from .lp_oracle import load_instance, save_solution, solve
from .market_data import ChainParseError, ExtractionError, implied_density, load_chain, to_return_marginal

log = logging.getLogger("vmot")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML experiment file")
    p.add_argument("--seed", type=int)
    p.add_argument("--budget", choices=("desk", "paper"))
    p.add_argument("--formulation", choices=("full", "reduced", "both"))
    p.add_argument("--out", type=str, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vmot", description="Model-free bounds for two-period multi-asset payoffs.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("gaussian", "neural bounds against the Gaussian closed form"),
                       ("empirical", "VMOT and OT bounds from option chains"),
                       ("lp", "LP verification suite, or solve a saved instance")):
        p = sub.add_parser(name, help=text)
        _common(p)
        if name == "lp":
            p.add_argument("--instance", type=Path, help="directory holding a saved discrete instance")
            p.add_argument("--direction", choices=("max", "min"), default="max")
    p = sub.add_parser("extract-density", help="risk-neutral density and return marginal from one chain")
    p.add_argument("chain", type=Path)
    p.add_argument("--spot", type=float)
    p.add_argument("--ref", type=float, help="reference price for returns (default: spot)")
    p.add_argument("--out", type=Path, default=Path("."))
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _config(args) -> ExperimentConfig:
    over = {"seed": args.seed, "budget": args.budget, "formulation": args.formulation, "out": args.out}
    if args.config is not None:
        cfg = load_config(args.config, kind=args.command, **over)
    else:
        cfg = ExperimentConfig(kind=args.command, **{k: v for k, v in over.items() if v is not None})
    if args.out is None and args.config is None:
        cfg.out = str(Path("runs") / cfg.name)
    return cfg


def _extract(args) -> int:
    chain = load_chain(args.chain, spot=args.spot)
    dens = implied_density(chain)
    args.out.mkdir(parents=True, exist_ok=True)
    stem = args.chain.stem
    dens.to_csv(args.out / f"{stem}_density.csv")
    marg = to_return_marginal(dens, args.ref if args.ref is not None else chain.spot)
    save_tabulated_csv(marg, args.out / f"{stem}_returns.csv")
    print(f"{len(dens.strikes)} strikes used, {len(dens.dropped)} quotes dropped, "
          f"mass before normalization {dens.raw_mass:.6f}")
    for k, why in dens.dropped:
        print(f"  dropped K={k:g}: {why}")
    return 0


def _solve_saved(args) -> int:
    inst = load_instance(args.instance)
    sol = solve(inst, args.direction)
    out = Path(args.out) if args.out else args.instance
    save_solution(sol, out)
    print(f"{sol.status.value}: value {sol.value:.12g}")
    return 0 if sol.optimal else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "extract-density":
            return _extract(args)
        if args.command == "lp" and args.instance is not None:
            return _solve_saved(args)
        cfg = _config(args)
        res = RUNNERS[cfg.kind](cfg)
    except (DomainError, ChainParseError, ExtractionError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for line in res.summary_lines():
        print(line)
    print(f"artifacts in {res.out}")
    return 0 if res.passed else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
