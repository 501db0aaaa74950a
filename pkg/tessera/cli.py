"""
Command-line entry point: python -m tessera <command> [flags].

Exit codes: 0 success, 1 runtime failure, 2 configuration error,
3 acceptance check failed (--check).
"""
import argparse
import json
import logging
import sys
from typing import List, Optional

from .config import ExperimentConfig, load_config, settings
from .exceptions import ConfigError, DomainError, TesseraError
from .services.experiments import ExperimentResult, run_experiment
from .services.reporting import default_path, report_writer, to_plain

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_CHECK = 3


def _floats(text: str) -> List[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> List[int]:
    if ":" in text:
        lo, hi = (int(v) for v in text.split(":"))
        return list(range(lo, hi + 1))
    return [int(v) for v in text.split(",") if v.strip()]


def _common(sub: argparse.ArgumentParser):
    sub.add_argument("--config", help="JSON experiment config; flags override its values")
    sub.add_argument("--metric", choices=("jm", "euclid3", "l1"))
    sub.add_argument("--p", type=float, help="colour probability")
    sub.add_argument("--rho", type=float, help="aspect ratio of the crossing rectangle")
    sub.add_argument("--s", type=float, help="scale (rectangle height, torus side)")
    sub.add_argument("--trials", type=int, help="number of trials")
    sub.add_argument("--seed", type=int, help="master seed")
    sub.add_argument("--out", help="output path")
    sub.add_argument("--workers", type=int, help="worker processes")
    sub.add_argument("--check", action="store_true", help="exit 3 when the acceptance check fails")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tessera", description="Johnson-Mehl and sliced-Voronoi percolation experiments")
    subs = parser.add_subparsers(dest="command", required=True)

    cross = subs.add_parser("cross", help="crossing probability of [0, rho*s] x [0, s]")
    _common(cross)
    cross.add_argument("--p-grid", type=_floats, help="comma-separated p values sharing one sample per trial")

    tail = subs.add_parser("tail", help="survival function of the origin cluster size")
    _common(tail)
    tail.add_argument("--sizes", type=_ints, help="cluster sizes, e.g. 1:20 or 2,4,8")
    tail.add_argument("--window", type=float, help="window scale around the origin")
    tail.add_argument("--angular-budget", type=int, help="initial rays per cell probe (>= 16)")

    pc = subs.add_parser("pc", help="bracket the critical probability")
    _common(pc)
    pc.add_argument("--tolerance", type=float, help="bracket width (>= 0.02)")

    couple = subs.add_parser("couple", help="crossed coupling on the torus")
    _common(couple)
    couple.add_argument("--p1", type=float)
    couple.add_argument("--p2", type=float)
    couple.add_argument("--eps", type=float, help="shift check cube side delta = s^(-eps); eps' defaults to eps / 3")
    couple.add_argument("--eps-prime", type=float, help="delta' = s^(-eps')")
    couple.add_argument("--delta", type=float, help="crude-cube side for the shift robustness check")
    couple.add_argument("--thickness", type=float, help="torus thickness (default s)")
    couple.add_argument("--angular-budget", type=int, help="initial rays per defect-cell probe (>= 16)")

    for name, text in (("faces", "face counts of the origin cell"), ("hilhorst", "planar face-count ratios")):
        sub = subs.add_parser(name, help=text)
        _common(sub)
        sub.add_argument("--k-min", type=int)
        sub.add_argument("--k-max", type=int)
        if name == "faces":
            sub.add_argument("--probes", type=int)
            sub.add_argument("--mode", choices=("threeD", "planarVoronoi"))

    render = subs.add_parser("render", help="SVG of one tessellation")
    _common(render)
    render.add_argument("--no-fill", dest="fill", action="store_false", default=None)
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    overrides = {
        "command": args.command,
        "metric": args.metric,
        "p": args.p,
        "rho": args.rho,
        "s": args.s,
        "trials": args.trials,
        "master_seed": args.seed,
        "out": args.out,
        "workers": args.workers,
        "check": True if args.check else None,
    }
    for key in ("p_grid", "sizes", "window", "tolerance", "p1", "p2", "eps", "eps_prime", "delta", "thickness",
                "angular_budget", "k_min", "k_max", "probes", "mode", "fill"):
        overrides[key] = getattr(args, key, None)
    return load_config(args.config, **overrides)


def write_outputs(config: ExperimentConfig, result: ExperimentResult) -> str:
    resolved = config.resolved()
    if result.svg is not None:
        path, text = default_path(settings.output_dir, config.command, "svg", config.out), result.svg
    elif result.is_json:
        path = default_path(settings.output_dir, config.command, "json", config.out)
        text = report_writer.json_text(resolved, result.body())
    else:
        path = default_path(settings.output_dir, config.command, "csv", config.out)
        text = report_writer.csv_text(resolved, result.columns, result.rows)
    return str(report_writer.write(path, text))


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, settings.log_level.upper(), logging.INFO),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        config = config_from_args(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        result = run_experiment(config)
    except DomainError as e:
        print(f"invalid parameters: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except TesseraError as e:
        logger.error("%s failed: %s", config.command, e)
        return EXIT_CHECK if config.check else EXIT_FAILURE
    path = write_outputs(config, result)
    print(json.dumps(to_plain({"command": config.command, "output": path, "summary": result.summary}), sort_keys=True))
    if config.check and result.check_passed is False:
        print(f"acceptance check failed: {'; '.join(result.check_messages)}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
