"""
Command-line front end for the latent class choice estimator.

    python main_app.py simulate --config data/demo_config.json
    python main_app.py fit --config data/demo_config.json --workers 4
    python main_app.py fit-baseline --config data/demo_config.json
    python main_app.py evaluate --config data/demo_config.json --fit-dir outputs/demo/fit
    python main_app.py report outputs/demo/fit outputs/demo/fit-baseline --labels proposed baseline
    python main_app.py check

Exit codes: 0 ok, 1 runtime failure, 2 usage or configuration error.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from estimators.pipeline import EstimationPipeline
from utils.config import CLI_OVERRIDES, DEFAULT_WORKERS, LOG_LEVEL, load_run_config
from utils.errors import ConfigError, LcnetError

logger = logging.getLogger("lcnet")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


def _csv_list(value: str) -> List[str]:
    return [item.strip() for item in value.split(",") if item.strip()]


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="run config JSON (sections model, data, paths, simulate, report)")
    parser.add_argument("--output-dir", dest="output_dir", help="base directory for outputs")
    parser.add_argument("--workers", type=int, default=DEFAULT_WORKERS, help="parallel restarts (default %(default)s)")
    parser.add_argument("--log-level", default=LOG_LEVEL, help="logging level (default %(default)s)")

    model = parser.add_argument_group("model overrides")
    model.add_argument("--k", type=int, help="number of latent classes")
    model.add_argument("--z", type=int, help="number of latent variables")
    model.add_argument("--h", type=int, help="hidden units of the latent network")
    model.add_argument("--use-omega", dest="use_omega", action=argparse.BooleanOptionalAction, default=None,
                       help="individual effect omega on or off")
    model.add_argument("--em-iterations", dest="em_iterations", type=int)
    model.add_argument("--restarts", type=int)
    model.add_argument("--seed", type=int)
    model.add_argument("--omega-fallback", dest="omega_fallback", choices=["zero", "mean"])

    data = parser.add_argument_group("data overrides")
    data.add_argument("--test-fraction", dest="test_fraction", type=float,
                      help="holdout share; 0 estimates on the full sample")
    data.add_argument("--split-seed", dest="split_seed", type=int)
    data.add_argument("--standardize", action=argparse.BooleanOptionalAction, default=None)
    data.add_argument("--individuals", help="individuals file")
    data.add_argument("--tasks", help="tasks file")
    data.add_argument("--truth", help="synthetic truth sidecar, for posterior accuracy")
    data.add_argument("--formats", type=_csv_list, help="report formats, comma separated (txt,json,docx,pdf)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lcnet", description="Latent class choice models with network-built "
                                                               "latent variables")
    commands = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (("simulate", "draw a synthetic dataset and its truth sidecar"),
                            ("fit", "multi-start EM for the model with latent variables"),
                            ("fit-baseline", "multi-start EM for the plain latent class model")):
        _add_common(commands.add_parser(name, help=help_text))

    evaluate = commands.add_parser("evaluate", help="holdout metrics of a saved fit")
    _add_common(evaluate)
    evaluate.add_argument("--fit-dir", dest="fit_dir", type=Path, required=True)

    report = commands.add_parser("report", help="side-by-side comparison of fit directories")
    _add_common(report)
    report.add_argument("fit_dirs", nargs="+", type=Path)
    report.add_argument("--labels", nargs="+")

    check = commands.add_parser("check", help="gradient and brute-force self-tests")
    _add_common(check)
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    return {flag: getattr(args, flag) for flag in CLI_OVERRIDES if getattr(args, flag, None) is not None}


def _dispatch(pipeline: EstimationPipeline, args: argparse.Namespace) -> int:
    if args.command == "simulate":
        info = pipeline.simulate()
        print(f"Simulated {info['individuals']} individuals ({info['observations']} choices) "
              f"into {pipeline.output_dir}")
    elif args.command in ("fit", "fit-baseline"):
        report = pipeline.fit(baseline=args.command == "fit-baseline")
        s = report.summary
        test = "full sample, no holdout" if s["test_ll"] is None else f"test LL {s['test_ll']:.4f}"
        print(f"{report.model}: train LL {s['train_ll']:.4f}, {test}, "
              f"AIC {s['aic']:.2f}; report in {pipeline.output_dir}")
    elif args.command == "evaluate":
        metrics = pipeline.evaluate(args.fit_dir)
        print(f"test LL {metrics.test_ll:.4f} (null {metrics.test_null_ll:.4f}), hit rate {metrics.hit_rate:.4f}")
    elif args.command == "report":
        table = pipeline.report(args.fit_dirs, args.labels)
        print(table.to_string(index=False))
    elif args.command == "check":
        results = pipeline.check(args.seed or 0)
        failed = [r.name for r in results if not r.passed]
        print(f"{len(results) - len(failed)}/{len(results)} self-checks passed")
        if failed:
            print("failed: " + ", ".join(failed), file=sys.stderr)
            return EXIT_FAILURE
    return EXIT_OK


def run(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK

    logging.basicConfig(level=args.log_level.upper(), format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    try:
        config = load_run_config(args.config, _overrides(args))
        pipeline = EstimationPipeline(config, args.command, args.workers)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    try:
        code = _dispatch(pipeline, args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except LcnetError as exc:
        logger.error("%s failed: %s", args.command, exc)
        manifest = pipeline.write_manifest(status="failed", error=str(exc))
        print(f"{args.command} failed: {exc}\nsee {manifest}", file=sys.stderr)
        return EXIT_FAILURE
    pipeline.write_manifest(status="ok" if code == EXIT_OK else "failed")
    return code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
