"""Command-line entry point: ``cpq {estimate,run,calibrate,predict,tune-beta}``.

Exit codes: 0 success, 2 invalid arguments or input data, 3 output not
writable, 4 vanilla calibration infeasible, 5 calibration model rejected.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile

from . import __version__
from .conformal import CalibrationModel
from .distributions import parse_dist_spec
from .errors import CPQError, InfeasibleCalibration, InvalidParameter, ModelFormatError
from .estimators import EstimatorConfig, GTFallback, Normalization, SeenEstimator
from .experiments import (
    VARIANTS,
    ExperimentConfig,
    curve_csv,
    dataset_from_records,
    fit_model,
    make_synthetic_task,
    metrics_csv,
    predict,
    prepare,
    run_budget_sweep,
    run_estimator_eval,
)
from .oracle import load_records
from .policy import PolicyConfig, select_beta, warmup_t_min

log = logging.getLogger("cpq")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_UNWRITABLE = 3
EXIT_INFEASIBLE = 4
EXIT_MODEL = 5


class _OutputError(Exception):
    pass


def write_atomic(path: str, text: str) -> None:
    """Write via a temp file in the target directory, then rename over ``path``."""
    directory = os.path.dirname(os.path.abspath(path))
    try:
        fd, tmp = tempfile.mkstemp(prefix=".cpq-", dir=directory)
    except OSError as exc:
        raise _OutputError(f"cannot write {path}: {exc.strerror or exc}") from None
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise _OutputError(f"cannot write {path}: {exc.strerror or exc}") from None


def _float_list(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _synthetic_size(text: str) -> int:
    key, _, value = text.partition("=")
    raw = value if _ else key
    if _ and key.strip() != "n":
        raise argparse.ArgumentTypeError(f"expected n=<count>, got {text!r}")
    try:
        n = int(raw)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected n=<count>, got {text!r}") from None
    if n < 1:
        raise argparse.ArgumentTypeError("synthetic size must be positive")
    return n


def _resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("CPQ_SEED")
    if env:
        try:
            return int(env)
        except ValueError:
            raise InvalidParameter(f"CPQ_SEED must be an integer, got {env!r}") from None
    return 0


def _add_seed(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="master seed (default: $CPQ_SEED or 0)")


def _add_source(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", metavar="FILE.jsonl", help="replay log of pre-clustered samples")
    src.add_argument("--synthetic", metavar="n=N", type=_synthetic_size, help="synthetic task with N inputs")


def _add_estimator(p: argparse.ArgumentParser) -> None:
    p.add_argument("--gt-fallback", choices=[e.value for e in GTFallback], default=GTFallback.EMPIRICAL.value)
    p.add_argument("--normalization", choices=[e.value for e in Normalization],
                   default=Normalization.SCALE_SEEN_TO_COMPLEMENT.value)
    p.add_argument("--seen-estimator", choices=[e.value for e in SeenEstimator],
                   default=SeenEstimator.GOOD_TURING.value)
    p.add_argument("--no-clip", action="store_true", help="do not clip missing-mass estimates to [0, 1]")


def _add_tau(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tau-select", choices=["largest", "smallest"], default="largest",
                   help="which feasible vanilla threshold to keep (default: largest)")
    p.add_argument("--tau-grid", type=_float_list, default=None,
                   help="comma-separated vanilla thresholds in [0, 1] (default: 101 even points)")


def _add_policy(p: argparse.ArgumentParser) -> None:
    p.add_argument("--t-min", type=int, default=None, help="query floor (default: max(3, floor(B/2)))")
    p.add_argument("--t-max", type=int, default=200, help="query cap per input (default: 200)")
    p.add_argument("--no-split", action="store_true",
                   help="tune beta and calibrate on the same calibration points")


def _estimator(args) -> EstimatorConfig:
    return EstimatorConfig(args.gt_fallback, not args.no_clip, args.normalization, args.seen_estimator)


def _load_dataset(args, seed: int):
    if args.data is not None:
        return dataset_from_records(load_records(args.data))
    return make_synthetic_task(args.synthetic, seed)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cpq", description="Conformal prediction with a query oracle.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="estimator accuracy curves on a known distribution")
    p.add_argument("--dist", required=True, help="uniform:M or geometric:P:M")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--tmax", type=int, default=200)
    p.add_argument("--out", required=True)
    _add_seed(p)

    p = sub.add_parser("run", help="split experiments: coverage, EE fraction, set size")
    _add_source(p)
    p.add_argument("--variant", choices=VARIANTS, default="p1p2")
    p.add_argument("--alpha", type=_float_list, default=[0.1], help="comma-separated miscoverage levels")
    p.add_argument("--budget", type=_float_list, default=[20.0], help="comma-separated query budgets")
    p.add_argument("--splits", type=int, default=50)
    _add_tau(p)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.add_argument("--out", required=True)
    _add_seed(p)
    _add_policy(p)
    _add_estimator(p)

    p = sub.add_parser("calibrate", help="fit a calibration model on labelled data")
    _add_source(p)
    p.add_argument("--variant", choices=VARIANTS, default="p1p2")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--budget", type=float, required=True)
    _add_tau(p)
    p.add_argument("--out", required=True)
    _add_seed(p)
    _add_policy(p)
    _add_estimator(p)

    p = sub.add_parser("predict", help="prediction sets from a calibration model")
    p.add_argument("--model", required=True)
    _add_source(p)
    p.add_argument("--out", required=True)
    _add_seed(p)

    p = sub.add_parser("tune-beta", help="tune the stopping threshold to a query budget")
    _add_source(p)
    p.add_argument("--budget", type=float, required=True)
    p.add_argument("--t-min", type=int, default=None, help="query floor (default: max(3, floor(B/2)))")
    p.add_argument("--t-max", type=int, default=200)
    p.add_argument("--out", help="write JSON here instead of stdout")
    _add_seed(p)
    return parser


def cmd_estimate(args) -> int:
    dist = parse_dist_spec(args.dist)
    if args.trials < 1 or args.tmax < 1:
        raise InvalidParameter("--trials and --tmax must be positive")
    rows = run_estimator_eval(dist, args.tmax, args.trials, _resolve_seed(args))
    write_atomic(args.out, curve_csv(rows))
    return EXIT_OK


def cmd_run(args) -> int:
    seed = _resolve_seed(args)
    dataset = _load_dataset(args, seed)
    config = ExperimentConfig(
        variant=args.variant,
        alphas=tuple(sorted(args.alpha)),
        budget=args.budget[0],
        splits=args.splits,
        seed=seed,
        estimator=_estimator(args),
        t_min=args.t_min,
        t_max=args.t_max,
        split_calibration=not args.no_split,
        tau_grid=None if args.tau_grid is None else tuple(args.tau_grid),
        tau_select=args.tau_select,
        jobs=max(1, args.jobs),
    )
    rows = run_budget_sweep(config, dataset, args.budget)
    write_atomic(args.out, metrics_csv(rows))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    seed = _resolve_seed(args)
    dataset = _load_dataset(args, seed)
    model = fit_model(
        dataset, args.alpha, args.budget, args.variant, seed, _estimator(args),
        t_min=args.t_min, t_max=args.t_max, split_calibration=not args.no_split,
        tau_grid=args.tau_grid, tau_select=args.tau_select,
    )
    write_atomic(args.out, model.to_json())
    return EXIT_OK


def cmd_predict(args) -> int:
    try:
        with open(args.model, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ModelFormatError(f"cannot read model {args.model}: {exc.strerror or exc}") from None
    model = CalibrationModel.from_json(text)
    seed = args.seed if args.seed is not None else (model.seed if model.seed is not None else _resolve_seed(args))
    dataset = _load_dataset(args, seed)
    rows = predict(model, dataset)
    write_atomic(args.out, "".join(json.dumps(r) + "\n" for r in rows))
    return EXIT_OK


def cmd_tune_beta(args) -> int:
    seed = _resolve_seed(args)
    dataset = _load_dataset(args, seed)
    t_min = args.t_min if args.t_min is not None else warmup_t_min(args.budget, args.t_max)
    policy = PolicyConfig(0.0, t_min, args.t_max)
    config = ExperimentConfig(budget=args.budget, seed=seed, t_min=t_min, t_max=args.t_max)
    data = prepare(dataset, config)
    choice = select_beta(data.paths, args.budget, None, policy)
    doc = {
        "beta_star": choice.beta_star,
        "avg_queries": choice.avg_queries,
        "budget": args.budget,
        "t_min": t_min,
        "t_max": args.t_max,
        "inputs": len(data),
    }
    text = json.dumps(doc, indent=2) + "\n"
    if args.out:
        write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {
    "estimate": cmd_estimate,
    "run": cmd_run,
    "calibrate": cmd_calibrate,
    "predict": cmd_predict,
    "tune-beta": cmd_tune_beta,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except _OutputError as exc:
        print(f"cpq: {exc}", file=sys.stderr)
        return EXIT_UNWRITABLE
    except InfeasibleCalibration as exc:
        print(f"cpq: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ModelFormatError as exc:
        print(f"cpq: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except FileNotFoundError as exc:
        print(f"cpq: no such file: {exc.filename}", file=sys.stderr)
        return EXIT_USAGE
    except (CPQError, ValueError) as exc:
        print(f"cpq: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
