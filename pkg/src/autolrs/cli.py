"""Command-line entry points.

serve     run the TCP search service
simulate  run a full search session against a simulated trainer
fit       smooth a step,loss file and fit the exponential forecast model
oracle    brute-force the best constant LR on a simulated trainer
export    convert a schedule record JSON document to step,lr CSV

Exit codes: 0 success, 1 usage error (bad flags, unreadable or malformed
inputs), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

from .controller import ScheduleRecord, SearchConfig
from .forecast import (
    MIN_SMOOTHING_POINTS,
    LossSeries,
    SmoothingParams,
    fit_exponential,
    forecast_loss,
    spline_smooth,
)
from .protocol import DEFAULT_HOST, PORT_ENV_VAR, LrSearchServer, default_port
from .simtrainer import (
    LogisticBlobs,
    NoisyQuadratic,
    PiecewiseRegime,
    Quadratic,
    SimModel,
    oracle_best_lr,
    run_in_process,
)

__all__ = ["main"]

_DEFAULTS = SearchConfig()


class UsageError(Exception):
    """Bad invocation or unusable input; exits with status 1."""


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; the contract here is 1
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _floats(text: str) -> list[float]:
    try:
        values = [float(part) for part in text.split(",") if part.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated float list: {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("empty float list")
    return values


def _add_search_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("search configuration")
    group.add_argument("--config", metavar="FILE", help="JSON file of search settings; flags override it")
    flag = group.add_argument

    def num(name, kind, help_text):
        default = getattr(_DEFAULTS, name.replace("-", "_"))
        flag(f"--{name}", type=kind, default=None, help=f"{help_text} (default: {default})")

    num("lr-min", float, "lower bound of the LR search interval")
    num("lr-max", float, "upper bound of the LR search interval")
    num("k", int, "LR candidates explored per stage")
    num("tau-initial", int, "first stage length in steps; doubles per stage")
    num("tau-max", int, "stage length cap; also switches loss source to validation")
    num("tau-prime-ratio", float, "candidate steps as a fraction of the stage length")
    num("kappa", float, "exploration weight of the acquisition rule")
    num("noise-variance", float, "observation noise of the surrogate model")
    num("warmup-steps", int, "linear warmup steps before the search")
    num("warmup-peak-lr", float, "LR reached at the end of warmup")
    num("val-minibatches", int, "fixed mini-batches averaged per validation measurement")
    num("val-every", int, "steps between validation measurements")
    num("budget-steps", int, "total model-update steps before the session ends")
    num("seed", int, "session seed recorded in the schedule and seeding simulators")


_CONFIG_FLAGS = [
    "lr_min",
    "lr_max",
    "k",
    "tau_initial",
    "tau_max",
    "tau_prime_ratio",
    "kappa",
    "noise_variance",
    "warmup_steps",
    "warmup_peak_lr",
    "val_minibatches",
    "val_every",
    "budget_steps",
    "seed",
]


def build_search_config(args) -> SearchConfig:
    data: dict = {}
    if args.config is not None:
        try:
            data = json.loads(Path(args.config).read_text())
        except OSError as err:
            raise UsageError(f"cannot read config file: {err}")
        except json.JSONDecodeError as err:
            raise UsageError(f"config file is not valid JSON: {err}")
        if not isinstance(data, dict):
            raise UsageError("config file must hold a JSON object")
    for name in _CONFIG_FLAGS:
        value = getattr(args, name)
        if value is not None:
            data[name] = value
    try:
        return SearchConfig.from_dict(data)
    except (TypeError, ValueError) as err:
        raise UsageError(str(err))


def _add_landscape_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("simulated trainer")
    group.add_argument(
        "--landscape",
        choices=["quadratic", "noisy-quadratic", "logistic-blobs", "piecewise"],
        default="quadratic",
        help="objective the simulated trainer optimizes (default: quadratic)",
    )
    group.add_argument("--curvatures", type=_floats, default=[1.0], metavar="C1,C2,...",
                       help="quadratic curvatures (default: 1.0)")
    group.add_argument("--noise-std", type=float, default=0.1,
                       help="gradient noise of noisy-quadratic (default: 0.1)")
    group.add_argument("--blob-mu", type=_floats, default=[0.0, 0.2], metavar="M1,M2,...",
                       help="class-mean offsets of logistic-blobs (default: 0.0,0.2)")
    group.add_argument("--blob-sigma", type=_floats, default=[3.0, 0.1], metavar="S1,S2,...",
                       help="per-feature spreads of logistic-blobs (default: 3.0,0.1)")
    group.add_argument("--batch-size", type=int, default=32,
                       help="mini-batch size of logistic-blobs (default: 32)")
    group.add_argument("--data-seed", type=int, default=7,
                       help="dataset seed of logistic-blobs (default: 7)")
    group.add_argument("--switch-step", type=int, default=500,
                       help="piecewise: step at which the objective moves (default: 500)")
    group.add_argument("--switch-center", type=float, default=2.0,
                       help="piecewise: per-coordinate optimum shift after the switch (default: 2.0)")


def build_model(args, seed: int) -> SimModel:
    if args.landscape == "quadratic":
        landscape = Quadratic(args.curvatures)
    elif args.landscape == "noisy-quadratic":
        landscape = NoisyQuadratic(args.curvatures, args.noise_std)
    elif args.landscape == "logistic-blobs":
        landscape = LogisticBlobs(
            mu=args.blob_mu,
            sigma=args.blob_sigma,
            batch_size=args.batch_size,
            data_seed=args.data_seed,
        )
    else:
        before = Quadratic(args.curvatures)
        after = Quadratic(args.curvatures, center=[args.switch_center] * len(args.curvatures))
        landscape = PiecewiseRegime([(0, before), (args.switch_step, after)])
    return SimModel(landscape, seed=seed)


# ---- subcommands ---------------------------------------------------------------


def cmd_serve(args) -> int:
    config = build_search_config(args)
    port = default_port() if args.port is None else args.port
    server = LrSearchServer(config, host=args.bind, port=port, idle_timeout=args.idle_timeout)
    print(f"listening on {server.host}:{server.port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return 0


def cmd_simulate(args) -> int:
    config = build_search_config(args)
    model = build_model(args, seed=config.seed)
    result = run_in_process(config, model)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "record.json").write_text(result.record.to_json())
    (out_dir / "schedule.csv").write_text(result.record.to_csv())
    trace = ["step,loss,source"]
    trace.extend(f"{step},{value!r},{source}" for step, value, source in result.loss_trace)
    (out_dir / "trace.csv").write_text("\n".join(trace) + "\n")
    meta = result.record.metadata
    print(f"wrote {out_dir / 'record.json'}")
    for stage in meta["stages"]:
        print(
            f"stage {stage['stage_index']}: tau={stage['tau']} "
            f"lr={stage['chosen_lr']:.6g} forecast={stage['forecast']:.6g} "
            f"source={stage['loss_source']}"
        )
    print(f"total steps: {meta['total_scheduled_steps']} ({meta['stopped_reason']})")
    return 0


def read_loss_file(path: str) -> list[tuple[int, float]]:
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise UsageError(f"cannot read loss file: {err}")
    points = []
    for line_no, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or all(cell.strip() == "" for cell in row):
            continue
        if line_no == 1 and not row[0].strip().lstrip("-").replace(".", "", 1).isdigit():
            continue  # header
        try:
            step, loss = int(float(row[0])), float(row[1])
        except (ValueError, IndexError):
            raise UsageError(f"line {line_no}: expected 'step,loss', got {','.join(row)!r}")
        points.append((step, loss))
    if not points:
        raise UsageError("loss file holds no data rows")
    return points


def cmd_fit(args) -> int:
    points = read_loss_file(args.losses)
    last_step = points[-1][0]
    horizon = args.horizon if args.horizon is not None else 10 * last_step
    try:
        series = LossSeries.from_points(points, horizon_tau=horizon, observed_tau_prime=last_step)
    except ValueError as err:
        raise UsageError(f"bad loss series: {err}")
    removed: list[int] = []
    if len(series) >= MIN_SMOOTHING_POINTS and not args.no_smoothing:
        smoothing = SmoothingParams(iterations=args.smoothing_iterations)
        result = spline_smooth(series, smoothing)
        series = result.series
        removed = [int(step) for step in result.removed_steps]
    try:
        fit = fit_exponential(series)
    except ValueError as err:
        raise UsageError(f"cannot fit series: {err}")
    doc = {
        "a": fit.a,
        "b": fit.b,
        "c": fit.c,
        "degenerate": fit.degenerate,
        "reason": fit.reason,
        "sse": fit.sse,
        "points_used": len(series),
        "removed_steps": removed,
        "horizon": horizon,
        "forecast": forecast_loss(fit, horizon),
    }
    text = json.dumps(doc, indent=2) + "\n"
    if args.out is not None:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_oracle(args) -> int:
    config = build_search_config(args)
    model = build_model(args, seed=config.seed)
    result = oracle_best_lr(
        model,
        (config.lr_min, config.lr_max),
        tau=args.tau,
        grid_size=args.grid_size,
        val_minibatches=config.val_minibatches,
    )
    lines = ["lr,loss"]
    # the grid arrays hold numpy scalars whose repr is not a bare literal
    lines.extend(
        f"{float(lr)!r},{float(loss)!r}"
        for lr, loss in zip(result.lrs, result.losses)
    )
    table = "\n".join(lines) + "\n"
    if args.out is not None:
        Path(args.out).write_text(table)
    else:
        sys.stdout.write(table)
    print(f"best_lr={result.best_lr!r} best_loss={result.best_loss!r}", file=sys.stderr)
    return 0


def cmd_export(args) -> int:
    try:
        record = ScheduleRecord.from_json(Path(args.record).read_text())
    except OSError as err:
        raise UsageError(f"cannot read record: {err}")
    except (KeyError, TypeError, ValueError) as err:
        raise UsageError(f"not a schedule record: {err}")
    text = record.to_csv()
    if args.out is not None:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


# ---- wiring --------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="autolrs", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="subcommand", required=True, metavar="SUBCOMMAND")

    serve = sub.add_parser("serve", help="run the TCP search service")
    serve.add_argument("--bind", default=DEFAULT_HOST, help=f"listen address (default: {DEFAULT_HOST})")
    serve.add_argument("--port", type=int, default=None,
                       help=f"listen port; 0 picks a free one (default: ${PORT_ENV_VAR} or {default_port()})")
    serve.add_argument("--idle-timeout", type=float, default=600.0,
                       help="seconds before an inactive session is dropped (default: 600)")
    _add_search_flags(serve)
    serve.set_defaults(func=cmd_serve)

    simulate = sub.add_parser("simulate", help="run a search session against a simulated trainer")
    simulate.add_argument("--out-dir", default="autolrs-out",
                          help="directory for record.json, schedule.csv, trace.csv (default: autolrs-out)")
    _add_search_flags(simulate)
    _add_landscape_flags(simulate)
    simulate.set_defaults(func=cmd_simulate)

    fit = sub.add_parser("fit", help="fit the loss-forecast model to a step,loss CSV file")
    fit.add_argument("losses", help="CSV file of step,loss rows (header optional)")
    fit.add_argument("--horizon", type=int, default=None,
                     help="step to forecast at (default: 10x the last observed step)")
    fit.add_argument("--no-smoothing", action="store_true", help="fit the raw series")
    fit.add_argument("--smoothing-iterations", type=int, default=SmoothingParams().iterations,
                     help=f"outlier-removal passes (default: {SmoothingParams().iterations})")
    fit.add_argument("--out", default=None, help="write the JSON result here instead of stdout")
    fit.set_defaults(func=cmd_fit)

    oracle = sub.add_parser("oracle", help="grid-search the best constant LR on a simulated trainer")
    oracle.add_argument("--tau", type=int, default=1000,
                        help="steps each grid LR trains for (default: 1000)")
    oracle.add_argument("--grid-size", type=int, default=256, help="grid resolution (default: 256)")
    oracle.add_argument("--out", default=None, help="write the lr,loss table here instead of stdout")
    _add_search_flags(oracle)
    _add_landscape_flags(oracle)
    oracle.set_defaults(func=cmd_oracle)

    export = sub.add_parser("export", help="convert a record.json to step,lr CSV")
    export.add_argument("record", help="path to a schedule record JSON document")
    export.add_argument("--out", default=None, help="write CSV here instead of stdout")
    export.set_defaults(func=cmd_export)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as err:
        print(f"autolrs {args.subcommand}: {err}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 2
    except Exception as err:  # runtime failure contract: report, exit 2
        print(f"autolrs {args.subcommand}: {type(err).__name__}: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
