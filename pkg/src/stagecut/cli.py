"""Command-line entry point.

Every command writes machine-readable output (JSON on stdout, CSV files) and
echoes the effective configuration so a run can be repeated exactly. Option
values may also come from a ``key = value`` file given with ``--config``;
flags override file values, which override built-in defaults.

Exit codes: 0 success, 1 runtime or file error, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from typing import Sequence

import numpy as np

from stagecut import budget, cluster, dataset, denoiser, sampler, schedule, similarity
from stagecut.errors import StagecutError


class ConfigError(ValueError):
    pass


def load_config_file(path: str | os.PathLike) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values: dict[str, str] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            key, sep, value = body.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or not key or not value:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line.rstrip()!r}")
            values[key.replace("-", "_")] = value
    return values


# -- parser ----------------------------------------------------------------------


def _float_pair(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'lo,hi', got {text!r}") from None
    if not lo < hi:
        raise argparse.ArgumentTypeError(f"need lo < hi, got {text!r}")
    return lo, hi


def _grid_arg(text: str) -> str:
    if text == "stepped":
        return text
    try:
        count = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must be 'stepped' or a point count, got {text!r}") from None
    if count < 1:
        raise argparse.ArgumentTypeError(f"grid point count must be >= 1, got {count}")
    return text


def _at_least(lo: int):
    def parse(text: str) -> int:
        value = int(text)
        if value < lo:
            raise argparse.ArgumentTypeError(f"must be >= {lo}, got {value}")
        return value

    return parse


def _common_parent() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="key = value file supplying option defaults")
    return p


def _schedule_parent() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("schedule")
    g.add_argument("--beta-d", type=float, default=19.9)
    g.add_argument("--beta-min", type=float, default=0.1)
    g.add_argument("--t-min", type=float, default=1e-3)
    return p


def _data_parent() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("dataset")
    g.add_argument("--cifar", nargs="+", metavar="FILE", help="CIFAR-10 binary batch files")
    g.add_argument("--cifar-split", choices=("train", "test"),
                   help="load the standard batches from --data-dir or $STAGECUT_DATA_DIR")
    g.add_argument("--csv", metavar="PATH", help="CSV dataset with a header row")
    g.add_argument("--data-dir", help="dataset root (default: $STAGECUT_DATA_DIR)")
    g.add_argument("--data-range", type=_float_pair, default=(0.0, 1.0),
                   help="pixel value range for CIFAR-10, e.g. 0,1 or -1,1")
    g.add_argument("--subsample", type=_at_least(1), metavar="M")
    g.add_argument("--subsample-seed", type=int, default=0)
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stagecut", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    common, sched, data = _common_parent(), _schedule_parent(), _data_parent()

    p = sub.add_parser("schedule-table", parents=[common, sched], help="emit t,s,sigma,snr CSV")
    p.add_argument("--kind", choices=("vp", "ve"), default="vp")
    p.add_argument("--sigma-min", type=float, default=0.01)
    p.add_argument("--sigma-max", type=float, default=100.0)
    p.add_argument("--points", type=_at_least(2), default=101)
    p.add_argument("--out", help="output CSV (default stdout)")

    p = sub.add_parser("denoise", parents=[common, sched, data], help="evaluate the optimal denoiser")
    p.add_argument("--query", required=True, help="CSV with a header and one query row")
    p.add_argument("--t", type=float, required=True)

    p = sub.add_parser("similarity", parents=[common, sched, data], help="run a Monte-Carlo similarity study")
    p.add_argument("--mode", choices=("endpoint", "pair"), default="endpoint")
    p.add_argument("--eta", type=float, default=similarity.DEFAULT_ETA)
    p.add_argument("--k-samples", type=_at_least(1), default=similarity.DEFAULT_K)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=_at_least(1), default=os.cpu_count() or 1)
    p.add_argument("--chunk", type=_at_least(1), default=similarity.DEFAULT_CHUNK)
    p.add_argument("--out", required=True, help="sample-store CSV path")

    p = sub.add_parser("cluster3", parents=[common], help="three-interval threshold search")
    p.add_argument("--store", required=True)
    p.add_argument("--alpha", type=float, default=0.9)
    p.add_argument("--grid", type=_grid_arg, default="10000")
    p.add_argument("--min-support", type=_at_least(1), default=cluster.MIN_SUPPORT)
    p.add_argument("--t-min", type=float, default=1e-3)

    p = sub.add_parser("clustern", parents=[common], help="n-interval optimal partition")
    p.add_argument("--store", required=True)
    p.add_argument("--n", type=_at_least(2), required=True)
    p.add_argument("--grid", type=_grid_arg, default="stepped")
    p.add_argument("--objective", choices=cluster.OBJECTIVES, default=cluster.OBJECTIVES[0])
    p.add_argument("--t-min", type=float, default=1e-3)

    p = sub.add_parser("baseline", parents=[common, sched], help="uniform-t or uniform-log-SNR cuts")
    p.add_argument("--method", choices=("uniform-t", "uniform-logsnr"), default="uniform-t")
    p.add_argument("--n", type=_at_least(2), default=3)
    p.add_argument("--grid", type=_grid_arg, default="10000")

    p = sub.add_parser("sample", parents=[common, sched, data], help="probability-flow ODE sample")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=_at_least(1), default=200)
    p.add_argument("--method", choices=sampler.METHODS, default="heun")
    p.add_argument("--variable", choices=sampler.VARIABLES, default="sigma")
    p.add_argument("--out", help="CSV for x_final (default stdout)")
    p.add_argument("--trajectory", help="CSV for (t, coord_0, ...) checkpoints")
    p.add_argument("--record-every", type=_at_least(1), default=1)

    p = sub.add_parser("budget", parents=[common], help="NFE-weighted GFLOPs and training PFLOPs")
    p.add_argument("--stages", required=True, help="CSV with header gflops,steps")
    p.add_argument("--iterations", type=float, required=True)

    p = sub.add_parser("convert", parents=[common, sched], help="VP time <-> equal-SNR VE sigma")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--t", type=float)
    g.add_argument("--sigma", type=float)
    return parser


def _subparsers(parser: argparse.ArgumentParser) -> dict[str, argparse.ArgumentParser]:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices
    return {}


def _apply_config(subparser: argparse.ArgumentParser, path: str) -> None:
    """Install values from a config file as the subcommand's defaults."""
    actions = {a.dest: a for a in subparser._actions if a.dest not in ("help", "config")}
    overlay = load_config_file(path)
    unknown = sorted(set(overlay) - set(actions))
    if unknown:
        subparser.error(f"unknown config keys in {path}: {', '.join(unknown)}")
    defaults = {}
    for key, text in overlay.items():
        action = actions[key]
        convert = action.type or str
        try:
            if action.nargs in ("+", "*"):
                value = [convert(v) for v in text.split()]
            else:
                value = convert(text)
        except (ValueError, argparse.ArgumentTypeError) as exc:
            subparser.error(f"config key {key!r}: {exc}")
        if action.choices is not None and value not in action.choices:
            subparser.error(f"config key {key!r}: {value!r} not in {sorted(action.choices)}")
        defaults[key] = value
        # a value from the file satisfies a required flag
        action.required = False
    subparser.set_defaults(**defaults)


def parse_args(argv: Sequence[str] | None = None) -> argparse.Namespace:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    subs = _subparsers(parser)
    command = next((a for a in argv if a in subs), None)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if command is not None and known.config:
        _apply_config(subs[command], known.config)
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        parser.exit(2, "stagecut: error: a command is required\n")
    return args


# -- helpers -----------------------------------------------------------------------


def _echo(args: argparse.Namespace) -> dict:
    out = {}
    for key, value in sorted(vars(args).items()):
        if isinstance(value, tuple):
            value = list(value)
        out[key] = value
    return out


def _vp(args) -> schedule.VpSchedule:
    return schedule.VpSchedule(beta_d=args.beta_d, beta_min=args.beta_min, t_min=args.t_min)


def _grid(spec: str, t_min: float) -> cluster.GridSpec:
    if spec == "stepped":
        return cluster.GridSpec.stepped()
    return cluster.GridSpec.uniform(int(spec), t_min)


def _load_dataset(args) -> dataset.Dataset:
    chosen = [opt for opt in ("cifar", "cifar_split", "csv") if getattr(args, opt)]
    if len(chosen) != 1:
        raise _UsageError("exactly one of --cifar, --cifar-split, --csv is required")
    if args.cifar:
        d = dataset.load_cifar10(args.cifar, data_range=args.data_range)
    elif args.cifar_split:
        files = dataset.find_cifar_batches(args.data_dir, args.cifar_split)
        d = dataset.load_cifar10(files, data_range=args.data_range)
    else:
        d = dataset.load_csv(args.csv)
    if args.subsample:
        d = dataset.subsample(d, args.subsample, args.subsample_seed)
    return d


class _UsageError(Exception):
    pass


def _summary(v: np.ndarray) -> dict:
    return {
        "min": float(v.min()),
        "max": float(v.max()),
        "mean": float(v.mean()),
        "l2_norm": float(np.linalg.norm(v)),
        "dim": int(v.size),
    }


def _print_json(obj) -> None:
    json.dump(obj, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def _write_rows(path, header, rows) -> None:
    fh = open(path, "w", newline="") if path else sys.stdout
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format(float(v), ".17g") for v in row])
    finally:
        if path:
            fh.close()


# -- commands ----------------------------------------------------------------------


def cmd_schedule_table(args) -> int:
    if args.kind == "vp":
        sch = _vp(args)
    else:
        sch = schedule.VeSchedule(sigma_min=args.sigma_min, sigma_max=args.sigma_max)
    _write_rows(args.out, ("t", "s", "sigma", "snr"), schedule.schedule_table(sch, args.points))
    return 0


def cmd_denoise(args) -> int:
    d = _load_dataset(args)
    query = dataset.load_csv(args.query).points
    if query.shape[0] != 1:
        raise _UsageError(f"--query must hold exactly one row, found {query.shape[0]}")
    k = schedule.kernel_at(_vp(args), args.t)
    ev = denoiser.optimal_eps(d, k, query[0])
    _print_json({
        "t": k.t, "s": k.s, "sigma": k.sigma,
        "y_hat_summary": _summary(ev.y_hat),
        "eps_star_summary": _summary(ev.eps_star),
        "log_partition": ev.log_partition,
        "max_log_weight": ev.max_log_weight,
        "config": _echo(args),
    })
    return 0


def cmd_similarity(args) -> int:
    d = _load_dataset(args)
    sch = _vp(args)
    cfg = similarity.SimilarityConfig(
        eta=args.eta, k_samples=args.k_samples, seed=args.seed, t_lo=sch.t_min, t_hi=1.0
    )
    run = similarity.run_endpoint_study if args.mode == "endpoint" else similarity.run_pair_study
    store = run(d, sch, cfg, threads=args.threads, chunk=args.chunk)
    store.meta["cli"] = {k: v for k, v in _echo(args).items() if k != "threads"}
    store.to_csv(args.out)
    _print_json({
        "store": str(args.out),
        "sidecar": str(similarity.sidecar_path(args.out)),
        "samples": len(store),
        "mode": args.mode,
        "seed": args.seed,
        "dataset": store.meta["dataset"],
    })
    return 0


def cmd_cluster3(args) -> int:
    store = similarity.EndpointStore.from_csv(args.store)
    grid = _grid(args.grid, args.t_min)
    part = cluster.solve_three_interval(store, args.alpha, grid, min_support=args.min_support)
    out = part.to_json()
    out.update(config=_echo(args), seed=store.meta.get("seed"), grid=args.grid)
    _print_json(out)
    return 0


def cmd_clustern(args) -> int:
    store = similarity.PairStore.from_csv(args.store)
    grid = _grid(args.grid, args.t_min)
    part = cluster.solve_n_interval(store, args.n, grid, objective=args.objective)
    out = part.to_json()
    out.update(config=_echo(args), seed=store.meta.get("seed"), grid=args.grid)
    _print_json(out)
    return 0


def cmd_baseline(args) -> int:
    grid = _grid(args.grid, args.t_min)
    if args.method == "uniform-t":
        part = cluster.baseline_uniform_t(args.n, grid)
    else:
        part = cluster.baseline_uniform_logsnr(args.n, _vp(args), grid)
    out = part.to_json()
    out.update(config=_echo(args), grid=args.grid)
    _print_json(out)
    return 0


def cmd_sample(args) -> int:
    d = _load_dataset(args)
    record = args.record_every if args.trajectory else 0
    run = sampler.sample(d, _vp(args), seed=args.seed, steps=args.steps, method=args.method,
                         variable=args.variable, record_every=record)
    _write_rows(args.out, [f"x{j}" for j in range(d.dim)], [run.x_final])
    if args.trajectory:
        rows = [[t, *x] for t, x in run.trajectory]
        _write_rows(args.trajectory, ["t", *(f"coord_{j}" for j in range(d.dim))], rows)
    return 0


def cmd_budget(args) -> int:
    stages = []
    with open(args.stages, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or {"gflops", "steps"} - set(reader.fieldnames):
            raise _UsageError(f"{args.stages}: expected header 'gflops,steps'")
        for row in reader:
            stages.append(budget.StageBudget(float(row["gflops"]), int(row["steps"])))
    g = budget.weighted_gflops(stages)
    pf = budget.training_pflops(budget.TrainingBudget(args.iterations, g))
    _print_json({"weighted_gflops": g, "training_pflops": pf, "config": _echo(args)})
    return 0


def cmd_convert(args) -> int:
    sch = _vp(args)
    if args.t is not None:
        sigma = schedule.ve_sigma_equivalent(sch, args.t)
        out = {"t": args.t, "sigma_ve": sigma, "snr": schedule.snr(sch, args.t)}
    else:
        if not args.sigma > 0:
            raise _UsageError("--sigma must be > 0")
        target = 1.0 / args.sigma**2
        t = schedule.t_of_snr(sch, target)
        out = {"sigma_ve": args.sigma, "t": t, "snr": target}
    out["config"] = _echo(args)
    _print_json(out)
    return 0


COMMANDS = {
    "schedule-table": cmd_schedule_table,
    "denoise": cmd_denoise,
    "similarity": cmd_similarity,
    "cluster3": cmd_cluster3,
    "clustern": cmd_clustern,
    "baseline": cmd_baseline,
    "sample": cmd_sample,
    "budget": cmd_budget,
    "convert": cmd_convert,
}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = parse_args(argv)
    except ConfigError as exc:
        print(f"stagecut: error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:
        return int(exc.code or 0)
    except OSError as exc:
        print(f"stagecut: error: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return 1
    try:
        return COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"stagecut {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        name = exc.filename if exc.filename is not None else ""
        print(f"stagecut {args.command}: error: {name}: {exc.strerror or exc}", file=sys.stderr)
        return 1
    except (StagecutError, ValueError) as exc:
        print(f"stagecut {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
