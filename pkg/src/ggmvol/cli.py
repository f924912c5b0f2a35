"""Command-line entry point.

Subcommands: ``search``, ``benchmark``, ``sample``, ``sv-forecast`` and
``score``. Every option can also be supplied through ``--config file.json``
(keys are the option names with ``-`` replaced by ``_``); flags given on the
command line take precedence over the file.

Exit codes: 0 on success, 2 for configuration or input errors, 3 for
numerical failures.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .data import benchmark_report, builtin_wangli6, ingest_prices
from .graph import Graph, read_edgelist
from .gwishart import GWishartParams, sample_gwishart, write_trace
from .linalg import read_matrix_csv, write_matrix_csv
from .scoring import PredictiveSample, score_difference
from .search import GraphPrior, run_chain
from .stochvol import SVHyper, rolling_forecast

log = logging.getLogger("ggmvol")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class ConfigError(Exception):
    """Bad flags, config file or input data."""


# -- helpers -----------------------------------------------------------------


def _write_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=float) + "\n", encoding="utf-8")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _read_observations(path: str) -> np.ndarray:
    """Observation matrix (rows are samples). A non-numeric first line is taken as a header."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise ConfigError(f"{path}: no data")
    try:
        [float(c) for c in rows[0]]
    except ValueError:
        rows = rows[1:]
    try:
        Z = np.array([[float(c) for c in r] for r in rows])
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if Z.ndim != 2 or len(Z) < 1:
        raise ConfigError(f"{path}: expected a rectangular numeric table")
    return Z


def _search_inputs(args) -> tuple[np.ndarray, int]:
    if (args.data is None) == (args.builtin is None):
        raise ConfigError("give exactly one of --data or --builtin")
    if args.builtin is not None:
        U, n = builtin_wangli6()
    else:
        Z = _read_observations(args.data)
        U, n = Z.T @ Z, Z.shape[0]
    if args.p is not None and args.p != U.shape[0]:
        raise ConfigError(f"--p {args.p} does not match data dimension {U.shape[0]}")
    return U, n


def _prior(args, p: int) -> tuple[GWishartParams, GraphPrior]:
    return GWishartParams(args.delta, np.eye(p), Graph.empty(p)), GraphPrior(args.edge_prior)


def _check_iters(args) -> None:
    if args.iters <= 0 or args.burnin < 0 or args.iters <= args.burnin:
        raise ConfigError(f"need iters > burnin >= 0, got iters={args.iters}, burnin={args.burnin}")


# -- subcommands ---------------------------------------------------------------


def cmd_search(args) -> int:
    _check_iters(args)
    U, n = _search_inputs(args)
    prior, gp = _prior(args, U.shape[0])
    res = run_chain(U, n, prior, gp, args.sampler, args.iters, args.burnin, args.seed, cover=args.cover)
    out = _out_dir(args)
    write_matrix_csv(res.edge_probs, out / "edge_probs.csv")
    write_matrix_csv(res.K_mean, out / "k_mean.csv")
    _write_json(res.timing(), out / "timing.json")
    log.info("search (%s): %.2f s, results in %s", args.sampler, res.seconds, out)
    return EXIT_OK


def cmd_benchmark(args) -> int:
    if args.seed is None:
        raise ConfigError("benchmark requires --seed")
    _check_iters(args)
    U, n = _search_inputs(args)
    prior, gp = _prior(args, U.shape[0])
    runs = {}
    for sampler in ("cl", "wl"):
        runs[sampler] = run_chain(U, n, prior, gp, sampler, args.iters, args.burnin, args.seed, cover=args.cover)
    report = benchmark_report(runs["cl"], runs["wl"])
    out = _out_dir(args)
    for sampler, res in runs.items():
        write_matrix_csv(res.edge_probs, out / f"edge_probs_{sampler}.csv")
        write_matrix_csv(res.K_mean, out / f"k_mean_{sampler}.csv")
    _write_json(report, out / "benchmark.json")
    print(
        f"CL {report['runs']['cl']['seconds']:.2f}s MSE {report['runs']['cl']['mse']:.4f} | "
        f"WL {report['runs']['wl']['seconds']:.2f}s MSE {report['runs']['wl']['mse']:.4f} | "
        f"speedup {report['speedup']:.2f}x"
    )
    return EXIT_OK


def _parse_edges(spec: str, p: int) -> Graph:
    edges = []
    for tok in filter(None, (t.strip() for t in spec.split(","))):
        try:
            a, b = tok.split("-")
            edges.append((int(a) - 1, int(b) - 1))
        except ValueError:
            raise ConfigError(f"bad edge {tok!r}; expected i-j with 1-based indices") from None
    return Graph.from_edges(p, edges)


def cmd_sample(args) -> int:
    _check_iters(args)
    if args.graph is not None:
        G = read_edgelist(args.graph)
    elif args.p is not None:
        G = _parse_edges(args.edges or "", args.p)
    else:
        raise ConfigError("give --graph or --p (optionally with --edges)")
    D = np.eye(G.p) if args.scale is None else read_matrix_csv(args.scale)
    params = GWishartParams(args.delta, D, G)
    rng = np.random.default_rng(args.seed)
    res = sample_gwishart(params, args.iters, rng, args.sampler, args.burnin, cover=args.cover)
    out = _out_dir(args)
    write_trace(res.draws, out / "trace.csv", start=args.burnin)
    _write_json(
        {"sampler": args.sampler, "acceptance": res.acceptance, "counters": dict(sorted(res.counters.items()))},
        out / "sample.json",
    )
    return EXIT_OK


def _date_index(dates: list[str], date: str | None, default: int) -> int:
    """Number of rows dated on or before ``date`` (or ``default`` when absent)."""
    if date is None:
        return default
    return sum(1 for d in dates if d <= date)


def cmd_sv_forecast(args) -> int:
    _check_iters(args)
    if args.returns is None:
        raise ConfigError("sv-forecast requires --returns")
    series = ingest_prices(args.returns, args.mode)
    if args.train_end is None:
        raise ConfigError("sv-forecast requires --train-end")
    start = _date_index(series.dates, args.train_end, 0)
    end = _date_index(series.dates, args.forecast_end, series.T)
    if start < 2:
        raise ConfigError("--train-end leaves fewer than 2 training rows")
    if end <= start:
        raise ConfigError("no rows between --train-end and --forecast-end")
    hyper = SVHyper(delta=args.delta, edge_probability=args.edge_prior)
    days = rolling_forecast(
        series, hyper, start, end, args.iters, args.burnin, args.seed, args.draws,
        fixed_vol=args.fixed_vol, warm_start=args.warm_start, jobs=args.jobs,
    )
    out = _out_dir(args)
    for fc in days:
        with open(out / f"pred_{fc.label}.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(series.tickers)
            w.writerows([[repr(float(v)) for v in row] for row in fc.draws])
    with open(out / "xvol.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "x_mean"])
        w.writerows([[fc.label, repr(fc.x_mean)] for fc in days])
    return EXIT_OK


def _read_predictions(directory: str) -> dict[str, np.ndarray]:
    d = Path(directory)
    if not d.is_dir():
        raise ConfigError(f"{directory}: not a directory")
    out = {}
    for f in sorted(d.glob("pred_*.csv")):
        out[f.stem[len("pred_"):]] = np.loadtxt(f, delimiter=",", skiprows=1, ndmin=2)
    if not out:
        raise ConfigError(f"{directory}: no pred_<date>.csv files")
    return out


def cmd_score(args) -> int:
    if not (args.pred_a and args.pred_b and args.returns):
        raise ConfigError("score requires --pred-a, --pred-b and --returns")
    a, b = _read_predictions(args.pred_a), _read_predictions(args.pred_b)
    if sorted(a) != sorted(b):
        raise ConfigError("prediction directories cover different dates")
    series = ingest_prices(args.returns, args.mode)
    row = {d: k for k, d in enumerate(series.dates)}
    dates = [d for d in series.dates if d in a]
    missing = sorted(set(a) - set(dates))
    if missing:
        raise ConfigError(f"no realised returns for {missing[:3]}")
    pa = [PredictiveSample(a[d], d) for d in dates]
    pb = [PredictiveSample(b[d], d) for d in dates]
    realized = [series.Y[row[d]] for d in dates]
    sa, sb, diff = score_difference(pa, pb, realized, beta=args.beta)
    out = _out_dir(args)
    with open(out / "es.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "score_model_a", "score_model_b", "difference"])
        for row_ in zip(dates, sa, sb, diff):
            w.writerow([row_[0]] + [repr(float(v)) for v in row_[1:]])
    print(f"mean difference (a - b) over {len(dates)} days: {float(np.mean(diff)):.6g}")
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ggmvol", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp, seed_default: int | None = 0):
        sp.add_argument("--config", help="JSON file of option values; flags override it")
        sp.add_argument("--seed", type=int, default=seed_default)
        sp.add_argument("--out", default=".")
        return sp

    def chain(sp, iters=60000, burnin=10000):
        sp.add_argument("--p", type=int)
        sp.add_argument("--delta", type=float, default=3.0)
        sp.add_argument("--iters", type=int, default=iters)
        sp.add_argument("--burnin", type=int, default=burnin)
        sp.add_argument("--cover", choices=("maximal", "edges"), default="maximal")

    def data(sp):
        sp.add_argument("--data", help="CSV of observations (rows are samples)")
        sp.add_argument("--builtin", choices=("wangli6",))
        sp.add_argument("--edge-prior", type=float, default=0.5)

    sp = common(sub.add_parser("search", help="posterior structure search"))
    chain(sp)
    data(sp)
    sp.add_argument("--sampler", choices=("cl", "wl"), default="cl")
    sp.set_defaults(func=cmd_search)

    sp = common(sub.add_parser("benchmark", help="CL against WL on the same problem"), seed_default=None)
    chain(sp)
    data(sp)
    sp.set_defaults(func=cmd_benchmark)

    sp = common(sub.add_parser("sample", help="raw G-Wishart prior draws"))
    chain(sp, iters=1000, burnin=0)
    sp.add_argument("--graph", help="edge-list file (p on the first line, then 1-based pairs)")
    sp.add_argument("--edges", help="comma-separated 1-based pairs such as 1-2,2-3 (with --p)")
    sp.add_argument("--scale", help="CSV file holding D (default identity)")
    sp.add_argument("--sampler", choices=("gibbs", "rwmh"), default="gibbs")
    sp.set_defaults(func=cmd_sample)

    sp = common(sub.add_parser("sv-forecast", help="rolling one-step-ahead forecasts"))
    sp.add_argument("--returns", help="CSV with header date,<ticker1>,...")
    sp.add_argument("--mode", choices=("prices", "returns"), default="prices")
    sp.add_argument("--train-end", help="last date of the initial training window")
    sp.add_argument("--forecast-end", help="last date to forecast (default: end of file)")
    sp.add_argument("--iters", type=int, default=2000)
    sp.add_argument("--burnin", type=int, default=500)
    sp.add_argument("--draws", type=int, default=500)
    sp.add_argument("--delta", type=float, default=3.0)
    sp.add_argument("--edge-prior", type=float, default=0.5)
    sp.add_argument("--fixed-vol", action="store_true", help="ablation with X held at zero")
    sp.add_argument("--warm-start", action="store_true", help="start each day from the previous day's chain")
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(func=cmd_sv_forecast)

    sp = common(sub.add_parser("score", help="energy scores of two forecast directories"))
    sp.add_argument("--pred-a", help="sv-forecast output directory of model a")
    sp.add_argument("--pred-b", help="sv-forecast output directory of model b")
    sp.add_argument("--returns", help="realised returns or prices CSV")
    sp.add_argument("--mode", choices=("prices", "returns"), default="prices")
    sp.add_argument("--beta", type=float, default=1.0)
    sp.set_defaults(func=cmd_score)
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    """Parse ``argv``, folding in ``--config`` values underneath explicit flags."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        try:
            cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(cfg, dict):
            raise ConfigError("config file must hold a JSON object")
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        unknown = sorted(set(cfg) - set(vars(args)) - {"command"})
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        subparser.set_defaults(**cfg)
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:  # argparse usage errors already printed
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (np.linalg.LinAlgError, FloatingPointError, ArithmeticError) as exc:
        # LinAlgError subclasses ValueError, so it has to be caught first
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
