"""Command-line front end.

Three subcommands:

* ``fit``    -- fit one estimator to a sample file and dump it as JSON plus
  a human-readable knot table;
* ``regret`` -- run the Monte-Carlo regret benchmark described by a JSON
  config and write deterministic CSV/JSON outputs;
* ``bench``  -- measure median fit times (and optionally solver scaling)
  and write a timing CSV.

Regret outputs are byte-deterministic given the config and seed; wall-clock
measurements are confined to the timing files.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .estimators import (
    dump_estimator,
    erm_geometric,
    erm_negbinomial,
    erm_poisson,
    erm_poisson_multi,
    monotone_robbins,
    robbins,
    robbins_multi,
    tabulate,
)
from .isotonic import IsotonicProblem, solve_blockwise, solve_stack
from .mixtures import sample, stream_generator
from .regret import (
    ConfigError,
    aggregates_document,
    format_number,
    parse_config,
    parse_prior,
    regret_csv_lines,
    run_experiment,
    timings_csv_lines,
)

FIT_METHODS = {
    "erm": erm_poisson,
    "robbins": robbins,
    "mono_robbins": monotone_robbins,
    "erm_multi": erm_poisson_multi,
    "robbins_multi": robbins_multi,
    "erm_geometric": erm_geometric,
    "erm_negbinomial": None,  # needs the shape flag, handled in cmd_fit
}


class CliError(Exception):
    """User-facing failure; the message is printed and the exit code is 2."""


def _read_sample_file(path: Path) -> np.ndarray:
    try:
        text = path.read_text()
    except OSError as exc:
        raise CliError(f"cannot read sample file {path}: {exc}") from exc
    if not text.strip():
        raise CliError("empty sample")
    try:
        if "," in text:
            rows = [
                [int(tok) for tok in line.split(",")]
                for line in text.splitlines()
                if line.strip()
            ]
            arr = np.asarray(rows, dtype=np.int64)
        else:
            arr = np.asarray([int(tok) for tok in text.split()], dtype=np.int64)
    except ValueError as exc:
        raise CliError(f"sample file {path} is not integer-valued: {exc}") from exc
    if arr.size == 0:
        raise CliError("empty sample")
    if arr.min() < 0:
        raise CliError("sample contains negative entries")
    return arr


def _knot_table(est) -> str:
    lines = []
    if hasattr(est, "knots"):
        lines.append("position value")
        for p, v in zip(est.knots.tolist(), est.values.tolist()):
            lines.append(f"{p} {format_number(v)}")
    elif hasattr(est, "classes"):
        lines.append("coord class position value")
        for j, fitted in enumerate(est.classes):
            for key in sorted(fitted):
                step = fitted[key]
                for p, v in zip(step.knots.tolist(), step.values.tolist()):
                    key_txt = ",".join(str(c) for c in key) or "-"
                    lines.append(f"{j} {key_txt} {p} {format_number(v)}")
    else:
        x_hi = est.x_max() if hasattr(est, "x_max") else max(est.counts)
        lines.append("position value")
        for x in range(x_hi + 1):
            val = est(x) if est.dim == 1 else est([x] + [0] * (est.dim - 1))
            if est.dim == 1:
                lines.append(f"{x} {format_number(val)}")
            else:
                lines.append(f"{x} {format_number(float(val[0]))}")
    return "\n".join(lines) + "\n"


def cmd_fit(args) -> int:
    arr = _read_sample_file(Path(args.input))
    counts = tabulate(arr)
    method = args.method
    if method not in FIT_METHODS:
        raise CliError(f"unknown method {method!r}; choose from {sorted(FIT_METHODS)}")
    if method == "erm_negbinomial":
        if args.nb_r is None:
            raise CliError("erm_negbinomial requires --nb-r")
        est = erm_negbinomial(counts, r=args.nb_r)
    else:
        fitter = FIT_METHODS[method]
        try:
            est = fitter(counts)
        except ValueError as exc:
            raise CliError(str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_path = out / "estimator.json"
    dump_path.write_text(dump_estimator(est) + "\n")
    table_path = out / "knots.txt"
    table_path.write_text(_knot_table(est))
    # validate what was written before declaring success
    json.loads(dump_path.read_text())
    print(f"fitted {method} on n={counts.n} (dim {counts.dim}); wrote {dump_path} and {table_path}")
    return 0


def cmd_regret(args) -> int:
    try:
        doc = json.loads(Path(args.config).read_text())
    except OSError as exc:
        raise CliError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"config is not valid JSON: {exc}") from exc
    if args.seed is not None:
        doc["seed"] = args.seed
    config = parse_config(doc)
    out = Path(args.out if args.out is not None else doc.get("out", "."))
    out.mkdir(parents=True, exist_ok=True)
    report = run_experiment(config, threads=args.threads)
    (out / "resolved_config.json").write_text(
        json.dumps(config.echo(), indent=2) + "\n"
    )
    regret_path = out / "regret.csv"
    regret_path.write_text("\n".join(regret_csv_lines(report)) + "\n")
    (out / "timings.csv").write_text("\n".join(timings_csv_lines(report)) + "\n")
    (out / "aggregates.json").write_text(
        json.dumps(aggregates_document(report), indent=2) + "\n"
    )
    # validate: the CSV must re-parse to the expected cardinality
    lines = regret_path.read_text().strip().splitlines()
    expected = len(config.methods) * len(config.sample_sizes) * config.replications
    if len(lines) - 1 != expected:
        raise CliError(
            f"output validation failed: {len(lines) - 1} rows, expected {expected}"
        )
    for agg in report.aggregates:
        print(
            f"{agg['method']:>14s} n={agg['n']:<8d} regret "
            f"{agg['regret_mean']:.6g} +- {agg['regret_se']:.2g}"
        )
    print(f"wrote {regret_path}")
    return 0


def _bench_fit_times(prior, method, n, repeats, seed) -> float:
    times = []
    fitter = FIT_METHODS[method]
    for rep in range(repeats):
        _, obs = sample(prior, n, seed, "bench", method, n, rep)
        t0 = time.perf_counter()
        counts = tabulate(obs)
        fitter(counts)
        times.append((time.perf_counter() - t0) * 1000.0)
    return float(np.median(times))


def _bench_solvers(k, repeats, seed) -> dict:
    rng = stream_generator(seed, "bench-solver", k)
    v = rng.integers(0, 21, size=k)
    w = rng.integers(0, 21, size=k)
    w[(v == 0) & (w == 0)] = 1
    v[-1] = max(v[-1], 1)
    problem = IsotonicProblem(np.arange(k), v, w)
    out = {}
    for name, solver in (("solver_stack", solve_stack), ("solver_blockwise", solve_blockwise)):
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            solver(problem)
            times.append((time.perf_counter() - t0) * 1000.0)
        out[name] = float(np.median(times))
    return out


def cmd_bench(args) -> int:
    try:
        doc = json.loads(Path(args.config).read_text())
    except OSError as exc:
        raise CliError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"config is not valid JSON: {exc}") from exc
    seed = args.seed if args.seed is not None else doc.get("seed", 0)
    repeats = int(doc.get("repeats", 5))
    rows = []
    if "methods" in doc:
        for required in ("prior", "n"):
            if required not in doc:
                raise CliError(f"{required}: missing required key")
        prior = parse_prior(doc["prior"])
        for m in doc["methods"]:
            if m not in FIT_METHODS or m == "erm_negbinomial":
                raise CliError(f"methods: unknown method {m!r}")
            if m in ("robbins", "erm", "mono_robbins") and prior.dim != 1:
                raise CliError(f"methods: {m!r} requires a one-dimensional prior")
        ns = doc["n"] if isinstance(doc["n"], list) else [doc["n"]]
        for method in doc["methods"]:
            for n in ns:
                rows.append((method, int(n), _bench_fit_times(prior, method, int(n), repeats, seed)))
    if "solver_bench" in doc:
        sb = doc["solver_bench"]
        for k in sb.get("k", []):
            medians = _bench_solvers(int(k), int(sb.get("repeats", repeats)), seed)
            for name, ms in medians.items():
                rows.append((name, int(k), ms))
    if not rows:
        raise CliError("bench config requests nothing: give 'methods' or 'solver_bench'")
    rows.sort(key=lambda r: (r[0], r[1]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "bench.csv"
    lines = ["method,n,median_ms"] + [
        f"{m},{n},{format_number(ms)}" for m, n, ms in rows
    ]
    path.write_text("\n".join(lines) + "\n")
    for m, n, ms in rows:
        print(f"{m:>18s} n={n:<9d} median {ms:.3f} ms")
    print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="poisson-eb",
        description="Empirical-Bayes shrinkage for Poisson counts: fit rules, "
        "benchmark regret, measure runtimes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit an estimator to a sample file")
    p_fit.add_argument("--input", required=True, help="sample file: whitespace-separated "
                       "integers, or one comma-separated vector per line")
    p_fit.add_argument("--method", required=True, help="estimator name")
    p_fit.add_argument("--nb-r", type=float, default=None,
                       help="shape parameter for erm_negbinomial")
    p_fit.add_argument("--out", default=".", help="output directory")

    p_reg = sub.add_parser("regret", help="run the regret benchmark from a config")
    p_reg.add_argument("--config", required=True, help="JSON experiment config")
    p_reg.add_argument("--out", default=None, help="output directory (overrides config)")
    p_reg.add_argument("--seed", type=int, default=None, help="override the master seed")
    p_reg.add_argument("--threads", type=int, default=1, help="worker thread cap")

    p_bench = sub.add_parser("bench", help="measure fit / solver timings")
    p_bench.add_argument("--config", required=True, help="JSON bench config")
    p_bench.add_argument("--out", default=".", help="output directory")
    p_bench.add_argument("--seed", type=int, default=None, help="override the seed")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"fit": cmd_fit, "regret": cmd_regret, "bench": cmd_bench}
    try:
        return handlers[args.command](args)
    except (CliError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
