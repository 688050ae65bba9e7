"""Exact regret evaluation and the Monte-Carlo benchmark runner.

An estimator's excess risk over the posterior-mean oracle equals
sum_x p(x) * ||f_hat(x) - f*(x)||^2 because the oracle is the posterior
mean (orthogonality of squared loss); scoring therefore needs no
Monte-Carlo noise in the latent direction, only the tabulated mixture.

``run_experiment`` draws training samples on derived Philox streams,
fits the configured methods, scores each fit against the oracle table and
aggregates deterministically, independent of thread count and execution
order.  Regret output files contain no wall-clock data; measured fit
times go to a separate timings file.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .estimators import (
    MultiEstimator,
    RobbinsEstimator,
    erm_poisson,
    erm_poisson_multi,
    monotone_robbins,
    robbins,
    robbins_multi,
    tabulate,
)
from .mixtures import (
    Discrete,
    DiscretePrior,
    ExponentialRate,
    MixtureTable,
    Product,
    TriangleUniform,
    UniformInterval,
    bayes_estimator,
    discretize,
    sample,
    stream_fingerprint,
)

__all__ = [
    "ExperimentConfig",
    "RegretRow",
    "RegretReport",
    "parse_prior",
    "parse_config",
    "conditional_regret",
    "regret_tail_bound",
    "mmse",
    "run_experiment",
    "format_number",
    "regret_csv_lines",
    "timings_csv_lines",
    "aggregates_document",
]

METHODS_1D = ("robbins", "erm", "mono_robbins")
METHODS_ANY = ("robbins_multi", "erm_multi")

_FITTERS = {
    "robbins": robbins,
    "erm": erm_poisson,
    "mono_robbins": monotone_robbins,
    "robbins_multi": robbins_multi,
    "erm_multi": erm_poisson_multi,
}


class ConfigError(ValueError):
    """An experiment configuration violates the documented schema."""


@dataclass(frozen=True)
class ExperimentConfig:
    prior: object
    prior_spec: dict
    dim: int
    sample_sizes: tuple
    methods: tuple
    replications: int
    seed: int
    tail_tol: float = 1e-12
    paired: bool = True
    quad_tol: float = 1e-6

    def echo(self) -> dict:
        return {
            "prior": self.prior_spec,
            "dim": self.dim,
            "n": list(self.sample_sizes),
            "methods": list(self.methods),
            "replications": self.replications,
            "seed": self.seed,
            "tail_tol": self.tail_tol,
            "paired": self.paired,
            "quad_tol": self.quad_tol,
        }


def parse_prior(spec: dict, key: str = "prior"):
    """Build a prior from its JSON specification; errors name the bad key."""
    if not isinstance(spec, dict):
        raise ConfigError(f"{key}: must be an object")
    kind = spec.get("type")
    if kind is None:
        raise ConfigError(f"{key}.type: missing")
    try:
        if kind == "discrete":
            if "atoms" not in spec or "probs" not in spec:
                raise ConfigError(f"{key}.atoms/probs: missing")
            return Discrete(np.asarray(spec["atoms"], dtype=float),
                            np.asarray(spec["probs"], dtype=float))
        if kind == "uniform":
            return UniformInterval(float(spec["low"]), float(spec["high"]))
        if kind == "exponential":
            if ("rate" in spec) == ("mean" in spec):
                raise ConfigError(f"{key}.rate: give exactly one of 'rate' or 'mean'")
            rate = float(spec["rate"]) if "rate" in spec else 1.0 / float(spec["mean"])
            return ExponentialRate(rate)
        if kind == "triangle":
            if "vertices" not in spec:
                raise ConfigError(f"{key}.vertices: missing")
            return TriangleUniform(np.asarray(spec["vertices"], dtype=float))
        if kind == "product":
            comps = spec.get("components")
            if not comps:
                raise ConfigError(f"{key}.components: missing or empty")
            return Product(tuple(
                parse_prior(c, f"{key}.components[{i}]") for i, c in enumerate(comps)
            ))
    except ConfigError:
        raise
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"{key}: {exc}") from exc
    raise ConfigError(f"{key}.type: unknown prior type {kind!r}")


def parse_config(doc: dict) -> ExperimentConfig:
    """Validate an experiment configuration document."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    for required in ("prior", "n", "methods", "replications", "seed"):
        if required not in doc:
            raise ConfigError(f"{required}: missing required key")
    prior = parse_prior(doc["prior"])
    dim = prior.dim
    ns = doc["n"] if isinstance(doc["n"], (list, tuple)) else [doc["n"]]
    sizes = []
    for i, n in enumerate(ns):
        if int(n) != n or int(n) < 1:
            raise ConfigError(f"n[{i}]: sample sizes must be positive integers")
        sizes.append(int(n))
    methods = doc["methods"]
    if not isinstance(methods, (list, tuple)) or not methods:
        raise ConfigError("methods: must be a non-empty list")
    for m in methods:
        if m not in _FITTERS:
            raise ConfigError(f"methods: unknown method {m!r}")
        if m in METHODS_1D and dim != 1:
            raise ConfigError(f"methods: {m!r} requires a one-dimensional prior, got dim={dim}")
    reps = doc["replications"]
    if int(reps) != reps or int(reps) < 1:
        raise ConfigError("replications: must be a positive integer")
    seed = doc["seed"]
    if int(seed) != seed or int(seed) < 0:
        raise ConfigError("seed: must be a non-negative integer")
    tail_tol = float(doc.get("tail_tol", 1e-12))
    if not (0 < tail_tol <= 1e-6):
        raise ConfigError("tail_tol: must lie in (0, 1e-6]")
    quad_tol = float(doc.get("quad_tol", 1e-6))
    paired = bool(doc.get("paired", True))
    return ExperimentConfig(
        prior=prior,
        prior_spec=doc["prior"],
        dim=dim,
        sample_sizes=tuple(sizes),
        methods=tuple(methods),
        replications=int(reps),
        seed=int(seed),
        tail_tol=tail_tol,
        paired=paired,
        quad_tol=quad_tol,
    )


# --- scoring -----------------------------------------------------------------


def _grid_values(estimator, table: MixtureTable) -> list:
    """Evaluate an estimator coordinate-wise on the table's core box."""
    d = table.dim
    if d == 1:
        xs = np.arange(table.shape[0])
        if hasattr(estimator, "evaluate_batch"):
            vals = estimator.evaluate_batch(xs)
        else:
            vals = np.array([estimator(int(x)) for x in xs])
        return [np.asarray(vals, dtype=float)]
    if isinstance(estimator, MultiEstimator):
        out = []
        for j in range(d):
            arr = np.zeros(table.shape)
            line_points = np.arange(table.shape[j])
            other_axes = [a for a in range(d) if a != j]
            for key, step in estimator.classes[j].items():
                if any(key[i] >= table.shape[other_axes[i]] for i in range(d - 1)):
                    continue  # class line lies outside the scored box
                idx = list(key[:j]) + [slice(None)] + list(key[j:])
                arr[tuple(idx)] = step.evaluate_batch(line_points)
            out.append(arr)
        return out
    if isinstance(estimator, RobbinsEstimator):
        ext = tuple(s + 1 for s in table.shape)
        dense = np.zeros(ext)
        for key, c in estimator.counts.items():
            if all(k < e for k, e in zip(key, ext)):
                dense[key] = c
        core = tuple(slice(0, s) for s in table.shape)
        denom = dense[core] + 1.0
        out = []
        for j in range(d):
            shifted = dense[tuple(
                slice(1, table.shape[a] + 1) if a == j else slice(0, table.shape[a])
                for a in range(d)
            )]
            shape = [1] * d
            shape[j] = table.shape[j]
            factor = np.arange(1, table.shape[j] + 1).reshape(shape)
            out.append(factor * shifted / denom)
        return out
    vals = np.array([estimator(idx) for idx in np.ndindex(table.shape)])
    return [vals[:, j].reshape(table.shape) for j in range(d)]


def _score_grid(estimator, table: MixtureTable):
    if getattr(estimator, "dim", None) != table.dim:
        raise ValueError(
            f"dimension mismatch: estimator dim {getattr(estimator, 'dim', None)}, "
            f"table dim {table.dim}"
        )
    p = table.core_pmf()
    grid = _grid_values(estimator, table)
    regret = 0.0
    worst_shell = 0.0
    for j in range(table.dim):
        diff = (grid[j] - table.bayes[j]) ** 2
        regret += float(np.sum(p * diff))
        for axis in range(table.dim):
            shell = diff[tuple(
                -1 if a == axis else slice(None) for a in range(table.dim)
            )]
            worst_shell = max(worst_shell, float(np.max(shell)))
    tail_mass = max(0.0, 1.0 - table.captured_mass)
    return regret, 10.0 * tail_mass * worst_shell


def conditional_regret(estimator, table: MixtureTable) -> float:
    """Excess risk of the estimator over the oracle, given the prior's table.

    Computed as sum_x p(x) * ||f_hat(x) - f*(x)||^2 over the truncated box;
    the residual beyond the box is bounded by :func:`regret_tail_bound`.
    """
    return _score_grid(estimator, table)[0]


def regret_tail_bound(estimator, table: MixtureTable) -> float:
    """Conservative cap on the regret mass outside the tabulated box.

    Ten times the worst squared discrepancy on the box's outer shell,
    scaled by the uncaptured probability mass.
    """
    return _score_grid(estimator, table)[1]


def mmse(table: MixtureTable) -> float:
    """Bayes risk of the oracle: sum_j E[theta_j^2] - sum_x p(x) f*_j(x)^2."""
    p = table.core_pmf()
    total = 0.0
    for j in range(table.dim):
        total += float(table.theta_second_moments[j]) - float(np.sum(p * table.bayes[j] ** 2))
    return total


# --- benchmark runner ---------------------------------------------------------


@dataclass(frozen=True)
class RegretRow:
    method: str
    n: int
    dim: int
    rep: int
    regret: float
    fit_ms: float
    seed: int


@dataclass
class RegretReport:
    config: dict
    rows: list
    aggregates: list
    residual_bound_max: float
    total_runtime_s: float = field(default=0.0)


def _run_cell(config: ExperimentConfig, table: MixtureTable, n: int, rep: int) -> list:
    rows = []
    bounds = []
    for method in config.methods:
        try:
            ctx = (n, rep) if config.paired else (method, n, rep)
            _, obs = sample(config.prior, n, config.seed, *ctx)
            cell_seed = stream_fingerprint(config.seed, "sample", *ctx)
            t0 = time.perf_counter()
            counts = tabulate(obs)
            est = _FITTERS[method](counts)
            fit_ms = (time.perf_counter() - t0) * 1000.0
            reg, bound = _score_grid(est, table)
        except Exception as exc:
            raise RuntimeError(
                f"cell failed at (method={method}, n={n}, rep={rep}): {exc}"
            ) from exc
        rows.append(RegretRow(method, n, config.dim, rep, reg, fit_ms, cell_seed))
        bounds.append(bound)
    return rows, bounds


def run_experiment(config: ExperimentConfig, threads: int = 1) -> RegretReport:
    """Fit and score every (method, n, replication) cell of the config.

    With ``paired`` (the default), all methods within a cell share the
    same training sample.  Cells run on a thread pool; rows and aggregates
    are assembled in config order, so the report does not depend on the
    number of threads.
    """
    start = time.perf_counter()
    dp = discretize(config.prior, tol=config.quad_tol)
    table = bayes_estimator(dp, tail_tol=config.tail_tol)
    cells = [(n, rep) for n in config.sample_sizes for rep in range(config.replications)]
    results: dict = {}
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = {
                (n, rep): pool.submit(_run_cell, config, table, n, rep)
                for n, rep in cells
            }
            for key, fut in futures.items():
                results[key] = fut.result()
    else:
        for n, rep in cells:
            results[(n, rep)] = _run_cell(config, table, n, rep)

    by_cell = {}
    residual_max = 0.0
    for (n, rep), (rows, bounds) in results.items():
        residual_max = max(residual_max, max(bounds))
        for row in rows:
            by_cell[(row.method, n, rep)] = row
    ordered = [
        by_cell[(method, n, rep)]
        for method in config.methods
        for n in config.sample_sizes
        for rep in range(config.replications)
    ]
    aggregates = []
    for method in config.methods:
        for n in config.sample_sizes:
            vals = np.array([
                r.regret for r in ordered if r.method == method and r.n == n
            ])
            se = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0
            aggregates.append({
                "method": method,
                "n": n,
                "d": config.dim,
                "replications": int(vals.size),
                "regret_mean": float(vals.mean()),
                "regret_se": se,
            })
    return RegretReport(
        config=config.echo(),
        rows=ordered,
        aggregates=aggregates,
        residual_bound_max=residual_max,
        total_runtime_s=time.perf_counter() - start,
    )


# --- output formatting ---------------------------------------------------------


def format_number(x) -> str:
    """Shortest decimal that round-trips to the same float (repr semantics)."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def regret_csv_lines(report: RegretReport) -> list:
    """Deterministic regret rows; the fit_ms column is left empty because
    wall-clock data lives in the timings file only."""
    lines = ["method,n,d,rep,regret,fit_ms,seed"]
    for r in report.rows:
        lines.append(
            f"{r.method},{r.n},{r.dim},{r.rep},{format_number(r.regret)},,{r.seed}"
        )
    return lines


def timings_csv_lines(report: RegretReport) -> list:
    lines = ["method,n,d,rep,fit_ms"]
    for r in report.rows:
        lines.append(f"{r.method},{r.n},{r.dim},{r.rep},{format_number(r.fit_ms)}")
    return lines


def aggregates_document(report: RegretReport) -> dict:
    return {
        "config": report.config,
        "cells": report.aggregates,
        "residual_bound_max": report.residual_bound_max,
    }
