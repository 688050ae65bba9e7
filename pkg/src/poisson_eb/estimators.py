"""Empirical-Bayes decision rules built from observed counts.

Implements the count-ratio rule (``robbins``), monotone least-squares fits
of the posterior-mean identity for Poisson data in one or several dimensions
(``erm_poisson``, ``erm_poisson_multi``), the monotone projection of the
count-ratio rule (``monotone_robbins``), and analogous monotone fits for
geometric and negative-binomial observation models.

All constructors are pure functions of an :class:`EmpiricalCounts`; the
returned estimators are immutable and cheap to evaluate anywhere on the
non-negative integer lattice.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from .isotonic import IsotonicProblem, solve_stack

__all__ = [
    "EmpiricalCounts",
    "StepEstimator",
    "RobbinsEstimator",
    "MultiEstimator",
    "tabulate",
    "robbins",
    "robbins_multi",
    "erm_poisson",
    "erm_poisson_multi",
    "monotone_robbins",
    "erm_geometric",
    "erm_negbinomial",
    "poisson_empirical_risk",
    "poisson_empirical_risk_multi",
    "dump_estimator",
    "load_estimator",
]


@dataclass(frozen=True)
class EmpiricalCounts:
    """Sparse tally of lattice observations.

    ``counts`` maps int (dim 1) or tuple of ints (dim >= 2) to a positive
    multiplicity; ``n`` is the total sample size.
    """

    dim: int
    counts: Mapping
    n: int

    def count(self, x) -> int:
        return self.counts.get(x, 0)

    def x_max(self) -> int:
        """Largest observed value (coordinate-wise max for dim >= 2)."""
        if self.dim == 1:
            return max(self.counts)
        return max(max(key) for key in self.counts)


def tabulate(sample) -> EmpiricalCounts:
    """Tally a sample of lattice points into an EmpiricalCounts.

    Accepts a sequence of ints (dim 1), a sequence of equal-length tuples,
    or a numpy array of shape (n,) or (n, d).
    """
    try:
        arr = np.asarray(sample)
    except ValueError as exc:
        raise ValueError("mixed dimensions in sample") from exc
    if arr.size == 0:
        raise ValueError("empty sample")
    if arr.ndim == 1 and arr.dtype == object:
        try:
            arr = np.asarray([tuple(x) if np.iterable(x) else (x,) for x in sample])
        except ValueError as exc:
            raise ValueError("mixed dimensions in sample") from exc
        if arr.dtype == object:
            raise ValueError("mixed dimensions in sample")
    if arr.ndim not in (1, 2):
        raise ValueError("sample must be a sequence of scalars or fixed-length vectors")
    if not np.issubdtype(arr.dtype, np.integer):
        try:
            conv = arr.astype(np.int64)
        except (ValueError, TypeError) as exc:
            raise ValueError("sample entries must be integers") from exc
        if not np.array_equal(conv, arr):
            raise ValueError("sample entries must be integers")
        arr = conv
    if arr.min() < 0:
        raise ValueError("sample entries must be non-negative")
    if arr.ndim == 1:
        uniq, cnt = np.unique(arr, return_counts=True)
        counts = {int(u): int(c) for u, c in zip(uniq, cnt)}
        return EmpiricalCounts(dim=1, counts=counts, n=int(arr.size))
    d = arr.shape[1]
    if d == 0:
        raise ValueError("sample vectors must have at least one coordinate")
    if d == 1:
        return tabulate(arr[:, 0])
    uniq, cnt = np.unique(arr, axis=0, return_counts=True)
    counts = {tuple(int(c) for c in row): int(m) for row, m in zip(uniq, cnt)}
    return EmpiricalCounts(dim=d, counts=counts, n=int(arr.shape[0]))


@dataclass(frozen=True, eq=False)
class StepEstimator:
    """Monotone piecewise-constant rule on the non-negative integers.

    Evaluation takes the value of the nearest knot at or below x,
    ``below_min_value`` below the first knot (this covers x = -1), and the
    last knot's value above the last knot.
    """

    knots: np.ndarray
    values: np.ndarray
    below_min_value: float = 0.0
    direction: str = "nondecreasing"
    method: str = "erm"
    extra: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return 1

    def __call__(self, x: int) -> float:
        if x < self.knots[0]:
            return self.below_min_value
        idx = int(np.searchsorted(self.knots, x, side="right")) - 1
        return float(self.values[idx])

    def evaluate_batch(self, xs) -> np.ndarray:
        xs = np.asarray(xs)
        idx = np.searchsorted(self.knots, xs, side="right") - 1
        out = np.where(idx >= 0, self.values[np.clip(idx, 0, None)], self.below_min_value)
        return out.astype(float)


@dataclass(frozen=True, eq=False)
class RobbinsEstimator:
    """Closed-form count-ratio rule, evaluable at any lattice point.

    In one dimension f(x) = (x+1) N(x+1) / (N(x)+1); in d dimensions the
    j-th coordinate is (x_j+1) N(x+e_j) / (N(x)+1).  Not monotone in
    general, but always non-negative.
    """

    dim: int
    counts: Mapping
    n: int
    method: str = "robbins"

    def __call__(self, x):
        if self.dim == 1:
            x = int(x)
            return (x + 1) * self.counts.get(x + 1, 0) / (self.counts.get(x, 0) + 1)
        key = tuple(int(c) for c in x)
        denom = self.counts.get(key, 0) + 1
        out = np.empty(self.dim, dtype=float)
        for j in range(self.dim):
            up = key[:j] + (key[j] + 1,) + key[j + 1 :]
            out[j] = (key[j] + 1) * self.counts.get(up, 0) / denom
        return out

    def evaluate_batch(self, xs) -> np.ndarray:
        if self.dim == 1:
            xs = np.asarray(xs, dtype=np.int64)
            get = self.counts.get
            return np.array([(x + 1) * get(x + 1, 0) / (get(x, 0) + 1) for x in xs.tolist()])
        return np.array([self(x) for x in xs])


@dataclass(frozen=True, eq=False)
class MultiEstimator:
    """Coordinate-wise monotone rule assembled from per-line step fits.

    For coordinate j, lattice lines that share all other coordinates form a
    class; each populated class carries a :class:`StepEstimator` along j.
    Points whose class holds no data evaluate to 0.
    """

    dim: int
    classes: tuple  # one dict per coordinate: {key tuple -> StepEstimator}
    method: str = "erm_multi"

    def coordinate(self, j: int, x) -> float:
        key = tuple(int(c) for i, c in enumerate(x) if i != j)
        est = self.classes[j].get(key)
        if est is None:
            return 0.0
        return est(int(x[j]))

    def __call__(self, x):
        if self.dim == 1:
            est = self.classes[0].get(())
            return float(est(int(x))) if est is not None else 0.0
        return np.array([self.coordinate(j, x) for j in range(self.dim)])

    def evaluate_batch(self, xs) -> np.ndarray:
        return np.array([self(x) for x in xs])


def _require_dim(counts: EmpiricalCounts, d: int, op: str) -> None:
    if counts.dim != d:
        raise ValueError(f"{op} requires dim={d} counts, got dim={counts.dim}")


def _compress_knots(positions, values) -> tuple[np.ndarray, np.ndarray]:
    """Keep only knots where the value changes; evaluation is unaffected."""
    keep = [0]
    for i in range(1, len(values)):
        if values[i] != values[keep[-1]]:
            keep.append(i)
    pos = np.asarray([positions[i] for i in keep], dtype=np.int64)
    val = np.asarray([values[i] for i in keep], dtype=float)
    return pos, val


def _poisson_positions(counts1d: Mapping) -> list[int]:
    """Positions a >= 0 with N(a) > 0 or N(a+1) > 0."""
    support = set(counts1d)
    return sorted(support | {a - 1 for a in support if a >= 1})


def _fit_step(positions, v, w, direction, method, below_min=0.0, extra=None) -> StepEstimator:
    problem = IsotonicProblem(positions, v, w, direction=direction)
    sol = solve_stack(problem)
    pos, val = _compress_knots(problem.positions, sol.position_values)
    return StepEstimator(
        knots=pos,
        values=val,
        below_min_value=float(below_min),
        direction=direction,
        method=method,
        extra=dict(extra or {}),
    )


def robbins(counts: EmpiricalCounts) -> RobbinsEstimator:
    """Count-ratio rule f(x) = (x+1) N(x+1) / (N(x)+1) for dim-1 counts."""
    _require_dim(counts, 1, "robbins")
    return RobbinsEstimator(dim=1, counts=dict(counts.counts), n=counts.n, method="robbins")


def robbins_multi(counts: EmpiricalCounts) -> RobbinsEstimator:
    """Coordinate-wise count-ratio rule for counts of any dimension."""
    if counts.dim == 1:
        return robbins(counts)
    return RobbinsEstimator(
        dim=counts.dim, counts=dict(counts.counts), n=counts.n, method="robbins_multi"
    )


def erm_poisson(counts: EmpiricalCounts) -> StepEstimator:
    """Monotone least-squares fit of the Poisson posterior-mean criterion.

    Minimizes the empirical criterion E_hat[f(X)^2 - 2 X f(X-1)] over
    nondecreasing f; the fit lives on the positions where either N(a) or
    N(a+1) is positive, extends as 0 below the first position and stays
    constant above the last.
    """
    _require_dim(counts, 1, "erm_poisson")
    pos = _poisson_positions(counts.counts)
    get = counts.counts.get
    v = [get(a, 0) for a in pos]
    w = [(a + 1) * get(a + 1, 0) for a in pos]
    return _fit_step(pos, v, w, "nondecreasing", "erm")


def monotone_robbins(counts: EmpiricalCounts) -> StepEstimator:
    """Monotone projection of the count-ratio rule.

    Weighted isotonic regression of the rule's values at the observed
    points, with quadratic weight N(x) at each; same extension rules as
    :func:`erm_poisson`.
    """
    _require_dim(counts, 1, "monotone_robbins")
    rob = robbins(counts)
    pos = sorted(counts.counts)
    v = [counts.counts[x] for x in pos]
    w = [counts.counts[x] * rob(x) for x in pos]
    return _fit_step(pos, v, w, "nondecreasing", "mono_robbins")


def erm_poisson_multi(counts: EmpiricalCounts) -> MultiEstimator:
    """Coordinate-wise monotone fit for d-dimensional Poisson counts.

    The joint criterion separates across coordinates and lattice lines, so
    each populated line (all coordinates but j fixed) is fitted with the
    one-dimensional construction on its induced counts.
    """
    d = counts.dim
    classes = []
    for j in range(d):
        lines: dict[tuple, dict[int, int]] = {}
        if d == 1:
            lines[()] = dict(counts.counts)
        else:
            for key, c in counts.counts.items():
                line_key = key[:j] + key[j + 1 :]
                lines.setdefault(line_key, {})[key[j]] = c
        fitted = {}
        for line_key in sorted(lines):
            line_counts = lines[line_key]
            pos = _poisson_positions(line_counts)
            get = line_counts.get
            v = [get(a, 0) for a in pos]
            w = [(a + 1) * get(a + 1, 0) for a in pos]
            fitted[line_key] = _fit_step(pos, v, w, "nondecreasing", "erm")
        classes.append(fitted)
    return MultiEstimator(dim=d, classes=tuple(classes), method="erm_multi")


def erm_geometric(counts: EmpiricalCounts) -> StepEstimator:
    """Monotone fit for geometric observations.

    Minimizes E_hat[f(X)^2 - 2 f(X) + 2 f(X-1) 1{X>0}] over nonincreasing
    f; per position, v(x) = N(x) and w(x) = N(x) - N(x+1) (possibly
    negative).  The estimand is a probability, so values are clamped to
    [0, 1]; the extension below the first position is constant to preserve
    monotonicity.
    """
    _require_dim(counts, 1, "erm_geometric")
    pos = _poisson_positions(counts.counts)
    get = counts.counts.get
    v = [get(a, 0) for a in pos]
    w = [get(a, 0) - get(a + 1, 0) for a in pos]
    problem = IsotonicProblem(pos, v, w, direction="nonincreasing")
    sol = solve_stack(problem)
    clamped = np.clip(sol.position_values, 0.0, 1.0)
    kpos, kval = _compress_knots(problem.positions, clamped)
    return StepEstimator(
        knots=kpos,
        values=kval,
        below_min_value=float(kval[0]),
        direction="nonincreasing",
        method="erm_geometric",
    )


def erm_negbinomial(counts: EmpiricalCounts, r: float) -> StepEstimator:
    """Monotone fit for negative-binomial observations with known shape r.

    Minimizes E_hat[f(X)^2 - 2 (X+1)/(X+r) f(X-1) 1{X>0}] over
    nondecreasing f; per position, v(x) = N(x) and
    w(x) = (x+2)/(x+1+r) * N(x+1) >= 0.
    """
    _require_dim(counts, 1, "erm_negbinomial")
    r = float(r)
    if r <= 0:
        raise ValueError(f"shape parameter r must be positive, got {r}")
    pos = _poisson_positions(counts.counts)
    get = counts.counts.get
    v = [get(a, 0) for a in pos]
    w = [(a + 2) / (a + 1 + r) * get(a + 1, 0) for a in pos]
    return _fit_step(pos, v, w, "nondecreasing", "erm_negbinomial", extra={"r": r})


def poisson_empirical_risk(f: Callable[[int], float], counts: EmpiricalCounts) -> float:
    """Training criterion E_hat[f(X)^2 - 2 X f(X-1)], with f(-1) = 0."""
    _require_dim(counts, 1, "poisson_empirical_risk")
    total = 0.0
    for x, c in counts.counts.items():
        fx = f(x)
        fprev = f(x - 1) if x >= 1 else 0.0
        total += c * (fx * fx - 2.0 * x * fprev)
    return total / counts.n


def poisson_empirical_risk_multi(f, counts: EmpiricalCounts) -> float:
    """Training criterion E_hat[||f(X)||^2 - 2 sum_j X_j f_j(X - e_j)].

    ``f`` maps a lattice point to a length-d vector; f_j(x - e_j) is taken
    as 0 when x_j = 0.
    """
    d = counts.dim
    total = 0.0
    for key, c in counts.counts.items():
        key = (key,) if d == 1 else key
        fx = np.atleast_1d(np.asarray(f(key if d > 1 else key[0]), dtype=float))
        term = float(fx @ fx)
        for j in range(d):
            if key[j] >= 1:
                prev = key[:j] + (key[j] - 1,) + key[j + 1 :]
                fj = f(prev if d > 1 else prev[0])
                fj = float(np.atleast_1d(np.asarray(fj, dtype=float))[j])
                term -= 2.0 * key[j] * fj
        total += c * term
    return total / counts.n


# --- serialization ---------------------------------------------------------


def _step_to_dict(est: StepEstimator) -> dict:
    doc = {
        "dim": 1,
        "method": est.method,
        "direction": est.direction,
        "below_min_value": est.below_min_value,
        "knots": [
            {"position": int(p), "value": float(v)}
            for p, v in zip(est.knots.tolist(), est.values.tolist())
        ],
    }
    doc.update(est.extra)
    return doc


def _step_from_dict(doc: dict) -> StepEstimator:
    knots = np.asarray([k["position"] for k in doc["knots"]], dtype=np.int64)
    values = np.asarray([k["value"] for k in doc["knots"]], dtype=float)
    extra = {k: v for k, v in doc.items() if k not in
             ("dim", "method", "direction", "below_min_value", "knots")}
    return StepEstimator(
        knots=knots,
        values=values,
        below_min_value=float(doc["below_min_value"]),
        direction=doc["direction"],
        method=doc["method"],
        extra=extra,
    )


def estimator_to_dict(est) -> dict:
    """JSON-ready document for any estimator; see :func:`dump_estimator`."""
    if isinstance(est, StepEstimator):
        return _step_to_dict(est)
    if isinstance(est, RobbinsEstimator):
        if est.dim == 1:
            entries = [{"x": int(x), "n": int(c)} for x, c in sorted(est.counts.items())]
        else:
            entries = [
                {"x": [int(c) for c in key], "n": int(cnt)}
                for key, cnt in sorted(est.counts.items())
            ]
        return {"dim": est.dim, "method": est.method, "n": est.n, "counts": entries}
    if isinstance(est, MultiEstimator):
        classes = []
        for j, fitted in enumerate(est.classes):
            for key in sorted(fitted):
                sub = _step_to_dict(fitted[key])
                classes.append(
                    {
                        "coord": j,
                        "key": [int(c) for c in key],
                        "below_min_value": sub["below_min_value"],
                        "knots": sub["knots"],
                    }
                )
        return {"dim": est.dim, "method": est.method, "classes": classes}
    raise TypeError(f"cannot serialize estimator of type {type(est).__name__}")


def estimator_from_dict(doc: dict):
    method = doc["method"]
    if method in ("robbins", "robbins_multi"):
        if doc["dim"] == 1:
            counts = {int(e["x"]): int(e["n"]) for e in doc["counts"]}
        else:
            counts = {tuple(int(c) for c in e["x"]): int(e["n"]) for e in doc["counts"]}
        return RobbinsEstimator(dim=doc["dim"], counts=counts, n=doc["n"], method=method)
    if method == "erm_multi":
        d = doc["dim"]
        classes: list[dict] = [dict() for _ in range(d)]
        for entry in doc["classes"]:
            sub = {
                "dim": 1,
                "method": "erm",
                "direction": "nondecreasing",
                "below_min_value": entry["below_min_value"],
                "knots": entry["knots"],
            }
            classes[entry["coord"]][tuple(entry["key"])] = _step_from_dict(sub)
        return MultiEstimator(dim=d, classes=tuple(classes), method=method)
    return _step_from_dict(doc)


def dump_estimator(est) -> str:
    """Serialize an estimator to a JSON string with round-trippable floats."""
    return json.dumps(estimator_to_dict(est), indent=2, sort_keys=False)


def load_estimator(text: str):
    """Inverse of :func:`dump_estimator`."""
    return estimator_from_dict(json.loads(text))
