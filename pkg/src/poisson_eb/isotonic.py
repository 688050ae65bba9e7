"""Weighted monotone quadratic minimization.

Solves problems of the form

    minimize  sum_i  v_i * f(a_i)**2 - 2 * w_i * f(a_i)

over functions f that are monotone across the ordered positions a_1 < ... < a_k,
with v_i >= 0 and real w_i.  This is weighted isotonic regression on the
targets w_i / v_i, except that zero quadratic weights are permitted and are
resolved by pooling rather than dropped.

Three interchangeable solvers are provided:

* :func:`solve_blockwise` -- greedy left-to-right block construction,
  O(k^2) worst case;
* :func:`solve_stack` -- single-pass stack merge, O(k) after input ordering,
  guaranteed to produce the identical block partition and values;
* :func:`solve_oracle` -- exhaustive enumeration of all contiguous
  partitions, for cross-checking on small inputs (k <= 12).

Ratio comparisons are done by cross-multiplication (never division), so
blocks with zero quadratic mass need no sentinel value and integer inputs
are handled exactly in arbitrary-precision arithmetic.
"""

from __future__ import annotations

import math
import numbers
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "IsotonicProblem",
    "BlockSolution",
    "IsotonicValidationError",
    "OracleSizeError",
    "solve_blockwise",
    "solve_stack",
    "solve_oracle",
    "objective_value",
]


class IsotonicValidationError(ValueError):
    """A problem instance violates one of its structural invariants."""


class OracleSizeError(ValueError):
    """solve_oracle was asked for more positions than it can enumerate."""


def _weights_to_list(seq, name: str) -> list:
    """Weight sequence -> plain Python numbers.

    Integer inputs become Python ints (exact, arbitrary precision);
    everything else becomes float.
    """
    arr = np.asarray(seq)
    if arr.ndim != 1:
        raise IsotonicValidationError(f"{name} must be one-dimensional")
    if np.issubdtype(arr.dtype, np.integer):
        return arr.tolist()
    if np.issubdtype(arr.dtype, np.floating):
        if not np.all(np.isfinite(arr)):
            raise IsotonicValidationError(f"{name}: entries must be finite")
        return arr.astype(float).tolist()
    # object dtype: python ints (possibly big) or floats
    out = []
    for x in arr.tolist():
        if isinstance(x, numbers.Integral):
            out.append(int(x))
        else:
            x = float(x)
            if not math.isfinite(x):
                raise IsotonicValidationError(f"{name}: entries must be finite")
            out.append(x)
    return out


def _positions_to_list(seq) -> list[int]:
    arr = np.asarray(seq)
    if arr.ndim != 1:
        raise IsotonicValidationError("positions must be one-dimensional")
    if arr.size == 0:
        raise IsotonicValidationError("length mismatch: need at least one position")
    if not np.issubdtype(arr.dtype, np.integer):
        try:
            conv = arr.astype(np.int64)
        except (ValueError, TypeError, OverflowError) as exc:
            raise IsotonicValidationError("positions must be integers") from exc
        if not np.array_equal(conv, arr):
            raise IsotonicValidationError("positions must be integers")
        arr = conv
    if arr[0] < 0:
        raise IsotonicValidationError("positions must be non-negative integers")
    if arr.size > 1 and not np.all(np.diff(arr) > 0):
        raise IsotonicValidationError("unsorted positions: must be strictly increasing")
    return arr.tolist()


@dataclass
class IsotonicProblem:
    """Positions with quadratic weights v and linear coefficients w.

    ``direction`` selects whether the fitted function must be nondecreasing
    or nonincreasing across the positions.
    """

    positions: Sequence[int]
    quad_weights: Sequence[float]
    lin_coeffs: Sequence[float]
    direction: str = "nondecreasing"

    def __post_init__(self):
        if self.direction not in ("nondecreasing", "nonincreasing"):
            raise IsotonicValidationError(
                f"direction must be 'nondecreasing' or 'nonincreasing', got {self.direction!r}"
            )
        pos = _positions_to_list(self.positions)
        v = _weights_to_list(self.quad_weights, "quad_weights")
        w = _weights_to_list(self.lin_coeffs, "lin_coeffs")
        if len(pos) != len(v) or len(pos) != len(w):
            raise IsotonicValidationError(
                "length mismatch: positions, quad_weights and lin_coeffs must "
                f"have equal length (got {len(pos)}, {len(v)}, {len(w)})"
            )
        if min(v) < 0:
            raise IsotonicValidationError("quad_weights must be non-negative")
        self.positions = pos
        self.quad_weights = v
        self.lin_coeffs = w
        self._check_well_posed()

    @property
    def k(self) -> int:
        return len(self.positions)

    def _check_well_posed(self) -> None:
        """Reject dead positions and instances with no finite minimum.

        In solve order, a zero-v run at the open end (trailing for
        nondecreasing, leading for nonincreasing) whose cumulative linear
        mass pulls outward makes the objective unbounded; a zero-v run at
        the anchored end is unbounded with the opposite sign.
        """
        v, w = self.quad_weights, self.lin_coeffs
        for i, (vi, wi) in enumerate(zip(v, w)):
            if vi == 0 and wi == 0:
                raise IsotonicValidationError(
                    f"dead position index {i}: max(v, |w|) must be positive"
                )
        if self.direction == "nonincreasing":
            v, w = v[::-1], w[::-1]
        # anchored end: every prefix inside the leading zero-v run needs
        # cumulative w >= 0
        acc = 0
        for vi, wi in zip(v, w):
            if vi > 0:
                break
            acc += wi
            if acc < 0:
                raise IsotonicValidationError(
                    "unbounded objective: leading zero-v run with negative linear mass"
                )
        # open end: every suffix inside the trailing zero-v run needs
        # cumulative w <= 0
        acc = 0
        for vi, wi in zip(reversed(v), reversed(w)):
            if vi > 0:
                break
            acc += wi
            if acc > 0:
                raise IsotonicValidationError(
                    "all-zero trailing v: objective unbounded at the open end"
                )


@dataclass
class BlockSolution:
    """Contiguous blocks (inclusive index ranges) with one value per block."""

    blocks: list[tuple[int, int]]
    values: list[float]
    position_values: np.ndarray = field(repr=False)

    @classmethod
    def from_blocks(cls, blocks, values, k):
        pv = np.empty(k, dtype=float)
        for (lo, hi), val in zip(blocks, values):
            pv[lo : hi + 1] = val
        return cls(blocks=list(blocks), values=[float(x) for x in values], position_values=pv)


def _canonical(problem: IsotonicProblem):
    """Return (v, w) in nondecreasing solve order plus a flag to undo it."""
    v, w = problem.quad_weights, problem.lin_coeffs
    if problem.direction == "nonincreasing":
        return v[::-1], w[::-1], True
    return v, w, False


def _decanonical(blocks, sums_v, sums_w, k, reversed_: bool) -> BlockSolution:
    values = [sw / sv for sv, sw in zip(sums_v, sums_w)]
    if reversed_:
        blocks = [(k - 1 - hi, k - 1 - lo) for lo, hi in reversed(blocks)]
        values = values[::-1]
    return BlockSolution.from_blocks(blocks, values, k)


def solve_stack(problem: IsotonicProblem) -> BlockSolution:
    """Single-pass stack solver.

    Maintains a stack of (start index, sum v, sum w) blocks whose ratios
    sum w / sum v strictly increase from bottom to top.  Each new element
    merges with the top while new_w * top_v <= top_w * new_v; merging on
    equality yields maximal blocks.  With integer inputs the comparisons
    are exact.
    """
    v, w, rev = _canonical(problem)
    k = len(v)
    starts = [0] * k
    svs = [0] * k
    sws = [0] * k
    sp = 0
    for i in range(k):
        start = i
        sv = v[i]
        sw = w[i]
        while sp > 0 and sw * svs[sp - 1] <= sws[sp - 1] * sv:
            sp -= 1
            start = starts[sp]
            sv += svs[sp]
            sw += sws[sp]
        starts[sp] = start
        svs[sp] = sv
        sws[sp] = sw
        sp += 1
    blocks = []
    for j in range(sp):
        end = starts[j + 1] - 1 if j + 1 < sp else k - 1
        blocks.append((starts[j], end))
    return _decanonical(blocks, svs[:sp], sws[:sp], k, rev)


def solve_blockwise(problem: IsotonicProblem) -> BlockSolution:
    """Greedy left-to-right block construction.

    Each block extends from its start to the largest index minimizing the
    cumulative ratio sum w / sum v (treated as +inf while sum v == 0); the
    comparison new_w * best_v <= best_w * new_v both detects strict
    improvement and, on ties, moves the block end rightward.
    """
    v, w, rev = _canonical(problem)
    k = len(v)
    blocks = []
    sums_v = []
    sums_w = []
    b = 0
    while b < k:
        best_v = v[b]
        best_w = w[b]
        best_i = b
        acc_v = best_v
        acc_w = best_w
        for i in range(b + 1, k):
            acc_v += v[i]
            acc_w += w[i]
            if acc_w * best_v <= best_w * acc_v:
                best_v, best_w, best_i = acc_v, acc_w, i
        blocks.append((b, best_i))
        sums_v.append(best_v)
        sums_w.append(best_w)
        b = best_i + 1
    return _decanonical(blocks, sums_v, sums_w, k, rev)


def solve_oracle(problem: IsotonicProblem) -> BlockSolution:
    """Exhaustive minimizer over all 2^(k-1) contiguous partitions.

    Partitions containing a block with zero quadratic mass, or whose block
    values are not monotone in the problem's direction, are discarded.
    Among objective ties the coarsest partition wins.  Only for k <= 12.
    """
    if problem.k > 12:
        raise OracleSizeError(
            f"solve_oracle enumerates at most 12 positions, got {problem.k}"
        )
    v, w, rev = _canonical(problem)
    k = len(v)
    best: list = [None]  # (objective, num_blocks, blocks, sums_v, sums_w)

    # depth-first over block boundaries; a prefix whose last block already
    # breaks feasibility cannot be completed, so it is pruned
    def extend(start, prev_v, prev_w, blocks, sums_v, sums_w, obj):
        acc_v = 0
        acc_w = 0
        for end in range(start, k):
            acc_v += v[end]
            acc_w += w[end]
            if acc_v == 0:
                continue  # zero-quadratic-mass block: infeasible as a cut here
            if prev_v is not None and acc_w * prev_v < prev_w * acc_v:
                continue  # block value would decrease
            val = acc_w / acc_v
            term = acc_v * val * val - 2 * acc_w * val
            blocks.append((start, end))
            sums_v.append(acc_v)
            sums_w.append(acc_w)
            if end == k - 1:
                total = obj + term
                if (
                    best[0] is None
                    or total < best[0][0]
                    or (total == best[0][0] and len(blocks) < best[0][1])
                ):
                    best[0] = (total, len(blocks), list(blocks), list(sums_v), list(sums_w))
            else:
                extend(end + 1, acc_v, acc_w, blocks, sums_v, sums_w, obj + term)
            blocks.pop()
            sums_v.pop()
            sums_w.pop()

    extend(0, None, None, [], [], [], 0.0)
    if best[0] is None:
        raise IsotonicValidationError("no feasible contiguous partition exists")
    _, _, blocks, sums_v, sums_w = best[0]
    return _decanonical(blocks, sums_v, sums_w, k, rev)


def objective_value(problem: IsotonicProblem, values: Sequence[float]) -> float:
    """Evaluate sum_i v_i * f_i^2 - 2 * w_i * f_i for per-position values f."""
    if len(values) != problem.k:
        raise IsotonicValidationError(
            f"length mismatch: expected {problem.k} values, got {len(values)}"
        )
    return math.fsum(
        v * f * f - 2.0 * w * f
        for v, w, f in zip(problem.quad_weights, problem.lin_coeffs, values)
    )
