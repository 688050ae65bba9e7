"""Empirical-Bayes estimation for Poisson count data.

Monotone shrinkage rules fitted by quadratic minimization over empirical
counts, exact mixture/posterior-mean oracles for known priors, and a
reproducible regret benchmark harness.
"""

from .isotonic import (
    BlockSolution,
    IsotonicProblem,
    IsotonicValidationError,
    OracleSizeError,
    objective_value,
    solve_blockwise,
    solve_oracle,
    solve_stack,
)

__version__ = "0.1.0"

__all__ = [
    "BlockSolution",
    "IsotonicProblem",
    "IsotonicValidationError",
    "OracleSizeError",
    "objective_value",
    "solve_blockwise",
    "solve_oracle",
    "solve_stack",
    "__version__",
]
