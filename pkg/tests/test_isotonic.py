import numpy as np
import pytest

from poisson_eb.isotonic import (
    IsotonicProblem,
    IsotonicValidationError,
    OracleSizeError,
    objective_value,
    solve_blockwise,
    solve_oracle,
    solve_stack,
)

ALL_SOLVERS = [solve_blockwise, solve_stack]


def random_problem(rng, kmax=50, integer=True, direction="nondecreasing"):
    """Random instance with a valid anchor at the open end."""
    k = int(rng.integers(1, kmax + 1))
    if integer:
        v = rng.integers(0, 21, size=k)
        w = rng.integers(0, 21, size=k)
    else:
        v = np.round(rng.uniform(0, 20, size=k), 6)
        w = np.round(rng.uniform(0, 20, size=k), 6)
    # avoid dead positions and keep the open-end anchor positive
    dead = (v == 0) & (w == 0)
    w = np.where(dead, 1, w)
    if direction == "nondecreasing":
        if v[-1] == 0:
            v[-1] = 1
    else:
        if v[0] == 0:
            v[0] = 1
    pos = np.arange(k)
    return IsotonicProblem(pos, v, w, direction=direction)


class TestSpecExamples:
    def test_blockwise_basic(self):
        s = solve_blockwise(IsotonicProblem([0, 1, 2], [2, 1, 1], [1, 2, 0]))
        assert s.blocks == [(0, 0), (1, 2)]
        assert s.values == [0.5, 1.0]

    def test_blockwise_already_monotone(self):
        s = solve_blockwise(IsotonicProblem([0, 1], [1, 1], [1, 2]))
        assert s.values == [1.0, 2.0]

    def test_blockwise_inf_prefix_merges_forward(self):
        s = solve_blockwise(IsotonicProblem([0, 1], [0, 1], [1, 0]))
        assert s.blocks == [(0, 1)]
        assert s.values == [1.0]

    def test_stack_matches_blockwise_on_basic(self):
        p = IsotonicProblem([0, 1, 2], [2, 1, 1], [1, 2, 0])
        assert np.array_equal(
            solve_stack(p).position_values, solve_blockwise(p).position_values
        )

    def test_stack_single_block(self):
        s = solve_stack(IsotonicProblem([0], [3], [6]))
        assert s.values == [2.0]

    def test_stack_pools_weighted_mean(self):
        s = solve_stack(IsotonicProblem([0, 1], [1, 1], [2, 1]))
        assert s.values == [1.5]

    def test_oracle_basic(self):
        s = solve_oracle(IsotonicProblem([0, 1, 2], [2, 1, 1], [1, 2, 0]))
        assert s.values == [0.5, 1.0]

    def test_oracle_zero_target(self):
        s = solve_oracle(IsotonicProblem([0], [1], [0]))
        assert s.values == [0.0]

    def test_oracle_unconstrained_feasible(self):
        s = solve_oracle(IsotonicProblem([0, 1], [1, 1], [1, 2]))
        assert s.values == [1.0, 2.0]

    def test_objective_examples(self):
        p = IsotonicProblem([0, 1, 2], [2, 1, 1], [1, 2, 0])
        assert objective_value(p, [0.5, 1, 1]) == pytest.approx(-2.5, abs=1e-12)
        assert objective_value(p, [0, 0, 0]) == 0.0
        p1 = IsotonicProblem([0], [1], [3])
        assert objective_value(p1, [3]) == pytest.approx(-9.0, abs=1e-12)


class TestValidation:
    def test_length_mismatch(self):
        with pytest.raises(IsotonicValidationError, match="length mismatch"):
            IsotonicProblem([0, 1], [1], [1, 2])

    def test_unsorted_positions(self):
        with pytest.raises(IsotonicValidationError, match="unsorted positions"):
            IsotonicProblem([1, 0], [1, 1], [1, 2])

    def test_negative_position(self):
        with pytest.raises(IsotonicValidationError, match="non-negative"):
            IsotonicProblem([-1, 0], [1, 1], [1, 2])

    def test_negative_quad_weight(self):
        with pytest.raises(IsotonicValidationError, match="non-negative"):
            IsotonicProblem([0, 1], [1, -1], [1, 2])

    def test_dead_position(self):
        with pytest.raises(IsotonicValidationError, match="dead position"):
            IsotonicProblem([0, 1], [1, 0], [1, 0])

    def test_all_zero_trailing_v_unbounded(self):
        with pytest.raises(IsotonicValidationError, match="trailing"):
            IsotonicProblem([0, 1], [1, 0], [1, 1])

    def test_leading_zero_v_negative_mass_unbounded(self):
        with pytest.raises(IsotonicValidationError, match="unbounded"):
            IsotonicProblem([0, 1], [0, 1], [-1, 1])

    def test_bounded_trailing_zero_v_allowed(self):
        # negative pull at the open end is resolved by pooling, not an error
        s = solve_stack(IsotonicProblem([0, 1], [1, 0], [1, -1]))
        assert s.blocks == [(0, 1)]
        assert s.values == [0.0]

    def test_empty(self):
        with pytest.raises(IsotonicValidationError):
            IsotonicProblem([], [], [])

    def test_oracle_size_error(self):
        k = 13
        with pytest.raises(OracleSizeError):
            solve_oracle(IsotonicProblem(range(k), [1] * k, [1] * k))

    def test_bad_direction(self):
        with pytest.raises(IsotonicValidationError, match="direction"):
            IsotonicProblem([0], [1], [1], direction="up")


class TestSolverEquivalence:
    def test_stack_equals_blockwise_integer(self):
        rng = np.random.default_rng(20240601)
        for _ in range(500):
            p = random_problem(rng, integer=True)
            a = solve_stack(p)
            b = solve_blockwise(p)
            assert a.blocks == b.blocks
            assert a.values == b.values  # exact: same integer sums, same division

    def test_stack_equals_blockwise_real(self):
        rng = np.random.default_rng(20240602)
        for _ in range(300):
            p = random_problem(rng, integer=False)
            a = solve_stack(p)
            b = solve_blockwise(p)
            assert a.blocks == b.blocks
            np.testing.assert_allclose(a.position_values, b.position_values, rtol=1e-12)

    def test_solvers_match_oracle(self):
        rng = np.random.default_rng(20240603)
        for _ in range(300):
            p = random_problem(rng, kmax=12, integer=True)
            obj_oracle = objective_value(p, solve_oracle(p).position_values)
            for solver in ALL_SOLVERS:
                obj = objective_value(p, solver(p).position_values)
                assert abs(obj - obj_oracle) <= 1e-9

    def test_nonincreasing_matches_oracle(self):
        rng = np.random.default_rng(20240604)
        for _ in range(200):
            p = random_problem(rng, kmax=10, integer=True, direction="nonincreasing")
            obj_oracle = objective_value(p, solve_oracle(p).position_values)
            for solver in ALL_SOLVERS:
                obj = objective_value(p, solver(p).position_values)
                assert abs(obj - obj_oracle) <= 1e-9


class TestSolutionProperties:
    def test_output_monotone(self):
        rng = np.random.default_rng(20240605)
        for _ in range(200):
            direction = "nondecreasing" if rng.random() < 0.5 else "nonincreasing"
            p = random_problem(rng, direction=direction)
            pv = solve_stack(p).position_values
            d = np.diff(pv)
            if direction == "nondecreasing":
                assert np.all(d >= 0)
            else:
                assert np.all(d <= 0)

    def test_block_values_strictly_increase(self):
        rng = np.random.default_rng(20240606)
        for _ in range(200):
            p = random_problem(rng)
            s = solve_stack(p)
            assert all(b < a for b, a in zip(s.values, s.values[1:])) or np.all(
                np.diff(s.values) > 0
            )

    def test_block_quad_mass_positive(self):
        rng = np.random.default_rng(20240607)
        for _ in range(200):
            p = random_problem(rng)
            s = solve_stack(p)
            for lo, hi in s.blocks:
                assert sum(p.quad_weights[lo : hi + 1]) > 0

    def test_dominance_over_random_monotone_candidates(self):
        rng = np.random.default_rng(20240608)
        for _ in range(50):
            p = random_problem(rng, kmax=30)
            obj_star = objective_value(p, solve_stack(p).position_values)
            scale = max(1.0, max(p.lin_coeffs) if p.lin_coeffs else 1.0)
            for _ in range(100):
                g = np.cumsum(rng.uniform(0, 1, size=p.k)) * scale / p.k
                g += rng.uniform(-1, 1) * scale
                if p.direction == "nonincreasing":
                    g = g[::-1]
                assert obj_star <= objective_value(p, g) + 1e-9

    def test_nonincreasing_is_reversed_nondecreasing(self):
        rng = np.random.default_rng(20240609)
        for _ in range(100):
            p = random_problem(rng, direction="nonincreasing")
            rev = IsotonicProblem(
                np.arange(p.k),
                p.quad_weights[::-1],
                p.lin_coeffs[::-1],
                direction="nondecreasing",
            )
            got = solve_stack(p).position_values
            want = solve_stack(rev).position_values[::-1]
            np.testing.assert_array_equal(got, want)

    def test_positions_do_not_affect_values(self):
        p1 = IsotonicProblem([0, 1, 2], [2, 1, 1], [1, 2, 0])
        p2 = IsotonicProblem([3, 7, 100], [2, 1, 1], [1, 2, 0])
        np.testing.assert_array_equal(
            solve_stack(p1).position_values, solve_stack(p2).position_values
        )
