import numpy as np
import pytest
from scipy import special

from poisson_eb.mixtures import (
    Discrete,
    DiscretePrior,
    ExponentialRate,
    Product,
    TriangleUniform,
    UniformInterval,
    bayes_estimator,
    discretize,
    mixture_pmf,
    sample,
    stream_generator,
)

TRI = TriangleUniform(np.array([[1.0, 1.0], [5.0, 2.0], [2.0, 6.0]]))


def random_discrete(rng, max_atoms=10, theta_max=20.0, dim=1):
    m = int(rng.integers(1, max_atoms + 1))
    shape = (m,) if dim == 1 else (m, dim)
    atoms = rng.uniform(0, theta_max, size=shape)
    probs = rng.dirichlet(np.ones(m))
    return Discrete(atoms, probs)


class TestPriorValidation:
    def test_probs_must_sum_to_one(self):
        with pytest.raises(ValueError, match="sum to 1"):
            Discrete(np.array([1.0]), np.array([0.5]))

    def test_negative_atoms_rejected(self):
        with pytest.raises(ValueError, match="non-negative"):
            Discrete(np.array([-1.0]), np.array([1.0]))

    def test_uniform_bounds(self):
        with pytest.raises(ValueError):
            UniformInterval(2.0, 1.0)

    def test_exponential_rate_positive(self):
        with pytest.raises(ValueError):
            ExponentialRate(0.0)

    def test_degenerate_triangle(self):
        with pytest.raises(ValueError, match="degenerate"):
            TriangleUniform(np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]))

    def test_product_needs_1d_components(self):
        with pytest.raises(ValueError, match="one-dimensional"):
            Product((TRI, ExponentialRate(1.0)))


class TestDiscretize:
    def test_discrete_passthrough(self):
        d = discretize(Discrete(np.array([2.0]), np.array([1.0])))
        assert d.atoms.shape == (1, 1) and d.probs[0] == 1.0
        assert discretize(d) is d

    def test_uniform_nodes(self):
        d = discretize(UniformInterval(0, 2), tol=1e-6)
        assert d.nodes == 2048
        assert np.all((d.atoms > 0) & (d.atoms < 2))
        assert d.probs.sum() == pytest.approx(1.0, abs=1e-15)

    def test_exponential_closed_form_pmf(self):
        d = discretize(ExponentialRate(1.0))
        for x in range(21):
            assert mixture_pmf(d, x) == pytest.approx(2.0 ** -(x + 1), abs=1e-6)

    def test_triangle_grid(self):
        d = discretize(TRI)
        assert d.nodes >= 2**12
        assert d.probs.sum() == pytest.approx(1.0, abs=1e-12)
        v0, v1, v2 = TRI.vertices
        m = np.column_stack([v1 - v0, v2 - v0])
        bary = np.linalg.solve(m, (d.atoms - v0).T).T
        assert np.all(bary > 0) and np.all(bary.sum(axis=1) < 1)

    def test_product_node_cap(self):
        big = Discrete(np.linspace(0, 1, 1001), np.full(1001, 1 / 1001))
        with pytest.raises(ValueError, match="cap"):
            discretize(Product((big, big)))

    def test_product_within_cap(self):
        d = discretize(Product((ExponentialRate(0.5), ExponentialRate(0.5))))
        assert d.dim == 2
        assert d.nodes <= 10**6

    def test_tol_range(self):
        with pytest.raises(ValueError, match="tol"):
            discretize(UniformInterval(0, 1), tol=0.5)


class TestMixturePmf:
    def test_point_mass(self):
        d = discretize(Discrete(np.array([1.0]), np.array([1.0])))
        assert mixture_pmf(d, 0) == pytest.approx(np.exp(-1), abs=1e-12)

    def test_uniform_closed_form(self):
        d = discretize(UniformInterval(0, 2))
        # incomplete-gamma expression, independent of the quadrature
        for x in range(10):
            want = (special.gammainc(x + 1, 2.0) - special.gammainc(x + 1, 0.0)) / 2.0
            assert mixture_pmf(d, x) == pytest.approx(want, abs=1e-6)
        assert mixture_pmf(d, 0) == pytest.approx(0.432332, abs=1e-6)

    def test_normalization_on_truncated_box(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            d = discretize(random_discrete(rng))
            t = bayes_estimator(d)
            assert t.captured_mass >= 1 - 10 * t.tail_tol

    def test_negative_point_is_zero(self):
        d = discretize(Discrete(np.array([1.0]), np.array([1.0])))
        assert mixture_pmf(d, -1) == 0.0


class TestBayesEstimator:
    def test_point_mass_posterior_is_constant(self):
        t = bayes_estimator(discretize(Discrete(np.array([2.0]), np.array([1.0]))))
        np.testing.assert_allclose(t.bayes[0], 2.0, atol=1e-9)

    def test_exponential_conjugacy(self):
        t = bayes_estimator(discretize(ExponentialRate(1.0)))
        xs = np.arange(0, 9)
        np.testing.assert_allclose(t.bayes[0][:9], (xs + 1) / 2.0, atol=1e-4)

    def test_two_atom_value(self):
        t = bayes_estimator(
            discretize(Discrete(np.array([0.0, 2.0]), np.array([0.5, 0.5])))
        )
        want = 2 * np.exp(-2) / (1 + np.exp(-2))
        assert t.bayes[0][0] == pytest.approx(want, abs=1e-12)
        assert t.bayes[0][0] == pytest.approx(0.238406, abs=1e-6)

    def test_monotone_1d(self):
        rng = np.random.default_rng(12)
        for _ in range(100):
            t = bayes_estimator(discretize(random_discrete(rng)))
            assert np.all(np.diff(t.bayes[0]) >= -1e-10)

    def test_monotone_coordinatewise_2d(self):
        rng = np.random.default_rng(13)
        for _ in range(20):
            t = bayes_estimator(discretize(random_discrete(rng, dim=2, theta_max=8.0)))
            b0, b1 = t.bayes
            assert np.all(np.diff(b0, axis=0) >= -1e-10)
            assert np.all(np.diff(b1, axis=1) >= -1e-10)

    def test_bayes_nonnegative(self):
        rng = np.random.default_rng(14)
        for _ in range(20):
            t = bayes_estimator(discretize(random_discrete(rng)))
            assert np.all(t.bayes[0] >= 0)

    def test_shift_identity(self):
        # E[theta f(X)] == E[X f(X-1)] for bounded f, both sides from the table
        rng = np.random.default_rng(15)
        for _ in range(20):
            t = bayes_estimator(discretize(random_discrete(rng)))
            m = t.shape[0]
            f = rng.uniform(-1, 1, size=m)
            p = t.core_pmf()
            lhs = float(np.sum(p * t.bayes[0] * f))
            x = np.arange(1, m)
            rhs = float(np.sum(p[1:] * x * f[:-1]))
            assert lhs == pytest.approx(rhs, abs=1e-8)

    def test_mean_identity(self):
        # sum_x p(x) f*(x) == E[theta]
        rng = np.random.default_rng(16)
        for _ in range(20):
            d = discretize(random_discrete(rng))
            t = bayes_estimator(d)
            assert float(t.core_pmf() @ t.bayes[0]) == pytest.approx(
                float(t.theta_means[0]), abs=1e-8
            )

    def test_side_cap(self):
        with pytest.raises(ValueError, match="cap"):
            bayes_estimator(
                discretize(Discrete(np.array([1.0]), np.array([1.0]))), max_side=3
            )


class TestSampling:
    def test_deterministic(self):
        p = UniformInterval(0, 5)
        t1, x1 = sample(p, 1000, seed=99)
        t2, x2 = sample(p, 1000, seed=99)
        np.testing.assert_array_equal(t1, t2)
        np.testing.assert_array_equal(x1, x2)

    def test_different_seed_differs(self):
        p = UniformInterval(0, 5)
        _, x1 = sample(p, 1000, seed=99)
        _, x2 = sample(p, 1000, seed=100)
        assert not np.array_equal(x1, x2)

    def test_stream_context_differs(self):
        p = UniformInterval(0, 5)
        _, x1 = sample(p, 1000, 99, "a")
        _, x2 = sample(p, 1000, 99, "b")
        assert not np.array_equal(x1, x2)

    def test_point_mass_clt(self):
        _, x = sample(Discrete(np.array([3.0]), np.array([1.0])), 10**6, seed=1)
        assert abs(x.mean() - 3.0) < 0.01  # > 5 standard errors of slack

    def test_mean_variance_poisson_mixture(self):
        # X mean = E[theta]; X var = E[theta] + Var(theta)
        prior = UniformInterval(0, 6)
        _, x = sample(prior, 10**6, seed=2)
        assert x.mean() == pytest.approx(3.0, abs=0.02)
        assert x.var() == pytest.approx(3.0 + 3.0, abs=0.05)

    def test_triangle_inside(self):
        th, _ = sample(TRI, 2000, seed=3)
        v0, v1, v2 = TRI.vertices
        m = np.column_stack([v1 - v0, v2 - v0])
        bary = np.linalg.solve(m, (th - v0).T).T
        assert np.all(bary >= -1e-12)
        assert np.all(bary.sum(axis=1) <= 1 + 1e-12)

    def test_product_shapes(self):
        th, x = sample(Product((ExponentialRate(2.0), ExponentialRate(2.0))), 50, seed=4)
        assert th.shape == (50, 2) and x.shape == (50, 2)
        assert np.issubdtype(x.dtype, np.integer)

    def test_exponential_parameterization(self):
        # rate r has mean 1/r
        th, _ = sample(ExponentialRate(2.0), 10**6, seed=5)
        assert th.mean() == pytest.approx(0.5, abs=0.005)

    def test_stream_generator_reproducible(self):
        a = stream_generator(7, "x", 1).integers(0, 2**63, size=4)
        b = stream_generator(7, "x", 1).integers(0, 2**63, size=4)
        c = stream_generator(7, "x", 2).integers(0, 2**63, size=4)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)
