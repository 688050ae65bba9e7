"""Mixing distributions, Poisson-mixture probabilities and oracle tables.

Priors over the latent means are either discrete (atoms + weights) or
parametric families reduced to atoms by equal-probability quadrature.  From
a discrete prior the module tabulates the exact mixture pmf and the
posterior-mean rule on a truncated lattice box, which downstream code uses
as the ground-truth against which fitted estimators are scored.

Randomness: all sampling uses the counter-based Philox 4x64 bit generator,
keyed by a SHA-256 hash of (seed, context labels), so independent streams
are reproducible across platforms and safe to draw in parallel.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special, stats

__all__ = [
    "Discrete",
    "UniformInterval",
    "ExponentialRate",
    "TriangleUniform",
    "Product",
    "DiscretePrior",
    "MixtureTable",
    "discretize",
    "mixture_pmf",
    "bayes_estimator",
    "sample",
    "stream_generator",
    "stream_fingerprint",
    "PRODUCT_NODE_CAP",
]

PRODUCT_NODE_CAP = 10**6
DEFAULT_NODES = 2048
# Exponential tails need many quantile-midpoint nodes: the largest node grows
# only like log(node count), and posterior means are badly truncated below
# ~2**19 nodes.  One-dimensional tables stay cheap at this resolution.
EXPONENTIAL_NODES = 2**19
TRIANGLE_MIN_CELLS = 2**12


def _context_digest(seed: int, *context) -> bytes:
    h = hashlib.sha256()
    h.update(str(int(seed)).encode())
    for item in context:
        h.update(b"\x1f")
        h.update(str(item).encode())
    return h.digest()


def stream_generator(seed: int, *context) -> np.random.Generator:
    """Deterministic Philox stream for (seed, context).

    The 128-bit Philox key is the truncated SHA-256 of the seed and the
    context labels, so distinct contexts give statistically independent
    streams and the mapping is stable across runs and platforms.
    """
    key = np.frombuffer(_context_digest(seed, *context)[:16], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def stream_fingerprint(seed: int, *context) -> int:
    """Stable 64-bit identifier of a derived stream, for reporting."""
    return int.from_bytes(_context_digest(seed, *context)[:8], "little")


# --- prior specifications ---------------------------------------------------


@dataclass(frozen=True)
class Discrete:
    """Finite mixing distribution; atoms shape (m,) for dim 1 or (m, d)."""

    atoms: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        atoms = np.atleast_1d(np.asarray(self.atoms, dtype=float))
        probs = np.asarray(self.probs, dtype=float)
        if atoms.shape[0] != probs.shape[0] or probs.ndim != 1:
            raise ValueError("atoms and probs must have matching leading length")
        if np.any(atoms < 0):
            raise ValueError("atoms must be non-negative")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError("probs must be non-negative and sum to 1")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "probs", probs)

    @property
    def dim(self) -> int:
        return 1 if self.atoms.ndim == 1 else self.atoms.shape[1]


@dataclass(frozen=True)
class UniformInterval:
    """Uniform mixing distribution on (low, high), one-dimensional."""

    low: float
    high: float

    def __post_init__(self):
        if not (0 <= self.low < self.high):
            raise ValueError("need 0 <= low < high")

    dim = 1


@dataclass(frozen=True)
class ExponentialRate:
    """Exponential mixing distribution with the given rate (mean 1/rate)."""

    rate: float

    def __post_init__(self):
        if self.rate <= 0:
            raise ValueError("rate must be positive")

    dim = 1


@dataclass(frozen=True)
class TriangleUniform:
    """Uniform distribution over a non-degenerate triangle in the plane."""

    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.shape != (3, 2):
            raise ValueError("vertices must be three points in the plane")
        if np.any(v < 0):
            raise ValueError("vertices must be non-negative")
        e1, e2 = v[1] - v[0], v[2] - v[0]
        area2 = abs(e1[0] * e2[1] - e1[1] * e2[0])
        if area2 <= 0:
            raise ValueError("degenerate triangle: vertices are collinear")
        object.__setattr__(self, "vertices", v)

    dim = 2


@dataclass(frozen=True)
class Product:
    """Independent product of one-dimensional priors, one per coordinate."""

    components: tuple

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ValueError("product prior needs at least one component")
        for c in comps:
            if getattr(c, "dim", None) != 1:
                raise ValueError("product components must be one-dimensional priors")
        object.__setattr__(self, "components", comps)

    @property
    def dim(self) -> int:
        return len(self.components)


# --- quadrature reduction ---------------------------------------------------


@dataclass(frozen=True)
class DiscretePrior:
    """Finite-support reduction of a prior; the common currency of oracles.

    ``atoms`` has shape (m, d); ``source`` and ``nodes`` record how the
    reduction was produced.
    """

    atoms: np.ndarray
    probs: np.ndarray
    dim: int
    source: str = "discrete"
    nodes: int = 0

    def second_moments(self) -> np.ndarray:
        """E[theta_j^2] per coordinate."""
        return self.probs @ (self.atoms**2)

    def means(self) -> np.ndarray:
        return self.probs @ self.atoms


def _equal_prob_nodes_uniform(low, high, n):
    i = np.arange(1, n + 1)
    return low + (high - low) * (i - 0.5) / n


def _equal_prob_nodes_exponential(rate, n, tail):
    # quantile midpoints of the distribution truncated at quantile 1 - tail
    top = 1.0 - tail
    u = top * (np.arange(1, n + 1) - 0.5) / n
    return -np.log1p(-u) / rate


def _triangle_cell_centers(vertices, min_cells):
    s = 1
    while s * s < min_cells:
        s += 1
    v0, v1, v2 = vertices
    e1 = v1 - v0
    e2 = v2 - v0
    centers = []
    for i in range(s):
        for j in range(s - i):
            # upward cell with lattice corner (i, j)
            centers.append(v0 + ((i + 1 / 3) * e1 + (j + 1 / 3) * e2) / s)
            if j < s - i - 1:
                # downward cell sharing the same corner
                centers.append(v0 + ((i + 2 / 3) * e1 + (j + 2 / 3) * e2) / s)
    return np.asarray(centers)


def discretize(prior, tol: float = 1e-6) -> DiscretePrior:
    """Reduce a prior to finitely many atoms for exact tabulation.

    Parametric one-dimensional families are truncated at quantile
    1 - tol*1e-3 and represented by equal-probability quantile midpoints;
    the triangle uses a uniform barycentric grid of cell centers; products
    combine per-coordinate quadratures, reducing the per-coordinate node
    count so the grid respects the product node cap.
    """
    if not (0 < tol <= 1e-3):
        raise ValueError("tol must lie in (0, 1e-3]")
    if isinstance(prior, DiscretePrior):
        return prior
    if isinstance(prior, Discrete):
        atoms = prior.atoms if prior.atoms.ndim == 2 else prior.atoms[:, None]
        return DiscretePrior(
            atoms=atoms,
            probs=prior.probs,
            dim=prior.dim,
            source="discrete",
            nodes=atoms.shape[0],
        )
    if isinstance(prior, UniformInterval):
        nodes = _equal_prob_nodes_uniform(prior.low, prior.high, DEFAULT_NODES)
        return DiscretePrior(
            atoms=nodes[:, None],
            probs=np.full(nodes.size, 1.0 / nodes.size),
            dim=1,
            source=f"uniform({prior.low},{prior.high})",
            nodes=nodes.size,
        )
    if isinstance(prior, ExponentialRate):
        nodes = _equal_prob_nodes_exponential(prior.rate, EXPONENTIAL_NODES, tol * 1e-3)
        return DiscretePrior(
            atoms=nodes[:, None],
            probs=np.full(nodes.size, 1.0 / nodes.size),
            dim=1,
            source=f"exponential(rate={prior.rate})",
            nodes=nodes.size,
        )
    if isinstance(prior, TriangleUniform):
        centers = _triangle_cell_centers(prior.vertices, TRIANGLE_MIN_CELLS)
        return DiscretePrior(
            atoms=centers,
            probs=np.full(len(centers), 1.0 / len(centers)),
            dim=2,
            source="triangle",
            nodes=len(centers),
        )
    if isinstance(prior, Product):
        d = prior.dim
        per_coord = max(2, min(DEFAULT_NODES, int(PRODUCT_NODE_CAP ** (1.0 / d))))
        parts = []
        for comp in prior.components:
            if isinstance(comp, Discrete):
                parts.append(discretize(comp, tol))
            elif isinstance(comp, UniformInterval):
                nodes = _equal_prob_nodes_uniform(comp.low, comp.high, per_coord)
                parts.append(
                    DiscretePrior(nodes[:, None], np.full(nodes.size, 1 / nodes.size), 1)
                )
            elif isinstance(comp, ExponentialRate):
                nodes = _equal_prob_nodes_exponential(comp.rate, per_coord, tol * 1e-3)
                parts.append(
                    DiscretePrior(nodes[:, None], np.full(nodes.size, 1 / nodes.size), 1)
                )
            else:
                raise ValueError(f"unsupported product component {type(comp).__name__}")
        total = 1
        for p in parts:
            total *= p.atoms.shape[0]
        if total > PRODUCT_NODE_CAP:
            raise ValueError(
                f"product quadrature needs {total} nodes, exceeding the cap {PRODUCT_NODE_CAP}"
            )
        grids = np.meshgrid(*[p.atoms[:, 0] for p in parts], indexing="ij")
        atoms = np.column_stack([g.reshape(-1) for g in grids])
        probs = parts[0].probs
        for p in parts[1:]:
            probs = np.multiply.outer(probs, p.probs).reshape(-1)
        return DiscretePrior(
            atoms=atoms, probs=probs, dim=d, source="product", nodes=total
        )
    raise TypeError(f"cannot discretize prior of type {type(prior).__name__}")


# --- mixture pmf and oracle table -------------------------------------------


def _log_poisson_matrix(thetas: np.ndarray, m: int) -> np.ndarray:
    """log Poi(x | theta) for x = 0..m, per atom; shape (len(thetas), m+1)."""
    x = np.arange(m + 1)
    return special.xlogy(x[None, :], thetas[:, None]) - thetas[:, None] - special.gammaln(x + 1.0)[None, :]


def mixture_pmf(prior: DiscretePrior, x) -> float:
    """Mixture probability at a lattice point, computed in log space per atom."""
    xs = np.atleast_1d(np.asarray(x, dtype=np.int64))
    if xs.shape != (prior.dim,):
        raise ValueError(f"point has dimension {xs.shape}, prior has dim {prior.dim}")
    if np.any(xs < 0):
        return 0.0
    logs = special.xlogy(xs[None, :], prior.atoms) - prior.atoms - special.gammaln(
        xs + 1.0
    )[None, :]
    return float(np.exp(logs.sum(axis=1)) @ prior.probs)


@dataclass(frozen=True, eq=False)
class MixtureTable:
    """Exact mixture pmf and posterior-mean values on a truncated box.

    ``pmf`` covers one extra index per axis so the posterior-mean shift is
    available everywhere inside the core box of shape ``shape``; ``bayes``
    holds one array per coordinate on the core box.
    """

    dim: int
    shape: tuple
    pmf: np.ndarray
    bayes: tuple
    tail_tol: float
    captured_mass: float
    theta_second_moments: np.ndarray
    theta_means: np.ndarray

    def core_pmf(self) -> np.ndarray:
        return self.pmf[tuple(slice(0, s) for s in self.shape)]

    def bayes_rule(self):
        """Callable oracle rule backed by the table (vector-valued for d > 1)."""
        table = self

        class _Oracle:
            dim = table.dim

            def __call__(self, x):
                if table.dim == 1:
                    xi = min(int(x), table.shape[0] - 1)
                    return float(table.bayes[0][xi])
                idx = tuple(min(int(c), s - 1) for c, s in zip(x, table.shape))
                return np.array([table.bayes[j][idx] for j in range(table.dim)])

            def evaluate_batch(self, xs):
                return np.array([self(x) for x in xs])

        return _Oracle()


def _box_sides(prior: DiscretePrior, tail_tol: float, max_side: int) -> tuple:
    sides = []
    for j in range(prior.dim):
        # Poisson tails are stochastically increasing in the mean, so the
        # mixture quantile is bounded by the largest atom's quantile
        theta_max = max(float(prior.atoms[:, j].max()), 1e-12)
        q = stats.poisson.ppf(1.0 - tail_tol / prior.dim, theta_max)
        side = int(q) + 2
        if side > max_side:
            raise ValueError(
                f"oracle table side {side} exceeds the cap {max_side} on axis {j}"
            )
        sides.append(side)
    return tuple(sides)


def bayes_estimator(
    prior: DiscretePrior, tail_tol: float = 1e-12, max_side: int = 10**6
) -> MixtureTable:
    """Tabulate the mixture pmf and posterior-mean rule on a truncated box.

    The box is the smallest product of per-coordinate quantile bounds whose
    captured mass is at least 1 - tail_tol; a cap on the side length guards
    against unbounded requests.
    """
    d = prior.dim
    sides = _box_sides(prior, tail_tol, max_side)
    ext = tuple(s + 1 for s in sides)
    n_atoms = prior.atoms.shape[0]
    budget = n_atoms * int(np.prod(ext))
    if budget > 2 * 10**10:
        raise ValueError(
            f"oracle table needs {budget} atom-cell evaluations; "
            "reduce the prior's node count or the box size"
        )
    letters = "abcdefgh"[:d]
    expr = "m," + ",".join(f"m{c}" for c in letters) + "->" + letters
    pmf = np.zeros(ext)
    chunk = max(1, int(3e7 // max(1, sum(ext))))
    for lo in range(0, n_atoms, chunk):
        hi = min(lo + chunk, n_atoms)
        mats = [
            np.exp(_log_poisson_matrix(prior.atoms[lo:hi, j], sides[j]))
            for j in range(d)
        ]
        pmf += np.einsum(expr, prior.probs[lo:hi], *mats, optimize=True)
    core = tuple(slice(0, s) for s in sides)
    captured = float(pmf[core].sum())
    if captured < 1.0 - 10 * tail_tol:
        raise AssertionError("truncated box failed to capture the target mass")
    bayes = []
    for j in range(d):
        shifted = pmf[
            tuple(
                slice(1, sides[a] + 1) if a == j else slice(0, sides[a])
                for a in range(d)
            )
        ]
        base = pmf[core]
        xj = np.arange(1, sides[j] + 1)
        shape = [1] * d
        shape[j] = sides[j]
        factor = xj.reshape(shape)
        with np.errstate(invalid="ignore", divide="ignore"):
            b = np.where(base > 0, factor * shifted / np.where(base > 0, base, 1.0), 0.0)
        bayes.append(b)
    return MixtureTable(
        dim=d,
        shape=sides,
        pmf=pmf,
        bayes=tuple(bayes),
        tail_tol=tail_tol,
        captured_mass=captured,
        theta_second_moments=np.atleast_1d(prior.second_moments()),
        theta_means=np.atleast_1d(prior.means()),
    )


# --- sampling ----------------------------------------------------------------


def _sample_thetas(prior, n: int, rng: np.random.Generator) -> np.ndarray:
    if isinstance(prior, DiscretePrior):
        idx = rng.choice(prior.atoms.shape[0], size=n, p=prior.probs)
        return prior.atoms[idx]
    if isinstance(prior, Discrete):
        idx = rng.choice(prior.atoms.shape[0], size=n, p=prior.probs)
        atoms = prior.atoms if prior.atoms.ndim == 2 else prior.atoms[:, None]
        return atoms[idx]
    if isinstance(prior, UniformInterval):
        return rng.uniform(prior.low, prior.high, size=(n, 1))
    if isinstance(prior, ExponentialRate):
        return rng.exponential(1.0 / prior.rate, size=(n, 1))
    if isinstance(prior, TriangleUniform):
        u = rng.uniform(size=(n, 2))
        flip = u.sum(axis=1) > 1.0
        u[flip] = 1.0 - u[flip]
        v0, v1, v2 = prior.vertices
        return v0 + u[:, :1] * (v1 - v0) + u[:, 1:] * (v2 - v0)
    if isinstance(prior, Product):
        cols = [
            _sample_thetas(comp, n, rng).reshape(n) for comp in prior.components
        ]
        return np.column_stack(cols)
    raise TypeError(f"cannot sample from prior of type {type(prior).__name__}")


def sample(prior, n: int, seed: int, *stream_context):
    """Draw n latent means from the prior and Poisson observations from them.

    Deterministic in (seed, stream_context).  Returns (thetas, observations);
    for one-dimensional priors both come back as flat length-n arrays.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = stream_generator(seed, "sample", *stream_context)
    thetas = _sample_thetas(prior, n, rng)
    obs = rng.poisson(thetas)
    if thetas.shape[1] == 1:
        return thetas[:, 0], obs[:, 0]
    return thetas, obs.astype(np.int64)
