"""
Targets, proposals and the marginal Metropolis-Hastings kernel.

States are integer indices into a StateSpace. Grid spaces are turned into
finite chains by evaluating densities at cell midpoints; proposal mass that
leaves the space is kept as ``escape`` mass and always rejected.
"""

import logging

import numpy as np
from scipy import optimize, special

from .errors import NonFiniteSpace, UndefinedRatio
from .joint import JointKernelMatrix


logger = logging.getLogger(__name__)

FINITE = "finite"
GRID = "grid"

INDEPENDENT = "independent"
RANDOM_WALK = "random_walk"
EXPLICIT = "explicit"

STOCHASTIC_TOLERANCE = 1e-12


class StateSpace:

    def __init__(self, kind, labels=None, lower=None, upper=None, points=None, dimension=1):
        self.kind = kind
        if kind == FINITE:
            labels = list(labels)
            if len(labels) < 2:
                raise ValueError("a finite space needs at least 2 states")
            if len(set(labels)) != len(labels):
                raise ValueError("state ids must be unique")
            self.labels = labels
            self.dimension = 1
            self.shape = (len(labels),)
        elif kind == GRID:
            if points < 2:
                raise ValueError("a grid needs at least 2 points per axis")
            self.lower = np.broadcast_to(np.asarray(lower, dtype=float), (dimension,)).copy()
            self.upper = np.broadcast_to(np.asarray(upper, dtype=float), (dimension,)).copy()
            if np.any(self.upper <= self.lower):
                raise ValueError("grid upper bound must exceed lower bound on every axis")
            self.points = int(points)
            self.dimension = int(dimension)
            self.shape = (self.points,) * self.dimension
            self.labels = None
        else:
            raise ValueError("unknown space kind %r" % kind)

    @classmethod
    def finite(cls, labels):
        if isinstance(labels, int):
            labels = range(labels)
        return cls(FINITE, labels=labels)

    @classmethod
    def grid(cls, lower, upper, points, dimension=1):
        return cls(GRID, lower=lower, upper=upper, points=points, dimension=dimension)

    @property
    def size(self):
        return int(np.prod(self.shape))

    @property
    def spacing(self):
        return (self.upper - self.lower) / self.points

    def coordinates(self):
        """Cell midpoints, shape (size, dimension); finite spaces use their index."""
        if self.kind == FINITE:
            return np.arange(self.size, dtype=float)[:, None]
        axes = [self.lower[d] + (np.arange(self.points) + 0.5) * self.spacing[d]
                for d in range(self.dimension)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.column_stack([m.ravel() for m in mesh])

    def __eq__(self, other):
        if not isinstance(other, StateSpace) or self.kind != other.kind:
            return False
        if self.kind == FINITE:
            return self.labels == other.labels
        return (self.points == other.points and self.dimension == other.dimension
                and np.array_equal(self.lower, other.lower) and np.array_equal(self.upper, other.upper))

    def describe(self):
        if self.kind == FINITE:
            return {"kind": FINITE, "states": self.size}
        return {"kind": GRID, "lower": self.lower.tolist(), "upper": self.upper.tolist(),
                "points": self.points, "dimension": self.dimension}


class TargetDistribution:
    """Unnormalized target masses, held in log space."""

    def __init__(self, space, mass=None, log_mass=None):
        self.space = space
        if log_mass is None:
            mass = np.asarray(mass, dtype=float)
            if np.any(mass < 0):
                raise ValueError("target masses must be nonnegative")
            with np.errstate(divide="ignore"):
                log_mass = np.log(mass)
        log_mass = np.asarray(log_mass, dtype=float)
        if log_mass.shape != (space.size,):
            raise ValueError("expected %d masses, got %s" % (space.size, log_mass.shape))
        if not np.any(np.isfinite(log_mass)):
            raise ValueError("at least one target mass must be positive")
        self.log_mass = log_mass
        self.log_normalizer = float(special.logsumexp(log_mass))
        self.probabilities = np.exp(log_mass - self.log_normalizer)

    @property
    def normalizer(self):
        return float(np.exp(self.log_normalizer))

    @classmethod
    def from_density(cls, space, log_density):
        return cls(space, log_mass=log_density(space.coordinates()))

    @classmethod
    def uniform(cls, space):
        return cls(space, log_mass=np.zeros(space.size))

    @classmethod
    def geometric(cls, space, ratio=0.5):
        """pi(x) proportional to ratio**(x + 1) over the state indices."""
        return cls(space, log_mass=(np.arange(space.size) + 1.0) * np.log(ratio))

    def __getitem__(self, x):
        return self.probabilities[x]


class ProposalKernel:
    """
    Proposal q on a finite space.

    ``inner`` holds the in-space transition probabilities and ``escape`` the
    mass proposed outside the space; ``matrix`` folds escape into the diagonal.
    """

    def __init__(self, kind, inner, escape=None, increment=None):
        self.kind = kind
        self.inner = np.asarray(inner, dtype=float)
        if escape is None:
            escape = np.zeros(self.inner.shape[0])
        self.escape = np.clip(np.asarray(escape, dtype=float), 0.0, None)
        self.increment = increment
        if np.any(self.inner < 0):
            raise ValueError("proposal probabilities must be nonnegative")
        error = np.max(np.abs(self.inner.sum(axis=1) + self.escape - 1.0))
        if error > STOCHASTIC_TOLERANCE:
            raise ValueError("proposal rows must sum to one (error %.3g)" % error)
        self._cumulative = np.cumsum(np.column_stack([self.inner, self.escape]), axis=1)

    @property
    def size(self):
        return self.inner.shape[0]

    @property
    def matrix(self):
        return self.inner + np.diag(self.escape)

    @classmethod
    def independent(cls, dist):
        dist = np.asarray(dist, dtype=float)
        dist = dist / dist.sum()
        return cls(INDEPENDENT, np.tile(dist, (len(dist), 1)))

    @classmethod
    def explicit(cls, matrix):
        return cls(EXPLICIT, matrix)

    @classmethod
    def random_walk(cls, space, increment):
        """Random walk with a symmetric mapping offset -> probability."""
        for offset, p in increment.items():
            mirror = tuple(-o for o in offset) if isinstance(offset, tuple) else -offset
            if abs(increment.get(mirror, 0.0) - p) > STOCHASTIC_TOLERANCE:
                raise ValueError("random walk increment is not symmetric at offset %r" % (offset,))
        total = sum(increment.values())
        if abs(total - 1.0) > STOCHASTIC_TOLERANCE:
            raise ValueError("increment probabilities sum to %r" % total)
        shape = space.shape
        n = space.size
        inner = np.zeros((n, n))
        cells = np.array(np.unravel_index(np.arange(n), shape)).T
        for offset, p in increment.items():
            step = np.atleast_1d(offset)
            target = cells + step
            inside = np.all((target >= 0) & (target < np.array(shape)), axis=1)
            source = np.flatnonzero(inside)
            dest = np.ravel_multi_index(target[inside].T, shape)
            np.add.at(inner, (source, dest), p)
        escape = 1.0 - inner.sum(axis=1)
        return cls(RANDOM_WALK, inner, escape, increment=dict(increment))

    @classmethod
    def gaussian(cls, space, scale, width=4.0):
        return cls.random_walk(space, divisible_gaussian_increment(space, scale, width))

    def sample(self, x, rng):
        """Proposed index, or -1 when the proposal leaves the space."""
        y = int(np.searchsorted(self._cumulative[x], rng.random() * self._cumulative[x, -1], side="right"))
        return y if y < self.size else -1

    def is_symmetric(self):
        return np.allclose(self.inner, self.inner.T, atol=STOCHASTIC_TOLERANCE, rtol=0.0)


def divisible_gaussian_increment(space, scale, width=4.0):
    """
    Discretized Gaussian increment built as h * h for a half-variance kernel h.

    On a 2-D grid the increment is the tensor product of the per-axis kernels.
    """
    per_axis = []
    for d in range(space.dimension):
        h = space.spacing[d] if space.kind == GRID else 1.0
        half_sd = scale / np.sqrt(2.0)
        reach = max(1, int(np.ceil(width * half_sd / h)))
        steps = np.arange(-reach, reach + 1)
        half = np.exp(-0.5 * (steps * h / half_sd) ** 2)
        half /= half.sum()
        full = np.convolve(half, half)
        full = 0.5 * (full + full[::-1])
        per_axis.append((np.arange(-2 * reach, 2 * reach + 1), full / full.sum()))
    if space.dimension == 1:
        offsets, probs = per_axis[0]
        return {int(o): float(p) for o, p in zip(offsets, probs)}
    increment = {}
    for (o0, p0) in zip(*per_axis[0]):
        for (o1, p1) in zip(*per_axis[1]):
            increment[(int(o0), int(o1))] = float(p0 * p1)
    return increment


class ModelSpec:

    def __init__(self, target, proposal, name=None):
        if target.space.size != proposal.size:
            raise ValueError("target has %d states but proposal has %d" % (target.space.size, proposal.size))
        self.target = target
        self.proposal = proposal
        self.name = name or "model"
        self._ratio = None

    @property
    def space(self):
        return self.target.space

    @property
    def size(self):
        return self.target.space.size

    @property
    def is_independent(self):
        return self.proposal.kind == INDEPENDENT

    def ratio_matrix(self):
        """r(x, y) for every pair; +inf from zero-mass states, 0 where q(x, y) = 0."""
        if self._ratio is not None:
            return self._ratio
        q = self.proposal.inner
        log_pi = self.target.log_mass
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            log_ratio = log_pi[None, :] - log_pi[:, None] + np.log(q.T) - np.log(q)
            ratio = np.exp(log_ratio)
        ratio[~np.isfinite(log_pi), :] = np.inf
        ratio[:, ~np.isfinite(log_pi)] = 0.0
        ratio[q == 0] = 0.0
        np.fill_diagonal(ratio, 1.0)
        ratio.setflags(write=False)
        self._ratio = ratio
        return ratio

    def acceptance_matrix(self):
        """q(x, y) min{1, r(x, y)} over in-space proposals."""
        return self.proposal.inner * np.minimum(1.0, self.ratio_matrix())

    def rejection(self):
        return np.clip(1.0 - self.acceptance_matrix().sum(axis=1), 0.0, 1.0)

    def describe(self):
        return {"name": self.name, "space": self.space.describe(), "proposal": self.proposal.kind}


class ContinuousTarget:
    """A 1-D log-density known up to a constant, truncated to [lower, upper]."""

    def __init__(self, log_density, lower, upper, name="continuous"):
        self.log_density = log_density
        self.lower = float(lower)
        self.upper = float(upper)
        self.name = name
        probe = np.linspace(self.lower, self.upper, 2001)
        start = probe[np.argmax(log_density(probe))]
        span = (self.upper - self.lower) / 2000.0
        found = optimize.minimize_scalar(lambda t: -float(log_density(np.array([t]))[0]),
                                         bounds=(max(self.lower, start - span), min(self.upper, start + span)),
                                         method="bounded")
        self.log_sup = float(max(-found.fun, log_density(np.array([start]))[0]))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= self.lower) & (x <= self.upper)
        with np.errstate(invalid="ignore"):
            values = self.log_density(np.where(inside, x, 0.0))
        return np.where(inside, values, -np.inf)

    def discretize(self, points):
        space = StateSpace.grid(self.lower, self.upper, points)
        return TargetDistribution.from_density(space, lambda c: self.log_density(c[:, 0]))


def normal_target(lower=-10.0, upper=10.0, mean=0.0, sd=1.0):
    return ContinuousTarget(lambda x: -0.5 * ((x - mean) / sd) ** 2, lower, upper, name="normal")


def quartic_target(lower=-10.0, upper=10.0):
    return ContinuousTarget(lambda x: -x ** 4, lower, upper, name="quartic")


class ContinuousModel:
    """Random walk Metropolis on a 1-D continuous target with N(0, scale^2) increments."""

    def __init__(self, target, scale=1.0, name=None):
        self.target = target
        self.scale = float(scale)
        self.name = name or "rwm-%s" % target.name

    def discretize(self, points, width=4.0):
        target = self.target.discretize(points)
        proposal = ProposalKernel.gaussian(target.space, self.scale, width)
        return ModelSpec(target, proposal, name="%s-grid%d" % (self.name, points))

    def describe(self):
        return {"name": self.name, "scale": self.scale, "lower": self.target.lower, "upper": self.target.upper}


def acceptance_ratio(model, x, y):
    q = model.proposal.inner
    if model.target.probabilities[x] <= 0:
        raise UndefinedRatio("pi(%d) = 0" % x)
    if x == y:
        return 1.0
    if q[x, y] <= 0:
        raise UndefinedRatio("q(%d, %d) = 0" % (x, y))
    log_pi = model.target.log_mass
    return float(np.exp(log_pi[y] - log_pi[x]) * q[y, x] / q[x, y])


def rejection_probability(model, x):
    if model.target.probabilities[x] <= 0:
        raise UndefinedRatio("pi(%d) = 0" % x)
    return float(model.rejection()[x])


def build_marginal_matrix(model):
    if not isinstance(model, ModelSpec):
        raise NonFiniteSpace("%s must be discretized before building a matrix" % getattr(model, "name", model))
    accept = model.acceptance_matrix()
    rejection = np.clip(1.0 - accept.sum(axis=1), 0.0, 1.0)
    rows = accept.copy()
    rows[np.diag_indices_from(rows)] += rejection
    logger.info("built marginal matrix for %s (%d states)", model.name, model.size)
    return JointKernelMatrix("marginal", rows, model.target.probabilities,
                             np.arange(model.size), np.ones(model.size), rejection=rejection)
