"""
Weight families x -> Q_x: nonnegative, mean-one noise for the density estimate.

Parameters may be given per state: as a scalar, a sequence indexed by state,
a dict (with an optional "default" entry) or a callable of the state.
"""

import logging

import numpy as np
from scipy import optimize, special, stats

from .errors import SupportExplosion


logger = logging.getLogger(__name__)

CONSTANT_ONE = "constant_one"
TWO_POINT = "two_point"
DISCRETE = "discrete"
LOGNORMAL = "lognormal"
GAMMA = "gamma"
AVERAGED = "averaged"

ATOM_BUDGET = 4096
MEAN_TOLERANCE = 1e-10
PROB_TOLERANCE = 1e-12
MERGE_DECIMALS = 12

DEFAULT_NODES = 64
DEFAULT_LOWER_QUANTILE = 1e-6
DEFAULT_UPPER_QUANTILE = 1.0 - 1e-6


def _at(param, x):
    if callable(param):
        return param(x)
    if isinstance(param, dict):
        return param[x] if x in param else param["default"]
    if np.ndim(param) > 0:
        return param[x]
    return param


def _per_state(resolve, param, states):
    if np.isscalar(param):
        return np.full(len(states), resolve(None))
    return np.array([resolve(x) for x in states])


def _merge(values, probs):
    """Combine atoms that agree to MERGE_DECIMALS significant digits."""
    values = np.asarray(values, dtype=float)
    positive = values > 0
    scale = np.ones_like(values)
    scale[positive] = 10.0 ** np.floor(np.log10(values[positive]))
    keys, inverse = np.unique(np.round(values / scale, MERGE_DECIMALS) * scale, return_inverse=True)
    merged = np.bincount(inverse, weights=probs)
    keep = merged > 0
    return keys[keep], merged[keep]


def _bin_linear(values, probs, nodes):
    """Split each mass between its two neighbouring nodes; keeps the mean inside the node range."""
    idx = np.clip(np.searchsorted(nodes, values, side="right") - 1, 0, len(nodes) - 2)
    lo = nodes[idx]
    hi = nodes[idx + 1]
    frac = np.clip((values - lo) / (hi - lo), 0.0, 1.0)
    masses = np.bincount(idx, weights=probs * (1.0 - frac), minlength=len(nodes))
    masses += np.bincount(idx + 1, weights=probs * frac, minlength=len(nodes))
    return masses


def _tilt_to_mean_one(nodes, masses, null_mass=0.0):
    """Exponentially tilt masses on positive nodes so that the overall mean is one."""
    total = 1.0 - null_mass
    masses = masses / masses.sum() * total
    support = masses > 0
    if abs(np.dot(nodes, masses) - 1.0) < 1e-14:
        return masses
    target = np.log(1.0 / total)
    n = nodes[support]
    log_m = np.log(masses[support])
    if not n.min() < 1.0 / total < n.max():
        raise ValueError("grid support [%g, %g] cannot carry mean one" % (n.min(), n.max()))

    def log_mean(theta):
        return special.logsumexp(log_m + theta * n, b=n) - special.logsumexp(log_m + theta * n) - target

    step = 1.0 / n.max()
    lo, hi = -step, step
    while log_mean(lo) > 0:
        lo *= 2.0
    while log_mean(hi) < 0:
        hi *= 2.0
    theta = optimize.brentq(log_mean, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    tilted = np.zeros_like(masses)
    logs = log_m + theta * n
    tilted[support] = np.exp(logs - special.logsumexp(logs)) * total
    return tilted


class WeightGrid:
    """
    Finite weight nodes shared by all states, with Q_x masses per state.

    ``null_mass`` holds Q_x({0}); such weights never enter a stationary grid.
    """

    def __init__(self, nodes, masses, null_mass=None, states=None):
        self.nodes = np.asarray(nodes, dtype=float)
        self.masses = np.atleast_2d(np.asarray(masses, dtype=float))
        if null_mass is None:
            null_mass = np.zeros(self.masses.shape[0])
        self.null_mass = np.asarray(null_mass, dtype=float)
        if states is None:
            states = range(self.masses.shape[0])
        self.states = list(states)
        self._rows = {x: i for i, x in enumerate(self.states)}
        if np.any(self.nodes <= 0) or np.any(np.diff(self.nodes) <= 0):
            raise ValueError("grid nodes must be positive and increasing")
        if np.any(self.masses < 0):
            raise ValueError("grid masses must be nonnegative")

    def row(self, x):
        return self._rows[x]

    def masses_of(self, x):
        return self.masses[self._rows[x]]

    def mean(self, x):
        return float(np.dot(self.nodes, self.masses_of(x)))

    def total(self, x):
        return float(self.masses_of(x).sum() + self.null_mass[self._rows[x]])

    def tilted(self, x):
        return self.masses_of(x) * self.nodes

    def support(self, x):
        return np.flatnonzero(self.masses_of(x) > 0)

    def max_weight(self):
        used = np.any(self.masses > 0, axis=0)
        return float(self.nodes[used].max())

    def expect(self, x, fn):
        return float(np.dot(self.masses_of(x), fn(self.nodes)))

    def validate(self):
        for x in self.states:
            if abs(self.total(x) - 1.0) > 1e-10:
                raise ValueError("grid masses at state %r sum to %r" % (x, self.total(x)))
            if abs(self.mean(x) - 1.0) > 1e-8:
                raise ValueError("grid mean at state %r is %r" % (x, self.mean(x)))
        return self

    def to_csv(self, path, x):
        np.savetxt(path, np.column_stack([self.nodes, self.masses_of(x)]),
                   delimiter=",", header="node,mass", comments="", fmt="%.17g")


class WeightFamily:
    kind = None
    discrete = True

    def atoms(self, x):
        raise NotImplementedError

    def sample(self, x, rng, size=None):
        values, probs = self.atoms(x)
        return _draw(values, probs, rng, size)

    def sample_states(self, states, rng):
        """One weight per entry of ``states``, drawn in groups of equal states."""
        states = np.asarray(states)
        draws = np.empty(len(states))
        keys, inverse = np.unique(states, return_inverse=True)
        for i, x in enumerate(keys):
            where = np.flatnonzero(inverse == i)
            draws[where] = self.sample(x.item(), rng, len(where))
        return draws

    def sample_tilted(self, x, rng):
        values, probs = self.atoms(x)
        return _draw(values, probs * values, rng, None)

    def moment(self, x, p):
        if p == 0:
            return 1.0
        values, probs = self.atoms(x)
        if p < 0 and np.any(values[probs > 0] == 0):
            return np.inf
        with np.errstate(divide="ignore"):
            return float(np.dot(probs, values ** p))

    def expect(self, x, fn):
        values, probs = self.atoms(x)
        return float(np.dot(probs, fn(values)))

    def abs_deviation(self, x):
        values, probs = self.atoms(x)
        return float(np.dot(probs, np.abs(values - 1.0)))

    def variance(self, x):
        return self.moment(x, 2) - 1.0

    def exponential_moment(self, x, scale, gamma):
        """E[W exp((scale W)^gamma)], the tilted exponential moment."""
        return self.expect(x, lambda w: w * np.exp((scale * w) ** gamma))

    def sup_weight(self, x):
        values, probs = self.atoms(x)
        return float(values[probs > 0].max())

    def project(self, states, nodes=DEFAULT_NODES, lower_quantile=DEFAULT_LOWER_QUANTILE,
                upper_quantile=DEFAULT_UPPER_QUANTILE):
        states = list(states)
        table = [self.atoms(x) for x in states]
        grid = np.unique(np.concatenate([v[(v > 0) & (p > 0)] for v, p in table]))
        masses = np.zeros((len(states), len(grid)))
        null = np.zeros(len(states))
        for i, (values, probs) in enumerate(table):
            positive = values > 0
            masses[i, np.searchsorted(grid, values[positive])] = probs[positive]
            null[i] = probs[~positive].sum()
        return WeightGrid(grid, masses, null, states)

    def describe(self):
        return {"kind": self.kind}


def _draw(values, probs, rng, size):
    cumulative = np.cumsum(probs)
    u = rng.random(size) * cumulative[-1]
    index = np.minimum(np.searchsorted(cumulative, u, side="right"), len(values) - 1)
    return values[index] if size is not None else float(values[index])


class ConstantOne(WeightFamily):
    """W_x = 1; draws consume no randomness."""
    kind = CONSTANT_ONE

    def atoms(self, x):
        return np.ones(1), np.ones(1)

    def sample(self, x, rng, size=None):
        return np.ones(size) if size is not None else 1.0

    def sample_states(self, states, rng):
        return np.ones(len(states))

    def sample_tilted(self, x, rng):
        return 1.0


class TwoPoint(WeightFamily):
    """Atom ``low`` with probability ``p_low``; the high atom is forced by the mean."""
    kind = TWO_POINT

    def __init__(self, low, p_low):
        self.low = low
        self.p_low = p_low

    def atoms(self, x):
        low = float(_at(self.low, x))
        p_low = float(_at(self.p_low, x))
        if not (0.0 <= low < 1.0 and 0.0 <= p_low < 1.0):
            raise ValueError("two_point needs 0 <= low < 1 and 0 <= p_low < 1 (state %r)" % (x,))
        high = (1.0 - p_low * low) / (1.0 - p_low)
        return _merge(np.array([low, high]), np.array([p_low, 1.0 - p_low]))

    def describe(self):
        return {"kind": self.kind, "low": _describe_param(self.low), "p_low": _describe_param(self.p_low)}


class Discrete(WeightFamily):
    kind = DISCRETE

    def __init__(self, atoms_of_x):
        self.atoms_of_x = atoms_of_x
        self._cache = {}

    def atoms(self, x):
        if x in self._cache:
            return self._cache[x]
        spec = self.atoms_of_x
        if callable(spec):
            spec = spec(x)
        elif isinstance(spec, dict):
            spec = spec[x] if x in spec else spec["default"]
        values = np.array([float(v) for v, _ in spec])
        probs = np.array([float(p) for _, p in spec])
        if np.any(values < 0) or np.any(probs < 0):
            raise ValueError("discrete atoms must be nonnegative (state %r)" % (x,))
        if abs(probs.sum() - 1.0) > PROB_TOLERANCE:
            raise ValueError("atom probabilities sum to %r at state %r" % (probs.sum(), x))
        if abs(np.dot(values, probs) - 1.0) > MEAN_TOLERANCE:
            raise ValueError("atoms have mean %r at state %r" % (np.dot(values, probs), x))
        self._cache[x] = _merge(values, probs)
        return self._cache[x]

    def describe(self):
        if callable(self.atoms_of_x) or isinstance(self.atoms_of_x, dict):
            return {"kind": self.kind, "atoms": "state-indexed"}
        return {"kind": self.kind, "atoms": [[float(v), float(p)] for v, p in self.atoms_of_x]}


class ContinuousFamily(WeightFamily):
    discrete = False

    def atoms(self, x):
        raise TypeError("%s weights have no finite atom list; project them onto a grid" % self.kind)

    def frozen(self, x):
        raise NotImplementedError

    def expect(self, x, fn):
        return float(self.frozen(x).expect(fn))

    def quantile(self, x, q):
        return float(self.frozen(x).ppf(q))

    def sup_weight(self, x):
        return np.inf

    def project(self, states, nodes=DEFAULT_NODES, lower_quantile=DEFAULT_LOWER_QUANTILE,
                upper_quantile=DEFAULT_UPPER_QUANTILE):
        states = list(states)
        lo = min(self.quantile(x, lower_quantile) for x in states)
        hi = max(self.quantile(x, upper_quantile) for x in states)
        grid = np.geomspace(lo, hi, nodes)
        edges = np.concatenate([[0.0], np.sqrt(grid[:-1] * grid[1:]), [np.inf]])
        masses = np.array([_tilt_to_mean_one(grid, np.diff(self.frozen(x).cdf(edges))) for x in states])
        logger.debug("projected %s onto %d nodes in [%g, %g]", self.kind, nodes, lo, hi)
        return WeightGrid(grid, masses, None, states)


class LogNormal(ContinuousFamily):
    """W = exp(sigma Z - sigma^2 / 2)."""
    kind = LOGNORMAL

    def __init__(self, sigma):
        self.sigma = sigma

    def _sigma(self, x):
        sigma = float(_at(self.sigma, x))
        if sigma <= 0:
            raise ValueError("lognormal sigma must be positive")
        return sigma

    def frozen(self, x):
        sigma = self._sigma(x)
        return stats.lognorm(s=sigma, scale=np.exp(-0.5 * sigma ** 2))

    def sample(self, x, rng, size=None):
        sigma = self._sigma(x)
        return rng.lognormal(-0.5 * sigma ** 2, sigma, size)

    def sample_states(self, states, rng):
        sigma = _per_state(self._sigma, self.sigma, states)
        return rng.lognormal(-0.5 * sigma ** 2, sigma)

    def sample_tilted(self, x, rng):
        sigma = self._sigma(x)
        return float(rng.lognormal(0.5 * sigma ** 2, sigma))

    def moment(self, x, p):
        sigma = self._sigma(x)
        return float(np.exp(0.5 * sigma ** 2 * p * (p - 1.0)))

    def abs_deviation(self, x):
        return float(2.0 * (2.0 * stats.norm.cdf(0.5 * self._sigma(x)) - 1.0))

    def exponential_moment(self, x, scale, gamma):
        return np.inf

    def describe(self):
        return {"kind": self.kind, "sigma": _describe_param(self.sigma)}


class Gamma(ContinuousFamily):
    """Gamma(shape, scale = 1/shape)."""
    kind = GAMMA

    def __init__(self, shape):
        self.shape = shape

    def _shape(self, x):
        shape = float(_at(self.shape, x))
        if shape <= 0:
            raise ValueError("gamma shape must be positive")
        return shape

    def frozen(self, x):
        shape = self._shape(x)
        return stats.gamma(a=shape, scale=1.0 / shape)

    def sample(self, x, rng, size=None):
        shape = self._shape(x)
        return rng.gamma(shape, 1.0 / shape, size)

    def sample_states(self, states, rng):
        shape = _per_state(self._shape, self.shape, states)
        return rng.gamma(shape, 1.0 / shape)

    def sample_tilted(self, x, rng):
        shape = self._shape(x)
        return float(rng.gamma(shape + 1.0, 1.0 / shape))

    def moment(self, x, p):
        shape = self._shape(x)
        if p <= -shape:
            return np.inf
        return float(np.exp(special.gammaln(shape + p) - special.gammaln(shape) - p * np.log(shape)))

    def abs_deviation(self, x):
        shape = self._shape(x)
        upper = stats.gamma.sf(1.0, shape + 1.0, scale=1.0 / shape)
        lower = stats.gamma.sf(1.0, shape, scale=1.0 / shape)
        return float(2.0 * (upper - lower))

    def exponential_moment(self, x, scale, gamma):
        shape = self._shape(x)
        if gamma > 1 or (gamma == 1 and scale >= shape):
            return np.inf
        if gamma == 1:
            return float((1.0 - scale / shape) ** (-shape - 1.0))
        return WeightFamily.exponential_moment(self, x, scale, gamma)

    def describe(self):
        return {"kind": self.kind, "shape": _describe_param(self.shape)}


class Averaged(WeightFamily):
    """(1/N) sum of N independent draws from ``base``."""
    kind = AVERAGED

    def __init__(self, base, n, atom_budget=ATOM_BUDGET, nodes=256):
        if n < 1:
            raise ValueError("averaging needs N >= 1")
        self.base = base
        self.n = int(n)
        self.atom_budget = atom_budget
        self.nodes = nodes
        self.discrete = base.discrete
        self._atoms = {}
        self._binned = {}

    def _reduced(self, x):
        if isinstance(self.base, ConstantOne):
            return self.base
        if isinstance(self.base, Gamma):
            return Gamma(self.base._shape(x) * self.n)
        return None

    def atoms(self, x):
        if not self.discrete:
            raise TypeError("averaged %s weights have no finite atom list" % self.base.kind)
        if x not in self._atoms:
            values, probs = self.base.atoms(x)
            self._atoms[x] = _power_average(values, probs, self.n, self.atom_budget,
                                            lambda v, p: _merge(v, p))
        return self._atoms[x]

    def binned(self, x):
        """Node grid of the average when exact atoms are unavailable."""
        if x not in self._binned:
            if self.base.discrete:
                values, probs = self.base.atoms(x)
            else:
                base_grid = self.base.project([x], nodes=self.nodes)
                values, probs = base_grid.nodes, base_grid.masses[0]
            positive = values[(values > 0) & (probs > 0)]
            lo = positive.min() / self.n if np.any(values[probs > 0] == 0) else positive.min()
            nodes = np.geomspace(lo, positive.max(), self.nodes)
            if np.any(values[probs > 0] == 0):
                nodes = np.concatenate([[0.0], nodes])
            start = _bin_linear(values, probs, nodes)

            def combine(v, p):
                return nodes, _bin_linear(v, p, nodes)

            _, masses = _power_average(nodes, start, self.n, None, combine)
            null = masses[0] if nodes[0] == 0 else 0.0
            if nodes[0] == 0:
                nodes, masses = nodes[1:], masses[1:]
            self._binned[x] = (nodes, _tilt_to_mean_one(nodes, masses, null), null)
        return self._binned[x]

    def _exact_or_binned(self, x):
        reduced = self._reduced(x)
        if reduced is not None:
            return reduced, None
        if self.discrete:
            try:
                return None, self.atoms(x)
            except SupportExplosion:
                logger.info("averaged atoms at state %r exceed budget; using binned grid", x)
        nodes, masses, null = self.binned(x)
        return None, (np.concatenate([[0.0], nodes]), np.concatenate([[null], masses]))

    def sample(self, x, rng, size=None):
        if size is None:
            return float(np.mean(self.base.sample(x, rng, self.n)))
        return np.mean(self.base.sample(x, rng, (size, self.n)), axis=-1)

    def sample_tilted(self, x, rng):
        # size-biased sum: one tilted draw among N, the rest from the base
        draws = self.base.sample(x, rng, self.n - 1) if self.n > 1 else np.zeros(0)
        return float((self.base.sample_tilted(x, rng) + np.sum(draws)) / self.n)

    def moment(self, x, p):
        reduced, table = self._exact_or_binned(x)
        if reduced is not None:
            return reduced.moment(x, p)
        if p == 0:
            return 1.0
        values, probs = table
        if p < 0 and np.any(values[probs > 0] == 0):
            return np.inf
        with np.errstate(divide="ignore"):
            return float(np.dot(probs, values ** p))

    def expect(self, x, fn):
        reduced, table = self._exact_or_binned(x)
        if reduced is not None:
            return reduced.expect(x, fn)
        values, probs = table
        return float(np.dot(probs, fn(values)))

    def abs_deviation(self, x):
        reduced, table = self._exact_or_binned(x)
        if reduced is not None:
            return reduced.abs_deviation(x)
        values, probs = table
        return float(np.dot(probs, np.abs(values - 1.0)))

    def variance(self, x):
        return self.base.variance(x) / self.n

    def exponential_moment(self, x, scale, gamma):
        reduced = self._reduced(x)
        if reduced is not None:
            return reduced.exponential_moment(x, scale, gamma)
        if isinstance(self.base, LogNormal):
            return np.inf
        return self.expect(x, lambda w: w * np.exp((scale * w) ** gamma))

    def sup_weight(self, x):
        return self.base.sup_weight(x)

    def project(self, states, nodes=DEFAULT_NODES, lower_quantile=DEFAULT_LOWER_QUANTILE,
                upper_quantile=DEFAULT_UPPER_QUANTILE):
        states = list(states)
        if self.n == 1:
            return self.base.project(states, nodes, lower_quantile, upper_quantile)
        reduced = self._reduced(states[0])
        if reduced is not None and isinstance(self.base, ConstantOne):
            return reduced.project(states)
        if isinstance(self.base, Gamma):
            return Gamma(lambda x: self.base._shape(x) * self.n).project(states, nodes, lower_quantile, upper_quantile)
        if self.discrete:
            try:
                return WeightFamily.project(self, states)
            except SupportExplosion:
                logger.info("averaged atoms exceed budget of %d; projecting onto a grid", self.atom_budget)
        tables = [self.binned(x) for x in states]
        grid = np.unique(np.concatenate([t[0] for t in tables]))
        masses = np.zeros((len(states), len(grid)))
        for i, (n, m, _) in enumerate(tables):
            masses[i, np.searchsorted(grid, n)] = m
        return WeightGrid(grid, masses, [t[2] for t in tables], states)

    def describe(self):
        return {"kind": self.kind, "N": self.n, "base": self.base.describe()}


def _power_average(values, probs, n, budget, combine):
    """Law of the average of n iid copies by binary powering of pairwise averages."""
    result = None
    power = (values, probs, 1)
    remaining = n
    while remaining:
        if remaining & 1:
            result = power if result is None else _pair_average(result, power, budget, combine)
        remaining >>= 1
        if remaining:
            power = _pair_average(power, power, budget, combine)
    return result[0], result[1]


def _pair_average(left, right, budget, combine):
    v1, p1, c1 = left
    v2, p2, c2 = right
    values = ((c1 * v1[:, None] + c2 * v2[None, :]) / (c1 + c2)).ravel()
    probs = (p1[:, None] * p2[None, :]).ravel()
    values, probs = combine(values, probs)
    if budget is not None and len(values) > budget:
        raise SupportExplosion("averaging needs %d atoms, budget is %d" % (len(values), budget))
    return values, probs, c1 + c2


def _describe_param(param):
    if callable(param):
        return "state-indexed"
    if isinstance(param, dict):
        return {str(k): v for k, v in param.items()}
    if np.ndim(param) > 0:
        return list(np.asarray(param, dtype=float))
    return float(param)


class IntegrabilityBound:
    """M_W = sup_x E[phi(W_x)] with the tail function a(w) = M_W w / phi(w)."""

    def __init__(self, m_w, phi):
        self.m_w = m_w
        self.phi = phi

    def tail(self, w):
        w = np.asarray(w, dtype=float)
        return self.m_w * w / self.phi(w)


def sample_weight(family, x, rng):
    return family.sample(x, rng)


def weight_moment(family, x, exponent):
    return family.moment(x, exponent)


def averaged_family(base, n, atom_budget=ATOM_BUDGET):
    if n == 1:
        return base
    return Averaged(base, n, atom_budget)


def tilted_measure(family, x, grid=None):
    """pi_x over grid nodes; ``grid`` is a WeightGrid or a dict of projection options."""
    if not isinstance(grid, WeightGrid):
        grid = family.project([x], **(grid or {}))
    return grid.tilted(x)


def uniform_integrability_bound(family, phi, states):
    m_w = max(family.expect(x, phi) for x in states)
    return IntegrabilityBound(float(m_w), phi)


def tilted_acceptance(family, x, y, ratio):
    """sum_w sum_u Q_x(w) w Q_y(u) min{1, ratio u / w} for discrete families."""
    w, pw = family.atoms(x)
    u, pu = family.atoms(y)
    keep = w > 0
    w, pw = w[keep], pw[keep]
    accept = np.minimum(1.0, ratio * u[None, :] / w[:, None])
    return float(np.sum((pw * w)[:, None] * pu[None, :] * accept))
