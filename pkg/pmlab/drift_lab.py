"""
Drift and minorization checks for pseudo-marginal kernels.

Each check evaluates P~V, exactly on a joint grid or by quadrature over the
proposal increment and the proposed weight, searches for the constants
whose existence the drift statements assert, and returns a DriftReport
listing every evaluated point.  Reports on continuous spaces only cover
the scanned points.
"""

import csv
import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from numpy.polynomial import legendre
from scipy import stats

from .errors import (DivergentIntegral, DriftFail, HypothesisFail, InequalityViolated,
                     MinorizationFail, TruncationTooSmall)
from .joint import JointState
from .kernels import PSEUDO, JointGrid, build_joint_matrix
from .spectral import spectral_gap
from .target_models import ContinuousModel, ModelSpec, ProposalKernel, StateSpace, TargetDistribution, build_marginal_matrix
from .weight_models import Averaged, ConstantOne, Discrete, WeightGrid, averaged_family


logger = logging.getLogger(__name__)

EXACT_GRID = "exact_grid"
QUADRATURE = "quadrature"
MONTE_CARLO = "monte_carlo"

GEOMETRIC = "geometric"
POLYNOMIAL = "polynomial"
SUBGEOM_KAPPA = "subgeom_kappa"

POLY = "poly"
EXP = "exp"

UNIFORM = "uniform"
NONUNIFORM = "nonuniform"

ALL_STATES = "all_states"
CHECKED_AT_POINTS = "checked_at_points"

EXACT_TOLERANCE = 1e-9
ROW_TOLERANCE = 1e-12
MEASURE_TOLERANCE = 1e-10

MC_MIN_SAMPLES = 10 ** 4
MC_SAMPLES = 10 ** 5
MC_FRACTION = 0.05

Z_NODES = 256
Z_WIDTH = 8.0
U_NODES = 512
U_QUANTILE = 1e-10
U_QUANTILE_WIDE = 1e-13
DIVERGENCE_RATIO = 1e-2

SCAN_QUANTILES = (0.5, 0.9, 0.99, 0.999)
BEYOND_TAIL = (1.5, 2.0, 3.0)
SCAN_WEIGHTS = np.geomspace(1e-3, 1e3, 13)


class KernelValue:
    """An estimate of P~V at one point; ``error`` is zero for exact values and 3 sigma for Monte Carlo."""

    def __init__(self, value, error=0.0):
        self.value = float(value)
        self.error = float(error)

    def __float__(self):
        return self.value

    def agrees(self, other, slack=0.0):
        return abs(self.value - float(other)) <= self.error + getattr(other, "error", 0.0) + slack

    def __repr__(self):
        return "KernelValue(%r, %r)" % (self.value, self.error)


class DriftSpec:
    """
    A Lyapunov function together with the drift form it has to satisfy.

    ``V(x, w)`` maps arrays of states and weights to values >= 1.  ``rate``
    is the exponent for the polynomial form and lambda for the geometric
    form; ``kappa`` is the decrease function of the sub-geometric form.
    ``region(x, w)`` marks the set C; the checks fit C = {w < w_bar} when it
    is absent.  ``coefficient`` and ``bound_b`` are fitted when absent.
    """

    def __init__(self, V, form=POLYNOMIAL, rate=None, coefficient=None, kappa=None, region=None, bound_b=None):
        if form == POLYNOMIAL:
            if rate is None or not 0.0 < rate <= 1.0:
                raise ValueError("polynomial drift needs an exponent in (0, 1], got %r" % (rate,))
        elif form == GEOMETRIC:
            if rate is not None and not 0.0 <= rate < 1.0:
                raise ValueError("geometric drift needs lambda in [0, 1), got %r" % (rate,))
        elif form == SUBGEOM_KAPPA:
            if kappa is None:
                raise ValueError("sub-geometric drift needs a kappa function")
        else:
            raise ValueError("unknown drift form %r" % form)
        self.V = V
        self.form = form
        self.rate = rate
        self.coefficient = coefficient
        self.kappa = kappa
        self.region = region
        self.bound_b = bound_b

    def values(self, x, w):
        values = np.asarray(self.V(np.asarray(x), np.asarray(w, dtype=float)), dtype=float)
        if np.any(values < 1.0 - ROW_TOLERANCE):
            raise ValueError("drift function takes values below one (min %r)" % values.min())
        return values

    def decrease(self, values):
        if self.form == POLYNOMIAL:
            return values ** self.rate
        if self.form == GEOMETRIC:
            return values
        return np.asarray(self.kappa(values), dtype=float)

    def fixed_coefficient(self):
        if self.coefficient is not None:
            return float(self.coefficient)
        if self.form == GEOMETRIC and self.rate is not None:
            return 1.0 - self.rate
        return None

    def describe(self):
        return {"form": self.form, "rate": self.rate, "coefficient": self.coefficient, "bound_b": self.bound_b}


def _point(x, w, value, required, slack, error=0.0, regime="", in_region=False):
    return {"x": x.item() if hasattr(x, "item") else x, "w": float(w), "value": float(value),
            "required": float(required), "slack": float(slack), "error": float(error),
            "regime": regime, "in_region": bool(in_region)}


class DriftReport:
    """
    Outcome of one drift check.

    Each point records P~V (``value``), the right-hand side of the drift
    inequality (``required``) and ``slack``, which is required - P~V divided
    by a positive scale: the decrease function outside C and V on C.
    ``checks`` holds the side conditions (minorization, cross-checks) that
    must also hold for the report to pass.
    """

    def __init__(self, name, points, constants=None, minorization=None, scope=ALL_STATES,
                 hypotheses=None, tolerance=EXACT_TOLERANCE):
        self.name = name
        self.points = points
        self.constants = constants or {}
        self.minorization = minorization
        self.scope = scope
        self.hypotheses = hypotheses or {}
        self.tolerance = tolerance
        self.checks = {}

    @property
    def evaluated_points(self):
        return [(JointState(p["x"], p["w"]), p["value"], p["required"], p["slack"]) for p in self.points]

    @property
    def min_slack(self):
        if not self.points:
            return np.inf
        return min(p["slack"] for p in self.points)

    @property
    def passed(self):
        return self.min_slack >= -self.tolerance and all(self.checks.values())

    def worst(self):
        if not self.points:
            return None
        return min(self.points, key=lambda p: p["slack"])

    def to_dict(self):
        return {
            "name": self.name,
            "passed": self.passed,
            "min_slack": _jsonable(self.min_slack),
            "scope": self.scope,
            "points": len(self.points),
            "constants": {k: _jsonable(v) for k, v in self.constants.items()},
            "minorization": self.minorization,
            "hypotheses": self.hypotheses,
            "checks": self.checks,
            "worst": self.worst(),
        }

    def to_csv(self, path):
        fields = ["x", "w", "value", "required", "slack", "error", "regime", "in_region"]
        with open(path, "w", newline="") as handle:
            writer = csv.DictWriter(handle, fieldnames=fields)
            writer.writeheader()
            for p in self.points:
                writer.writerow(p)


def _jsonable(value):
    if isinstance(value, (np.floating, float)):
        value = float(value)
        if not np.isfinite(value):
            return str(value)
        return value
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def _first_passing(candidates, ok):
    """
    Index of the first candidate passing a monotone test: a doubling sweep
    finds a passing index, bisection then narrows it to the first one.
    """
    n = len(candidates)
    if n == 0:
        return None
    if ok(candidates[0]):
        return 0
    failing, step = 0, 1
    while True:
        probe = min(failing + step, n - 1)
        if ok(candidates[probe]):
            break
        if probe == n - 1:
            return None
        failing, step = probe, step * 2
    passing = probe
    while passing - failing > 1:
        middle = (failing + passing) // 2
        if ok(candidates[middle]):
            passing = middle
        else:
            failing = middle
    logger.debug("threshold search settled on candidate %d of %d (%r)", passing, n, candidates[passing])
    return passing


class PseudoKernel:
    """The pseudo-marginal kernel of a model and a weight family, on a finite or continuous space."""

    def __init__(self, model, family, grid=None):
        self.model = model
        self.family = family
        self._grid = grid if grid is not None else (family if isinstance(family, WeightGrid) else None)
        self._joint = None
        self._matrix = None

    @property
    def is_finite(self):
        return isinstance(self.model, ModelSpec)

    @property
    def grid(self):
        if self._grid is None:
            self._grid = self.family.project(range(self.model.size))
        return self._grid

    @property
    def joint(self):
        if self._joint is None:
            self._joint = JointGrid(self.model, self.grid)
        return self._joint

    def matrix(self):
        if self._matrix is None:
            self._matrix = build_joint_matrix(self.model, self.joint, PSEUDO)
        return self._matrix


def _exact_row(kernel, V, x, w):
    model = kernel.model
    joint = kernel.joint
    q = model.proposal.inner[x, joint.x] * joint.q_mass
    r = model.ratio_matrix()[x, joint.x]
    accepted = q * np.minimum(1.0, r * joint.w / w)
    stay = max(0.0, 1.0 - accepted.sum())
    here = np.asarray(V(np.array([x]), np.array([w], dtype=float)), dtype=float)[0]
    return float(np.dot(accepted, V(joint.x, joint.w)) + stay * here)


def _weight_grid(family, states, u_nodes, quantile):
    return family.project(list(states), nodes=u_nodes, lower_quantile=quantile, upper_quantile=1.0 - quantile)


def _quadrature_ratio(model, family, x, ws, log_v, z_nodes=Z_NODES, u_nodes=U_NODES, quantile=U_QUANTILE):
    """P~V / V at (x, w) for every w in ``ws``, by Gauss-Legendre in z and a weight grid in u."""
    target = model.target
    scale = model.scale
    lo = max(-Z_WIDTH * scale, target.lower - x)
    hi = min(Z_WIDTH * scale, target.upper - x)
    nodes, weights = legendre.leggauss(z_nodes)
    z = 0.5 * (hi - lo) * nodes + 0.5 * (hi + lo)
    z_mass = 0.5 * (hi - lo) * weights * stats.norm.pdf(z, scale=scale)
    y = x + z
    grid = _weight_grid(family, y, u_nodes, quantile)
    u = grid.nodes
    mass = (z_mass[:, None] * grid.masses)[None]
    ws = np.asarray(ws, dtype=float)
    log_vx = log_v(np.full(len(ws), float(x)), ws)
    log_vy = log_v(np.repeat(y, len(u)), np.tile(u, len(y))).reshape(len(y), len(u))
    with np.errstate(over="ignore", invalid="ignore"):
        step = target(y) - target(np.array([x]))[0]
        log_acc = np.minimum(0.0, step[None, :, None] + np.log(u)[None, None, :] - np.log(ws)[:, None, None])
        moved = np.sum(mass * np.exp(log_acc + log_vy[None] - log_vx[:, None, None]), axis=(1, 2))
        stay = 1.0 - np.sum(mass * np.exp(log_acc), axis=(1, 2))
    return moved + np.clip(stay, 0.0, None)


def _stable_quadrature(model, family, x, ws, log_v):
    ratio = _quadrature_ratio(model, family, x, ws, log_v)
    if getattr(family, "discrete", True):
        return ratio
    wide = _quadrature_ratio(model, family, x, ws, log_v, quantile=U_QUANTILE_WIDE)
    change = np.abs(wide - ratio) / np.maximum(np.abs(ratio), np.finfo(float).tiny)
    if not np.all(np.isfinite(ratio)) or np.max(change) > DIVERGENCE_RATIO:
        raise DivergentIntegral("P~V at x=%g moves by %.3g when the weight grid is widened"
                                % (x, float(np.nanmax(change))))
    return ratio


def _monte_carlo_ratio(model, family, x, w, log_v, n, rng):
    target = model.target
    y = x + rng.normal(0.0, model.scale, n)
    inside = np.isfinite(target(y))
    u = np.zeros(n)
    u[inside] = family.sample_states(y[inside], rng)
    live = np.flatnonzero(inside & (u > 0))
    log_vx = log_v(np.array([float(x)]), np.array([float(w)]))[0]
    terms = np.ones(n)
    with np.errstate(over="ignore"):
        log_acc = np.minimum(0.0, target(y[live]) - target(np.array([x]))[0] + np.log(u[live]) - np.log(w))
        terms[live] = np.exp(log_acc + log_v(y[live], u[live]) - log_vx) + 1.0 - np.exp(log_acc)
    return terms.mean(), 3.0 * terms.std(ddof=1) / np.sqrt(n)


def _monte_carlo_finite(kernel, V, x, w, n, rng):
    model = kernel.model
    row = np.append(model.proposal.inner[x], model.proposal.escape[x])
    ys = rng.choice(len(row), size=n, p=row / row.sum())
    inside = ys < model.size
    u = np.zeros(n)
    u[inside] = kernel.family.sample_states(ys[inside], rng)
    here = float(np.asarray(V(np.array([x]), np.array([w], dtype=float)))[0])
    terms = np.full(n, here)
    live = np.flatnonzero(inside & (u > 0))
    acc = np.minimum(1.0, model.ratio_matrix()[x, ys[live]] * u[live] / w)
    terms[live] = acc * np.asarray(V(ys[live], u[live]), dtype=float) + (1.0 - acc) * here
    return terms.mean(), 3.0 * terms.std(ddof=1) / np.sqrt(n)


def apply_kernel_to_V(kernel, V, point, method=EXACT_GRID, n=MC_SAMPLES, seed=0):
    """
    P~V(x, w) for one joint point.

    ``exact_grid`` is a single row product on the joint grid, ``quadrature``
    integrates a continuous model over (z, u) and ``monte_carlo`` averages
    n Rao-Blackwellized draws and reports a 3-sigma error bar.
    """
    x, w = (point.x, point.w) if isinstance(point, JointState) else point
    if method == EXACT_GRID:
        if not kernel.is_finite:
            raise ValueError("exact_grid needs a finite model; use quadrature for %s" % kernel.model.name)
        return KernelValue(_exact_row(kernel, V, x, w))
    if method == QUADRATURE:
        if kernel.is_finite:
            return KernelValue(_exact_row(kernel, V, x, w))

        def log_v(a, b):
            with np.errstate(divide="ignore"):
                return np.log(np.asarray(V(a, b), dtype=float))

        ratio = _stable_quadrature(kernel.model, kernel.family, x, [w], log_v)[0]
        return KernelValue(ratio * float(np.asarray(V(np.array([x]), np.array([w], dtype=float)))[0]))
    if method == MONTE_CARLO:
        if n < MC_MIN_SAMPLES:
            raise ValueError("monte_carlo needs at least %d samples" % MC_MIN_SAMPLES)
        rng = np.random.default_rng(seed)
        if kernel.is_finite:
            return KernelValue(*_monte_carlo_finite(kernel, V, x, w, n, rng))

        def log_v(a, b):
            with np.errstate(divide="ignore"):
                return np.log(np.asarray(V(a, b), dtype=float))

        here = float(np.asarray(V(np.array([x]), np.array([w], dtype=float)))[0])
        mean, error = _monte_carlo_ratio(kernel.model, kernel.family, x, w, log_v, n, rng)
        return KernelValue(mean * here, error * here)
    raise ValueError("unknown evaluation method %r" % method)


def _finish(report, kind):
    logger.info("%s drift check: %s (min slack %.3g over %d points)", kind,
                "pass" if report.passed else "FAIL", report.min_slack, len(report.points))
    if not report.passed:
        raise DriftFail("%s drift check fails" % kind, regime=(report.worst() or {}).get("regime"),
                        instance={"report": report.to_dict()})
    return report


# Independent Metropolis-Hastings.

def _imh_precondition(kernel, states, pi, ratio, flavor, exponent):
    family = kernel.family
    exact = not isinstance(family, WeightGrid)
    total = 0.0
    for x, p, r in zip(states, pi[states], ratio):
        if flavor == POLY:
            if exact:
                moment = family.moment(int(x), exponent + 1.0)
            else:
                moment = kernel.grid.expect(int(x), lambda w: w ** (exponent + 1.0))
            total += p * r ** exponent * moment
        else:
            if exact:
                moment = family.exponential_moment(int(x), r, exponent)
            else:
                moment = kernel.grid.expect(int(x), lambda w: w * np.exp((r * w) ** exponent))
            total += p * moment
    return float(total)


def check_imh_drift(model, family, flavor=POLY, exponent=2.0, grid=None, tolerance=EXACT_TOLERANCE):
    """
    Sub-geometric drift of the pseudo-marginal independence sampler in the
    variable mu = w pi(x) / q(x).

    ``poly``: V = mu^beta + 1 and P~V <= V - c V^(1 - 1/beta) where mu > M.
    ``exp``: V = exp(mu^gamma) and P~V <= V - c V / mu where mu > M.
    At or below M the row minorization P~ >= eps nu is verified entrywise.
    """
    if not model.is_independent:
        raise ValueError("%s does not use an independent proposal" % model.name)
    if flavor == POLY and exponent < 1.0:
        raise HypothesisFail("polynomial IMH drift needs beta >= 1", {"flavor": flavor, "exponent": exponent})
    if flavor == EXP and exponent <= 0.0:
        raise HypothesisFail("exponential IMH drift needs gamma > 0", {"flavor": flavor, "exponent": exponent})
    if flavor not in (POLY, EXP):
        raise ValueError("unknown IMH drift flavor %r" % flavor)
    pi = model.target.probabilities
    q = model.proposal.inner[0]
    if np.any((pi > 0) & (q <= 0)):
        raise HypothesisFail("proposal does not dominate the target",
                             {"states": np.flatnonzero((pi > 0) & (q <= 0)).tolist()})
    kernel = PseudoKernel(model, family, grid)
    states = np.flatnonzero(pi > 0)
    ratio = pi[states] / q[states]
    integral = _imh_precondition(kernel, states, pi, ratio, flavor, exponent)
    hypotheses = {"integral": _jsonable(integral), "flavor": flavor, "exponent": exponent}
    if not np.isfinite(integral):
        raise HypothesisFail("weight moments needed by the %s drift are infinite" % flavor, hypotheses)

    joint = kernel.joint
    mu = joint.w * pi[joint.x] / q[joint.x]
    if flavor == POLY:
        v = mu ** exponent + 1.0
        decrease = v ** (1.0 - 1.0 / exponent)
    else:
        v = np.exp(mu ** exponent)
        decrease = v / mu
    K = kernel.matrix()
    pv = K.rows @ v
    margin = v - pv
    levels = np.unique(mu)
    index = _first_passing(levels, lambda m: bool(np.all(margin[mu > m] > 0)))
    threshold = float(levels[index])
    outside = mu > threshold
    c = float(np.min(margin[outside] / decrease[outside])) if outside.any() else 0.0
    b = max(0.0, float(np.max(pv[~outside] - v[~outside] + c * decrease[~outside])))
    required = v - c * decrease + b * ~outside
    scale = np.where(outside, decrease, v)
    points = [_point(joint.x[i], joint.w[i], pv[i], required[i], (required[i] - pv[i]) / scale[i],
                     regime="drift" if outside[i] else "small_set", in_region=not outside[i])
              for i in range(joint.size)]

    measure = q[joint.x] * joint.q_mass * np.minimum(1.0, mu / threshold)
    epsilon = float(measure.sum())
    if epsilon <= 0:
        raise MinorizationFail("IMH minorization measure vanishes", {"threshold": threshold})
    deficit = float(np.min(K.rows[~outside] - measure[None, :]))
    if deficit < -ROW_TOLERANCE:
        raise MinorizationFail("row below eps nu on the IMH small set",
                               {"threshold": threshold, "deficit": deficit, "epsilon": epsilon})
    bounded = all(np.isfinite(family.sup_weight(int(x))) for x in states) if not isinstance(family, WeightGrid) else True

    report = DriftReport("imh-%s" % flavor, points, hypotheses=hypotheses, tolerance=tolerance)
    report.constants = {"M": threshold, "c": c, "b": b, "sup_mu": float(mu.max()),
                        "uniformly_ergodic": bool(bounded)}
    report.minorization = {"epsilon": epsilon, "n": 1, "nu_total": float((measure / epsilon).sum()),
                           "nu_support": int(np.count_nonzero(measure)), "min_deficit": deficit}
    return _finish(report, "IMH")


# Marginal chains with acceptance bounded away from zero.

def check_uniform_marginal_drift(model, family, beta=2.0, phi=None, grid=None, tolerance=EXACT_TOLERANCE):
    """
    Weight-only drift V(x, w) = phi(w): P~V <= V - delta V / w for w >= w_bar
    and P~V <= V + M_W below it, plus the one-step small set X x (0, w_bar].
    With the default phi(w) = w^beta + 1 the polynomial form with
    b_V = M_W + delta V^((beta - 1) / beta)(w_bar) is asserted as well.
    """
    polynomial = phi is None
    if polynomial:
        if beta <= 1.0:
            raise HypothesisFail("phi(w) = w^beta + 1 needs beta > 1", {"beta": beta})

        def phi(w):
            return w ** beta + 1.0

    pi = model.target.probabilities
    live = np.flatnonzero(pi > 0)
    alpha0 = float(np.min(1.0 - model.rejection()[live]))
    if alpha0 <= 0:
        raise HypothesisFail("marginal acceptance is not bounded away from zero", {"alpha0": alpha0})
    kernel = PseudoKernel(model, family, grid)
    g = kernel.grid
    m_w = max(g.expect(int(x), phi) for x in live)
    hypotheses = {"alpha0": alpha0, "M_W": _jsonable(m_w)}
    if not np.isfinite(m_w):
        raise HypothesisFail("phi(W) is not integrable", hypotheses)

    joint = kernel.joint
    K = kernel.matrix()
    v = phi(joint.w)
    pv = K.rows @ v
    margin = (v - pv) * joint.w / v
    upper = np.unique(joint.w[joint.w > 1.0])
    if len(upper) == 0:
        w_bar, delta = 2.0, 0.0
    else:
        index = _first_passing(upper, lambda t: bool(np.all(margin[joint.w >= t] > 0)))
        if index is None:
            top = int(np.argmax(joint.w))
            raise DriftFail("no weight threshold gives a drift", regime="w_large",
                            instance={"x": int(joint.x[top]), "w": float(joint.w[top]), "margin": float(margin[top])})
        w_bar = float(upper[index])
        delta = float(np.min(margin[joint.w >= w_bar]))
    large = joint.w >= w_bar
    required = np.where(large, v - delta * v / joint.w, v + m_w)
    scale = np.where(large, v / joint.w, v)
    points = [_point(joint.x[i], joint.w[i], pv[i], required[i], (required[i] - pv[i]) / scale[i],
                     regime="w_large" if large[i] else "w_bounded", in_region=not large[i])
              for i in range(joint.size)]
    report = DriftReport("uniform-marginal", points, hypotheses=hypotheses, tolerance=tolerance)
    report.constants = {"delta": delta, "w_bar": w_bar, "M_W": m_w, "alpha0": alpha0}

    if polynomial:
        power = (beta - 1.0) / beta
        b_v = m_w + delta * phi(w_bar) ** power
        poly_required = v - delta * v ** power + b_v * ~large
        poly_slack = float(np.min((poly_required - pv) / v))
        report.constants.update({"b_V": b_v, "poly_min_slack": poly_slack})
        report.checks["polynomial_form"] = poly_slack >= -tolerance

    report.minorization = _marginal_small_set(model, joint, K, live, w_bar)
    return _finish(report, "uniform-marginal")


def _marginal_small_set(model, joint, K, live, w_bar):
    p_acc = model.acceptance_matrix()[np.ix_(live, live)]
    column_min = p_acc.min(axis=0)
    epsilon = float(column_min.sum())
    if epsilon <= 0:
        raise MinorizationFail("accepted-move kernel has no common lower measure", {"w_bar": w_bar})
    position = np.full(model.size, -1)
    position[live] = np.arange(len(live))
    measure = column_min[position[joint.x]] * joint.q_mass * np.minimum(w_bar, joint.w)
    normalizer = float(measure.sum()) / epsilon
    nu = measure / measure.sum()
    constant = epsilon * normalizer / w_bar
    rows = K.rows[joint.w <= w_bar]
    deficit = float(np.min(rows - constant * nu[None, :])) if len(rows) else 0.0
    if abs(nu.sum() - 1.0) > MEASURE_TOLERANCE or np.any(nu < 0):
        raise MinorizationFail("small-set measure is not a probability", {"total": float(nu.sum())})
    if deficit < -ROW_TOLERANCE:
        raise MinorizationFail("row below the small-set lower bound",
                               {"w_bar": w_bar, "deficit": deficit, "constant": constant})
    return {"epsilon": epsilon, "constant": constant, "n": 1, "w_bar": w_bar,
            "nu_total": float(nu.sum()), "min_deficit": deficit}


# Random walk Metropolis on continuous targets.

class NonuniformMoments:
    """
    Weight moments allowed to grow in the tails.

    ``w_hat(x)`` is the weight scale of the large-weight regime (default
    (1 v |x|)^(growth / xi_w)), ``c(x)`` the ratio cut-off (default
    exp(|x|^c_exponent)) and ``b`` the radius factor of M_W(b |x|).
    """

    def __init__(self, xi_w, xi_pi, xi_c, growth=1.0, w_hat=None, c=None, c_exponent=1.0, b=2.0):
        self.xi_w = float(xi_w)
        self.xi_pi = float(xi_pi)
        self.xi_c = float(xi_c)
        self.growth = float(growth)
        self.c_exponent = float(c_exponent)
        self.b = float(b)
        self._w_hat = w_hat
        self._c = c

    def w_hat(self, x):
        if self._w_hat is not None:
            return np.asarray(self._w_hat(x), dtype=float)
        return np.maximum(1.0, np.abs(x)) ** (self.growth / self.xi_w)

    def c(self, x):
        if self._c is not None:
            return np.asarray(self._c(x), dtype=float)
        return np.exp(np.abs(x) ** self.c_exponent)

    def describe(self):
        return {"xi_w": self.xi_w, "xi_pi": self.xi_pi, "xi_c": self.xi_c, "growth": self.growth,
                "c_exponent": self.c_exponent, "b": self.b}


def rwm_log_drift_function(target, eta, alpha, beta):
    """log V for V(x, w) = (c_pi / pi(x))^eta max(w^-alpha, w^beta)."""
    def log_v(x, w):
        with np.errstate(divide="ignore"):
            log_w = np.log(w)
        return eta * (target.log_sup - target(x)) + np.maximum(-alpha * log_w, beta * log_w)
    return log_v


def rwm_drift_function(target, eta, alpha, beta):
    log_v = rwm_log_drift_function(target, eta, alpha, beta)
    return lambda x, w: np.exp(log_v(x, w))


def scan_positions(target, quantiles=SCAN_QUANTILES, beyond=BEYOND_TAIL):
    """x at stationary quantiles of the target plus points beyond its tail quantile."""
    grid = np.linspace(target.lower, target.upper, 20001)
    log_d = target(grid)
    cdf = np.cumsum(np.exp(log_d - log_d.max()))
    cdf /= cdf[-1]
    found = np.interp(quantiles, cdf, grid)
    tail = found[-1]
    extra = [tail * f for f in beyond if tail > 0 and tail * f < target.upper]
    return np.unique(np.round(np.concatenate([found, extra]), 12))


def _is_constant(family):
    return isinstance(family, ConstantOne) or (isinstance(family, Averaged) and isinstance(family.base, ConstantOne))


def _moment_envelope(family, x, alpha_prime, beta_prime):
    return max(family.moment(x, -alpha_prime), family.moment(x, beta_prime))


def _moment_sup(family, target, radius, alpha_prime, beta_prime, points=65):
    """M_W(r): the moment envelope maximized over |x| <= r inside the target's support."""
    lo = max(target.lower, -radius)
    hi = min(target.upper, radius)
    return max(_moment_envelope(family, float(x), alpha_prime, beta_prime) for x in np.linspace(lo, hi, points))


def _constraint_failures(constraints):
    return [name for name, holds in constraints if not holds]


def _rwm_uniform_hypotheses(family, xs, eta, alpha, beta, alpha_prime, beta_prime):
    failures = _constraint_failures([
        ("alpha' > 0", alpha_prime > 0),
        ("beta' > 1", beta_prime > 1),
        ("eta in (0, alpha' ^ 1)", 0 < eta < min(alpha_prime, 1.0)),
        ("alpha in (eta, alpha']", eta < alpha <= alpha_prime),
        ("beta in (1, beta' - eta)", 1 < beta < beta_prime - eta),
    ])
    hypotheses = {"mode": UNIFORM, "alpha_prime": alpha_prime, "beta_prime": beta_prime, "constraints": failures}
    if failures:
        raise HypothesisFail("drift exponents violate %s" % ", ".join(failures), hypotheses)
    m_w = max(_moment_envelope(family, float(x), alpha_prime, beta_prime) for x in xs)
    hypotheses["M_W"] = _jsonable(m_w)
    if not np.isfinite(m_w):
        raise HypothesisFail("weight moments of order -alpha' or beta' are infinite", hypotheses)
    for gamma in np.linspace(-alpha_prime, beta, 9):
        worst = max(family.moment(float(x), gamma) for x in xs)
        if worst > m_w * (1.0 + 1e-9):
            hypotheses["intermediate"] = {"gamma": float(gamma), "moment": worst}
            raise HypothesisFail("intermediate moment exceeds M_W", hypotheses)
    return hypotheses


def _decreasing_tail(values):
    values = [v for v in values if np.isfinite(v)]
    return len(values) < 2 or values[-1] <= values[-2]


def _rwm_nonuniform_hypotheses(model, family, xs, eta, alpha, beta, alpha_prime, beta_prime, moments):
    xi_w, xi_pi, xi_c = moments.xi_w, moments.xi_pi, moments.xi_c
    failures = _constraint_failures([
        ("alpha' > 0", alpha_prime > 0),
        ("beta' > 1", beta_prime > 1),
        ("xi_w in (0, beta' - 1)", 0 < xi_w < beta_prime - 1),
        ("xi_pi in (0, beta' - 1 - xi_w)", 0 < xi_pi < beta_prime - 1 - xi_w),
        ("eta in (0, alpha' ^ (beta' - 1 - xi_w) ^ (1 - xi_pi))",
         0 < eta < min(alpha_prime, beta_prime - 1 - xi_w, 1 - xi_pi)),
        ("alpha in (eta, alpha']", eta < alpha <= alpha_prime),
        ("beta in (1 + xi_w - eta, beta' - eta)", 1 + xi_w - eta < beta < beta_prime - eta),
        ("eta <= (beta' - beta) ^ 1 - xi_pi", eta <= min(beta_prime - beta, 1.0) - xi_pi),
        ("xi_c in (0, (beta' - beta) ^ alpha ^ 1 - eta - xi_pi)",
         0 < xi_c < min(beta_prime - beta, alpha, 1.0) - eta - xi_pi),
    ])
    hypotheses = {"mode": NONUNIFORM, "alpha_prime": alpha_prime, "beta_prime": beta_prime,
                  "moments": moments.describe(), "constraints": failures}
    if failures:
        raise HypothesisFail("drift exponents violate %s" % ", ".join(failures), hypotheses)
    envelope = [_moment_envelope(family, float(x), alpha_prime, beta_prime) for x in xs]
    if not np.all(np.isfinite(envelope)):
        raise HypothesisFail("weight moments of order -alpha' or beta' are infinite", hypotheses)

    target = model.target
    scale = model.scale
    nodes, weights = legendre.leggauss(64)
    flagged = {"g_pi_balance": [], "moment_balance": [], "c_bigger_w": [], "m_vanish": []}
    for x, g_x in zip(xs, envelope):
        w_hat = float(moments.w_hat(x))
        c = float(moments.c(x))
        z = Z_WIDTH * scale * nodes
        y = x + z
        inside = np.isfinite(target(y))
        step = target(y[inside]) - target(np.array([x]))[0]
        rejecting = step < 0
        balance = 0.0
        for y_z, s in zip(y[inside][rejecting], step[rejecting]):
            g_y = _moment_envelope(family, float(y_z), alpha_prime, beta_prime)
            balance = max(balance, np.exp(xi_pi * s) * g_y / g_x)
        flagged["g_pi_balance"].append(g_x / w_hat ** xi_pi * balance)
        radius = moments.b * max(abs(x), 1.0)
        m_r = _moment_sup(family, target, radius, alpha_prime, beta_prime)
        flagged["moment_balance"].append(m_r / w_hat ** xi_w)
        flagged["c_bigger_w"].append(w_hat ** xi_pi / c ** xi_c)
        mass = Z_WIDTH * scale * weights * stats.norm.pdf(z, scale=scale)
        within = np.zeros(len(z), dtype=bool)
        within[np.flatnonzero(inside)] = np.abs(step) <= np.log(c)
        q_d = float(np.sum(mass[within]))
        m_b = _moment_sup(family, target, moments.b * abs(x), alpha_prime, beta_prime)
        flagged["m_vanish"].append(m_b * max(q_d, c ** -eta, (w_hat / c) ** alpha_prime))
    trends = {
        "g_pi_balance": bool(np.all(np.isfinite(flagged["g_pi_balance"]))),
        "moment_balance": bool(np.all(np.isfinite(flagged["moment_balance"]))),
        "c_bigger_w": _decreasing_tail(flagged["c_bigger_w"]),
        "m_vanish": _decreasing_tail(flagged["m_vanish"]),
        "c_at_most_exponential": moments._c is not None or moments.c_exponent <= 1.0,
    }
    for name, holds in trends.items():
        if not holds:
            logger.warning("tail condition %s is not met at the largest scan points", name)
    hypotheses["flagged"] = {k: [_jsonable(float(v)) for v in vals] for k, vals in flagged.items()}
    hypotheses["flags"] = trends
    return hypotheses


def check_rwm_drift(model, family, eta=0.25, alpha=1.0, beta=2.0, mode=UNIFORM, alpha_prime=None,
                    beta_prime=None, nonuniform=None, x_points=None, w_points=None, mc_samples=MC_SAMPLES,
                    mc_fraction=MC_FRACTION, seed=0, jobs=1):
    """
    Polynomial drift P~V <= V - delta_V V^((beta - 1) / beta) + b 1_C for the
    pseudo-marginal random walk Metropolis with
    V(x, w) = (c_pi / pi(x))^eta max(w^-alpha, w^beta).

    The scan crosses x at stationary quantiles and beyond-tail points with
    log-spaced weights.  C = {|x| < M, w_low < w < c_w w_hat(x)} is found by
    threshold searches; w_hat is 1 in uniform mode.  A fraction of the
    points is cross-checked by Monte Carlo.
    """
    if not isinstance(model, ContinuousModel):
        raise ValueError("check_rwm_drift needs a continuous random walk model")
    if mode not in (UNIFORM, NONUNIFORM):
        raise ValueError("unknown moment mode %r" % mode)
    target = model.target
    xs = np.asarray(x_points, dtype=float) if x_points is not None else scan_positions(target)
    if w_points is not None:
        ws = np.asarray(w_points, dtype=float)
    else:
        ws = np.ones(1) if _is_constant(family) else SCAN_WEIGHTS
    alpha_prime = alpha if alpha_prime is None else alpha_prime
    beta_prime = beta + eta + 1.0 if beta_prime is None else beta_prime
    if mode == UNIFORM:
        hypotheses = _rwm_uniform_hypotheses(family, xs, eta, alpha, beta, alpha_prime, beta_prime)
        w_scale = np.ones(len(xs))
    else:
        if nonuniform is None:
            raise ValueError("nonuniform mode needs NonuniformMoments")
        hypotheses = _rwm_nonuniform_hypotheses(model, family, xs, eta, alpha, beta, alpha_prime, beta_prime,
                                                nonuniform)
        w_scale = np.asarray([float(nonuniform.w_hat(x)) for x in xs])

    log_v = rwm_log_drift_function(target, eta, alpha, beta)
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        ratios = list(pool.map(lambda x: _stable_quadrature(model, family, x, ws, log_v), xs))

    X = np.repeat(xs, len(ws))
    W = np.tile(ws, len(xs))
    R = np.concatenate(ratios)
    scale_w = np.repeat(w_scale, len(ws))
    logs = log_v(X, W)
    power = (beta - 1.0) / beta
    slack = np.exp(logs / beta) * (1.0 - R)
    relative = W / scale_w
    passes = slack > 0
    single_weight = len(np.unique(ws)) == 1

    candidates = np.append(np.unique(relative), np.inf)
    c_w = float(candidates[_first_passing(candidates, lambda t: bool(np.all(passes[relative >= t])))])
    if not np.isfinite(c_w) and not single_weight:
        top = relative == relative.max()
        raise DriftFail("drift fails at the largest scanned weights", regime="w_large",
                        instance={"x": X[top].tolist(), "w": W[top].tolist()})
    bounded = relative < c_w
    radii = np.append(np.unique(np.abs(X)), np.inf)
    M = float(radii[_first_passing(radii, lambda m: bool(np.all(passes[bounded & (np.abs(X) >= m)])))])
    if not np.isfinite(M) and np.any(bounded):
        far = bounded & (np.abs(X) == np.abs(X).max())
        raise DriftFail("drift fails at the largest scanned |x| with bounded weights", regime="x_large",
                        instance={"x": X[far].tolist(), "w": W[far].tolist()})
    lows = np.unique(ws)[::-1]
    index = _first_passing(lows, lambda t: bool(np.all(passes[W <= t])))
    if index is None:
        if not single_weight:
            low = W == W.min()
            raise DriftFail("drift fails at the smallest scanned weights", regime="w_small",
                            instance={"x": X[low].tolist(), "w": W[low].tolist()})
        w_low = 0.0
    else:
        w_low = float(lows[index])

    in_c = bounded & (np.abs(X) < M) & (W > w_low)
    delta = float(np.min(slack[~in_c])) if np.any(~in_c) else 0.0
    v = np.exp(logs)
    pv = v * R
    b = max(0.0, float(np.max(pv[in_c] - v[in_c] + delta * v[in_c] ** power))) if np.any(in_c) else 0.0
    regime = np.where(~bounded, "w_large", np.where(np.abs(X) >= M, "x_large",
                                                    np.where(W <= w_low, "w_small", "core")))
    points = []
    for i in range(len(X)):
        if in_c[i]:
            point_slack = (1.0 - R[i]) - delta * v[i] ** (power - 1.0) + b / v[i]
        else:
            point_slack = slack[i] - delta
        required = v[i] - delta * v[i] ** power + (b if in_c[i] else 0.0)
        points.append(_point(X[i], W[i], pv[i], required, point_slack, regime=str(regime[i]), in_region=in_c[i]))

    report = DriftReport("rwm-%s" % mode, points, scope=CHECKED_AT_POINTS, hypotheses=hypotheses)
    report.constants = {"delta_V": delta, "b": b, "M": M, "w_bar": c_w, "w_low": w_low,
                        "eta": eta, "alpha": alpha, "beta": beta}
    report.checks["drift_constant_positive"] = delta > 0 or not np.any(~in_c)
    ratio_far = R[np.abs(X) == np.abs(X).max()]
    report.constants["far_ratio"] = float(ratio_far.max())

    if mc_samples and not isinstance(family, WeightGrid):
        report.constants["cross_checks"] = _cross_check(model, family, X, W, R, log_v, mc_samples, mc_fraction, seed)
        report.checks["monte_carlo_agreement"] = all(c["agrees"] for c in report.constants["cross_checks"])
    return _finish(report, "RWM")


def _cross_check(model, family, X, W, R, log_v, n, fraction, seed):
    count = max(1, int(np.ceil(fraction * len(X))))
    picker = np.random.default_rng(seed)
    picks = np.sort(picker.choice(len(X), size=count, replace=False))
    streams = np.random.SeedSequence(seed).spawn(count)
    checks = []
    for i, stream in zip(picks, streams):
        mean, error = _monte_carlo_ratio(model, family, X[i], W[i], log_v, n, np.random.default_rng(stream))
        agrees = abs(mean - R[i]) <= error + 1e-9 * abs(R[i])
        if not agrees:
            logger.warning("Monte Carlo P~V/V %.6g +- %.2g disagrees with quadrature %.6g at (%g, %g)",
                           mean, error, R[i], X[i], W[i])
        checks.append({"x": float(X[i]), "w": float(W[i]), "quadrature": float(R[i]),
                       "monte_carlo": float(mean), "error": float(error), "agrees": bool(agrees)})
    return checks


# The slowly mixing chain built from a geometric target.

def counterexample_weights(x):
    """(1 - eps) delta_a + eps delta_b on blocks x = 10^j + n, n in [1, 10^j]; delta_1 elsewhere."""
    j = 1
    while 10 ** j < x:
        if x <= 2 * 10 ** j:
            eps = 10.0 ** -j
            a = 2.0 ** (x - 2 * 10 ** j)
            b = (1.0 - (1.0 - eps) * a) / eps
            return [(a, 1.0 - eps), (b, eps)]
        j += 1
    return [(1.0, 1.0)]


def counterexample_model(k, truncation=None):
    """Geometric target 2^(-x-1) on {0..T} with a +-1 random walk; T defaults to 2 10^k + 1."""
    needed = 2 * 10 ** k
    top = needed + 1 if truncation is None else int(truncation)
    if top < needed:
        raise TruncationTooSmall("block k=%d needs states up to %d, truncation is %d" % (k, needed, top))
    space = StateSpace.finite(top + 1)
    target = TargetDistribution.geometric(space, 0.5)
    proposal = ProposalKernel.random_walk(space, {-1: 0.5, 1: 0.5})
    return ModelSpec(target, proposal, name="counterexample-k%d" % k), Discrete(counterexample_weights)


def counterexample_quotient_bound(k):
    eps = 10.0 ** -k
    return -1.0 + (2.0 + (10 ** k - 2) * eps) / 10 ** k


def _alternating_function(k, K):
    f = np.zeros(len(K))
    for n in range(1, 10 ** k + 1):
        x = 10 ** k + n
        a = counterexample_weights(x)[0][0]
        hits = np.flatnonzero((K.x_index == x) & np.isclose(K.w_values, a, rtol=1e-12, atol=0.0))
        f[hits] = 1.0 if n % 2 else -1.0
    return f


def counterexample_ledger(k_values=(1, 2), truncation=None, tolerance=1e-12):
    """
    Exact ledger of the chain whose left spectral gap vanishes as k grows:
    the Rayleigh quotient of the alternating block function, the marginal
    drift P V = (23/24) V for V = 1.5^x, and the left gaps across k.
    """
    entries = []
    for k in k_values:
        model, family = counterexample_model(k, truncation)
        K = build_joint_matrix(model, family.project(range(model.size)), PSEUDO)
        f = _alternating_function(k, K)
        mu = K.stationary
        norm = float(np.dot(mu, f * f))
        quotient = float(np.dot(mu * f, K.rows @ f)) / norm
        bound = counterexample_quotient_bound(k)
        mean = abs(float(np.dot(mu, f))) / float(np.dot(mu, np.abs(f)))

        P = build_marginal_matrix(model)
        V = 1.5 ** np.arange(model.size)
        drift = (P.rows @ V) / V
        interior = drift[1:-1]
        drift_error = float(np.max(np.abs(interior - 23.0 / 24.0)))

        spectrum = spectral_gap(K)
        entry = {"k": k, "states": model.size, "joint_states": len(K), "quotient": quotient, "bound": bound,
                 "mean_ratio": mean, "drift_error": drift_error, "left_gap": spectrum.left_gap,
                 "gap": spectrum.gap}
        logger.info("counterexample k=%d: quotient %.6g (bound %.6g), left gap %.3g", k, quotient, bound,
                    spectrum.left_gap)
        if quotient > bound + tolerance:
            raise InequalityViolated("Rayleigh quotient above its bound at k=%d" % k, entry)
        if drift_error > tolerance:
            raise InequalityViolated("marginal drift ratio differs from 23/24 at k=%d" % k, entry)
        if mean < 1e-9 and spectrum.left_gap > 1.0 + quotient + 1e-8:
            raise InequalityViolated("left gap exceeds the Rayleigh quotient bound at k=%d" % k, entry)
        entries.append(entry)
    gaps = [e["left_gap"] for e in entries]
    trend = all(later < earlier for earlier, later in zip(gaps, gaps[1:]))
    if not trend:
        raise InequalityViolated("left gaps do not decrease with k", {"left_gaps": gaps})
    return {"entries": entries, "left_gap_decreasing": trend}


# Drift holding uniformly across averaging levels.

def verify_unifdrift_condition(model, base, n_list, spec, levels=None, g=None, kappa=0.5, lam=0.5,
                               tolerance=EXACT_TOLERANCE):
    """
    One drift P~_N V <= V - eps_V dec(V) + b_V 1_C valid for every N in
    ``n_list``, the minorization P~_N >= eps_v nu^N on sublevel sets
    {V <= v}, and the premises sup |g| / V^(kappa alpha (1 - lambda)) and
    sup_N pi~_N((|g| + 1) V^(1 - lambda alpha)) for polynomial drifts.
    """
    runs = []
    for n in n_list:
        family = averaged_family(base, n)
        joint = JointGrid(model, family.project(range(model.size)))
        K = build_joint_matrix(model, joint, PSEUDO)
        v = spec.values(joint.x, joint.w)
        runs.append({"N": n, "joint": joint, "K": K, "v": v, "pv": K.rows @ v, "dec": spec.decrease(v)})

    if spec.region is not None:
        for run in runs:
            run["in_c"] = np.asarray(spec.region(run["joint"].x, run["joint"].w), dtype=bool)
        w_bar = None
    else:
        weights = np.unique(np.concatenate([r["joint"].w for r in runs]))
        candidates = np.append(weights, np.inf)

        def ok(t):
            return all(np.all(r["v"][r["joint"].w >= t] > r["pv"][r["joint"].w >= t]) for r in runs)

        w_bar = float(candidates[_first_passing(candidates, ok)])
        for run in runs:
            run["in_c"] = run["joint"].w < w_bar

    coefficient = spec.fixed_coefficient()
    if coefficient is None:
        ratios = [((r["v"] - r["pv"]) / r["dec"])[~r["in_c"]] for r in runs]
        ratios = [x for x in ratios if len(x)]
        coefficient = float(min(x.min() for x in ratios)) if ratios else 1.0
        if coefficient <= 0:
            raise DriftFail("no positive drift coefficient outside C", regime="outside_c",
                            instance={"coefficient": coefficient})
    bound_b = spec.bound_b
    if bound_b is None:
        bound_b = max([0.0] + [float(np.max((r["pv"] - r["v"] + coefficient * r["dec"])[r["in_c"]]))
                               for r in runs if np.any(r["in_c"])])

    per_n = []
    for run in runs:
        joint = run["joint"]
        required = run["v"] - coefficient * run["dec"] + bound_b * run["in_c"]
        excess = run["pv"] - required
        worst = int(np.argmax(excess))
        if excess[worst] > tolerance * max(1.0, run["v"][worst]):
            raise DriftFail("uniform drift fails for N=%d" % run["N"], regime="in_c" if run["in_c"][worst] else "outside_c",
                            instance={"N": run["N"], "x": int(joint.x[worst]), "w": float(joint.w[worst]),
                                      "excess": float(excess[worst])})
        per_n.append({"N": run["N"], "min_slack": float(-excess.max()), "states": joint.size})

    if levels is None:
        inside = [r["v"][r["in_c"]] for r in runs if np.any(r["in_c"])]
        levels = [float(max(x.max() for x in inside))] if inside else [float(min(r["v"].min() for r in runs))]
    minorization = []
    for level in levels:
        for run in runs:
            members = run["v"] <= level
            if not np.any(members):
                continue
            lower = run["K"].rows[members].min(axis=0)
            epsilon = float(lower.sum())
            if epsilon <= 0:
                raise MinorizationFail("sublevel set {V <= %g} has no minorization for N=%d" % (level, run["N"]),
                                       {"N": run["N"], "level": level})
            minorization.append({"N": run["N"], "level": level, "epsilon": epsilon,
                                 "members": int(members.sum())})

    report = {
        "drift": spec.describe(),
        "coefficient": coefficient,
        "bound_b": bound_b,
        "w_bar": w_bar,
        "per_N": per_n,
        "minorization": minorization,
    }
    if spec.form == POLYNOMIAL:
        report["premises"] = _tail_premises(runs, spec.rate, g, kappa, lam)
    logger.info("uniform drift holds across N=%s with coefficient %.4g and b %.4g",
                list(n_list), coefficient, bound_b)
    return report


def _tail_premises(runs, alpha, g, kappa, lam):
    exponent = kappa * alpha * (1.0 - lam)
    g_norm = 0.0
    integral = 0.0
    for run in runs:
        joint = run["joint"]
        gx = np.abs(np.asarray(g(joint.x), dtype=float)) if g is not None else np.ones(joint.size)
        g_norm = max(g_norm, float(np.max(gx / run["v"] ** exponent)))
        integral = max(integral, float(np.dot(joint.stationary, (gx + 1.0) * run["v"] ** (1.0 - lam * alpha))))
    return {"kappa": kappa, "lambda": lam, "exponent": exponent, "g_norm": g_norm,
            "sup_stationary_integral": integral}
