"""
Chain simulation and estimation: traces, acceptance rates, integrated
autocorrelation times, asymptotic variances and the experiments comparing
pseudo-marginal kernels across averaging levels N.
"""

import csv
import logging

import numpy as np

from .errors import InequalityViolated, TraceTooShort, ZeroGap
from .joint import JointState
from .kernels import AUXILIARY, MARGINAL, PSEUDO, JointGrid, build_joint_matrix
from .spectral import (CLAMP_TOLERANCE, ORDER_TOLERANCE, asymptotic_variance_exact, poisson_solution, restricted,
                       spectral_gap, support)
from .weight_models import averaged_family


logger = logging.getLogger(__name__)

BATCH_MEANS = "batch_means"
INITIAL_MONOTONE = "initial_monotone_sequence"

BURN_IN = 10 ** 4
MIN_TRACE = 10 ** 3
MAX_LAG = 10 ** 4
BATCHES = 64
CHUNK = 4096

TRACE_DTYPE = np.dtype([("step", "<u8"), ("x", "<u4"), ("w", "<f8"), ("accepted", "u1")])


class ChainTrace:

    def __init__(self, seed, xs, ws, accepted, model_id="", family_id=""):
        self.seed = seed
        self.xs = np.asarray(xs, dtype=np.int64)
        self.ws = np.asarray(ws, dtype=float)
        self.accepted = np.asarray(accepted, dtype=bool)
        if not len(self.xs) == len(self.ws) == len(self.accepted):
            raise ValueError("trace columns differ in length")
        self.model_id = model_id
        self.family_id = family_id

    def __len__(self):
        return len(self.xs)

    def __eq__(self, other):
        return (isinstance(other, ChainTrace) and np.array_equal(self.xs, other.xs)
                and np.array_equal(self.ws, other.ws) and np.array_equal(self.accepted, other.accepted))

    @property
    def states(self):
        return [JointState(x, w) for x, w in zip(self.xs, self.ws)]

    def values(self, g):
        if callable(g):
            return np.asarray(g(self.xs), dtype=float)
        return np.asarray(g, dtype=float)[self.xs]

    def to_binary(self, path):
        records = np.zeros(len(self), dtype=TRACE_DTYPE)
        records["step"] = np.arange(len(self))
        records["x"] = self.xs
        records["w"] = self.ws
        records["accepted"] = self.accepted
        records.tofile(path)

    @classmethod
    def from_binary(cls, path, seed=None, model_id="", family_id=""):
        records = np.fromfile(path, dtype=TRACE_DTYPE)
        return cls(seed, records["x"].astype(np.int64), records["w"], records["accepted"].astype(bool),
                   model_id, family_id)

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["step", "x", "w", "accepted"])
            for step, (x, w, a) in enumerate(zip(self.xs, self.ws, self.accepted)):
                writer.writerow([step, int(x), repr(float(w)), int(a)])

    @classmethod
    def from_csv(cls, path, seed=None, model_id="", family_id=""):
        table = np.genfromtxt(path, delimiter=",", skip_header=1, ndmin=2)
        return cls(seed, table[:, 1].astype(np.int64), table[:, 2], table[:, 3].astype(bool),
                   model_id, family_id)


class EstimatorOutput:

    def __init__(self, point, std_error, method, n_effective):
        self.point = float(point)
        self.std_error = float(std_error)
        self.method = method
        self.n_effective = float(n_effective)

    def to_dict(self):
        return {"point": self.point, "std_error": self.std_error,
                "method": self.method, "n_effective": self.n_effective}

    def __repr__(self):
        return "EstimatorOutput(%r +- %r, %s)" % (self.point, self.std_error, self.method)


def stationary_draw(model, family, rng):
    x = int(rng.choice(model.size, p=model.target.probabilities))
    w = family.sample_tilted(x, rng) if family is not None else 1.0
    return JointState(x, w)


def run_chain(stepper, init, n, seed, model=None, family=None, burn_in=None, model_id="", family_id=""):
    """
    Trace of n states starting from ``init`` (a JointState or "stationary").

    Burn-in defaults to 0 from a stationary draw and BURN_IN otherwise.
    """
    if n < 1:
        raise ValueError("a trace needs at least one state")
    rng = np.random.default_rng(seed)
    if isinstance(init, str):
        if init != "stationary":
            raise ValueError("unknown initial law %r" % init)
        state = stationary_draw(model, family, rng)
        burn_in = 0 if burn_in is None else burn_in
    else:
        state = init
        burn_in = BURN_IN if burn_in is None else burn_in
    for _ in range(burn_in):
        state, _ = stepper(state, rng)
    xs = np.empty(n, dtype=np.int64)
    ws = np.empty(n)
    accepted = np.zeros(n, dtype=bool)
    xs[0], ws[0] = state.x, state.w
    for k in range(1, n):
        state, accepted[k] = stepper(state, rng)
        xs[k], ws[k] = state.x, state.w
    return ChainTrace(seed, xs, ws, accepted, model_id, family_id)


def simulate_matrix(K, n, seed, replicas=1, init="stationary"):
    """
    Independent chains driven by the rows of K, one seed stream per replica.

    A step counts as accepted when the joint state changes.
    """
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(replicas)]
    cumulative = np.cumsum(K.rows, axis=1)
    cumulative[:, -1] = 1.0
    if init == "stationary":
        start = np.cumsum(K.stationary)
        start[-1] = 1.0
        state = np.array([np.searchsorted(start, g.random(), side="right") for g in streams])
    else:
        state = np.full(replicas, int(init))
    path = np.empty((replicas, n), dtype=np.int64)
    path[:, 0] = state
    step = 1
    while step < n:
        chunk = min(CHUNK, n - step)
        uniforms = np.stack([g.random(chunk) for g in streams])
        for t in range(chunk):
            state = np.sum(uniforms[:, t][:, None] >= cumulative[state], axis=1)
            path[:, step + t] = state
        step += chunk
    traces = []
    for r in range(replicas):
        moved = np.concatenate([[False], path[r, 1:] != path[r, :-1]])
        traces.append(ChainTrace(seed, K.x_index[path[r]], K.w_values[path[r]], moved, K.kind))
    logger.info("simulated %d replicas of %d steps on the %s matrix", replicas, n, K.kind)
    return traces


def _as_traces(traces):
    return [traces] if isinstance(traces, ChainTrace) else list(traces)


def _value_matrix(traces, g):
    traces = _as_traces(traces)
    length = min(len(t) for t in traces)
    if length < MIN_TRACE:
        raise TraceTooShort("traces of length %d are shorter than %d" % (length, MIN_TRACE))
    return np.stack([t.values(g)[:length] for t in traces])


def _autocovariance(centred, lag):
    replicas, length = centred.shape
    return float(np.sum(centred[:, :length - lag] * centred[:, lag:]) / (replicas * length))


def _initial_monotone(values):
    """Pooled autocovariances summed over even-lag pairs while positive and nonincreasing."""
    replicas, length = values.shape
    centred = values - values.mean()
    gamma0 = _autocovariance(centred, 0)
    if gamma0 <= 0:
        return 1.0, gamma0, 0
    max_lag = max(2, min(length // 50, MAX_LAG))
    total = 0.0
    previous = np.inf
    lag = 0
    m = 0
    while 2 * m + 1 <= max_lag:
        pair = _autocovariance(centred, 2 * m) + _autocovariance(centred, 2 * m + 1)
        if m > 0 and pair <= 0:
            break
        pair = min(pair, previous)
        total += pair
        previous = pair
        lag = 2 * m + 1
        m += 1
    tau = (-gamma0 + 2.0 * total) / gamma0
    return tau, gamma0, lag


def estimate_iact(traces, g):
    """
    Integrated autocorrelation time by the initial monotone sequence rule.

    Estimates are floored at 1 / (number of samples).
    """
    values = _value_matrix(traces, g)
    total = values.size
    tau, _, lag = _initial_monotone(values)
    tau = max(tau, 1.0 / total)
    std_error = tau * np.sqrt(2.0 * (2 * lag + 1) / total)
    return EstimatorOutput(tau, std_error, INITIAL_MONOTONE, min(total, total / tau))


def _batch_means(values, batches=BATCHES):
    replicas, length = values.shape
    size = length // batches
    means = values[:, :size * batches].reshape(replicas * batches, size).mean(axis=1)
    return size * float(np.var(means, ddof=1)), replicas * batches


def estimate_asymptotic_variance(traces, g, method=INITIAL_MONOTONE):
    values = _value_matrix(traces, g)
    total = values.size
    if method == BATCH_MEANS:
        var, count = _batch_means(values)
        return EstimatorOutput(var, var * np.sqrt(2.0 / (count - 1)), BATCH_MEANS,
                               min(total, total * np.var(values) / var) if var > 0 else total)
    tau, gamma0, lag = _initial_monotone(values)
    tau = max(tau, 1.0 / total)
    var = tau * gamma0
    return EstimatorOutput(var, var * np.sqrt(2.0 * (2 * lag + 1) / total), INITIAL_MONOTONE,
                           min(total, total / tau))


def estimate_acceptance_rate(traces):
    traces = _as_traces(traces)
    flags = np.stack([t.accepted[1:].astype(float) for t in traces])
    if flags.shape[1] < MIN_TRACE:
        raise TraceTooShort("traces of length %d are shorter than %d" % (flags.shape[1] + 1, MIN_TRACE))
    var, _ = _batch_means(flags)
    total = flags.size
    return EstimatorOutput(flags.mean(), np.sqrt(var / total), BATCH_MEANS, total)


def _exact_tail(K, g, n):
    spectrum = spectral_gap(K)
    if spectrum.absolute_gap <= CLAMP_TOLERANCE:
        raise ZeroGap("the %s kernel is periodic or reducible; autocovariance tails do not converge" % K.kind)
    rows, mu = restricted(K)
    f = K.lift(g)[support(K)]
    fbar = f - np.dot(mu, f)
    v = poisson_solution(rows, mu, fbar)
    for _ in range(n):
        v = rows @ v
    return abs(float(np.dot(mu * fbar, v)))


def tail_autocorr_sup(source, g, n):
    """
    |sum_{k >= n} autocovariance| per N, exactly from matrices or estimated
    from stationary ensembles; ``source`` maps N to a matrix or to traces.
    """
    tails = {}
    for key in sorted(source):
        item = source[key]
        if hasattr(item, "rows"):
            tails[key] = _exact_tail(item, g, n)
        else:
            values = _value_matrix(item, g)
            centred = values - values.mean()
            max_lag = max(n, min(values.shape[1] // 50, MAX_LAG))
            tails[key] = abs(sum(_autocovariance(centred, k) for k in range(n, max_lag + 1)))
    keys = sorted(tails)
    return {"cutoff": n, "tails": tails, "sup": max(tails.values()),
            "n_range": [keys[0], keys[-1]] if keys else []}


class ConvergenceTable:

    def __init__(self, rows, var_marginal):
        self.rows = rows
        self.var_marginal = var_marginal

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["N", "var_pseudo", "var_marginal", "gap"])
            for row in self.rows:
                writer.writerow([row["N"], repr(row["var_pseudo"]), repr(self.var_marginal), repr(row["gap"])])

    def to_dict(self):
        return {"var_marginal": self.var_marginal, "rows": self.rows}


def _sup_abs_deviation(family, model):
    pi = model.target.probabilities
    return max(family.abs_deviation(x) for x in range(model.size) if pi[x] > 0)


def variance_convergence_experiment(model, base, n_list, g, tolerance=ORDER_TOLERANCE):
    """Exact var(g, P_N) across averaging levels N against var(g, P)."""
    g = np.asarray(g, dtype=float)
    marginal = build_joint_matrix(model, None, MARGINAL)
    var_marginal = asymptotic_variance_exact(marginal, g).var_exact
    rows = []
    for n in n_list:
        family = averaged_family(base, n)
        K = build_joint_matrix(model, JointGrid(model, family), PSEUDO)
        spectrum = spectral_gap(K)
        var = asymptotic_variance_exact(K, K.lift(g), spectrum=spectrum).var_exact
        rows.append({"N": n, "var_pseudo": var, "gap": spectrum.gap,
                     "difference": var - var_marginal, "l1_deviation": _sup_abs_deviation(family, model)})
        logger.info("N=%d: var %.10g (marginal %.10g)", n, var, var_marginal)
    table = ConvergenceTable(rows, var_marginal)
    instance = {"model": model.describe(), "base": base.describe(), "table": table.to_dict()}
    for row in rows:
        if row["difference"] < -tolerance:
            raise InequalityViolated("var(g, P_N) below marginal at N=%d" % row["N"], instance)
    for before, after in zip(rows, rows[1:]):
        if after["difference"] > tolerance and not after["difference"] < before["difference"]:
            raise InequalityViolated("variance gap did not shrink from N=%d to N=%d"
                                     % (before["N"], after["N"]), instance)
    return table


def bounded_weight_convergence(model, base, n_list, g, tolerance=ORDER_TOLERANCE):
    """var(g, P_N) against w_N var(g, P) + (w_N - 1) var_pi(g) with w_N the largest weight."""
    g = np.asarray(g, dtype=float)
    marginal = asymptotic_variance_exact(build_joint_matrix(model, None, MARGINAL), g)
    rows = []
    for n in n_list:
        joint = JointGrid(model, averaged_family(base, n))
        K = build_joint_matrix(model, joint, PSEUDO)
        var = asymptotic_variance_exact(K, K.lift(g)).var_exact
        w_bar = joint.grid.max_weight()
        bound = w_bar * marginal.var_exact + (w_bar - 1.0) * marginal.var_pi
        rows.append({"N": n, "w_bar": w_bar, "var_pseudo": var, "lower": marginal.var_exact, "upper": bound})
        if var > bound + tolerance or var < marginal.var_exact - tolerance:
            raise InequalityViolated("variance outside its bounded-weight sandwich at N=%d" % n,
                                     {"model": model.describe(), "rows": rows})
    return {"var_marginal": marginal.var_exact, "var_pi": marginal.var_pi, "rows": rows}


def tv_distance_scan(model, base, n_list, epsilon=0.05, tolerance=1e-10):
    """
    Row-wise total variation between the pseudo-marginal and auxiliary
    kernels per averaging level, the sup over the best (1 - epsilon)-mass
    core set, and the row bounds in terms of E|1 - U|.
    """
    levels = []
    for n in n_list:
        family = averaged_family(base, n)
        joint = JointGrid(model, family)
        pseudo = build_joint_matrix(model, joint, PSEUDO)
        auxiliary = build_joint_matrix(model, joint, AUXILIARY)
        distance = np.abs(pseudo.rows - auxiliary.rows).sum(axis=1)
        grid = joint.grid
        deviation = np.array([np.dot(grid.masses_of(x), np.abs(grid.nodes - 1.0)) + grid.null_mass[grid.row(x)]
                              if model.target.probabilities[x] > 0 else 0.0 for x in range(model.size)])
        spread = model.proposal.inner @ deviation
        w = joint.w
        q = joint.proposal_block() * joint.q_mass[None, :]
        u = joint.w[None, :]
        pairwise = 2.0 * np.sum(q * (np.abs(1.0 - u) + np.abs(1.0 - u / w[:, None])), axis=1)
        general = 2.0 * np.abs(1.0 - 1.0 / w) + 2.0 * (1.0 + 1.0 / w) * spread[joint.x]
        stated = 2.0 * np.abs(1.0 - 1.0 / w) + 4.0 * spread[joint.x]
        violations = int(np.sum(distance > pairwise + tolerance) + np.sum(distance > general + tolerance)
                         + np.sum((distance > stated + tolerance) & (w >= 1.0)))
        order = np.argsort(distance, kind="stable")
        covered = np.cumsum(joint.stationary[order])
        cut = int(np.searchsorted(covered, 1.0 - epsilon))
        core = order[:min(cut, len(order) - 1) + 1]
        levels.append({"N": n, "core_sup": float(distance[core].max()), "core_size": int(len(core)),
                       "core_mass": float(joint.stationary[core].sum()), "max_distance": float(distance.max()),
                       "bound_violations": violations})
        if violations:
            raise InequalityViolated("total variation row bound violated at N=%d" % n,
                                     {"model": model.describe(), "base": base.describe(), "levels": levels})
    sups = [level["core_sup"] for level in levels]
    decreasing = all(b <= a + tolerance for a, b in zip(sups, sups[1:]))
    return {"epsilon": epsilon, "levels": levels, "decreasing": decreasing}
