"""
Spectral gaps, Dirichlet forms and exact asymptotic variances of reversible
finite kernels, and the gap and variance orderings between kernels.
"""

import logging

import numpy as np
from scipy import linalg

from .errors import InequalityViolated, NotReversible
from .joint import BALANCE_TOLERANCE
from .kernels import AUXILIARY, CHECK, MARGINAL, PSEUDO, JointGrid, build_joint_matrix, delta_functional


logger = logging.getLogger(__name__)

POSITIVITY_TOLERANCE = 1e-9
CLAMP_TOLERANCE = 1e-12
ORDER_TOLERANCE = 1e-8
RAYLEIGH_TOLERANCE = 1e-8
NULL_MASS = 1e-300
LAMBDA_CURVE = (0.9, 0.99, 0.999)
CESARO_LENGTHS = (10, 100, 1000)


class SpectralReport:

    def __init__(self, eigenvalues, rayleigh_gap=None):
        self.eigenvalues = eigenvalues
        self.gap = float(1.0 - eigenvalues[-1]) if len(eigenvalues) else 1.0
        self.min_eigenvalue = float(eigenvalues[0]) if len(eigenvalues) else 1.0
        self.left_gap = 1.0 + self.min_eigenvalue
        self.absolute_gap = float(1.0 - np.max(np.abs(eigenvalues))) if len(eigenvalues) else 1.0
        self.is_positive_operator = self.min_eigenvalue >= -POSITIVITY_TOLERANCE
        self.rayleigh_gap = rayleigh_gap

    def to_dict(self):
        return {
            "gap": self.gap,
            "left_gap": self.left_gap,
            "min_eigenvalue": self.min_eigenvalue,
            "is_positive_operator": bool(self.is_positive_operator),
            "rayleigh_gap": self.rayleigh_gap,
        }

    def to_csv(self, path):
        np.savetxt(path, self.eigenvalues, header="eigenvalue", comments="", fmt="%.17g")


def support(K):
    """Indices of states with stationary mass above NULL_MASS."""
    return np.flatnonzero(K.stationary > NULL_MASS)


def restricted(K):
    keep = support(K)
    rows = K.rows[np.ix_(keep, keep)]
    mu = K.stationary[keep] / K.stationary[keep].sum()
    return rows, mu


def symmetrize(rows):
    """sqrt(K(x, y) K(y, x)), which equals D^1/2 K D^-1/2 for reversible K."""
    return np.sqrt(rows * rows.T)


def _deflate(A, s):
    """Matrix of A on the orthogonal complement of the unit vector s (Householder reflection)."""
    n = len(s)
    e = np.zeros(n)
    e[0] = 1.0
    sign = 1.0 if s[0] >= 0 else -1.0
    v = s + sign * e
    v /= np.linalg.norm(v)
    Av = A @ v
    vAv = v @ Av
    reflected = A - 2.0 * np.outer(v, Av) - 2.0 * np.outer(Av, v) + 4.0 * vAv * np.outer(v, v)
    basis = np.eye(n) - 2.0 * np.outer(v, v)
    return reflected[1:, 1:], basis[:, 1:]


def spectral_gap(K, check=True):
    if check:
        residual = K.detailed_balance_residual()
        if residual > BALANCE_TOLERANCE:
            raise NotReversible("%s kernel is not reversible (residual %.3g)" % (K.kind, residual), residual)
    rows, mu = restricted(K)
    if len(mu) < 2:
        return SpectralReport(np.zeros(0))
    inner, basis = _deflate(symmetrize(rows), np.sqrt(mu))
    eigenvalues, vectors = linalg.eigh(inner)
    outside = (eigenvalues > 1.0 + CLAMP_TOLERANCE) | (eigenvalues < -1.0 - CLAMP_TOLERANCE)
    if np.any(outside):
        logger.warning("%d eigenvalues of the %s kernel fall outside [-1, 1]", outside.sum(), K.kind)
    eigenvalues = np.clip(eigenvalues, -1.0, 1.0)
    f = (basis @ vectors[:, -1]) / np.sqrt(mu)
    variance = _variance(mu, f)
    rayleigh = _dirichlet(rows, mu, f) / variance if variance > 0 else None
    report = SpectralReport(eigenvalues, rayleigh)
    if rayleigh is not None and abs(rayleigh - report.gap) > RAYLEIGH_TOLERANCE * max(1.0, report.gap):
        logger.warning("Rayleigh quotient %.12g differs from gap %.12g", rayleigh, report.gap)
    logger.debug("%s kernel: gap %.6g, left gap %.6g", K.kind, report.gap, report.left_gap)
    return report


def _variance(mu, f):
    mean = np.dot(mu, f)
    return float(np.dot(mu, (f - mean) ** 2))


def _dirichlet(rows, mu, f):
    diff = f[:, None] - f[None, :]
    return float(0.5 * np.sum(mu[:, None] * rows * diff ** 2))


def dirichlet_form(K, f):
    f = np.asarray(f, dtype=float)
    return _dirichlet(K.rows, K.stationary, f)


def dirichlet_inner(K, f):
    """<f, (I - K) f>_mu, the quadratic-form expression of the Dirichlet form."""
    f = np.asarray(f, dtype=float)
    return float(np.dot(K.stationary * f, f - K.rows @ f))


class VarianceReport:

    def __init__(self, var_exact, var_pi, var_lambda_curve, infinite=False, cesaro=None, series=None):
        self.var_exact = var_exact
        self.var_pi = var_pi
        self.var_lambda_curve = var_lambda_curve
        self.infinite = infinite
        self.cesaro = cesaro or {}
        self.series = series

    @property
    def iact(self):
        if self.var_pi <= 0:
            return float("nan")
        return self.var_exact / self.var_pi

    def to_dict(self):
        return {
            "var_exact": self.var_exact,
            "var_pi": self.var_pi,
            "iact": self.iact,
            "infinite": self.infinite,
            "var_lambda": {str(k): v for k, v in self.var_lambda_curve.items()},
            "cesaro": {str(k): v for k, v in self.cesaro.items()},
            "series": self.series,
        }


def _centred(mu, f):
    f = np.asarray(f, dtype=float)
    return f - np.dot(mu, f)


def poisson_solution(rows, mu, fbar):
    """h with (I - K) h = fbar and mu(h) = 0."""
    n = len(mu)
    system = np.eye(n) - rows + np.outer(np.ones(n), mu)
    return linalg.solve(system, fbar)


def var_lambda(K, f, lam):
    if not 0.0 <= lam < 1.0:
        raise ValueError("lambda must lie in [0, 1)")
    rows, mu = restricted(K)
    fbar = _centred(mu, np.asarray(f, dtype=float)[support(K)])
    n = len(mu)
    h = linalg.solve(np.eye(n) - lam * rows, fbar + lam * (rows @ fbar))
    return float(np.dot(mu * fbar, h))


def autocovariances(rows, mu, fbar, lags):
    out = []
    current = fbar.copy()
    for _ in range(lags + 1):
        out.append(float(np.dot(mu * fbar, current)))
        current = rows @ current
    return np.array(out)


def cesaro_trend(rows, mu, fbar, lengths=CESARO_LENGTHS):
    """n^-1 E(sum of n centred values)^2 at stationarity, for each n."""
    gamma = autocovariances(rows, mu, fbar, max(lengths))
    trend = {}
    for n in lengths:
        k = np.arange(1, n)
        trend[n] = float(gamma[0] + 2.0 * np.sum((1.0 - k / n) * gamma[1:n]))
    return trend


def asymptotic_variance_exact(K, f, series_lags=200, spectrum=None):
    rows, mu = restricted(K)
    f = np.asarray(f, dtype=float)[support(K)]
    fbar = _centred(mu, f)
    var_pi = float(np.dot(mu, fbar ** 2))
    spectrum = spectrum or spectral_gap(K)
    curve = {lam: var_lambda(K, f, lam) for lam in LAMBDA_CURVE}
    if spectrum.gap <= CLAMP_TOLERANCE:
        if var_pi <= 0:
            return VarianceReport(0.0, var_pi, curve)
        logger.info("%s kernel has no spectral gap; asymptotic variance is infinite", K.kind)
        return VarianceReport(float("inf"), var_pi, curve, infinite=True,
                              cesaro=cesaro_trend(rows, mu, fbar))
    h = poisson_solution(rows, mu, fbar)
    var = float(2.0 * np.dot(mu * fbar, h) - var_pi)
    series = None
    if spectrum.absolute_gap > CLAMP_TOLERANCE:
        gamma = autocovariances(rows, mu, fbar, series_lags)
        contraction = 1.0 - spectrum.absolute_gap
        tail = 2.0 * contraction ** (series_lags + 1) * var_pi / spectrum.absolute_gap
        estimate = float(gamma[0] + 2.0 * gamma[1:].sum())
        series = {"estimate": estimate, "tail_bound": tail, "lags": series_lags}
        if abs(estimate - var) > tail + 1e-8 * max(1.0, abs(var)):
            logger.warning("autocovariance series %.12g disagrees with resolvent %.12g", estimate, var)
    return VarianceReport(max(var, 0.0), var_pi, curve, series=series)


def positivity_check(K):
    report = spectral_gap(K)
    return report.min_eigenvalue, report.is_positive_operator


def gap_acceptance_bound(K, members):
    """(1 - mu(A))^-1 (1 - min_A (rho + holding)) for a set A of joint-state indices."""
    members = np.asarray(members)
    mass = float(K.stationary[members].sum())
    if mass >= 1.0:
        return float("inf")
    stay = K.rejection[members] + K.holding[members]
    return float((1.0 - stay.min()) / (1.0 - mass))


def _slack(name, lhs, rhs, checks):
    checks.append({"name": name, "lhs": float(lhs), "rhs": float(rhs), "slack": float(rhs - lhs)})


def _raise_if_violated(checks, tolerance, instance, what):
    worst = min(checks, key=lambda c: c["slack"]) if checks else None
    if worst is not None and worst["slack"] < -tolerance:
        instance = dict(instance, checks=checks)
        raise InequalityViolated("%s: '%s' violated by %.3g" % (what, worst["name"], -worst["slack"]), instance)
    return worst


def _instance(model, grid):
    return {
        "model": model.describe(),
        "pi": model.target.probabilities.tolist(),
        "q": model.proposal.inner.tolist(),
        "nodes": grid.nodes.tolist(),
        "masses": grid.masses.tolist(),
    }


def verify_gap_sandwich(model, family, w_bar=None, rng=None, random_sets=8, tolerance=ORDER_TOLERANCE):
    joint = JointGrid(model, family)
    matrices = {kind: build_joint_matrix(model, joint, kind) for kind in (MARGINAL, PSEUDO, AUXILIARY, CHECK)}
    if w_bar is None:
        w_bar = joint.grid.max_weight()
    gaps = {kind: spectral_gap(m).gap for kind, m in matrices.items()}
    marginal = matrices[MARGINAL]
    rho = marginal.rejection[support(marginal)]
    checks = []
    _slack("auxiliary_below_marginal", gaps[AUXILIARY], gaps[MARGINAL], checks)
    _slack("auxiliary_above_min", min(gaps[MARGINAL], 1.0 - rho.max()), gaps[AUXILIARY], checks)
    _slack("pseudo_above_check", gaps[CHECK], gaps[PSEUDO], checks)
    _slack("check_above_scaled_auxiliary", gaps[AUXILIARY] / w_bar, gaps[CHECK], checks)
    _slack("pseudo_above_scaled_auxiliary", gaps[AUXILIARY] / w_bar, gaps[PSEUDO], checks)
    _slack("pseudo_below_marginal", gaps[PSEUDO], gaps[MARGINAL], checks)
    if rng is not None:
        for i in range(random_sets):
            members = np.flatnonzero(rng.random(marginal.size) < 0.5)
            if 0 < len(members) < marginal.size:
                _slack("acceptance_bound_set_%d" % i, gaps[MARGINAL],
                       gap_acceptance_bound(marginal, members), checks)
    report = {"gaps": gaps, "w_bar": w_bar, "max_rejection": float(rho.max()), "checks": checks}
    _raise_if_violated(checks, tolerance, _instance(model, joint.grid), "gap sandwich")
    logger.info("gap sandwich holds for %s (min slack %.3g)", model.name, min(c["slack"] for c in checks))
    return report


def _lifted_poisson(K, f, lam=None):
    rows, mu = restricted(K)
    fbar = _centred(mu, np.asarray(f, dtype=float)[support(K)])
    n = len(mu)
    if lam is None:
        return poisson_solution(rows, mu, fbar)
    return linalg.solve(np.eye(n) - lam * rows, fbar)


def verify_variance_order(model, family, g, w_bar=None, lambdas=(0.5, 0.9, 0.99), tolerance=ORDER_TOLERANCE):
    """
    var(g, P_pseudo) >= var(g, P), the refined lower bound through Delta
    functionals of g_lambda(x, y) = (phi(x) - phi(y))^2, the upper bound
    for bounded weights, and var(g, P_check) >= var(g, P_pseudo).
    """
    joint = JointGrid(model, family)
    marginal = build_joint_matrix(model, joint, MARGINAL)
    pseudo = build_joint_matrix(model, joint, PSEUDO)
    check = build_joint_matrix(model, joint, CHECK)
    g = np.asarray(g, dtype=float)
    if w_bar is None:
        w_bar = joint.grid.max_weight()
    var_p = asymptotic_variance_exact(marginal, g)
    var_pseudo = asymptotic_variance_exact(pseudo, pseudo.lift(g))
    var_check = asymptotic_variance_exact(check, check.lift(g))
    var_pi = var_p.var_pi
    checks = []
    _slack("pseudo_above_marginal", var_p.var_exact, var_pseudo.var_exact, checks)
    _slack("check_above_pseudo", var_pseudo.var_exact, var_check.var_exact, checks)
    if np.isfinite(w_bar):
        _slack("pseudo_below_scaled_marginal", var_pseudo.var_exact,
               w_bar * var_p.var_exact + (w_bar - 1.0) * var_pi, checks)
    refined = []
    for lam in tuple(lambdas) + (None,):
        if lam is None and var_p.infinite:
            continue
        phi = np.zeros(model.size)
        phi[support(marginal)] = _lifted_poisson(marginal, g, lam)
        g_lam = (phi[:, None] - phi[None, :]) ** 2
        delta = delta_functional(model, joint, g_lam)
        if lam is None:
            lhs = var_pseudo.var_exact - var_p.var_exact
            factor = 1.0
        else:
            lhs = var_lambda(pseudo, pseudo.lift(g), lam) - var_lambda(marginal, g, lam)
            factor = lam
        _slack("refined_lower_bound_%s" % ("limit" if lam is None else lam),
               factor * delta.difference, lhs, checks)
        refined.append({"lambda": lam, "delta_bar": delta.bar, "delta_pseudo": delta.pseudo, "lhs": lhs})
    report = {
        "var_marginal": var_p.var_exact,
        "var_pseudo": var_pseudo.var_exact,
        "var_check": var_check.var_exact,
        "var_pi": var_pi,
        "w_bar": w_bar,
        "refined": refined,
        "checks": checks,
    }
    instance = _instance(model, joint.grid)
    instance["g"] = g.tolist()
    _raise_if_violated(checks, tolerance, instance, "variance order")
    return report


def gap_collapse_scan(model, family, upper_quantiles, nodes=48, lower_quantile=1e-6):
    """
    Gaps of the pseudo-marginal kernel on weight grids cut at increasing upper
    quantiles, each with the acceptance-based upper bound over the tail sets
    {w >= node}.
    """
    levels = []
    for upper in upper_quantiles:
        grid = family.project(range(model.size), nodes=nodes, lower_quantile=lower_quantile,
                              upper_quantile=upper)
        K = build_joint_matrix(model, grid, PSEUDO)
        gap = spectral_gap(K).gap
        best = float("inf")
        best_mass = None
        for node in np.unique(K.w_values)[::-1]:
            members = np.flatnonzero(K.w_values >= node)
            mass = float(K.stationary[members].sum())
            if mass > 0.5:
                break
            bound = gap_acceptance_bound(K, members)
            if bound < best:
                best, best_mass = bound, mass
        levels.append({
            "upper_quantile": upper,
            "max_weight": float(grid.max_weight()),
            "gap": gap,
            "acceptance_bound": best,
            "tail_mass": best_mass,
            "bound_holds": gap <= best + ORDER_TOLERANCE,
        })
        logger.info("cutoff %.10g: gap %.6g, bound %.6g", upper, gap, best)
    gaps = [level["gap"] for level in levels]
    nonincreasing = all(b <= a + 1e-6 for a, b in zip(gaps, gaps[1:]))
    return {"levels": levels, "nonincreasing": nonincreasing}
