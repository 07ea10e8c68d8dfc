"""
Samplers and exact matrices for the marginal, pseudo-marginal, auxiliary
and check kernels, plus acceptance-rate functionals.
"""

import logging

import numpy as np

from .errors import AsymmetricG, GridTooLarge, InequalityViolated
from .joint import JointKernelMatrix, JointState
from .target_models import build_marginal_matrix
from .weight_models import WeightFamily


logger = logging.getLogger(__name__)

MARGINAL = "marginal"
PSEUDO = "pseudo"
AUXILIARY = "auxiliary"
CHECK = "check"
LAZY = "lazy"

ENTRY_BUDGET = 4 * 10 ** 7
IDENTITY_TOLERANCE = 1e-10


def _ratio(model, x, y):
    return model.ratio_matrix()[x, y]


def marginal_step(model, current, rng):
    y = model.proposal.sample(current.x, rng)
    v = rng.random()
    if y >= 0 and v < min(1.0, _ratio(model, current.x, y)):
        return JointState(y, current.w), True
    return current, False


def pseudo_step(model, family, current, rng):
    y = model.proposal.sample(current.x, rng)
    u = family.sample(y, rng) if y >= 0 else 0.0
    v = rng.random()
    if y >= 0 and u > 0 and v < min(1.0, _ratio(model, current.x, y) * u / current.w):
        return JointState(y, u), True
    return current, False


def auxiliary_step(model, family, current, rng):
    y = model.proposal.sample(current.x, rng)
    u = family.sample_tilted(y, rng) if y >= 0 else 0.0
    v = rng.random()
    if y >= 0 and v < min(1.0, _ratio(model, current.x, y)):
        return JointState(y, u), True
    return current, False


def make_stepper(kind, model, family=None):
    if kind == MARGINAL:
        return lambda state, rng: marginal_step(model, state, rng)
    if kind == PSEUDO:
        return lambda state, rng: pseudo_step(model, family, state, rng)
    if kind == AUXILIARY:
        return lambda state, rng: auxiliary_step(model, family, state, rng)
    raise ValueError("no sampler for kernel kind %r" % kind)


class JointGrid:
    """Joint states (x, w) with positive stationary mass, x-major and w-minor."""

    def __init__(self, model, grid):
        if isinstance(grid, WeightFamily):
            grid = grid.project(range(model.size))
        self.model = model
        self.grid = grid
        xs, ws, qs = [], [], []
        pi = model.target.probabilities
        for x in range(model.size):
            if pi[x] <= 0:
                continue
            masses = grid.masses_of(x)
            for j in np.flatnonzero(masses > 0):
                xs.append(x)
                ws.append(grid.nodes[j])
                qs.append(masses[j])
        self.x = np.array(xs, dtype=int)
        self.w = np.array(ws, dtype=float)
        self.q_mass = np.array(qs, dtype=float)
        stationary = pi[self.x] * self.q_mass * self.w
        self.stationary = stationary / stationary.sum()

    @property
    def size(self):
        return len(self.x)

    def check_budget(self, budget):
        if self.size ** 2 > budget:
            raise GridTooLarge("joint grid of %d states needs %d entries, budget is %d"
                               % (self.size, self.size ** 2, budget))

    def proposal_block(self):
        return self.model.proposal.inner[np.ix_(self.x, self.x)]

    def ratio_block(self):
        return self.model.ratio_matrix()[np.ix_(self.x, self.x)]

    def accepted_mass(self, kind):
        """Probability of proposing and accepting a move to each joint state."""
        q = self.proposal_block()
        r = self.ratio_block()
        u = self.w[None, :]
        w = self.w[:, None]
        if kind == PSEUDO:
            return q * self.q_mass[None, :] * np.minimum(1.0, r * u / w)
        if kind == AUXILIARY:
            return q * (self.q_mass * self.w)[None, :] * np.minimum(1.0, r)
        if kind == CHECK:
            return q * self.q_mass[None, :] * np.minimum(1.0, r) * np.minimum(1.0, u / w)
        raise ValueError("unknown joint kernel kind %r" % kind)


def build_joint_matrix(model, grid, kind=PSEUDO, epsilon=None, base=PSEUDO, budget=ENTRY_BUDGET):
    """
    Exact kernel matrix on the joint grid.

    ``grid`` is a WeightGrid or a WeightFamily (projected with defaults).
    For kind "lazy" the matrix is epsilon I + (1 - epsilon) K for K of kind ``base``.
    """
    if kind == MARGINAL:
        return build_marginal_matrix(model)
    if kind == LAZY:
        return build_joint_matrix(model, grid, base, budget=budget).lazy(epsilon)
    joint = grid if isinstance(grid, JointGrid) else JointGrid(model, grid)
    joint.check_budget(budget)
    accepted = joint.accepted_mass(kind)
    rejection = np.clip(1.0 - accepted.sum(axis=1), 0.0, 1.0)
    rows = accepted
    rows[np.diag_indices_from(rows)] += rejection
    logger.info("built %s matrix for %s (%d joint states)", kind, model.name, joint.size)
    return JointKernelMatrix(kind, rows, joint.stationary, joint.x, joint.w, rejection=rejection)


def build_all(model, grid, kinds=(MARGINAL, PSEUDO, AUXILIARY, CHECK), budget=ENTRY_BUDGET):
    joint = JointGrid(model, grid)
    return {kind: build_joint_matrix(model, joint, kind, budget=budget) for kind in kinds}


def mean_acceptance(source, kind=MARGINAL, grid=None):
    """
    Stationary mean acceptance probability of a matrix, or of a model's kernel
    of ``kind``.  For lazy matrices it is the acceptance rate of the proposals
    actually made, which equals that of the base kernel.
    """
    if not isinstance(source, JointKernelMatrix):
        if kind == MARGINAL:
            source = build_marginal_matrix(source)
        else:
            source = build_joint_matrix(source, grid, kind)
    accepted = 1.0 - source.rejection / (1.0 - source.holding)
    return float(np.dot(source.stationary, accepted))


class DeltaReport:

    def __init__(self, bar, pseudo, bound):
        self.bar = bar
        self.pseudo = pseudo
        self.bound = bound

    @property
    def difference(self):
        return self.bar - self.pseudo

    def __iter__(self):
        return iter((self.bar, self.pseudo))

    def to_dict(self):
        return {"delta_bar": self.bar, "delta_pseudo": self.pseudo,
                "difference": self.difference, "bound": self.bound}


def _abs_deviation_on_grid(grid, x):
    row = grid.row(x)
    return float(np.dot(grid.masses[row], np.abs(grid.nodes - 1.0)) + grid.null_mass[row])


def delta_functional(model, grid, g):
    """(Delta_bar(g), Delta_pseudo(g)) for symmetric g >= 0 on X x X, with the |w - 1| bound."""
    g = np.asarray(g, dtype=float)
    if g.shape != (model.size, model.size):
        raise ValueError("g must be a %dx%d array" % (model.size, model.size))
    if not np.allclose(g, g.T, atol=1e-12, rtol=0.0):
        raise AsymmetricG("g(x, y) must equal g(y, x)")
    if np.any(g < 0):
        raise AsymmetricG("g must be nonnegative")
    joint = grid if isinstance(grid, JointGrid) else JointGrid(model, grid)
    pi = model.target.probabilities
    marginal = model.acceptance_matrix() * g
    bar = float(np.dot(pi, marginal.sum(axis=1)))
    pseudo_rows = joint.accepted_mass(PSEUDO) * g[np.ix_(joint.x, joint.x)]
    pseudo = float(np.dot(joint.stationary, pseudo_rows.sum(axis=1)))
    deviation = np.array([_abs_deviation_on_grid(joint.grid, x) if pi[x] > 0 else 0.0
                          for x in range(model.size)])
    bound = float(np.dot(pi * deviation, marginal.sum(axis=1)))
    return DeltaReport(bar, pseudo, bound)


def acceptance_profile(model, grid):
    """Per-state pi_x-averaged pseudo acceptance next to the marginal acceptance 1 - rho(x)."""
    joint = grid if isinstance(grid, JointGrid) else JointGrid(model, grid)
    accepted = joint.accepted_mass(PSEUDO).sum(axis=1)
    tilted = joint.q_mass * joint.w
    pseudo = np.bincount(joint.x, weights=tilted * accepted, minlength=model.size)
    mass = np.bincount(joint.x, weights=tilted, minlength=model.size)
    with np.errstate(invalid="ignore"):
        pseudo = np.where(mass > 0, pseudo / mass, np.nan)
    return pseudo, 1.0 - model.rejection()


def acceptance_bounds(model, grid, p=2.0, tolerance=IDENTITY_TOLERANCE):
    """
    alpha_P - alpha_pseudo against its upper bounds.

    Raises InequalityViolated if the difference is negative or exceeds any bound.
    """
    joint = grid if isinstance(grid, JointGrid) else JointGrid(model, grid)
    q = p / (p - 1.0)
    pi = model.target.probabilities
    support = pi > 0
    accept = 1.0 - model.rejection()
    alpha_p = float(np.dot(pi, accept))
    accepted = joint.accepted_mass(PSEUDO).sum(axis=1)
    alpha_pseudo = float(np.dot(joint.stationary, accepted))
    deviation = np.zeros(model.size)
    deviation_q = np.zeros(model.size)
    for x in np.flatnonzero(support):
        row = joint.grid.row(x)
        masses = joint.grid.masses[row]
        null = joint.grid.null_mass[row]
        deviation[x] = np.dot(masses, np.abs(joint.grid.nodes - 1.0)) + null
        deviation_q[x] = np.dot(masses, np.abs(joint.grid.nodes - 1.0) ** q) + null
    bounds = {
        "full": float(np.dot(pi, deviation)),
        "middle": float(np.dot(pi * accept, deviation)),
        "sup": alpha_p * float(deviation[support].max()),
        "holder": alpha_p ** (1.0 / p) * float(np.dot(pi, deviation_q)) ** (1.0 / q),
    }
    report = {"alpha_marginal": alpha_p, "alpha_pseudo": alpha_pseudo,
              "difference": alpha_p - alpha_pseudo, "bounds": bounds}
    slacks = {"order": alpha_p - alpha_pseudo}
    for name, value in bounds.items():
        slacks[name] = value - (alpha_p - alpha_pseudo)
    report["slacks"] = slacks
    worst = min(slacks, key=slacks.get)
    if slacks[worst] < -tolerance:
        raise InequalityViolated("acceptance bound '%s' violated by %.3g" % (worst, -slacks[worst]), report)
    return report
