"""
Joint (x, w) states and exact transition matrices over the product grid.

Joint grids are ordered x-major, w-minor.
"""

import logging

import numpy as np

from .errors import NotReversible


logger = logging.getLogger(__name__)

ROW_TOLERANCE = 1e-10
BALANCE_TOLERANCE = 1e-9

KINDS = ("marginal", "pseudo", "auxiliary", "check", "lazy")


class JointState:

    def __init__(self, x, w=1.0):
        self.x = int(x)
        self.w = float(w)

    def __eq__(self, other):
        return isinstance(other, JointState) and self.x == other.x and self.w == other.w

    def __hash__(self):
        return hash((self.x, self.w))

    def __repr__(self):
        return "JointState(%d, %r)" % (self.x, self.w)


class JointKernelMatrix:
    """
    Row-stochastic matrix of one of the kernels, with its stationary vector.

    ``rejection`` is the probability that a proposal is not accepted, kept
    apart from the diagonal because accepted self-proposals also land there.
    ``holding`` is the probability of staying put without proposing, nonzero
    only for lazy kernels.
    """

    def __init__(self, kind, rows, stationary, x_index, w_values,
                 rejection=None, base=None, epsilon=None, holding=None):
        if kind not in KINDS:
            raise ValueError("unknown kernel kind %r" % kind)
        self.kind = kind
        self.rows = np.asarray(rows, dtype=float)
        self.stationary = np.asarray(stationary, dtype=float)
        self.x_index = np.asarray(x_index, dtype=int)
        self.w_values = np.asarray(w_values, dtype=float)
        if rejection is None:
            rejection = np.diag(self.rows).copy()
        self.rejection = np.asarray(rejection, dtype=float)
        if holding is None:
            holding = np.zeros_like(self.rejection)
        self.holding = np.asarray(holding, dtype=float)
        self.base = base
        self.epsilon = epsilon

    @property
    def size(self):
        return self.rows.shape[0]

    def __len__(self):
        return self.size

    def states(self):
        return [JointState(x, w) for x, w in zip(self.x_index, self.w_values)]

    def index_of(self, x, w=None):
        hits = np.flatnonzero(self.x_index == x)
        if w is not None:
            hits = hits[np.isclose(self.w_values[hits], w, rtol=1e-12, atol=0.0)]
        if len(hits) == 0:
            raise KeyError((x, w))
        return int(hits[0])

    def lift(self, g):
        """Values of a function on X (array or callable) at every joint state."""
        if callable(g):
            return np.asarray([g(x) for x in self.x_index], dtype=float)
        return np.asarray(g, dtype=float)[self.x_index]

    def row_sum_error(self):
        return float(np.max(np.abs(self.rows.sum(axis=1) - 1.0)))

    def detailed_balance_residual(self):
        flow = self.stationary[:, None] * self.rows
        return float(np.max(np.abs(flow - flow.T)))

    def stationarity_error(self):
        return float(np.sum(np.abs(self.stationary @ self.rows - self.stationary)))

    def validate(self, tolerance=BALANCE_TOLERANCE):
        row_error = self.row_sum_error()
        if row_error > ROW_TOLERANCE:
            raise NotReversible("%s rows do not sum to one (error %.3g)" % (self.kind, row_error), row_error)
        residual = self.detailed_balance_residual()
        if residual > tolerance:
            raise NotReversible("%s kernel is not reversible (residual %.3g)" % (self.kind, residual), residual)
        return residual

    def lazy(self, epsilon):
        """epsilon I + (1 - epsilon) K; the held mass goes to ``holding``, not ``rejection``."""
        if not 0.0 <= epsilon < 1.0:
            raise ValueError("laziness must lie in [0, 1)")
        rows = (1.0 - epsilon) * self.rows
        rows[np.diag_indices_from(rows)] += epsilon
        return JointKernelMatrix("lazy", rows, self.stationary, self.x_index, self.w_values,
                                 rejection=(1.0 - epsilon) * self.rejection, base=self.kind, epsilon=epsilon,
                                 holding=epsilon + (1.0 - epsilon) * self.holding)

    def collapse_x(self):
        """X-block kernel sum_w pi_x(w) sum_u K((x,w),(y,u)) for the X-marginal."""
        n = int(self.x_index.max()) + 1
        indicator = np.zeros((self.size, n))
        indicator[np.arange(self.size), self.x_index] = 1.0
        x_mass = self.stationary @ indicator
        flow = (self.stationary[:, None] * self.rows) @ indicator
        block = indicator.T @ flow
        with np.errstate(invalid="ignore", divide="ignore"):
            block = np.where(x_mass[:, None] > 0, block / x_mass[:, None], 0.0)
        return block

    def to_csv(self, path):
        rows, cols = np.nonzero(self.rows)
        table = np.column_stack([rows, cols, self.x_index[rows], self.w_values[rows],
                                 self.x_index[cols], self.w_values[cols], self.rows[rows, cols]])
        np.savetxt(path, table, delimiter=",", comments="",
                   header="row,col,x_from,w_from,x_to,w_to,value",
                   fmt=["%d", "%d", "%d", "%.17g", "%d", "%.17g", "%.17g"])

    def describe(self):
        return {
            "kind": self.kind,
            "size": self.size,
            "base": self.base,
            "epsilon": self.epsilon,
        }
