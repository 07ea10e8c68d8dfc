"""
Scenario files: a model block, a family block, experiment blocks and the
top-level ``seed`` and ``output_dir`` declarations.
"""

import hashlib
import logging

import numpy as np

from ..errors import ConfigError
from ..target_models import (ContinuousModel, ModelSpec, ProposalKernel, StateSpace,
                             TargetDistribution, normal_target, quartic_target)
from ..weight_models import ConstantOne, Discrete, Gamma, LogNormal, TwoPoint, averaged_family
from .parser import parse


logger = logging.getLogger(__name__)

EXPERIMENT_KINDS = (
    "spectral_sandwich",
    "variance_order",
    "variance_convergence",
    "gap_collapse",
    "drift_imh",
    "drift_uniform",
    "drift_rwm",
    "counterexample",
    "unifdrift",
)

GRID_KEYS = ("nodes", "lower_quantile", "upper_quantile")


class Experiment:

    def __init__(self, kind, params, label=None):
        self.kind = kind
        self.params = params
        self.label = label or kind

    def get(self, key, default=None):
        return self.params.get(key, default)

    def __repr__(self):
        return "Experiment(%r, %r)" % (self.kind, self.params)


class ScenarioConfig:

    def __init__(self, model, family, experiments, output_dir, seed, grid_options=None, text=""):
        self.model = model
        self.family = family
        self.experiments = experiments
        self.output_dir = output_dir
        self.seed = seed
        self.grid_options = grid_options or {}
        self.text = text

    @property
    def config_hash(self):
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()

    def project(self, states):
        return self.family.project(states, **self.grid_options)


def _values(block, key, path, required=True, default=None):
    found = block.declarations().get(key)
    if found is None:
        if required:
            raise ConfigError("missing key", key="%s.%s" % (path, key), line=block.line)
        return default
    return found


def _number(block, key, path, default=None, required=False):
    found = _values(block, key, path, required=required and default is None)
    if found is None:
        return default
    if len(found.values) != 1 or isinstance(found.value, str):
        raise ConfigError("expected one number", key="%s.%s" % (path, key), line=found.line)
    return found.value


def _numbers(block, key, path, required=True):
    found = _values(block, key, path, required)
    if found is None:
        return None
    if any(isinstance(v, str) for v in found.values):
        raise ConfigError("expected numbers", key="%s.%s" % (path, key), line=found.line)
    return [float(v) for v in found.values]


def _word(block, key, path, default=None):
    found = _values(block, key, path, required=default is None)
    if found is None:
        return default
    if len(found.values) != 1 or not isinstance(found.value, str):
        raise ConfigError("expected one word", key="%s.%s" % (path, key), line=found.line)
    return found.value


def _space(block, path):
    kind = _word(block, "space", path)
    if kind == "finite":
        labels = _values(block, "labels", path, required=False)
        if labels is not None:
            return StateSpace.finite(labels.values)
        return StateSpace.finite(int(_number(block, "states", path, required=True)))
    if kind == "grid":
        return StateSpace.grid(_number(block, "lower", path, required=True), _number(block, "upper", path, required=True),
                               int(_number(block, "points", path, required=True)),
                               int(_number(block, "dimension", path, default=1)))
    raise ConfigError("unknown space %r" % kind, key="%s.space" % path, line=block.line)


def _grid_density(kind, block, path):
    if kind == "normal":
        mean = _number(block, "mean", path, default=0.0)
        sd = _number(block, "sd", path, default=1.0)
        return lambda c: -0.5 * np.sum(((c - mean) / sd) ** 2, axis=1)
    if kind == "quartic":
        return lambda c: -np.sum(c ** 4, axis=1)
    raise ConfigError("unknown target %r" % kind, key="%s.target" % path, line=block.line)


def _target(block, space, path):
    kind = _word(block, "target", path)
    if kind == "masses":
        masses = _numbers(block, "masses", path)
        if len(masses) != space.size:
            raise ConfigError("expected %d masses, got %d" % (space.size, len(masses)), key="%s.masses" % path)
        return TargetDistribution(space, mass=masses)
    if kind == "uniform":
        return TargetDistribution.uniform(space)
    if kind == "geometric":
        return TargetDistribution.geometric(space, _number(block, "ratio", path, default=0.5))
    if space.kind != "grid":
        raise ConfigError("target %r needs a grid space" % kind, key="%s.target" % path, line=block.line)
    return TargetDistribution.from_density(space, _grid_density(kind, block, path))


def _proposal(block, space, path):
    kind = _word(block, "proposal", path)
    n = space.size
    if kind == "independent":
        masses = _numbers(block, "proposal_masses", path, required=False)
        return ProposalKernel.independent(masses if masses is not None else np.ones(n))
    if kind == "random_walk":
        steps = _numbers(block, "steps", path, required=False) or [-1.0, 1.0]
        probs = _numbers(block, "step_probs", path, required=False) or [1.0 / len(steps)] * len(steps)
        if len(probs) != len(steps):
            raise ConfigError("steps and step_probs differ in length", key="%s.step_probs" % path)
        return ProposalKernel.random_walk(space, {int(s): p for s, p in zip(steps, probs)})
    if kind == "gaussian":
        return ProposalKernel.gaussian(space, _number(block, "scale", path, default=1.0),
                                       _number(block, "width", path, default=4.0))
    if kind == "explicit":
        rows = _numbers(block, "matrix", path)
        if len(rows) != n * n:
            raise ConfigError("explicit proposal needs %d entries" % (n * n), key="%s.matrix" % path)
        return ProposalKernel.explicit(np.reshape(rows, (n, n)))
    raise ConfigError("unknown proposal %r" % kind, key="%s.proposal" % path, line=block.line)


def build_model(block, path="model"):
    """A ModelSpec, or a ContinuousModel for ``space: continuous``."""
    try:
        if _word(block, "space", path) == "continuous":
            kind = _word(block, "target", path)
            lower = _number(block, "lower", path, default=-10.0)
            upper = _number(block, "upper", path, default=10.0)
            if kind == "normal":
                target = normal_target(lower, upper, _number(block, "mean", path, default=0.0),
                                       _number(block, "sd", path, default=1.0))
            elif kind == "quartic":
                target = quartic_target(lower, upper)
            else:
                raise ConfigError("unknown continuous target %r" % kind, key="%s.target" % path, line=block.line)
            return ContinuousModel(target, _number(block, "scale", path, default=1.0), name=block.label)
        space = _space(block, path)
        return ModelSpec(_target(block, space, path), _proposal(block, space, path), name=block.label)
    except ValueError as error:
        raise ConfigError(str(error), key=path, line=block.line)


def build_family(block, path="family"):
    kind = _word(block, "kind", path)
    try:
        if kind == "constant_one":
            family = ConstantOne()
        elif kind == "two_point":
            family = TwoPoint(_number(block, "low", path, required=True), _number(block, "p_low", path, required=True))
        elif kind == "discrete":
            values = _numbers(block, "values", path)
            probs = _numbers(block, "probs", path)
            if len(values) != len(probs):
                raise ConfigError("values and probs differ in length", key="%s.probs" % path)
            family = Discrete(list(zip(values, probs)))
        elif kind == "lognormal":
            family = LogNormal(_number(block, "sigma", path, required=True))
        elif kind == "gamma":
            family = Gamma(_number(block, "shape", path, required=True))
        else:
            raise ConfigError("unknown weight family %r" % kind, key="%s.kind" % path, line=block.line)
        average = _number(block, "average", path, default=1)
        return averaged_family(family, int(average))
    except ValueError as error:
        raise ConfigError(str(error), key=path, line=block.line)


def _params(block):
    return {name: decl.value for name, decl in block.declarations().items()}


def _single(tree, name):
    found = tree.blocks(name)
    if not found:
        raise ConfigError("missing block", key=name)
    if len(found) > 1:
        raise ConfigError("more than one block", key=name, line=found[1].line)
    return found[0]


def load_scenario(source):
    """
    A ScenarioConfig from a file path or from scenario text.

    ``seed``, a ``model`` block and a ``family`` block are required;
    ``experiment <kind>`` blocks run in source order.
    """
    text = source
    if "\n" not in source and "{" not in source:
        try:
            with open(source) as handle:
                text = handle.read()
        except OSError as error:
            raise ConfigError("cannot read scenario: %s" % error, key=source)
    tree = parse(text)
    unknown = [b.name for b in tree.blocks() if b.name not in ("model", "family", "experiment")]
    if unknown:
        raise ConfigError("unknown block", key=unknown[0])
    top = tree.declarations()
    if "seed" not in top:
        raise ConfigError("missing key", key="seed")
    seed = top["seed"].value
    if not isinstance(seed, int):
        raise ConfigError("seed must be an integer", key="seed", line=top["seed"].line)
    output_dir = top["output_dir"].value if "output_dir" in top else "out"

    model = build_model(_single(tree, "model"))
    family_block = _single(tree, "family")
    family = build_family(family_block)
    grid_options = {}
    for key in GRID_KEYS:
        value = _number(family_block, key, "family")
        if value is not None:
            grid_options[key] = int(value) if key == "nodes" else float(value)

    experiments = []
    for i, block in enumerate(tree.blocks("experiment")):
        if block.label not in EXPERIMENT_KINDS:
            raise ConfigError("unknown experiment kind %r" % block.label, key="experiment[%d]" % i, line=block.line)
        experiments.append(Experiment(block.label, _params(block)))
    logger.info("loaded scenario with %d experiments (seed %d)", len(experiments), seed)
    return ScenarioConfig(model, family, experiments, output_dir, seed, grid_options, text)

