"""
Scenario execution: runs the experiments of a scenario file, writes
report.json with one CSV table per experiment, and maps outcomes to exit
statuses.  Also hosts the randomized property suite over small finite
instances.
"""

import datetime
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .config import load_scenario
from .drift_lab import (DriftSpec, NonuniformMoments, check_imh_drift, check_rwm_drift, check_uniform_marginal_drift,
                        counterexample_ledger, verify_unifdrift_condition)
from .errors import CheckFailure, ConfigError, InequalityViolated, PmlabError
from .kernels import PSEUDO, JointGrid, acceptance_bounds, build_joint_matrix
from .mcmc_engine import variance_convergence_experiment
from .spectral import gap_collapse_scan, positivity_check, verify_gap_sandwich, verify_variance_order
from .target_models import ContinuousModel, ModelSpec, ProposalKernel, StateSpace, TargetDistribution
from .weight_models import Averaged, ConstantOne, Discrete


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_VIOLATION = 2

PASSED = "pass"
VIOLATED = "violation"
FAILED = "error"

POSITIVITY_TOLERANCE = 1e-9
EQUALITY_TOLERANCE = 1e-10


def _listed(value, default):
    if value is None:
        return list(default)
    return list(value) if isinstance(value, list) else [value]


def _finite(config, kind):
    if not isinstance(config.model, ModelSpec):
        raise ConfigError("experiment needs a finite model", key="experiment %s" % kind)
    return config.model


def _test_function(config, experiment):
    model = config.model
    g = experiment.get("g")
    if g is None:
        return np.arange(model.size, dtype=float)
    g = np.asarray(_listed(g, ()), dtype=float)
    if len(g) != model.size:
        raise ConfigError("g needs %d values" % model.size, key="experiment %s.g" % experiment.kind)
    return g


def _base_family(config):
    family = config.family
    return family.base if isinstance(family, Averaged) else family


def _checks_table(checks):
    def write(path):
        with open(path, "w") as handle:
            handle.write("name,lhs,rhs,slack\n")
            for c in checks:
                handle.write("%s,%r,%r,%r\n" % (c["name"], c["lhs"], c["rhs"], c["slack"]))
    return write


def _rows_table(rows, fields):
    def write(path):
        with open(path, "w") as handle:
            handle.write(",".join(fields) + "\n")
            for row in rows:
                handle.write(",".join(repr(row.get(f)) for f in fields) + "\n")
    return write


def run_spectral_sandwich(config, experiment, seed):
    model = _finite(config, experiment.kind)
    grid = config.project(range(model.size))
    report = verify_gap_sandwich(model, grid, rng=np.random.default_rng(seed),
                                 random_sets=int(experiment.get("random_sets", 8)))
    return report, _checks_table(report["checks"])


def run_variance_order(config, experiment, seed):
    model = _finite(config, experiment.kind)
    grid = config.project(range(model.size))
    report = verify_variance_order(model, grid, _test_function(config, experiment),
                                   lambdas=_listed(experiment.get("lambdas"), (0.5, 0.9, 0.99)))
    return report, _checks_table(report["checks"])


def run_variance_convergence(config, experiment, seed):
    model = _finite(config, experiment.kind)
    n_list = [int(n) for n in _listed(experiment.get("N"), (1, 2, 4, 8, 16, 32))]
    table = variance_convergence_experiment(model, _base_family(config), n_list, _test_function(config, experiment))
    return table.to_dict(), table.to_csv


def run_gap_collapse(config, experiment, seed):
    model = _finite(config, experiment.kind)
    report = gap_collapse_scan(model, config.family, _listed(experiment.get("upper_quantiles"), (1 - 1e-2, 1 - 1e-6)),
                               nodes=int(experiment.get("nodes", 48)))
    if not all(level["bound_holds"] for level in report["levels"]):
        raise InequalityViolated("gap exceeds its acceptance bound", report)
    fields = ["upper_quantile", "max_weight", "gap", "acceptance_bound", "tail_mass"]
    return report, _rows_table(report["levels"], fields)


def run_drift_imh(config, experiment, seed):
    model = _finite(config, experiment.kind)
    report = check_imh_drift(model, config.family, flavor=experiment.get("flavor", "poly"),
                             exponent=float(experiment.get("exponent", 2.0)),
                             grid=config.project(range(model.size)))
    return report.to_dict(), report.to_csv


def run_drift_uniform(config, experiment, seed):
    model = _finite(config, experiment.kind)
    report = check_uniform_marginal_drift(model, config.family, beta=float(experiment.get("beta", 2.0)),
                                          grid=config.project(range(model.size)))
    return report.to_dict(), report.to_csv


def run_drift_rwm(config, experiment, seed):
    model = config.model
    if not isinstance(model, ContinuousModel):
        raise ConfigError("drift_rwm needs a continuous model", key="model.space")
    mode = experiment.get("mode", "uniform")
    moments = None
    if mode == "nonuniform":
        moments = NonuniformMoments(experiment.get("xi_w", 0.1), experiment.get("xi_pi", 0.1),
                                    experiment.get("xi_c", 0.3), growth=experiment.get("growth", 1.0),
                                    c_exponent=experiment.get("c_exponent", 1.0))
    report = check_rwm_drift(model, config.family, eta=float(experiment.get("eta", 0.25)),
                             alpha=float(experiment.get("alpha", 1.0)), beta=float(experiment.get("beta", 2.0)),
                             mode=mode, alpha_prime=experiment.get("alpha_prime"),
                             beta_prime=experiment.get("beta_prime"), nonuniform=moments,
                             mc_samples=int(experiment.get("mc_samples", 10 ** 5)), seed=seed)
    return report.to_dict(), report.to_csv


def run_counterexample(config, experiment, seed):
    ledger = counterexample_ledger([int(k) for k in _listed(experiment.get("k"), (1, 2))],
                                   truncation=experiment.get("truncation"))
    fields = ["k", "states", "joint_states", "quotient", "bound", "drift_error", "left_gap", "gap"]
    return ledger, _rows_table(ledger["entries"], fields)


def run_unifdrift(config, experiment, seed):
    model = _finite(config, experiment.kind)
    beta = float(experiment.get("beta", 2.0))
    spec = DriftSpec(lambda x, w: w ** beta + 1.0, rate=(beta - 1.0) / beta)
    n_list = [int(n) for n in _listed(experiment.get("N"), (1, 2, 4))]
    report = verify_unifdrift_condition(model, _base_family(config), n_list, spec,
                                        g=lambda x: _test_function(config, experiment)[x],
                                        kappa=float(experiment.get("kappa", 0.5)),
                                        lam=float(experiment.get("lambda", 0.5)))
    return report, _rows_table(report["per_N"], ["N", "min_slack", "states"])


HANDLERS = {
    "spectral_sandwich": run_spectral_sandwich,
    "variance_order": run_variance_order,
    "variance_convergence": run_variance_convergence,
    "gap_collapse": run_gap_collapse,
    "drift_imh": run_drift_imh,
    "drift_uniform": run_drift_uniform,
    "drift_rwm": run_drift_rwm,
    "counterexample": run_counterexample,
    "unifdrift": run_unifdrift,
}


def _run_one(config, index, experiment, seed):
    logger.info("experiment %d (%s) starting", index, experiment.kind)
    try:
        result, table = HANDLERS[experiment.kind](config, experiment, seed)
    except CheckFailure as failure:
        logger.info("experiment %d (%s): %s", index, experiment.kind, failure)
        return {"kind": experiment.kind, "status": VIOLATED, "message": str(failure),
                "regime": getattr(failure, "regime", None)}, None, failure.instance
    except (PmlabError, ValueError) as error:
        logger.error("experiment %d (%s) failed: %s", index, experiment.kind, error)
        return {"kind": experiment.kind, "status": FAILED, "message": str(error)}, None, None
    logger.info("experiment %d (%s) passed", index, experiment.kind)
    return {"kind": experiment.kind, "status": PASSED, "result": result}, table, None


def _json_default(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    return str(value)


def _dump(path, payload):
    with open(path, "w") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True, default=_json_default)
        handle.write("\n")


def run_scenario(source, out=None, jobs=1, seed_override=None):
    """
    Run every experiment of a scenario and write the report files.

    Returns 0 when every asserted inequality holds, 2 when one is violated
    (the offending instance is dumped next to the report) and 1 on
    configuration or file errors.
    """
    try:
        config = load_scenario(source)
    except ConfigError as error:
        logger.error("%s", error)
        return EXIT_ERROR
    seed = config.seed if seed_override is None else int(seed_override)
    out = out or config.output_dir
    try:
        os.makedirs(out, exist_ok=True)
    except OSError as error:
        logger.error("cannot create output directory %s: %s", out, error)
        return EXIT_ERROR

    children = np.random.SeedSequence(seed).spawn(len(config.experiments))
    seeds = [int(child.generate_state(1)[0]) for child in children]
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        outcomes = list(pool.map(lambda i: _run_one(config, i, config.experiments[i], seeds[i]),
                                 range(len(config.experiments))))

    entries = []
    try:
        for i, (entry, table, instance) in enumerate(outcomes):
            stem = "%02d-%s" % (i, entry["kind"])
            if table is not None:
                table(os.path.join(out, stem + ".csv"))
                entry["table"] = stem + ".csv"
            if instance is not None:
                _dump(os.path.join(out, stem + "-instance.json"), instance)
                entry["instance"] = stem + "-instance.json"
            entries.append(entry)
        _dump(os.path.join(out, "report.json"), {
            "version": __version__,
            "config_hash": config.config_hash,
            "seed": seed,
            "generated_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "experiments": entries,
        })
    except OSError as error:
        logger.error("cannot write reports to %s: %s", out, error)
        return EXIT_ERROR

    statuses = [entry["status"] for entry in entries]
    if FAILED in statuses:
        return EXIT_ERROR
    if VIOLATED in statuses:
        return EXIT_VIOLATION
    return EXIT_OK


# Randomized property suite.

def random_instance(rng, max_states=8, max_atoms=4, constant=False):
    """A random reversible finite instance: target, symmetric or independent proposal, bounded weights, g."""
    n = int(rng.integers(2, max_states + 1))
    pi = rng.random(n) + 0.05
    space = StateSpace.finite(n)
    target = TargetDistribution(space, mass=pi / pi.sum())
    if rng.random() < 0.5:
        proposal = ProposalKernel.independent(rng.random(n) + 0.05)
    else:
        a = rng.random((n, n))
        a = 0.5 * (a + a.T)
        a /= a.sum(axis=1).max()
        a[np.diag_indices(n)] += 1.0 - a.sum(axis=1)
        proposal = ProposalKernel.explicit(a)
    if constant:
        family = ConstantOne()
    else:
        atoms = {}
        for x in range(n):
            k = int(rng.integers(1, max_atoms + 1))
            values = rng.random(k) * 2.0 + 0.05
            probs = rng.dirichlet(np.ones(k))
            values = values / np.dot(values, probs)
            atoms[x] = [(float(v), float(p)) for v, p in zip(values, probs)]
        family = Discrete(atoms)
    return ModelSpec(target, proposal, name="random-%d" % n), family, rng.normal(size=n)


def _check_instance(index, seed_sequence, max_states, max_atoms, constant):
    rng = np.random.default_rng(seed_sequence)
    model, family, g = random_instance(rng, max_states, max_atoms, constant)
    grid = family.project(range(model.size))
    try:
        slacks = {}
        order = verify_variance_order(model, grid, g)
        for check in order["checks"]:
            slacks[check["name"]] = check["slack"]
        for name, value in acceptance_bounds(model, grid)["slacks"].items():
            slacks["acceptance_" + name] = value
        for check in verify_gap_sandwich(model, grid, rng=rng)["checks"]:
            slacks[check["name"]] = check["slack"]
        if grid.max_weight() == 1.0:
            difference = abs(order["var_pseudo"] - order["var_marginal"])
            slacks["constant_weight_equality"] = -difference
            if difference > EQUALITY_TOLERANCE * max(1.0, order["var_marginal"]):
                raise InequalityViolated("variance differs from marginal with constant weights",
                                         {"difference": difference})
        if model.is_independent:
            joint = JointGrid(model, grid)
            least, _ = positivity_check(build_joint_matrix(model, joint, PSEUDO))
            slacks["imh_positivity"] = least + POSITIVITY_TOLERANCE
            if least < -POSITIVITY_TOLERANCE:
                raise InequalityViolated("pseudo-marginal IMH operator is not positive", {"min_eigenvalue": least})
    except InequalityViolated as violation:
        violation.instance = dict(violation.instance, index=index, model=model.describe(),
                                  pi=model.target.probabilities.tolist(), q=model.proposal.inner.tolist(),
                                  nodes=grid.nodes.tolist(), masses=grid.masses.tolist(), g=g.tolist())
        raise
    return slacks


def randomized_suite(count, max_states=8, max_atoms=4, seed=0, jobs=1, constant=False):
    """
    Runs the ordering, acceptance, gap and positivity checks on ``count``
    random instances and reports the smallest slack of every check.
    """
    if count < 1:
        raise ValueError("randomized suite needs count >= 1")
    children = np.random.SeedSequence(seed).spawn(count)
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        results = list(pool.map(lambda i: _check_instance(i, children[i], max_states, max_atoms, constant),
                                range(count)))
    min_slacks = {}
    for slacks in results:
        for name, value in slacks.items():
            min_slacks[name] = min(value, min_slacks.get(name, np.inf))
    logger.info("randomized suite: %d instances, min slack %.3g", count, min(min_slacks.values()))
    return {"count": count, "seed": seed, "max_states": max_states, "max_atoms": max_atoms,
            "min_slacks": dict(sorted(min_slacks.items()))}
