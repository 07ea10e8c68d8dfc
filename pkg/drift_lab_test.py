#!/usr/bin/env python

import csv
import os
import tempfile

import numpy as np
import pytest

from pmlab.drift_lab import (EXACT_GRID, GEOMETRIC, MONTE_CARLO, NONUNIFORM, POLYNOMIAL, DriftSpec, KernelValue,
                             NonuniformMoments, PseudoKernel, apply_kernel_to_V, check_imh_drift,
                             check_rwm_drift, check_uniform_marginal_drift, counterexample_ledger,
                             counterexample_model, counterexample_quotient_bound, counterexample_weights,
                             scan_positions, verify_unifdrift_condition)
from pmlab.errors import HypothesisFail, TruncationTooSmall
from pmlab.joint import JointState
from pmlab.target_models import (ContinuousModel, ModelSpec, ProposalKernel, StateSpace, TargetDistribution,
                                 normal_target, quartic_target)
from pmlab.weight_models import ConstantOne, Gamma, LogNormal, TwoPoint


def imh_model(n=4):
    space = StateSpace.finite(n)
    return ModelSpec(TargetDistribution(space, mass=np.arange(1.0, n + 1)),
                     ProposalKernel.independent(np.ones(n)), name="imh%d" % n)


def walk_model():
    space = StateSpace.finite(5)
    return ModelSpec(TargetDistribution.geometric(space, 0.6),
                     ProposalKernel.random_walk(space, {-1: 0.5, 1: 0.5}), name="walk5")


def square_weight(x, w):
    return w ** 2 + 1.0


## kernel applied to V

def test_constant_function_is_fixed():
    kernel = PseudoKernel(walk_model(), TwoPoint(0.5, 0.8))
    value = apply_kernel_to_V(kernel, lambda x, w: np.ones_like(np.asarray(w, dtype=float)), JointState(2, 0.5))
    assert value.value == pytest.approx(1.0)
    assert value.error == 0.0


def test_exact_and_monte_carlo_agree():
    kernel = PseudoKernel(walk_model(), TwoPoint(0.5, 0.8))
    for point in [(2, 0.5), (0, 3.0)]:
        exact = apply_kernel_to_V(kernel, square_weight, point, EXACT_GRID)
        sampled = apply_kernel_to_V(kernel, square_weight, point, MONTE_CARLO, n=40000, seed=3)
        assert sampled.error > 0
        assert exact.agrees(sampled, slack=sampled.error)


def test_monte_carlo_needs_enough_samples():
    kernel = PseudoKernel(walk_model(), TwoPoint(0.5, 0.8))
    with pytest.raises(ValueError):
        apply_kernel_to_V(kernel, square_weight, (1, 0.5), MONTE_CARLO, n=100)


def test_exact_grid_needs_a_finite_model():
    kernel = PseudoKernel(ContinuousModel(normal_target()), LogNormal(0.3))
    with pytest.raises(ValueError):
        apply_kernel_to_V(kernel, square_weight, (0.0, 1.0), EXACT_GRID)


def test_kernel_value_agreement():
    assert KernelValue(1.0, 0.1).agrees(KernelValue(1.15, 0.1))
    assert not KernelValue(1.0).agrees(1.1)
    assert KernelValue(1.0).agrees(1.1, slack=0.2)


## drift specifications

def test_drift_spec_validation():
    with pytest.raises(ValueError):
        DriftSpec(square_weight, POLYNOMIAL)
    with pytest.raises(ValueError):
        DriftSpec(square_weight, POLYNOMIAL, rate=1.5)
    with pytest.raises(ValueError):
        DriftSpec(square_weight, GEOMETRIC, rate=1.0)
    with pytest.raises(ValueError):
        DriftSpec(square_weight, "exotic")
    spec = DriftSpec(square_weight, GEOMETRIC, rate=0.25)
    assert spec.fixed_coefficient() == 0.75


def test_drift_function_must_exceed_one():
    spec = DriftSpec(lambda x, w: w, POLYNOMIAL, rate=0.5)
    with pytest.raises(ValueError):
        spec.values(np.array([0]), np.array([0.5]))


## independent sampler

def geometric_imh():
    space = StateSpace.finite(31)
    return ModelSpec(TargetDistribution.geometric(space, 0.5), ProposalKernel.independent(np.ones(31)),
                     name="geometric-imh")


def test_imh_polynomial_drift():
    report = check_imh_drift(geometric_imh(), TwoPoint(0.5, 0.8), exponent=2.0)
    assert report.passed
    assert report.constants["M"] < report.constants["sup_mu"]
    assert report.constants["c"] > 0
    assert report.constants["uniformly_ergodic"]
    assert report.minorization["epsilon"] > 0
    assert report.min_slack >= -1e-9


def test_imh_drift_report_files():
    report = check_imh_drift(imh_model(), TwoPoint(0.5, 0.8))
    path = os.path.join(tempfile.mkdtemp(), "imh.csv")
    report.to_csv(path)
    with open(path) as handle:
        rows = list(csv.DictReader(handle))
    assert len(rows) == len(report.points)
    assert report.to_dict()["passed"]


def test_imh_drift_hypotheses():
    with pytest.raises(ValueError):
        check_imh_drift(walk_model(), TwoPoint(0.5, 0.8))
    with pytest.raises(HypothesisFail):
        check_imh_drift(imh_model(), TwoPoint(0.5, 0.8), exponent=0.5)


## marginal chains with acceptance bounded below

def test_uniform_marginal_drift():
    report = check_uniform_marginal_drift(imh_model(10), Gamma(3.0))
    assert report.passed
    assert report.constants["delta"] > 0
    assert report.constants["M_W"] == pytest.approx(7.0 / 3.0, rel=1e-3)
    assert report.constants["poly_min_slack"] >= -1e-9
    assert report.checks["polynomial_form"]
    assert report.minorization["epsilon"] > 0


def test_uniform_marginal_needs_beta_above_one():
    with pytest.raises(HypothesisFail):
        check_uniform_marginal_drift(imh_model(), TwoPoint(0.5, 0.8), beta=1.0)


## random walk Metropolis

def test_scan_positions():
    xs = scan_positions(normal_target())
    assert np.all(np.diff(xs) > 0)
    assert abs(xs[0]) < 1e-2
    assert xs[-1] < 10.0


def test_rwm_uniform_drift():
    model = ContinuousModel(normal_target(), scale=1.0)
    report = check_rwm_drift(model, LogNormal(0.3), eta=0.25, alpha=1.0, beta=2.0, mc_samples=20000)
    assert report.passed
    assert report.scope == "checked_at_points"
    assert report.constants["delta_V"] > 0
    assert report.checks["monte_carlo_agreement"]
    assert report.constants["cross_checks"]


def test_rwm_drift_with_exact_weights():
    model = ContinuousModel(normal_target(), scale=1.0)
    report = check_rwm_drift(model, ConstantOne(), mc_samples=20000)
    assert report.passed
    assert report.constants["far_ratio"] < 1.0


def test_rwm_nonuniform_drift():
    def sigma(x):
        return np.sqrt(max(np.log(max(1.0, abs(x))) / 6.0, 1e-4))

    model = ContinuousModel(quartic_target(), scale=1.0)
    moments = NonuniformMoments(xi_w=0.1, xi_pi=0.1, xi_c=0.3)
    report = check_rwm_drift(model, LogNormal(sigma), mode=NONUNIFORM, alpha_prime=1.0, beta_prime=4.0,
                             nonuniform=moments, mc_samples=0)
    assert report.passed
    assert report.hypotheses["mode"] == NONUNIFORM
    assert report.hypotheses["constraints"] == []
    with pytest.raises(HypothesisFail):
        check_rwm_drift(model, LogNormal(sigma), mode=NONUNIFORM, alpha_prime=1.0, beta_prime=2.0,
                        nonuniform=moments, mc_samples=0)


def test_rwm_needs_a_continuous_model():
    with pytest.raises(ValueError):
        check_rwm_drift(walk_model(), LogNormal(0.3))
    with pytest.raises(ValueError):
        check_rwm_drift(ContinuousModel(normal_target()), LogNormal(0.3), mode=NONUNIFORM)


## slowly mixing chain

def test_counterexample_weights():
    (a, p_a), (b, p_b) = counterexample_weights(15)
    assert a == pytest.approx(1.0 / 32.0)
    assert p_b == pytest.approx(0.1)
    assert a * p_a + b * p_b == pytest.approx(1.0)
    assert counterexample_weights(5) == [(1.0, 1.0)]
    assert counterexample_weights(25) == [(1.0, 1.0)]
    assert len(counterexample_weights(150)) == 2


def test_counterexample_quotient_bound():
    assert counterexample_quotient_bound(1) == pytest.approx(-0.72)
    assert counterexample_quotient_bound(2) == pytest.approx(-0.9702)


def test_counterexample_truncation():
    with pytest.raises(TruncationTooSmall):
        counterexample_model(1, truncation=15)
    model, _ = counterexample_model(1)
    assert model.size == 22


def test_counterexample_ledger():
    ledger = counterexample_ledger((1, 2))
    assert ledger["left_gap_decreasing"]
    for entry in ledger["entries"]:
        assert entry["quotient"] <= entry["bound"] + 1e-12
        assert entry["drift_error"] < 1e-12
    first, second = ledger["entries"]
    assert second["left_gap"] < first["left_gap"]


## drift uniform in N

def test_uniform_drift_across_averaging():
    spec = DriftSpec(square_weight, POLYNOMIAL, rate=0.5)
    report = verify_unifdrift_condition(imh_model(), TwoPoint(0.5, 0.8), [1, 2, 4], spec, kappa=0.5, lam=0.5)
    assert [row["N"] for row in report["per_N"]] == [1, 2, 4]
    assert all(row["min_slack"] >= -1e-9 for row in report["per_N"])
    assert report["coefficient"] > 0
    assert all(item["epsilon"] > 0 for item in report["minorization"])
    assert report["premises"]["exponent"] == pytest.approx(0.125)
    assert report["premises"]["g_norm"] <= 1.0


if __name__ == "__main__":
    for name, test in sorted(globals().items()):
        if name.startswith("test_"):
            test()
    print("all tests passed.")
