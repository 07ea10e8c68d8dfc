#!/usr/bin/env python

import numpy as np
import pytest

from pmlab.errors import NotReversible
from pmlab.joint import JointKernelMatrix
from pmlab.kernels import AUXILIARY, MARGINAL, PSEUDO, build_all, build_joint_matrix
from pmlab.spectral import (asymptotic_variance_exact, dirichlet_form, dirichlet_inner, gap_acceptance_bound,
                            gap_collapse_scan, positivity_check, spectral_gap, var_lambda, verify_gap_sandwich,
                            verify_variance_order)
from pmlab.target_models import ContinuousModel, ModelSpec, ProposalKernel, StateSpace, TargetDistribution, normal_target
from pmlab.weight_models import ConstantOne, LogNormal, TwoPoint


def two_state(a, b):
    rows = np.array([[1.0 - a, a], [b, 1.0 - b]])
    return JointKernelMatrix(MARGINAL, rows, np.array([b, a]) / (a + b), [0, 1], [1.0, 1.0])


def imh_model(n=4):
    space = StateSpace.finite(n)
    return ModelSpec(TargetDistribution(space, mass=np.arange(1.0, n + 1)),
                     ProposalKernel.independent(np.ones(n)), name="imh%d" % n)


def walk_model():
    space = StateSpace.finite(6)
    return ModelSpec(TargetDistribution.geometric(space, 0.7),
                     ProposalKernel.random_walk(space, {-1: 0.5, 1: 0.5}), name="walk6")


## gaps

def test_two_state_gap():
    report = spectral_gap(two_state(0.3, 0.2))
    assert report.gap == pytest.approx(0.5)
    assert report.min_eigenvalue == pytest.approx(0.5)
    assert report.left_gap == pytest.approx(1.5)
    assert report.is_positive_operator
    assert report.rayleigh_gap == pytest.approx(0.5)


def test_flip_chain_has_no_left_gap():
    report = spectral_gap(two_state(1.0, 1.0))
    assert report.gap == pytest.approx(2.0)
    assert report.left_gap == pytest.approx(0.0, abs=1e-12)
    assert not report.is_positive_operator
    assert report.absolute_gap == pytest.approx(0.0, abs=1e-12)


def test_non_reversible_kernel():
    rows = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
    K = JointKernelMatrix(MARGINAL, rows, np.ones(3) / 3.0, [0, 1, 2], np.ones(3))
    with pytest.raises(NotReversible):
        spectral_gap(K)


def test_dirichlet_form_expressions_agree():
    K = build_joint_matrix(walk_model(), TwoPoint(0.5, 0.8), PSEUDO)
    f = np.sin(np.arange(K.size))
    assert dirichlet_form(K, f) == pytest.approx(dirichlet_inner(K, f), rel=1e-10)


def random_walk_model(rng):
    n = int(rng.integers(3, 7))
    space = StateSpace.finite(n)
    return ModelSpec(TargetDistribution(space, mass=rng.random(n) + 0.1),
                     ProposalKernel.random_walk(space, {-1: 0.5, 1: 0.5}))


def random_imh_model(rng):
    n = int(rng.integers(2, 6))
    space = StateSpace.finite(n)
    return ModelSpec(TargetDistribution(space, mass=rng.random(n) + 0.1),
                     ProposalKernel.independent(rng.random(n) + 0.1))


def random_instances(seed, count=6):
    rng = np.random.default_rng(seed)
    for i in range(count):
        model = random_walk_model(rng) if i % 2 else random_imh_model(rng)
        family = TwoPoint(float(rng.uniform(0.05, 0.95)), float(rng.uniform(0.1, 0.9)))
        yield rng, model, family


def test_auxiliary_dirichlet_form_splits():
    for rng, model, family in random_instances(21):
        marginal = build_joint_matrix(model, None, MARGINAL)
        K = build_joint_matrix(model, family, AUXILIARY)
        mu = K.stationary
        f = rng.normal(size=K.size)
        x_mass = np.bincount(K.x_index, weights=mu, minlength=model.size)
        f0 = np.bincount(K.x_index, weights=mu * f, minlength=model.size) / x_mass
        fbar = f - f0[K.x_index]
        rho = marginal.rejection[K.x_index]
        expected = dirichlet_form(marginal, f0) + float(np.sum(mu * (1.0 - rho) * fbar ** 2))
        assert dirichlet_form(K, f) == pytest.approx(expected, rel=1e-10, abs=1e-14)


def test_pseudo_dirichlet_form_dominates_scaled_auxiliary():
    for rng, model, family in random_instances(22):
        kernels = build_all(model, family, kinds=(PSEUDO, AUXILIARY))
        w_bar = float(kernels[PSEUDO].w_values.max())
        for _ in range(5):
            f = rng.normal(size=kernels[PSEUDO].size)
            pseudo = dirichlet_form(kernels[PSEUDO], f)
            auxiliary = dirichlet_form(kernels[AUXILIARY], f)
            assert pseudo >= auxiliary / w_bar - 1e-12


def test_gap_acceptance_bound():
    K = build_joint_matrix(imh_model(), None, MARGINAL)
    gap = spectral_gap(K).gap
    for members in ([0], [3], [0, 1], [1, 2, 3]):
        assert gap <= gap_acceptance_bound(K, members) + 1e-12
    assert gap_acceptance_bound(K, [0, 1, 2, 3]) > 1e12


def test_gap_acceptance_bound_counts_laziness():
    K = build_joint_matrix(imh_model(), TwoPoint(0.5, 0.8), PSEUDO)
    for epsilon in (0.25, 0.75):
        lazy = K.lazy(epsilon)
        gap = spectral_gap(lazy).gap
        for members in ([0], [1, 2], [3, 4, 5, 6, 7]):
            assert gap <= gap_acceptance_bound(lazy, members) + 1e-12
            assert gap_acceptance_bound(lazy, members) <= gap_acceptance_bound(K, members) + 1e-12


def test_lazy_eigenvalues():
    for rng, model, family in random_instances(23, count=4):
        K = build_joint_matrix(model, family, PSEUDO)
        base = spectral_gap(K).eigenvalues
        for epsilon in (0.1, 0.5, 0.9):
            lazy = spectral_gap(K.lazy(epsilon))
            np.testing.assert_allclose(lazy.eigenvalues, epsilon + (1.0 - epsilon) * base, atol=1e-10)
            assert lazy.min_eigenvalue >= 2.0 * epsilon - 1.0 - 1e-12
    flip = two_state(1.0, 1.0).lazy(0.5)
    assert spectral_gap(flip).min_eigenvalue == pytest.approx(0.0, abs=1e-12)


## asymptotic variance

def test_iid_kernel_variance():
    rng = np.random.default_rng(24)
    for n in (2, 3, 5, 8):
        mu = rng.dirichlet(np.ones(n))
        K = JointKernelMatrix(MARGINAL, np.tile(mu, (n, 1)), mu, np.arange(n), np.ones(n))
        f = rng.normal(size=n)
        report = asymptotic_variance_exact(K, f)
        var_mu = float(np.dot(mu, (f - np.dot(mu, f)) ** 2))
        assert report.var_exact == pytest.approx(var_mu, rel=1e-9)
        assert report.iact == pytest.approx(1.0, rel=1e-9)

def test_two_state_variance():
    a, b = 0.3, 0.1
    K = two_state(a, b)
    p = a / (a + b)
    lam = 1.0 - a - b
    report = asymptotic_variance_exact(K, [0.0, 1.0])
    assert report.var_pi == pytest.approx(p * (1.0 - p))
    assert report.var_exact == pytest.approx(p * (1.0 - p) * (1.0 + lam) / (1.0 - lam))
    assert report.iact == pytest.approx((1.0 + lam) / (1.0 - lam))
    assert report.series["estimate"] == pytest.approx(report.var_exact, abs=report.series["tail_bound"] + 1e-8)


def test_var_lambda_increases_to_the_limit():
    K = two_state(0.3, 0.1)
    f = [0.0, 1.0]
    curve = [var_lambda(K, f, lam) for lam in (0.0, 0.5, 0.9, 0.999)]
    assert all(b > a for a, b in zip(curve, curve[1:]))
    assert curve[-1] <= asymptotic_variance_exact(K, f).var_exact + 1e-12
    with pytest.raises(ValueError):
        var_lambda(K, f, 1.0)


def test_flip_chain_variance():
    # periodic but with a right gap: the variance stays finite
    report = asymptotic_variance_exact(two_state(1.0, 1.0), [0.0, 1.0])
    assert report.var_exact == pytest.approx(0.0, abs=1e-12)
    assert not report.infinite


## orderings

def test_gap_sandwich():
    for model in [imh_model(), walk_model()]:
        report = verify_gap_sandwich(model, TwoPoint(0.5, 0.8), rng=np.random.default_rng(1))
        assert all(check["slack"] >= -1e-8 for check in report["checks"])
        assert report["w_bar"] == pytest.approx(3.0)
        assert report["gaps"]["pseudo"] <= report["gaps"]["marginal"] + 1e-8


def test_variance_order():
    g = np.arange(6.0)
    report = verify_variance_order(walk_model(), TwoPoint(0.5, 0.8), g)
    assert report["var_pseudo"] >= report["var_marginal"]
    assert report["var_check"] >= report["var_pseudo"]
    names = [check["name"] for check in report["checks"]]
    assert "pseudo_below_scaled_marginal" in names
    assert "refined_lower_bound_limit" in names
    assert len(report["refined"]) == 4


def test_constant_weights_leave_the_variance_unchanged():
    report = verify_variance_order(imh_model(), ConstantOne(), np.arange(4.0))
    assert report["var_pseudo"] == pytest.approx(report["var_marginal"], abs=1e-10)
    assert report["w_bar"] == 1.0


def test_imh_pseudo_marginal_is_positive():
    for family in [TwoPoint(0.5, 0.8), TwoPoint(0.1, 0.5)]:
        K = build_joint_matrix(imh_model(5), family, PSEUDO)
        least, positive = positivity_check(K)
        assert positive
        assert least >= -1e-9


def test_divisible_random_walk_is_positive():
    model = ContinuousModel(normal_target(-4.0, 4.0), scale=1.0).discretize(41)
    for family in [ConstantOne(), TwoPoint(0.5, 0.8), TwoPoint(0.1, 0.5)]:
        K = build_joint_matrix(model, family, PSEUDO)
        least, _ = positivity_check(K)
        assert least >= -1e-6


def test_divisible_random_walk_with_lognormal_weights_is_positive():
    model = ContinuousModel(normal_target(-4.0, 4.0), scale=1.0).discretize(25)
    K = build_joint_matrix(model, LogNormal(0.8).project(range(model.size), nodes=8), PSEUDO)
    assert K.w_values.max() > 1.0
    least, _ = positivity_check(K)
    assert least >= -1e-6


def test_gap_collapse():
    report = gap_collapse_scan(imh_model(5), LogNormal(1.0), [1.0 - 1e-2, 1.0 - 1e-6])
    first, second = report["levels"]
    assert second["gap"] < first["gap"]
    assert second["max_weight"] > first["max_weight"]
    assert first["bound_holds"] and second["bound_holds"]
    assert report["nonincreasing"]


if __name__ == "__main__":
    for name, test in sorted(globals().items()):
        if name.startswith("test_"):
            test()
    print("all tests passed.")
