#!/usr/bin/env python

import numpy as np
import pytest

from pmlab.errors import SupportExplosion
from pmlab.weight_models import (Averaged, ConstantOne, Discrete, Gamma, LogNormal, TwoPoint, WeightGrid,
                                 averaged_family, tilted_acceptance, tilted_measure, uniform_integrability_bound)


## discrete families

def test_two_point_atoms():
    values, probs = TwoPoint(0.5, 0.8).atoms(0)
    np.testing.assert_allclose(values, [0.5, 3.0])
    np.testing.assert_allclose(probs, [0.8, 0.2])
    assert TwoPoint(0.5, 0.8).sup_weight(0) == pytest.approx(3.0)


def test_two_point_rejects_bad_parameters():
    with pytest.raises(ValueError):
        TwoPoint(1.5, 0.5).atoms(0)
    with pytest.raises(ValueError):
        TwoPoint(0.5, 1.0).atoms(0)


def test_state_indexed_parameters():
    family = TwoPoint({0: 0.5, "default": 0.25}, 0.5)
    assert family.atoms(0)[0][0] == pytest.approx(0.5)
    assert family.atoms(3)[0][0] == pytest.approx(0.25)
    assert family.describe()["low"] == {"0": 0.5, "default": 0.25}


def test_discrete_needs_mean_one():
    with pytest.raises(ValueError):
        Discrete([(0.5, 0.5), (1.0, 0.5)]).atoms(0)
    with pytest.raises(ValueError):
        Discrete([(2.0, 0.5), (0.0, 0.6)]).atoms(0)


def test_discrete_merges_equal_atoms():
    values, probs = Discrete([(0.5, 0.25), (0.5, 0.25), (1.5, 0.5)]).atoms(0)
    np.testing.assert_allclose(values, [0.5, 1.5])
    np.testing.assert_allclose(probs, [0.5, 0.5])


def test_discrete_keeps_tiny_atoms():
    a = 2.0 ** -40
    values, probs = Discrete([(a, 0.5), (2.0 - a, 0.5)]).atoms(0)
    assert len(values) == 2
    assert values[0] == pytest.approx(a, rel=1e-10)


def test_moments():
    family = TwoPoint(0.5, 0.8)
    assert family.moment(0, 0) == 1.0
    assert family.moment(0, 1) == pytest.approx(1.0)
    assert family.moment(0, 2) == pytest.approx(0.8 * 0.25 + 0.2 * 9.0)
    assert family.variance(0) == pytest.approx(1.0)
    assert family.abs_deviation(0) == pytest.approx(0.8 * 0.5 + 0.2 * 2.0)
    assert Discrete([(0.0, 0.5), (2.0, 0.5)]).moment(0, -1) == np.inf


## continuous families

def test_lognormal_moments():
    family = LogNormal(0.5)
    assert family.moment(0, 1) == pytest.approx(1.0)
    assert family.moment(0, 2) == pytest.approx(np.exp(0.25))
    assert family.expect(0, lambda w: w) == pytest.approx(1.0, rel=1e-8)
    assert family.abs_deviation(0) == pytest.approx(family.expect(0, lambda w: np.abs(w - 1.0)), rel=1e-5)
    assert family.sup_weight(0) == np.inf
    with pytest.raises(TypeError):
        family.atoms(0)


def test_gamma_moments():
    family = Gamma(3.0)
    assert family.moment(0, 1) == pytest.approx(1.0)
    assert family.variance(0) == pytest.approx(1.0 / 3.0)
    assert family.moment(0, -3.0) == np.inf
    assert family.exponential_moment(0, 1.0, 1.0) == pytest.approx((2.0 / 3.0) ** -4.0)
    assert family.exponential_moment(0, 3.0, 1.0) == np.inf


def test_projection_is_mean_one():
    for family in [LogNormal(0.5), Gamma(3.0), LogNormal(lambda x: 0.2 + 0.1 * x)]:
        grid = family.project(range(3), nodes=48)
        grid.validate()
        assert isinstance(grid, WeightGrid)
        for x in range(3):
            assert grid.mean(x) == pytest.approx(1.0, abs=1e-10)


def test_tilted_measure_sums_to_one():
    tilted = tilted_measure(TwoPoint(0.5, 0.8), 0)
    np.testing.assert_allclose(tilted, [0.4, 0.6])
    assert tilted_measure(Gamma(2.0), 0, {"nodes": 32}).sum() == pytest.approx(1.0)


## sampling

def test_sampling_is_mean_one():
    rng = np.random.default_rng(11)
    for family in [TwoPoint(0.5, 0.8), LogNormal(0.5), Gamma(3.0), Averaged(TwoPoint(0.5, 0.8), 4)]:
        draws = family.sample(0, rng, 100000)
        assert abs(draws.mean() - 1.0) < 0.02


def test_sample_states_groups_equal_states():
    rng = np.random.default_rng(5)
    family = LogNormal({0: 0.1, 1: 1.0})
    draws = family.sample_states(np.array([0] * 5000 + [1] * 5000), rng)
    assert draws[:5000].std() < draws[5000:].std()
    assert np.array_equal(ConstantOne().sample_states([0, 1, 2], rng), np.ones(3))


def test_sampling_is_reproducible():
    a = Gamma(2.0).sample_states(np.arange(10), np.random.default_rng(3))
    b = Gamma(2.0).sample_states(np.arange(10), np.random.default_rng(3))
    assert np.array_equal(a, b)


def test_tilted_sampling():
    rng = np.random.default_rng(2)
    family = TwoPoint(0.5, 0.8)
    draws = np.array([family.sample_tilted(0, rng) for _ in range(20000)])
    assert abs(np.mean(draws == 3.0) - 0.6) < 0.02


## averaging

def test_averaged_atoms():
    values, probs = Averaged(TwoPoint(0.5, 0.8), 2).atoms(0)
    np.testing.assert_allclose(values, [0.5, 1.75, 3.0])
    np.testing.assert_allclose(probs, [0.64, 0.32, 0.04])
    assert Averaged(TwoPoint(0.5, 0.8), 2).variance(0) == pytest.approx(0.5)


def test_averaged_family_shortcuts():
    base = TwoPoint(0.5, 0.8)
    assert averaged_family(base, 1) is base
    assert isinstance(averaged_family(base, 3), Averaged)
    with pytest.raises(ValueError):
        Averaged(base, 0)
    assert Averaged(Gamma(2.0), 4).moment(0, 2) == pytest.approx(Gamma(8.0).moment(0, 2))


def test_averaging_shrinks_deviation():
    base = TwoPoint(0.95, 0.9)
    deviations = [averaged_family(base, n).abs_deviation(0) for n in (1, 2, 4, 8, 16, 32)]
    assert all(b < a for a, b in zip(deviations, deviations[1:]))
    assert deviations[-1] < 0.05


def test_support_explosion():
    with pytest.raises(SupportExplosion):
        Averaged(Discrete([(0.5, 0.5), (1.5, 0.5)]), 8, atom_budget=3).atoms(0)


def test_averaged_projection_falls_back_to_grid():
    family = Averaged(Discrete([(0.2, 0.3), (0.7, 0.3), (1.825, 0.4)]), 16, atom_budget=50)
    grid = family.project(range(2))
    grid.validate()


## integrability and acceptance

def test_uniform_integrability_bound():
    bound = uniform_integrability_bound(TwoPoint(0.5, 0.8), lambda w: w ** 2 + 1.0, range(3))
    assert bound.m_w == pytest.approx(3.0)
    np.testing.assert_allclose(bound.tail(np.array([1.0])), [1.5])


def test_tilted_acceptance():
    family = TwoPoint(0.5, 0.8)
    assert tilted_acceptance(family, 0, 1, 1e12) == pytest.approx(1.0)
    assert tilted_acceptance(family, 0, 1, 0.5) <= 0.5 + 1e-12


if __name__ == "__main__":
    for name, test in sorted(globals().items()):
        if name.startswith("test_"):
            test()
    print("all tests passed.")
