import numpy as np
import pytest
from scipy import integrate

from conftest import trace_cov, standard_errors
from errors import ConfigError
from estimators import EstimatorSpec, estimate_batch
from testbed import (DEFAULT_SCHEDULE, ToyIntegrand, HierarchicalTask, PolynomialTask, SdsLikeTask, ConstantTask,
                     weight_sds, toy_profile, estimate_norm_profile, oracle_proposal, make_task)


def test_schedule_is_variance_preserving():
    t = np.concatenate([np.linspace(0, 1, 1000), np.random.default_rng(0).random(50)])
    alpha, sigma = DEFAULT_SCHEDULE.alpha(t), DEFAULT_SCHEDULE.sigma(t)
    np.testing.assert_allclose(alpha ** 2 + sigma ** 2, 1.0, atol=1e-12)
    grid = np.linspace(0, 1, 2001)
    assert np.all(np.diff(DEFAULT_SCHEDULE.alpha(grid)) <= 0)


def test_sds_weight_is_unimodal_and_vanishes_at_the_ends():
    t = np.linspace(0, 1, 1001)
    w = weight_sds(t)
    assert w[0] < 1e-3
    assert w[-1] < 0.2 * w.max()
    assert 0 < np.argmax(w) < t.size - 1
    signs = np.sign(np.diff(w))
    signs = signs[signs != 0]
    assert np.count_nonzero(signs[1:] != signs[:-1]) == 1


def test_unknown_weight_kind():
    with pytest.raises(ValueError):
        weight_sds(0.5, w_kind='snr')


def test_toy_norm_equals_profile_without_noise():
    task = ToyIntegrand(rho=0.0)
    g = task.contribution(np.zeros((1, 0)), np.array([0.7]), np.zeros((1, 2)))
    assert np.linalg.norm(g[0]) == pytest.approx(float(toy_profile(0.7)), rel=1e-14)
    # sharp bump on top of the floor
    assert float(toy_profile(0.7)) == pytest.approx(1.05, abs=1e-4)


def test_toy_second_moment():
    task = ToyIntegrand(rho=0.1)
    assert task.second_moment(0.3) == pytest.approx(float(toy_profile(0.3)) ** 2 * 1.02)


def test_toy_rejects_negative_rho():
    with pytest.raises(ValueError):
        ToyIntegrand(rho=-0.1)


@pytest.mark.slow
def test_toy_truth_matches_simulation(toy):
    values = estimate_batch(toy, EstimatorSpec(R=1, K=1, seed=2), count=1_000_000)
    assert np.all(np.abs(values.mean(axis=0) - toy.true_mean()) <= 5 * standard_errors(values))


def test_polynomial_truth_closed_form(poly):
    width = 0.96
    expected = [0.5, (0.98 ** 3 - 0.02 ** 3) / 3 / width, 0.0]
    np.testing.assert_allclose(poly.true_mean(), expected, atol=1e-10)


def test_hierarchical_analytic_values(hier):
    np.testing.assert_array_equal(hier.true_mean(), np.zeros(3))
    assert hier.predicted_variance(2, 4) == pytest.approx(1 / 2 + 4 / 8)
    assert hier.analytic['sigma_B2'] == 4.0
    with pytest.raises(ValueError):
        HierarchicalTask(sigma_A2=-1.0)


def test_sdslike_truth_uses_loss_weight(sdslike):
    # alpha_bar is piecewise linear between schedule steps; integrate each smooth piece
    knots = np.linspace(0, 1, DEFAULT_SCHEDULE.T)
    first = sum(integrate.quad(lambda t: weight_sds(t) * np.cos(np.pi * t), a, b)[0]
                for a, b in zip(knots[:-1], knots[1:]))
    assert sdslike.true_mean()[0] == pytest.approx(first, rel=1e-8)


def test_make_task_parses_references():
    toy = make_task('toy{rho=0.2}')
    assert isinstance(toy, ToyIntegrand) and toy.rho == 0.2

    hier = make_task('hier{sigmaA2=1,sigmaB2=4,dim=3}')
    assert (hier.sigma_A2, hier.sigma_B2, hier.dim) == (1.0, 4.0, 3)

    poly = make_task({'name': 'poly', 'params': {'t_min': 0.1, 't_max': 0.9}})
    assert (poly.base.t_min, poly.base.t_max) == (0.1, 0.9)

    assert isinstance(make_task('sdslike'), SdsLikeTask)
    assert repr(toy) == 'toy{rho=0.2}'


@pytest.mark.parametrize('ref', ['foo', 'toy{rho=-1}', 'toy{bogus=1}', 'toy{rho}', 'hier{dim=0}'])
def test_make_task_rejects_bad_references(ref):
    with pytest.raises(ConfigError):
        make_task(ref)


def test_unknown_proposal_weight(toy):
    with pytest.raises(ConfigError):
        toy.proposal('median')


def test_proposals_are_cached(toy):
    assert toy.proposal('heuristic') is toy.proposal('heuristic')


def test_oracle_of_constant_task_is_flat():
    proposal = oracle_proposal(ConstantTask(value=(3.0, 4.0)), bins=16, samples_per_bin=10)
    assert proposal.uniform


def test_oracle_follows_sds_weight_when_norm_is_deterministic():
    task = SdsLikeTask(dim=8, render_scale=0.0, noise_scale=0.0)
    oracle = oracle_proposal(task, bins=64, samples_per_bin=2000)
    heuristic = task.proposal('heuristic')
    t = np.linspace(0, 1, 513)
    assert np.max(np.abs(oracle.cdf(t) - heuristic.cdf(t))) < 0.02


def test_norm_profile_tracks_binned_second_moment():
    task = ToyIntegrand(rho=0.1)
    edges, profile = estimate_norm_profile(task, bins=64, samples_per_bin=10_000, seed=1)
    expected = np.array([np.sqrt(integrate.quad(task.second_moment, lo, hi)[0] / (hi - lo))
                         for lo, hi in zip(edges[:-1], edges[1:])])
    np.testing.assert_allclose(profile, expected, rtol=0.03)
    # pointwise agreement where f is flat within a bin
    centres = 0.5 * (edges[:-1] + edges[1:])
    flat = np.abs(centres - 0.7) > 0.15
    pointwise = toy_profile(centres) * np.sqrt(1 + 0.1 ** 2 * 2)
    np.testing.assert_allclose(profile[flat], pointwise[flat], rtol=0.10)


@pytest.mark.slow
def test_toy_importance_sampling_efficiency(toy):
    n = 100_000
    uniform = trace_cov(estimate_batch(toy, EstimatorSpec(R=1, K=1, seed=3), count=n))
    oracle = trace_cov(estimate_batch(toy, EstimatorSpec(R=1, K=1, timestep_mode='proposal:oracle', seed=3),
                                      count=n))
    heuristic = trace_cov(estimate_batch(toy, EstimatorSpec(R=1, K=1, timestep_mode='proposal:heuristic',
                                                            seed=3), count=n))
    re_oracle = uniform / oracle
    re_heuristic = uniform / heuristic
    assert re_oracle >= 2.0
    assert re_heuristic >= 0.9 * re_oracle
