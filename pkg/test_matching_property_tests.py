import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import CHAIN_ALPHA, chain_samples, chain_specs
from DiscoveryErrors import DegenerateFitError, DegreesOfFreedomError, InvalidArgumentError
from LinearEstimation import EmbeddedCoeffs
from MatchingPropertyTests import (
    MatchingTuple,
    RegressionCache,
    fit_matching,
    identifiability_test,
    imp_inv_test,
    imp_test,
    matching_degrees_of_freedom,
    oracle_matching,
    population_coefficients,
    population_identifiable,
    prediction_score,
    wald_matching,
)
from StructuralCausalModel import EnvSample, population_model

PARENT_TUPLE = MatchingTuple(k=1, R=(0,), S=(0,))
SIZE_BETAS = [1.0, 1.5, 2.0, 2.5, 3.0]
SIZE_SHIFTS = [0.5, 0.7, 0.9, 1.1, 1.3]


def test_tuple_rejects_k_in_r():
    with pytest.raises(InvalidArgumentError):
        MatchingTuple(k=0, R=(0, 1), S=(0, 1))


def test_tuple_label_is_one_based():
    assert PARENT_TUPLE.label() == "k=x2 R={x1} S={x1}"


# Identifiability


def test_invariant_independent_feature_is_not_identifiable():
    rng = np.random.default_rng(0)
    samples = [EnvSample(env_id=f"e{e}", x=rng.normal(size=(300, 2)), y=rng.normal(size=300)) for e in range(3)]
    result = identifiability_test(samples, 1, [0], alpha=0.001)
    assert not result.identifiable


def test_chain_slopes_are_identifiable():
    samples = chain_samples([1.0, 3.0], 300, seed=2)
    result = identifiability_test(samples, 1, [0], alpha=0.05)
    assert result.identifiable
    assert result.p_value < 1e-6


def test_identical_environments_are_not_identifiable():
    sample = chain_samples([1.0], 300, seed=3)[0]
    twin = EnvSample(env_id="twin", x=sample.x, y=sample.y)
    result = identifiability_test([sample, twin], 1, [0], alpha=0.05)
    assert not result.identifiable
    assert result.p_value == pytest.approx(1.0)


# Matching fit


def _coeffs(*values):
    return EmbeddedCoeffs.from_vector(np.array(values, dtype=float))


def test_chain_population_matching(chain):
    pops = [population_model(chain, spec) for spec in chain_specs([1.0, 3.0])]
    theta, gamma = population_coefficients(pops, PARENT_TUPLE)
    fit = fit_matching([EmbeddedCoeffs.from_vector(t) for t in theta], [EmbeddedCoeffs.from_vector(g) for g in gamma])
    assert_allclose(fit.lambda_hat, 1 / CHAIN_ALPHA)
    assert_allclose(fit.eta_hat.vector(), np.zeros(3), atol=1e-12)
    assert fit.residual_norm < 1e-20


def test_matching_with_invariant_gamma_is_degenerate():
    with pytest.raises(DegenerateFitError):
        fit_matching([_coeffs(0, 1), _coeffs(0, 2)], [_coeffs(1, 1), _coeffs(1, 1)])


def test_identical_theta_and_gamma_match_exactly():
    theta = [_coeffs(0.5, 1, 2), _coeffs(-1, 3, 0)]
    fit = fit_matching(theta, theta)
    assert_allclose(fit.lambda_hat, 1.0)
    assert_allclose(fit.eta_hat.vector(), np.zeros(3), atol=1e-12)
    assert fit.residual_norm < 1e-20


def test_degrees_of_freedom():
    assert matching_degrees_of_freedom(5, 1) == 7
    assert matching_degrees_of_freedom(2, 1) == 1
    with pytest.raises(DegreesOfFreedomError):
        matching_degrees_of_freedom(1, 3)


# Wald matching test


def test_chain_parent_tuple_is_accepted(chain_five_envs):
    candidate = imp_test(chain_five_envs, PARENT_TUPLE, alpha=0.01)
    assert candidate.accepted, candidate.reason
    assert abs(candidate.lambda_hat - 0.5) < 0.1
    assert candidate.p_lambda < 0.01
    assert candidate.df == 7


def test_tuple_without_parent_in_r_is_rejected(chain_five_envs):
    candidate = imp_test(chain_five_envs, MatchingTuple(k=1, R=(), S=(0,)), alpha=0.05)
    assert not candidate.accepted


def test_tuple_without_parent_in_r_is_rejected_under_y_shifts():
    samples = chain_samples([1.0, 1.5, 2.0, 2.5, 3.0], 300, seed=12, shifts=[0.5, 1.0, 1.5, 2.0, 2.5])
    tup = MatchingTuple(k=1, R=(), S=(0,))
    assert not imp_test(samples, tup, alpha=0.05).accepted
    assert not imp_inv_test(samples, tup, alpha=0.05).accepted


@pytest.mark.parametrize(
    "tup",
    [PARENT_TUPLE, MatchingTuple(k=1, R=(0,), S=(0, 1))],
    ids=["S equals R", "S contains k"],
)
def test_matching_test_holds_its_size(chain, tup):
    pops = [population_model(chain, spec) for spec in chain_specs(SIZE_BETAS, SIZE_SHIFTS)]
    assert oracle_matching(pops, tup).residual_norm < 1e-12
    rejected = 0
    for replicate in range(200):
        samples = chain_samples(SIZE_BETAS, 300, seed=5000 + replicate, shifts=SIZE_SHIFTS)
        rejected += imp_test(samples, tup, alpha=0.05).p_imp < 0.05
    assert rejected / 200 <= 0.10


def test_noisy_matching_is_weighted(chain_five_envs):
    fit = wald_matching(RegressionCache(chain_five_envs), range(5), PARENT_TUPLE)
    assert fit.weighted
    assert abs(fit.lambda_hat - 0.5) < 0.1
    assert fit.lambda_se > 0
    assert fit.eta.shape == (3,)


def test_exact_matching_keeps_closed_form():
    samples = _noiseless_samples()
    fit = wald_matching(RegressionCache(samples), range(3), PARENT_TUPLE)
    assert not fit.weighted
    assert_allclose(fit.lambda_hat, 0.5, atol=1e-10)


def test_matching_cache_is_shared(chain_five_envs):
    cache = RegressionCache(chain_five_envs)
    imp_test(chain_five_envs, PARENT_TUPLE, alpha=0.05, cache=cache)
    size = len(cache)
    imp_test(chain_five_envs, PARENT_TUPLE, alpha=0.05, cache=cache)
    assert len(cache) == size


# Residual invariance test


def test_chain_parent_tuple_passes_invariance(chain_five_envs):
    candidate = imp_inv_test(chain_five_envs, PARENT_TUPLE, alpha=0.01)
    assert candidate.accepted, candidate.reason
    assert candidate.procedure == "invariance"
    assert 0.0 <= candidate.p_imp <= 1.0


def test_single_environment_is_rejected(chain_five_envs):
    with pytest.raises(InvalidArgumentError):
        imp_inv_test(chain_five_envs[:1], PARENT_TUPLE, alpha=0.05)


# Prediction score


def _noiseless_samples():
    rng = np.random.default_rng(4)
    samples = []
    for e, slope in enumerate([1.0, 2.0, 3.0]):
        x1 = rng.normal(size=100)
        x2 = slope * x1
        y = 0.5 * x2 + x1
        samples.append(EnvSample(env_id=f"e{e}", x=np.column_stack([x1, x2]), y=y))
    return samples


def test_noiseless_imp_scores_zero():
    samples = _noiseless_samples()
    candidate = imp_test(samples, PARENT_TUPLE, alpha=0.05)
    assert prediction_score(samples, candidate) < 1e-12
    assert prediction_score(samples, candidate, refit=False) < 1e-12


def test_parent_signal_lowers_the_score():
    samples = chain_samples([1.0, 3.0], 10_000, seed=5)
    with_parent = imp_test(samples, PARENT_TUPLE, alpha=0.05)
    without_parent = imp_test(samples, MatchingTuple(k=1, R=(0,), S=()), alpha=0.05)
    assert prediction_score(samples, with_parent) < prediction_score(samples, without_parent)


def test_score_ignores_environment_order(chain_five_envs):
    candidate = imp_test(chain_five_envs, PARENT_TUPLE, alpha=0.05)
    forward = prediction_score(chain_five_envs, candidate)
    backward = prediction_score(chain_five_envs[::-1], candidate)
    assert forward == pytest.approx(backward, rel=1e-9)


def test_refit_score_needs_three_environments():
    samples = chain_samples([1.0, 3.0], 200, seed=6)
    candidate = imp_test(samples, PARENT_TUPLE, alpha=0.05)
    with pytest.raises(InvalidArgumentError):
        prediction_score(samples, candidate, refit=True)


def test_refit_score_is_close_to_plain_score(chain_five_envs):
    candidate = imp_test(chain_five_envs, PARENT_TUPLE, alpha=0.05)
    plain = prediction_score(chain_five_envs, candidate, refit=False)
    refit = prediction_score(chain_five_envs, candidate, refit=True)
    assert refit >= 0.9 * plain
    assert refit < 1.5 * plain


def test_default_score_leaves_each_environment_out(chain_five_envs):
    candidate = imp_test(chain_five_envs, PARENT_TUPLE, alpha=0.05)
    assert prediction_score(chain_five_envs, candidate) == prediction_score(chain_five_envs, candidate, refit=True)
    two = chain_five_envs[:2]
    pair = imp_test(two, PARENT_TUPLE, alpha=0.05)
    assert prediction_score(two, pair) == prediction_score(two, pair, refit=False)


# Population oracle


def test_population_identifiability(chain):
    pops = [population_model(chain, spec) for spec in chain_specs([1.0, 3.0])]
    assert population_identifiable(pops, 1, [0])
    assert not population_identifiable(pops, 1, [])


def test_oracle_residual_positive_without_parent(chain):
    pops = [population_model(chain, spec) for spec in chain_specs([1.0, 3.0], shifts=[0.0, 1.0])]
    outcome = oracle_matching(pops, MatchingTuple(k=1, R=(), S=(0,)))
    assert outcome.identifiable
    assert outcome.residual_norm > 1e-6


@pytest.mark.slow
def test_chain_lambda_recovery():
    errors = []
    for replicate in range(50):
        samples = chain_samples([1.0, 3.0], 10_000, seed=1000 + replicate)
        cache = RegressionCache(samples)
        theta = [cache.fit(e, "y", (0,)).coeffs for e in range(2)]
        gamma = [cache.fit(e, 1, (0,)).coeffs for e in range(2)]
        errors.append(fit_matching(theta, gamma).lambda_hat - 0.5)
    assert abs(np.mean(errors)) < 0.025


@pytest.mark.slow
def test_lambda_error_halves_when_n_quadruples():
    def rms_error(n, base_seed):
        errors = [
            imp_test(chain_samples([1.0, 3.0], n, seed=base_seed + replicate), PARENT_TUPLE, alpha=0.05).lambda_hat - 0.5
            for replicate in range(50)
        ]
        return float(np.sqrt(np.mean(np.square(errors))))

    ratio = rms_error(4000, 7000) / rms_error(1000, 8000)
    assert 0.3 < ratio < 0.75
