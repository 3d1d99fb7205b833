import numpy as np
import pytest
import scipy.linalg as sla
from scipy.stats import multivariate_normal

from config import FIXED_EFFECT_PRECISION
from errors import ValidationError
from inference.laplace import LaplaceEngine, gaussian_approx
from models.latent import LatentModel, log_prior, precision
from models.transforms import NaturalParams, from_natural


class GaussianPseudoLikelihood:
    """-½ Σ s (t - η)², the conjugate stand-in for the Poisson terms."""

    def __init__(self, target, weights):
        self.target = target
        self.weights = weights

    def terms(self, eta):
        r = self.target - eta
        return -0.5 * float(np.sum(self.weights * r**2)), self.weights * r, self.weights.copy()


def _theta(model):
    cov = np.array([[1.0, 0.5], [0.5, 1.0]])
    alpha = 0.6 if model.kind.has_alpha else None
    return from_natural(model, NaturalParams(np.array([0.8, 1.3]), cov, None, alpha=alpha))


def _dense_prior(engine, theta):
    Q = precision(engine.model, theta).toarray()
    return sla.block_diag(Q, FIXED_EFFECT_PRECISION * np.eye(engine.design.n_fixed))


def _conjugate_setup(model, make_counts, seed=0):
    data = make_counts(model.n_regions, model.K, seed=seed, covariate=True)
    rng = np.random.default_rng(seed)
    n = data.I * data.K
    target = data.log_offset() + rng.normal(size=n)
    weights = rng.uniform(0.5, 3.0, size=n)
    engine = LaplaceEngine(model, data, likelihood=GaussianPseudoLikelihood(target, weights))
    return engine, target, weights


def test_conjugate_mode_is_the_gls_solution(make_random_graph, make_counts):
    model = LatentModel("pmcar", 2, make_random_graph(6, seed=1))
    engine, target, weights = _conjugate_setup(model, make_counts)
    theta = _theta(model)
    ev = engine.evaluate(theta)
    assert ev.valid

    A = engine.design.matrix.toarray()
    Q_post = _dense_prior(engine, theta) + A.T @ np.diag(weights) @ A
    want = np.linalg.solve(Q_post, A.T @ (weights * (target - engine.design.offset)))
    np.testing.assert_allclose(ev.mode, want, rtol=0, atol=1e-8)


def test_conjugate_log_posterior_is_the_gaussian_marginal(make_random_graph, make_counts):
    model = LatentModel("pmcar", 2, make_random_graph(6, seed=2))
    engine, target, weights = _conjugate_setup(model, make_counts, seed=1)
    theta = _theta(model)
    ev = engine.evaluate(theta)

    A = engine.design.matrix.toarray()
    cov = A @ np.linalg.inv(_dense_prior(engine, theta)) @ A.T + np.diag(1.0 / weights)
    r = target - engine.design.offset
    marginal = multivariate_normal(mean=np.zeros(r.size), cov=cov).logpdf(r)
    # the pseudo-likelihood drops -m/2 log 2π + ½ Σ log s
    want = marginal + 0.5 * r.size * np.log(2 * np.pi) - 0.5 * np.sum(np.log(weights))
    assert ev.log_post - log_prior(model, theta) == pytest.approx(want, abs=1e-6)


def test_constrained_conjugate_mode(make_path, make_counts):
    model = LatentModel("imcar", 2, make_path(5))
    engine, target, weights = _conjugate_setup(model, make_counts, seed=2)
    theta = _theta(model)
    ev = engine.evaluate(theta)
    assert ev.valid

    A = engine.design.matrix.toarray()
    Q_post = _dense_prior(engine, theta) + A.T @ np.diag(weights) @ A
    free = np.linalg.solve(Q_post, A.T @ (weights * (target - engine.design.offset)))
    C = engine.constraints.A
    S = np.linalg.inv(Q_post)
    want = free - S @ C.T @ np.linalg.solve(C @ S @ C.T, C @ free)
    np.testing.assert_allclose(ev.mode, want, rtol=0, atol=1e-8)


def test_intrinsic_poisson_mode_satisfies_the_constraints(make_random_graph, make_counts):
    g = make_random_graph(8, seed=4, components=2)
    model = LatentModel("indimcar", 2, g)
    data = make_counts(8, 2, seed=3)
    ev = gaussian_approx(model, data, np.array([1.0, 0.5]))
    assert ev.valid
    engine = LaplaceEngine(model, data)
    assert np.max(np.abs(engine.constraints.A @ ev.mode)) < 1e-10


def test_warm_start_needs_at_most_two_iterations(make_path, make_counts):
    model = LatentModel("pmcar", 2, make_path(6))
    engine = LaplaceEngine(model, make_counts(6, 2, seed=5))
    theta = _theta(model)
    cold = engine.evaluate(theta)
    warm = engine.evaluate(theta, x0=cold.mode)
    assert cold.valid and warm.valid
    assert warm.newton_iters <= 2
    assert warm.log_post == pytest.approx(cold.log_post, abs=1e-4)


def test_rejected_hyperparameters_give_minus_infinity(make_path, make_counts):
    model = LatentModel("mmodel", 2, make_path(4))
    engine = LaplaceEngine(model, make_counts(4, 2))
    ev = engine.evaluate(np.array([0.0, 0.0, 1.0, 1.0, 1.0, 1.0]))
    assert not ev.valid
    assert ev.log_post == -np.inf
    assert "singular" in ev.reason


def test_log_posterior_falls_off_as_the_variance_grows(make_path, make_counts):
    model = LatentModel("pmcar", 1, make_path(6))
    engine = LaplaceEngine(model, make_counts(6, 1, seed=8))
    values = [engine.evaluate(np.array([0.5, log_prec])).log_post for log_prec in (-2.0, -5.0, -8.0)]
    assert values[0] > values[1] > values[2]


def test_shape_mismatch_is_a_validation_error(make_path, make_counts):
    with pytest.raises(ValidationError):
        LaplaceEngine(LatentModel("pmcar", 2, make_path(4)), make_counts(5, 2))


def test_moments_match_the_dense_constrained_covariance(make_path, make_counts):
    model = LatentModel("imcar", 2, make_path(5))
    data = make_counts(5, 2, seed=6, covariate=True)
    engine = LaplaceEngine(model, data)
    ev = engine.evaluate(_theta(model))
    assert ev.valid

    S = np.linalg.inv(ev.precision.toarray())
    C = engine.constraints.A
    S_c = S - S @ C.T @ np.linalg.solve(C @ S @ C.T, C @ S)
    A = engine.design.matrix.toarray()
    nl = engine.design.n_latent

    mean, var = engine.latent_moments(ev)
    np.testing.assert_allclose(mean, ev.mode[:nl])
    np.testing.assert_allclose(var, np.diag(S_c)[:nl], rtol=1e-6, atol=1e-12)

    _, var = engine.fixed_moments(ev)
    np.testing.assert_allclose(var, np.diag(S_c)[nl:], rtol=1e-6)

    mean, var = engine.predictor_moments(ev)
    np.testing.assert_allclose(mean, engine.design.forward(ev.mode))
    np.testing.assert_allclose(var, np.diag(A @ S_c @ A.T), rtol=1e-6)
