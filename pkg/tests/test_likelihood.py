import numpy as np
import pytest

from errors import InvalidState, ValidationError
from models.likelihood import (
    CountData,
    PoissonLikelihood,
    build_design,
    cell_deviance,
    poisson_log_pmf,
    poisson_loglik_terms,
    saturated_deviance,
)


def _data(seed=0, missing=False):
    rng = np.random.default_rng(seed)
    observed = rng.poisson(8, size=(5, 2)).astype(float)
    if missing:
        observed[2, 1] = np.nan
    expected = rng.uniform(4, 12, size=(5, 2))
    return CountData(observed=observed, expected=expected, covariates={"z": rng.normal(size=(5, 2))})


def test_flat_order_is_variable_major():
    data = _data()
    flat = data.flat(data.observed)
    np.testing.assert_array_equal(flat[:5], data.observed[:, 0])
    np.testing.assert_array_equal(flat[5:], data.observed[:, 1])
    np.testing.assert_allclose(data.log_offset(), np.log(data.flat(data.expected)))


def test_missing_cells_are_masked():
    data = _data(missing=True)
    assert data.n_obs == 9
    assert not data.mask[5 + 2]
    eta = np.log(data.flat(data.expected))
    _, grad, curv = poisson_loglik_terms(data, eta)
    assert grad[7] == 0.0 and curv[7] == 0.0


@pytest.mark.parametrize(
    "observed, expected",
    [
        ([[-1.0]], [[1.0]]),
        ([[1.5]], [[1.0]]),
        ([[1.0]], [[0.0]]),
        ([[np.nan]], [[1.0]]),
    ],
)
def test_invalid_counts(observed, expected):
    with pytest.raises(ValidationError):
        CountData(observed=np.array(observed), expected=np.array(expected))


def test_covariate_shape_is_checked():
    with pytest.raises(ValidationError):
        CountData(observed=np.ones((2, 1)), expected=np.ones((2, 1)), covariates={"z": np.ones((3, 1))})


def test_gradient_and_curvature_match_finite_differences():
    data = _data(seed=3, missing=True)
    rng = np.random.default_rng(4)
    eta = np.log(data.flat(data.expected)) + 0.2 * rng.normal(size=10)
    ll, grad, curv = poisson_loglik_terms(data, eta)
    for i in np.flatnonzero(data.mask):
        step = np.zeros(10)
        step[i] = 1.0
        up, _, _ = poisson_loglik_terms(data, eta + 1e-5 * step)
        dn, _, _ = poisson_loglik_terms(data, eta - 1e-5 * step)
        assert grad[i] == pytest.approx((up - dn) / 2e-5, rel=1e-6, abs=1e-6)
        up, _, _ = poisson_loglik_terms(data, eta + 1e-3 * step)
        dn, _, _ = poisson_loglik_terms(data, eta - 1e-3 * step)
        assert curv[i] == pytest.approx(-(up - 2 * ll + dn) / 1e-6, rel=1e-5)


def test_overflowing_predictor_is_an_invalid_state():
    data = _data()
    eta = np.full(10, 31.0)
    with pytest.raises(InvalidState):
        poisson_loglik_terms(data, eta)
    with pytest.raises(InvalidState):
        PoissonLikelihood(data).terms(np.full(10, np.nan))


def test_deviance_is_zero_for_a_saturated_fit():
    y = np.array([0.0, 1.0, 7.0])
    eta = np.log(np.array([1e-300, 1.0, 7.0]))
    dev = cell_deviance(y, eta)
    assert dev[1] == pytest.approx(0.0, abs=1e-12)
    assert dev[2] == pytest.approx(0.0, abs=1e-12)
    assert cell_deviance(np.array([0.0]), np.array([np.log(2.5)]))[0] == pytest.approx(5.0)


def test_pointwise_terms_broadcast_over_draws():
    data = _data(missing=True)
    eta = np.log(data.flat(data.expected))
    draws = np.vstack([eta, eta + 0.1])
    assert poisson_log_pmf(data, draws).shape == (2, 9)
    np.testing.assert_allclose(saturated_deviance(data, draws)[0], saturated_deviance(data, eta))


def test_design_matches_the_dense_predictor():
    data = _data()
    design = build_design(data)
    rng = np.random.default_rng(5)
    x = rng.normal(size=design.n_total)
    theta, a, b = x[:10], x[10:12], x[12:14]
    z = data.covariates["z"]
    want = np.log(data.expected) + theta.reshape(2, 5).T + a[None, :] + b[None, :] * z
    np.testing.assert_allclose(design.forward(x), data.flat(want), rtol=1e-13, atol=1e-13)
    assert design.fixed_names == ("intercept[1]", "intercept[2]", "z[1]", "z[2]")


def test_design_adjoint():
    data = _data()
    design = build_design(data)
    rng = np.random.default_rng(6)
    x = rng.normal(size=design.n_total)
    y = rng.normal(size=10)
    lhs = design.linear(x) @ y
    assert lhs == pytest.approx(x @ design.adjoint(y), rel=1e-12, abs=1e-12)


def test_design_covariate_selection():
    data = _data()
    assert build_design(data, covariates=[]).n_fixed == 2
    with pytest.raises(ValidationError):
        build_design(data, covariates=["w"])
