import numpy as np
import pytest
import scipy.sparse as sp

from errors import ConstraintDegeneracy, NotPositiveDefinite, ValidationError
from linalg.sparse import (
    ConstraintSet,
    KrigingCorrector,
    SparseSym,
    cholesky,
    constrain,
    kron_dense_sparse,
    sample_gmrf,
    solve,
)
from spatial.car import proper_precision


def _random_pd(n, rng):
    X = rng.normal(size=(n, n))
    return X @ X.T + n * np.eye(n)


def _rel_frobenius(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def test_from_matrix_rejects_asymmetric_input():
    with pytest.raises(ValidationError):
        SparseSym.from_matrix(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_full_restores_both_triangles():
    rng = np.random.default_rng(0)
    A = _random_pd(5, rng)
    S = SparseSym.from_matrix(A)
    np.testing.assert_allclose(S.toarray(), A, rtol=0, atol=0)
    x = rng.normal(size=5)
    np.testing.assert_allclose(S @ x, A @ x, rtol=1e-13)


def test_kron_matches_dense_kronecker():
    rng = np.random.default_rng(1)
    L = _random_pd(3, rng)
    B = rng.normal(size=(5, 5))
    S = SparseSym.from_matrix(B + B.T)
    np.testing.assert_array_equal(kron_dense_sparse(L, S).toarray(), np.kron(L, B + B.T))


def test_logdet_of_proper_path(make_path, dense_car):
    Q = dense_car(make_path(3), 0.5)
    f = cholesky(SparseSym.from_matrix(Q))
    assert f.jitter_applied == 0.0
    assert f.logdet == pytest.approx(np.sum(np.log(np.linalg.eigvalsh(Q))), abs=1e-10)


def test_solve_matches_dense_solver():
    rng = np.random.default_rng(2)
    A = _random_pd(6, rng)
    b = rng.normal(size=6)
    f = cholesky(SparseSym.from_matrix(A))
    np.testing.assert_allclose(solve(f, b), np.linalg.solve(A, b), rtol=1e-9, atol=1e-12)


@pytest.mark.parametrize("n", [1, 17, 200])
def test_solve_round_trip(n):
    rng = np.random.default_rng(n)
    X = sp.random(n, n, density=0.05, random_state=n)
    A = (X @ X.T + sp.identity(n)).toarray()
    f = cholesky(SparseSym.from_matrix(A))
    b = rng.normal(size=(n, 3))
    x = f.solve(b)
    assert np.max(np.abs(A @ x - b)) / np.max(np.abs(b)) < 1e-9


def test_factor_reproduces_permuted_matrix():
    rng = np.random.default_rng(4)
    A = _random_pd(8, rng)
    f = cholesky(SparseSym.from_matrix(A))
    L, p = f.lower_factor()
    target = A[np.ix_(p, p)]
    assert _rel_frobenius(L @ L.T, target) < 1e-10


def test_solve_l_gives_quadratic_forms():
    rng = np.random.default_rng(5)
    A = _random_pd(7, rng)
    B = rng.normal(size=(7, 4))
    f = cholesky(SparseSym.from_matrix(A))
    got = np.sum(f.solve_l(B) ** 2, axis=0)
    np.testing.assert_allclose(got, np.diag(B.T @ np.linalg.solve(A, B)), rtol=1e-10)


def test_singular_matrix_needs_jitter(make_path, dense_car):
    Q = SparseSym.from_matrix(dense_car(make_path(3)))
    with pytest.raises(NotPositiveDefinite):
        cholesky(Q, jitter=False, backend="superlu")
    f = cholesky(Q, backend="superlu")
    assert 1e-8 <= f.jitter_applied <= 1e-4


@pytest.mark.parametrize("backend", ["superlu", "cholmod"])
def test_backends_agree_with_dense_algebra(backend, make_grid):
    if backend == "cholmod":
        pytest.importorskip("sksparse.cholmod")
    Q = proper_precision(make_grid(6, 7), 0.8)
    A = Q.toarray()
    f = cholesky(Q, jitter=False, backend=backend)
    assert f.backend == backend
    assert f.logdet == pytest.approx(np.linalg.slogdet(A)[1], rel=1e-10)

    rng = np.random.default_rng(8)
    B = rng.normal(size=(42, 3))
    np.testing.assert_allclose(f.solve(B), np.linalg.solve(A, B), rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(np.sum(f.solve_l(B) ** 2, axis=0), np.diag(B.T @ np.linalg.solve(A, B)), rtol=1e-9)
    X = f.solve_lt(np.eye(42))
    np.testing.assert_allclose(X @ X.T, np.linalg.inv(A), rtol=1e-8, atol=1e-12)


def test_superlu_factor_stays_sparse(make_path):
    Q = proper_precision(make_path(4000), 0.9, check=False)
    f = cholesky(Q, jitter=False, backend="superlu")
    assert f.nnz < 3 * 4000
    b = np.random.default_rng(2).normal(size=4000)
    x = f.solve(b)
    assert np.max(np.abs(Q @ x - b)) < 1e-9 * np.max(np.abs(b))
    z = f.solve_l(b)
    assert float(z @ z) == pytest.approx(float(b @ x), rel=1e-9)


def test_unknown_backend_is_rejected():
    with pytest.raises(ValidationError):
        cholesky(SparseSym.from_matrix(np.eye(2)), backend="dense")


def test_negative_definite_fails_after_jitter():
    with pytest.raises(NotPositiveDefinite):
        cholesky(SparseSym.from_matrix(-np.eye(3)))


def test_constrain_matches_dense_formula():
    rng = np.random.default_rng(6)
    Q = _random_pd(8, rng)
    A = rng.normal(size=(2, 8))
    e = rng.normal(size=2)
    x = rng.normal(size=8)
    f = cholesky(SparseSym.from_matrix(Q))
    c = ConstraintSet(A, e)
    got = constrain(x, f, c)

    S = np.linalg.inv(Q)
    want = x - S @ A.T @ np.linalg.solve(A @ S @ A.T, A @ x - e)
    np.testing.assert_allclose(got, want, rtol=1e-9, atol=1e-9)
    assert np.max(np.abs(A @ got - e)) < 1e-10
    np.testing.assert_allclose(constrain(got, f, c), got, atol=1e-10)


def test_constraint_set_validation():
    with pytest.raises(ValidationError):
        ConstraintSet(np.ones((2, 3)), np.zeros(3))
    with pytest.raises(ValidationError):
        ConstraintSet(np.ones((2, 3)), np.zeros(2))
    padded = ConstraintSet(np.ones((1, 3)), np.zeros(1)).padded(5)
    np.testing.assert_array_equal(padded.A, [[1, 1, 1, 0, 0]])


def test_degenerate_constraints_are_reported():
    # rows differ only where the variance is negligible
    f = cholesky(SparseSym.from_matrix(np.diag([1.0, 1.0, 1e13, 1e13])))
    A = np.array([[1.0, 0.0, 1.0, 0.0], [1.0, 0.0, 0.0, 1.0]])
    with pytest.raises(ConstraintDegeneracy):
        KrigingCorrector(f, ConstraintSet(A, np.zeros(2)))


def test_constrained_samples_match_pseudo_inverse(make_path, dense_car):
    Qd = dense_car(make_path(3))
    f = cholesky(SparseSym.from_matrix(Qd))
    c = ConstraintSet(np.ones((1, 3)), np.zeros(1))
    x = sample_gmrf(f, c, rng=np.random.default_rng(7), size=200_000)
    assert np.max(np.abs(x.sum(axis=0))) < 1e-10
    assert _rel_frobenius(np.cov(x), np.linalg.pinv(Qd)) < 0.05


def test_unconstrained_samples_have_the_right_mean_and_covariance():
    rng = np.random.default_rng(8)
    Q = _random_pd(4, rng)
    mean = np.arange(4.0)
    x = sample_gmrf(cholesky(SparseSym.from_matrix(Q)), rng=rng, size=100_000, mean=mean)
    np.testing.assert_allclose(x.mean(axis=1), mean, atol=0.02)
    assert _rel_frobenius(np.cov(x), np.linalg.inv(Q)) < 0.05
