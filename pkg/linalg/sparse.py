# linalg/sparse.py
"""
Sparse symmetric matrices, Cholesky factors with log-determinants, constrained
correction (conditioning by kriging) and GMRF sampling.

Matrices are stored as their lower triangle so every assembled precision is
exactly symmetric. Factorization uses CHOLMOD from scikit-sparse when it is
importable, otherwise a reverse Cuthill-McKee ordering followed by a SuperLU
factorization of the permuted matrix with diagonal pivoting, read as L D Lᵀ.
"""
import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.csgraph import reverse_cuthill_mckee
from scipy.sparse.linalg import splu, spsolve_triangular

from config import CHOLESKY_BACKEND, JITTER_FACTOR, JITTER_MAX, JITTER_START
from errors import ConstraintDegeneracy, NotPositiveDefinite, ValidationError

logger = logging.getLogger(__name__)

MAX_DIM = 2**31 - 1
PIVOT_RTOL = 1e-14

try:
    from sksparse.cholmod import CholmodError
    from sksparse.cholmod import cholesky as cholmod_cholesky
except ImportError:
    cholmod_cholesky = None
    CholmodError = None


@dataclass(frozen=True, eq=False)
class SparseSym:
    """Symmetric matrix held as the CSC lower triangle."""
    lower: sp.csc_matrix

    @classmethod
    def from_matrix(cls, matrix, rtol=1e-12):
        m = sp.csc_matrix(matrix, dtype=float)
        if m.shape[0] != m.shape[1] or m.shape[0] < 1:
            raise ValidationError(f"expected a non-empty square matrix, got shape {m.shape}")
        if not np.all(np.isfinite(m.data)):
            raise ValidationError("matrix has non-finite entries")
        asym = abs(m - m.T)
        scale = max(abs(m).max(), 1.0)
        if asym.nnz and asym.max() > rtol * scale:
            raise ValidationError("matrix is not symmetric")
        return cls.from_lower(sp.tril(m))

    @classmethod
    def from_lower(cls, lower):
        low = sp.csc_matrix(sp.tril(lower), dtype=float)
        low.eliminate_zeros()
        low.sort_indices()
        return cls(low)

    @property
    def dim(self):
        return self.lower.shape[0]

    def diagonal(self):
        return self.lower.diagonal()

    def full(self):
        strict = sp.tril(self.lower, k=-1)
        return (self.lower + strict.T).tocsc()

    def toarray(self):
        return self.full().toarray()

    def __matmul__(self, x):
        return self.full() @ x

    def __add__(self, other):
        if isinstance(other, SparseSym):
            return SparseSym.from_lower(self.lower + other.lower)
        return NotImplemented


@dataclass(frozen=True, eq=False)
class ConstraintSet:
    """Linear constraints A x = e."""
    A: np.ndarray
    e: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        e = np.asarray(self.e, dtype=float).reshape(-1)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "e", e)
        m, n = A.shape
        if e.shape[0] != m:
            raise ValidationError(f"constraint vector has length {e.shape[0]}, expected {m}")
        if m >= n:
            raise ValidationError("need fewer constraints than unknowns")
        if np.linalg.matrix_rank(A) < m:
            raise ValidationError("constraint rows are linearly dependent")

    @property
    def n_constraints(self):
        return self.A.shape[0]

    def padded(self, n_total):
        """Extend A with zero columns so it acts on a longer vector."""
        extra = n_total - self.A.shape[1]
        if extra < 0:
            raise ValidationError("cannot pad constraints to a shorter vector")
        return ConstraintSet(np.hstack([self.A, np.zeros((self.A.shape[0], extra))]), self.e)

    def residual(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return self.A @ x - self.e
        return self.A @ x - self.e[:, None]


def kron_dense_sparse(L, S):
    """Precision with block (k, l) equal to L[k, l] * S, variable-major ordering."""
    L = np.atleast_2d(np.asarray(L, dtype=float))
    if L.shape[0] != L.shape[1]:
        raise ValidationError("dense factor must be square")
    if not np.allclose(L, L.T, rtol=0.0, atol=1e-12 * max(np.abs(L).max(), 1.0)):
        raise ValidationError("dense factor must be symmetric")
    if L.shape[0] * S.dim > MAX_DIM:
        raise ValidationError("Kronecker product dimension overflow")
    strict = sp.csc_matrix(np.tril(L, k=-1))
    diag = sp.diags(np.diag(L))
    lower = sp.kron(strict, S.full(), format="csc") + sp.kron(diag, S.lower, format="csc")
    return SparseSym.from_lower(lower)


@dataclass(frozen=True, eq=False)
class CholFactor:
    """Q[p][:, p] + jitter = L Lᵀ, held either by CHOLMOD or as a sparse L D Lᵀ from SuperLU."""
    permutation: np.ndarray
    logdet: float
    jitter_applied: float
    dim: int
    backend: str
    _cholmod: object = None
    _lu: object = None
    _lu_order: np.ndarray = None
    _unit_lower: sp.csr_matrix = None
    _unit_upper: sp.csr_matrix = None
    _pivots: np.ndarray = None

    def _check_rhs(self, b):
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.dim:
            raise ValidationError(f"right-hand side has {b.shape[0]} rows, expected {self.dim}")
        return b

    def _unpermute(self, xp):
        x = np.empty_like(xp)
        x[self.permutation] = xp
        return x

    def _scale(self, v, power):
        s = self._pivots**power
        return v * (s if v.ndim == 1 else s[:, None])

    def solve(self, b):
        """x with Q x = b, for a vector or a matrix of right-hand sides."""
        b = self._check_rhs(b)
        if self._cholmod is not None:
            return np.asarray(self._cholmod(b))
        order = self._lu_order
        x = np.empty_like(b)
        x[order] = self._lu.solve(b[order])
        return x

    def solve_lt(self, z):
        """Pᵀ L⁻ᵀ z; for standard normal z the result has covariance Q⁻¹."""
        z = self._check_rhs(z)
        if self._cholmod is not None:
            f = self._cholmod
            return np.asarray(f.apply_Pt(f.solve_Lt(z, use_LDLt_decomposition=False)))
        xp = spsolve_triangular(self._unit_upper, self._scale(z, -0.5), lower=False)
        return self._unpermute(xp)

    def solve_l(self, b):
        """L⁻¹ P b, so that the squared column norms give diag(Bᵀ Q⁻¹ B) for b = B."""
        b = self._check_rhs(b)
        if self._cholmod is not None:
            f = self._cholmod
            return np.asarray(f.solve_L(f.apply_P(b), use_LDLt_decomposition=False))
        y = spsolve_triangular(self._unit_lower, b[self.permutation], lower=True)
        return self._scale(y, -0.5)

    def lower_factor(self):
        """Dense L with L Lᵀ = Q[p][:, p] + jitter, and the permutation p."""
        if self._cholmod is not None:
            return self._cholmod.L().toarray(), self.permutation
        return (self._unit_lower @ sp.diags(np.sqrt(self._pivots))).toarray(), self.permutation

    @property
    def nnz(self):
        """Stored entries of the triangular factor."""
        if self._cholmod is not None:
            return int(self._cholmod.L().nnz)
        return int(self._unit_lower.nnz)


def _resolve_backend(backend):
    backend = backend or CHOLESKY_BACKEND
    if backend == "auto":
        return "cholmod" if cholmod_cholesky is not None else "superlu"
    if backend == "cholmod" and cholmod_cholesky is None:
        raise ValidationError("cholmod backend requested but scikit-sparse is not installed")
    if backend not in ("cholmod", "superlu"):
        raise ValidationError(f"unknown Cholesky backend '{backend}'")
    return backend


def _pivots_ok(diag_l, diag_q):
    scale = max(np.max(np.abs(diag_q)), np.finfo(float).tiny)
    return bool(np.all(np.isfinite(diag_l)) and np.all(diag_l**2 > PIVOT_RTOL * scale))


def _factor_superlu(full, shift):
    """Bandwidth-reducing ordering, then SuperLU with diagonal pivots only, so U = D Lᵀ."""
    n = full.shape[0]
    perm = reverse_cuthill_mckee(full.tocsr(), symmetric_mode=True).astype(np.intp)
    a = full[perm][:, perm].tocsc()
    if shift:
        a = (a + shift * sp.identity(n, format="csc")).tocsc()
    try:
        lu = splu(a, permc_spec="NATURAL", diag_pivot_thresh=0.0, options={"SymmetricMode": True})
    except RuntimeError:
        return None
    # SuperLU may postorder the columns; a symmetric factor needs rows to follow them
    if not np.array_equal(lu.perm_r, lu.perm_c):
        return None
    order = perm[np.argsort(lu.perm_c)]
    pivots = lu.U.diagonal()
    if not np.all(pivots > 0) or not _pivots_ok(np.sqrt(pivots), a.diagonal()):
        return None
    lower = (sp.tril(lu.L, k=-1) + sp.identity(n)).tocsr()
    lower.sort_indices()
    upper = lower.T.tocsr()
    upper.sort_indices()
    return perm, order, lu, lower, upper, pivots


def _factor_cholmod(full, shift):
    try:
        f = cholmod_cholesky(full, beta=shift)
    except CholmodError:
        return None
    diag_l = f.L().diagonal()
    if not _pivots_ok(diag_l, full.diagonal() + shift):
        return None
    return f


def cholesky(Q, jitter=True, backend=None):
    """Factorize Q, retrying with escalating diagonal jitter when allowed.

    The jitter added is delta * mean(diag(Q)) with delta from JITTER_START up to
    JITTER_MAX in steps of JITTER_FACTOR; the final delta is recorded.
    """
    backend = _resolve_backend(backend)
    full = Q.full()
    mean_diag = float(np.mean(Q.diagonal()))
    unit = mean_diag if mean_diag > 0 else 1.0

    deltas = [0.0]
    if jitter:
        delta = JITTER_START
        while delta <= JITTER_MAX * (1 + 1e-12):
            deltas.append(delta)
            delta *= JITTER_FACTOR

    for delta in deltas:
        shift = delta * unit
        if backend == "cholmod":
            f = _factor_cholmod(full, shift)
            if f is None:
                continue
            if delta:
                logger.debug("cholesky succeeded with jitter %.1e", delta)
            return CholFactor(
                permutation=np.asarray(f.P(), dtype=np.intp),
                logdet=float(f.logdet()),
                jitter_applied=delta,
                dim=Q.dim,
                backend=backend,
                _cholmod=f,
            )
        result = _factor_superlu(full, shift)
        if result is None:
            continue
        rcm, perm, lu, lower, upper, pivots = result
        if delta:
            logger.debug("cholesky succeeded with jitter %.1e", delta)
        return CholFactor(
            permutation=perm,
            logdet=float(np.sum(np.log(pivots))),
            jitter_applied=delta,
            dim=Q.dim,
            backend=backend,
            _lu=lu,
            _lu_order=rcm,
            _unit_lower=lower,
            _unit_upper=upper,
            _pivots=pivots,
        )
    raise NotPositiveDefinite(
        f"matrix of dimension {Q.dim} is not positive definite"
        + (f" (jitter up to {JITTER_MAX:g} exhausted)" if jitter else "")
    )


def solve(f, b):
    return f.solve(b)


class KrigingCorrector:
    """Caches Q⁻¹Aᵀ and the factor of A Q⁻¹ Aᵀ for repeated corrections."""

    def __init__(self, f, c):
        if c.A.shape[1] != f.dim:
            raise ValidationError("constraint width does not match the factor dimension")
        self.constraints = c
        self.q_inv_at = f.solve(c.A.T)
        schur = c.A @ self.q_inv_at
        schur = 0.5 * (schur + schur.T)
        try:
            self._schur = sla.cho_factor(schur, lower=True, check_finite=True)
        except (sla.LinAlgError, ValueError):
            raise ConstraintDegeneracy("A Q^-1 A^T is singular") from None
        if np.linalg.cond(schur) > 1e13:
            raise ConstraintDegeneracy("A Q^-1 A^T is numerically singular")
        self.schur_logdet = float(2.0 * np.sum(np.log(np.diag(self._schur[0]))))

    def schur_solve(self, r):
        return sla.cho_solve(self._schur, r, check_finite=False)

    def correct(self, x, e=None):
        c = self.constraints
        x = np.asarray(x, dtype=float)
        target = c.e if e is None else np.asarray(e, dtype=float)
        resid = c.A @ x - (target if x.ndim == 1 else target[:, None])
        return x - self.q_inv_at @ sla.cho_solve(self._schur, resid, check_finite=False)


def constrain(x, f, c):
    """Conditioning by kriging: x - Q⁻¹Aᵀ(AQ⁻¹Aᵀ)⁻¹(Ax - e)."""
    return KrigingCorrector(f, c).correct(x)


def sample_gmrf(f, c=None, rng=None, size=None, mean=None):
    """Draw from N(mean, Q⁻¹), conditioned on A x = e when constraints are given.

    With ``size`` the draws are returned as the columns of an (n, size) array.
    """
    rng = np.random.default_rng() if rng is None else rng
    shape = (f.dim,) if size is None else (f.dim, size)
    x = f.solve_lt(rng.standard_normal(shape))
    mu = np.zeros(f.dim) if mean is None else np.asarray(mean, dtype=float)
    if size is not None:
        mu = mu[:, None]
    x = x + mu
    if c is not None:
        corrector = KrigingCorrector(f, c)
        # second pass removes the rounding left by the null-space component
        x = corrector.correct(corrector.correct(x))
    return x
