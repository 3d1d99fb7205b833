# models/latent.py
"""
The multivariate latent effects: precision assembly, hyperpriors, constraints
and simulation of the effects vec(Θ) in variable-major order.

Between-variable structure:

    indimcar / imcar   Λ ⊗ (D - W)          intrinsic, sum-to-zero per variable
    indpmcar / pmcar   Λ ⊗ (D - αW)         proper
    mmodel             (M⁻¹ ⊗ I) blockdiag(D - α_k W) (M⁻ᵀ ⊗ I)

Priors: σ_k uniform on (0, ∞) for the independent kinds, Λ⁻¹ ~ Wishart_K(r, R⁻¹)
for imcar/pmcar, MᵀM ~ Wishart_K(K, (τI)⁻¹) for the M-model and α uniform on
(alpha_min, alpha_max). The Wishart densities follow scipy.stats.wishart, i.e.
`df` degrees of freedom and `scale` the expectation divided by df.
"""
import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import log_expit
from scipy.stats import wishart

from config import ALPHA_MAX, ALPHA_MIN, JACOBIAN_STEP, MMODEL_TAU
from errors import InvalidHyperparameters, NotPositiveDefinite, ValidationError
from linalg.sparse import ConstraintSet, cholesky, kron_dense_sparse, sample_gmrf
from models.transforms import (
    ModelKind,
    alpha_from_internal,
    correlation_matrix,
    split_theta,
    theta_dim,
    to_natural,
)
from spatial.car import alpha_bounds, intrinsic_precision, proper_precision
from spatial.graph import connected_components, require_neighbors

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class LatentModel:
    kind: ModelKind
    K: int
    graph: object
    alpha_range: tuple = (ALPHA_MIN, ALPHA_MAX)
    mmodel_tau: float = MMODEL_TAU
    wishart_r: int = None
    wishart_R: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind.parse(self.kind))
        if int(self.K) != self.K or self.K < 1:
            raise ValidationError(f"K must be a positive integer, got {self.K}")
        object.__setattr__(self, "K", int(self.K))
        require_neighbors(self.graph)
        if not self.mmodel_tau > 0:
            raise ValidationError("mmodel_tau must be positive")

        lo, hi = (float(a) for a in self.alpha_range)
        if not lo < hi:
            raise ValidationError("alpha_min must be smaller than alpha_max")
        object.__setattr__(self, "alpha_range", (lo, hi))
        if self.kind.has_alpha:
            adm_lo, adm_hi = alpha_bounds(self.graph)
            if lo < adm_lo or hi > adm_hi:
                raise ValidationError(
                    f"alpha range ({lo}, {hi}) is not inside the admissible interval ({adm_lo:.8f}, {adm_hi:.8f})"
                )

        r = self.K if self.wishart_r is None else self.wishart_r
        if r <= self.K - 1:
            raise ValidationError(f"Wishart degrees of freedom must exceed K - 1, got {r}")
        object.__setattr__(self, "wishart_r", r)
        R = np.eye(self.K) if self.wishart_R is None else np.asarray(self.wishart_R, dtype=float)
        if R.shape != (self.K, self.K) or not np.allclose(R, R.T):
            raise ValidationError("Wishart R must be a symmetric K x K matrix")
        try:
            np.linalg.cholesky(R)
        except np.linalg.LinAlgError:
            raise ValidationError("Wishart R must be positive definite") from None
        object.__setattr__(self, "wishart_R", R)

    @property
    def n_regions(self):
        return self.graph.n_regions

    @property
    def n_latent(self):
        return self.graph.n_regions * self.K

    @cached_property
    def _intrinsic_structure(self):
        return intrinsic_precision(self.graph)

    @cached_property
    def _constraints(self):
        if not self.kind.is_intrinsic:
            return None
        labels, n_comp = connected_components(self.graph)
        I = self.graph.n_regions
        A = np.zeros((self.K * n_comp, self.K * I))
        for k in range(self.K):
            for c in range(n_comp):
                A[k * n_comp + c, k * I:(k + 1) * I] = labels == c + 1
        return ConstraintSet(A, np.zeros(A.shape[0]))

    def _alphas(self, theta):
        a_star, _, _, _ = split_theta(self, theta)
        alphas = np.atleast_1d(alpha_from_internal(self, a_star))
        adm_lo, adm_hi = alpha_bounds(self.graph)
        if np.any(alphas <= adm_lo) or np.any(alphas >= adm_hi):
            raise InvalidHyperparameters("autocorrelation reached the edge of the admissible interval")
        return alphas

    def _spatial_structure(self, alpha=None):
        if alpha is None:
            return self._intrinsic_structure
        return proper_precision(self.graph, alpha, check=False)


def theta_check(model, theta):
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.size != theta_dim(model):
        raise ValidationError(f"theta has length {theta.size}, expected {theta_dim(model)}")
    if not np.all(np.isfinite(theta)):
        raise InvalidHyperparameters("theta has non-finite entries")
    return theta


def _between_precision(lam_inv):
    lam = np.linalg.inv(lam_inv)
    return 0.5 * (lam + lam.T)


def precision(model, theta):
    """Sparse IK x IK precision of vec(Θ)."""
    theta = theta_check(model, theta)
    p = to_natural(model, theta)

    if model.kind is ModelKind.MMODEL:
        alphas = model._alphas(theta)
        n_inv = np.linalg.inv(p.M)
        Q = None
        for j, alpha in enumerate(alphas):
            term = kron_dense_sparse(np.outer(n_inv[:, j], n_inv[:, j]), model._spatial_structure(alpha))
            Q = term if Q is None else Q + term
        return Q

    alpha = model._alphas(theta)[0] if model.kind.has_alpha else None
    return kron_dense_sparse(_between_precision(p.Lambda_inv), model._spatial_structure(alpha))


def constraints(model):
    """Sum-to-zero rows per variable and connected component for intrinsic kinds, else None."""
    return model._constraints


def _alpha_prior(model, a_star):
    lo, hi = model.alpha_range
    return float(np.sum(np.log(hi - lo) + log_expit(a_star) + log_expit(-a_star)))


def _vech_cov(K, log_prec, rho_star):
    sd = np.exp(-0.5 * log_prec)
    rho = 2.0 / (1.0 + np.exp(-rho_star)) - 1.0
    cov = correlation_matrix(K, rho) * np.outer(sd, sd)
    return cov[np.tril_indices(K)]


def wishart_jacobian(model, theta, step=JACOBIAN_STEP):
    """log |det ∂vech(Λ⁻¹)/∂(log τ, ρ*)| by central differences."""
    _, log_prec, rho_star, _ = split_theta(model, theta)
    K = model.K
    u = np.concatenate([log_prec, rho_star])
    n = u.size
    J = np.empty((n, n))
    for j in range(n):
        up, dn = u.copy(), u.copy()
        up[j] += step
        dn[j] -= step
        J[:, j] = (_vech_cov(K, up[:K], up[K:]) - _vech_cov(K, dn[:K], dn[K:])) / (2.0 * step)
    sign, logabs = np.linalg.slogdet(J)
    if sign == 0 or not np.isfinite(logabs):
        raise InvalidHyperparameters("degenerate Jacobian of the covariance map")
    return float(logabs)


def wishart_log_density(matrix, df, scale):
    return float(wishart(df=df, scale=scale).logpdf(matrix))


def log_prior(model, theta):
    """Log hyperprior density of θ, up to an additive constant."""
    theta = theta_check(model, theta)
    p = to_natural(model, theta)
    a_star, log_prec, _, _ = split_theta(model, theta)

    total = _alpha_prior(model, a_star) if a_star is not None else 0.0
    if model.kind is ModelKind.MMODEL:
        scale = np.eye(model.K) / model.mmodel_tau
        return total + wishart_log_density(p.between_cov, model.K, scale)
    if not model.kind.has_correlations:
        return total - 0.5 * float(np.sum(log_prec))

    total += wishart_log_density(p.Lambda_inv, model.wishart_r, np.linalg.inv(model.wishart_R))
    return total + wishart_jacobian(model, theta)


def log_det_star(model, theta):
    """(Generalized) log-determinant of the precision, θ-free constants dropped for intrinsic kinds."""
    theta = theta_check(model, theta)
    p = to_natural(model, theta)
    I = model.n_regions

    if model.kind is ModelKind.MMODEL:
        _, logabs = np.linalg.slogdet(p.M)
        total = -2.0 * I * logabs
        for alpha in model._alphas(theta):
            total += cholesky(model._spatial_structure(alpha), jitter=False).logdet
        return total

    _, logdet_cov = np.linalg.slogdet(p.Lambda_inv)
    if model.kind.is_intrinsic:
        _, n_comp = connected_components(model.graph)
        return -(I - n_comp) * logdet_cov

    alpha = model._alphas(theta)[0]
    structure = cholesky(model._spatial_structure(alpha), jitter=False)
    return -I * logdet_cov + model.K * structure.logdet


def latent_log_density(model, theta, x, Q=None):
    """½ logdet*(Q) - ½ xᵀQx for the latent block x (length IK)."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != model.n_latent:
        raise ValidationError(f"latent vector has length {x.size}, expected {model.n_latent}")
    Q = precision(model, theta) if Q is None else Q
    return 0.5 * log_det_star(model, theta) - 0.5 * float(x @ (Q @ x))


def sample_effects(model, theta, rng=None, size=None):
    """Draw Θ (I x K), or an array (size, I, K) of draws when size is given."""
    rng = np.random.default_rng() if rng is None else rng
    Q = precision(model, theta)
    try:
        f = cholesky(Q, jitter=model.kind.is_intrinsic)
    except NotPositiveDefinite as exc:
        raise InvalidHyperparameters(str(exc)) from exc

    x = sample_gmrf(f, constraints(model), rng=rng, size=size)

    I, K = model.n_regions, model.K
    if size is None:
        return x.reshape((K, I)).T
    return x.T.reshape((size, K, I)).transpose(0, 2, 1)
