# models/transforms.py
"""
Hyperparameter layouts and the internal <-> natural scale maps.

Internal layouts, per model kind:

    indimcar  (log tau_1 .. log tau_K)
    indpmcar  (alpha*, log tau_1 .. log tau_K)
    imcar     (log tau_1 .. log tau_K, rho*_21, rho*_31, ..., rho*_K(K-1))
    pmcar     (alpha*, log tau_1 .. log tau_K, rho*_21, ...)
    mmodel    (alpha*_1 .. alpha*_K, m_11, m_21, ..., m_KK)   M columnwise

with alpha* = logit((alpha - alpha_min) / (alpha_max - alpha_min)) and
rho* = logit((rho + 1) / 2). Correlations are listed columnwise over the strict
lower triangle.
"""
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import expit, logit

from config import ALPHA_MAX, ALPHA_MIN, INTRINSIC_LOG_PREC_START, VARIANCE_LOG_LIMIT
from errors import DomainError, InvalidHyperparameters, ValidationError

SINGULAR_M_RTOL = 1e-12


class ModelKind(Enum):
    INDEP_IMCAR = "indimcar"
    INDEP_PMCAR = "indpmcar"
    IMCAR = "imcar"
    PMCAR = "pmcar"
    MMODEL = "mmodel"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            choices = ", ".join(k.value for k in cls)
            raise ValidationError(f"unknown model kind '{value}', expected one of: {choices}") from None

    @property
    def is_intrinsic(self):
        return self in (ModelKind.INDEP_IMCAR, ModelKind.IMCAR)

    @property
    def has_alpha(self):
        return not self.is_intrinsic

    @property
    def has_correlations(self):
        return self in (ModelKind.IMCAR, ModelKind.PMCAR)


@dataclass(frozen=True)
class HyperLayout:
    """Just enough of a model to interpret θ (no graph needed)."""
    kind: ModelKind
    K: int
    alpha_range: tuple = (ALPHA_MIN, ALPHA_MAX)

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind.parse(self.kind))
        if int(self.K) != self.K or self.K < 1:
            raise ValidationError(f"K must be a positive integer, got {self.K}")
        lo, hi = (float(a) for a in self.alpha_range)
        if not lo < hi:
            raise ValidationError("alpha_min must be smaller than alpha_max")
        object.__setattr__(self, "alpha_range", (lo, hi))


@dataclass(frozen=True, eq=False)
class NaturalParams:
    variances: np.ndarray
    correlations: np.ndarray
    between_cov: np.ndarray
    alpha: object = None
    M: np.ndarray = None
    Lambda_inv: np.ndarray = None


def theta_dim(model):
    K = model.K
    kind = ModelKind.parse(model.kind)
    if kind is ModelKind.INDEP_IMCAR:
        return K
    if kind is ModelKind.INDEP_PMCAR:
        return K + 1
    if kind is ModelKind.IMCAR:
        return K * (K + 1) // 2
    if kind is ModelKind.PMCAR:
        return K * (K + 1) // 2 + 1
    return K + K * K


def correlation_pairs(K):
    """(row, col) of the strict lower triangle, columnwise: (2,1), (3,1), ..., 0-based."""
    return [(i, j) for j in range(K) for i in range(j + 1, K)]


def _n_alpha(model):
    kind = ModelKind.parse(model.kind)
    if kind is ModelKind.MMODEL:
        return model.K
    return 1 if kind.has_alpha else 0


def _check_theta(model, theta):
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.size != theta_dim(model):
        raise ValidationError(f"theta has length {theta.size}, expected {theta_dim(model)} for {model.kind.value}")
    if not np.all(np.isfinite(theta)):
        raise InvalidHyperparameters("theta has non-finite entries")
    return theta


def alpha_from_internal(model, a_star):
    lo, hi = model.alpha_range
    return lo + (hi - lo) * expit(a_star)


def alpha_to_internal(model, alpha):
    lo, hi = model.alpha_range
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha <= lo) or np.any(alpha >= hi):
        raise DomainError(f"alpha {alpha} outside ({lo}, {hi})")
    return logit((alpha - lo) / (hi - lo))


def split_theta(model, theta):
    """Return (alpha*, log precisions, rho*, M) pieces; missing pieces are None."""
    kind = ModelKind.parse(model.kind)
    K = model.K
    n_alpha = _n_alpha(model)
    a_star = theta[:n_alpha] if n_alpha else None
    if kind is ModelKind.MMODEL:
        return a_star, None, None, theta[K:].reshape((K, K), order="F")
    log_prec = theta[n_alpha:n_alpha + K]
    rho_star = theta[n_alpha + K:] if kind.has_correlations else None
    return a_star, log_prec, rho_star, None


def correlation_matrix(K, rho):
    C = np.eye(K)
    for value, (i, j) in zip(rho, correlation_pairs(K)):
        C[i, j] = C[j, i] = value
    return C


def check_loadings(M):
    K = M.shape[0]
    norm = np.linalg.norm(M, 2)
    if not np.isfinite(norm) or norm == 0.0 or abs(np.linalg.det(M)) < SINGULAR_M_RTOL * norm**K:
        raise InvalidHyperparameters("loading matrix M is singular")


def to_natural(model, theta):
    theta = _check_theta(model, theta)
    K = model.K
    a_star, log_prec, rho_star, M = split_theta(model, theta)

    alpha = None
    if a_star is not None:
        alpha = alpha_from_internal(model, a_star)
        if ModelKind.parse(model.kind) is not ModelKind.MMODEL:
            alpha = float(alpha[0])

    if M is not None:
        check_loadings(M)
        cov = M.T @ M
        sd = np.sqrt(np.diag(cov))
        return NaturalParams(
            variances=np.diag(cov).copy(),
            correlations=cov / np.outer(sd, sd),
            between_cov=cov,
            alpha=alpha,
            M=M.copy(),
        )

    if np.any(np.abs(log_prec) > VARIANCE_LOG_LIMIT):
        raise InvalidHyperparameters("log-precision outside the supported range")
    variances = np.exp(-log_prec)
    rho = 2.0 * expit(rho_star) - 1.0 if rho_star is not None else np.zeros(0)
    C = correlation_matrix(K, rho)
    sd = np.sqrt(variances)
    lam_inv = C * np.outer(sd, sd)
    try:
        np.linalg.cholesky(lam_inv)
    except np.linalg.LinAlgError:
        raise InvalidHyperparameters("between-variable covariance is not positive definite") from None
    return NaturalParams(
        variances=variances,
        correlations=C,
        between_cov=lam_inv,
        alpha=alpha,
        Lambda_inv=lam_inv,
    )


def from_natural(model, p):
    kind = ModelKind.parse(model.kind)
    K = model.K
    parts = []
    if kind.has_alpha:
        if p.alpha is None:
            raise DomainError("alpha is required for this model kind")
        alpha = np.atleast_1d(np.asarray(p.alpha, dtype=float))
        if alpha.size != _n_alpha(model):
            raise DomainError(f"expected {_n_alpha(model)} alpha values, got {alpha.size}")
        parts.append(alpha_to_internal(model, alpha))

    if kind is ModelKind.MMODEL:
        if p.M is None:
            raise DomainError("M is required for the M-model")
        M = np.asarray(p.M, dtype=float)
        if M.shape != (K, K):
            raise DomainError(f"M must be {K}x{K}")
        parts.append(M.reshape(-1, order="F"))
        return np.concatenate(parts)

    variances = np.asarray(p.variances, dtype=float).reshape(-1)
    if variances.size != K or np.any(variances <= 0) or not np.all(np.isfinite(variances)):
        raise DomainError("variances must be K positive finite values")
    parts.append(-np.log(variances))
    if kind.has_correlations:
        C = np.asarray(p.correlations, dtype=float)
        rho = np.array([C[i, j] for i, j in correlation_pairs(K)])
        if np.any(np.abs(rho) >= 1):
            raise DomainError("correlations must lie in (-1, 1)")
        parts.append(logit((rho + 1.0) / 2.0))
    return np.concatenate(parts)


def natural_vector(model, theta):
    """Natural-scale values aligned with the internal θ layout."""
    p = to_natural(model, theta)
    kind = ModelKind.parse(model.kind)
    parts = []
    if kind.has_alpha:
        parts.append(np.atleast_1d(p.alpha))
    if kind is ModelKind.MMODEL:
        parts.append(p.M.reshape(-1, order="F"))
        return np.concatenate(parts)
    parts.append(p.variances)
    if kind.has_correlations:
        parts.append(np.array([p.correlations[i, j] for i, j in correlation_pairs(model.K)]))
    return np.concatenate(parts)


def _names(model, natural):
    kind = ModelKind.parse(model.kind)
    K = model.K
    names = []
    if kind is ModelKind.MMODEL:
        names += [f"alpha{'' if natural else '*'}[{k + 1}]" for k in range(K)]
        names += [f"M[{i + 1},{j + 1}]" for j in range(K) for i in range(K)]
        return names
    if kind.has_alpha:
        names.append("alpha" if natural else "alpha*")
    names += [f"{'var' if natural else 'log_prec'}[{k + 1}]" for k in range(K)]
    if kind.has_correlations:
        names += [f"{'rho' if natural else 'rho*'}[{i + 1},{j + 1}]" for i, j in correlation_pairs(K)]
    return names


def internal_names(model):
    return _names(model, natural=False)


def natural_names(model):
    return _names(model, natural=True)


def default_theta_init(model):
    """Zeros, intrinsic log-precisions at 1 and identity loadings for the M-model."""
    kind = ModelKind.parse(model.kind)
    theta = np.zeros(theta_dim(model))
    if kind.is_intrinsic:
        theta[:model.K] = INTRINSIC_LOG_PREC_START
    if kind is ModelKind.MMODEL:
        theta[model.K:] = np.eye(model.K).reshape(-1, order="F")
    return theta
