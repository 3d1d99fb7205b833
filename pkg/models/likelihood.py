# models/likelihood.py
"""
Poisson count model Y_ik ~ Po(E_ik R_ik) with log link.

The augmented field is

    x = [vec(Θ) (IK, variable-major) | a_1 .. a_K | β_11 .. β_1K | β_21 .. β_2K | ...]

and η_ik = log E_ik + a_k + Σ_c β_ck z_cik + θ_ik. Cells without an observation
stay in η (they are predicted) but add nothing to the likelihood.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln, xlogy

from config import ETA_MAX
from errors import InvalidState, ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class CountData:
    observed: np.ndarray
    expected: np.ndarray
    covariates: dict = field(default_factory=dict)
    variable_labels: tuple = None
    region_labels: tuple = None

    def __post_init__(self):
        obs = np.asarray(self.observed, dtype=float)
        exp = np.asarray(self.expected, dtype=float)
        if obs.ndim != 2 or obs.shape != exp.shape:
            raise ValidationError(f"observed {obs.shape} and expected {exp.shape} must be matching I x K matrices")
        present = ~np.isnan(obs)
        if not present.any():
            raise ValidationError("no observed counts")
        values = obs[present]
        if np.any(values < 0) or np.any(values != np.round(values)):
            raise ValidationError("observed counts must be non-negative integers")
        if np.any(~(exp[present] > 0)):
            raise ValidationError("expected counts must be positive wherever counts are observed")
        if np.any(exp[~np.isnan(exp)] <= 0):
            raise ValidationError("expected counts must be positive")

        covs = {}
        for name, values in (self.covariates or {}).items():
            z = np.asarray(values, dtype=float)
            if z.shape != obs.shape:
                raise ValidationError(f"covariate '{name}' has shape {z.shape}, expected {obs.shape}")
            if np.any(np.isnan(z[present])) or np.any(np.isinf(z)):
                raise ValidationError(f"covariate '{name}' is missing where a count is observed")
            covs[str(name)] = z
        object.__setattr__(self, "observed", obs)
        object.__setattr__(self, "expected", exp)
        object.__setattr__(self, "covariates", covs)

        I, K = obs.shape
        variables = self.variable_labels or tuple(str(k) for k in range(1, K + 1))
        regions = self.region_labels or tuple(str(i) for i in range(1, I + 1))
        if len(variables) != K or len(regions) != I:
            raise ValidationError("label counts do not match the data shape")
        object.__setattr__(self, "variable_labels", tuple(str(v) for v in variables))
        object.__setattr__(self, "region_labels", tuple(str(r) for r in regions))

    @property
    def I(self):
        return self.observed.shape[0]

    @property
    def K(self):
        return self.observed.shape[1]

    @property
    def mask(self):
        """Observed cells, variable-major flat."""
        return ~np.isnan(self.observed.T.reshape(-1))

    @property
    def n_obs(self):
        return int(self.mask.sum())

    def flat(self, matrix):
        return np.asarray(matrix, dtype=float).T.reshape(-1)

    def y(self):
        return np.nan_to_num(self.flat(self.observed), nan=0.0)

    def log_offset(self):
        e = self.flat(self.expected)
        return np.where(np.isnan(e), 0.0, np.log(np.where(np.isnan(e), 1.0, e)))


def poisson_loglik_terms(data, eta):
    """Σ (y η - exp(η)) over observed cells, its gradient and the curvature exp(η).

    The log(y!) constant is dropped. Entries for unobserved cells are zero.
    """
    eta = np.asarray(eta, dtype=float).reshape(-1)
    if eta.size != data.I * data.K:
        raise ValidationError(f"linear predictor has length {eta.size}, expected {data.I * data.K}")
    mask = data.mask
    if not np.all(np.isfinite(eta[mask])):
        raise InvalidState("non-finite linear predictor")
    if np.any(eta[mask] > ETA_MAX):
        raise InvalidState(f"linear predictor above {ETA_MAX:g}, the mode search diverged")
    y = data.y()
    mu = np.where(mask, np.exp(np.where(mask, eta, 0.0)), 0.0)
    loglik = float(np.sum(np.where(mask, y * eta, 0.0) - mu))
    return loglik, np.where(mask, y - mu, 0.0), mu


def cell_log_pmf(y, eta):
    return y * eta - np.exp(eta) - gammaln(y + 1.0)


def cell_deviance(y, eta):
    """2 [y log(y/μ) - (y - μ)] per cell, zero for a saturated fit."""
    return 2.0 * (xlogy(y, y) - y * eta - (y - np.exp(eta)))


def poisson_log_pmf(data, eta):
    """Pointwise log p(y | η) including log(y!), observed cells only."""
    mask = data.mask
    return cell_log_pmf(data.y()[mask], np.asarray(eta, dtype=float)[..., mask])


def saturated_deviance(data, eta):
    """Poisson deviance against the saturated model; broadcasts over leading axes."""
    mask = data.mask
    return np.sum(cell_deviance(data.y()[mask], np.asarray(eta, dtype=float)[..., mask]), axis=-1)


class PoissonLikelihood:
    """Likelihood seam used by the Laplace engine: terms(eta) -> (loglik, grad, curvature)."""

    def __init__(self, data):
        self.data = data

    def terms(self, eta):
        return poisson_loglik_terms(self.data, eta)

    def log_pmf(self, eta):
        return poisson_log_pmf(self.data, eta)

    def deviance(self, eta):
        return saturated_deviance(self.data, eta)


@dataclass(frozen=True, eq=False)
class Design:
    matrix: sp.csr_matrix
    offset: np.ndarray
    n_latent: int
    fixed_names: tuple

    @property
    def n_fixed(self):
        return len(self.fixed_names)

    @property
    def n_total(self):
        return self.n_latent + self.n_fixed

    def linear(self, x):
        return self.matrix @ x

    def forward(self, x):
        """η = log E + A x; x may hold draws as columns."""
        lin = self.matrix @ x
        return lin + (self.offset if lin.ndim == 1 else self.offset[:, None])

    def adjoint(self, r):
        return self.matrix.T @ r


def build_design(data, covariates=None):
    """Sparse map from the augmented field to η, restricted to the named covariates."""
    I, K = data.I, data.K
    n_latent = I * K
    names = list(data.covariates) if covariates is None else list(covariates)
    for name in names:
        if name not in data.covariates:
            raise ValidationError(f"unknown covariate '{name}'")

    rows = [np.arange(n_latent)]
    cols = [np.arange(n_latent)]
    vals = [np.ones(n_latent)]
    variable_of_row = np.repeat(np.arange(K), I)
    rows.append(np.arange(n_latent))
    cols.append(n_latent + variable_of_row)
    vals.append(np.ones(n_latent))

    fixed_names = [f"intercept[{v}]" for v in data.variable_labels]
    for c, name in enumerate(names):
        z = np.nan_to_num(data.flat(data.covariates[name]), nan=0.0)
        rows.append(np.arange(n_latent))
        cols.append(n_latent + K * (c + 1) + variable_of_row)
        vals.append(z)
        fixed_names += [f"{name}[{v}]" for v in data.variable_labels]

    n_total = n_latent + len(fixed_names)
    matrix = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_latent, n_total),
    )
    logger.debug("design %d x %d with %d covariates", n_latent, n_total, len(names))
    return Design(matrix=matrix, offset=data.log_offset(), n_latent=n_latent, fixed_names=tuple(fixed_names))
