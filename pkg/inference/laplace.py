# inference/laplace.py
"""
Gaussian approximation of the augmented latent field given θ and the Laplace
approximation of the hyperparameter posterior:

    log π(θ | y) ≈ log π(θ) + log π(x* | θ) + log p(y | x*) - log π_G(x* | θ, y)

The constrained Gaussian density at its own mode contributes
½ logdet(Q_post) + ½ logdet(A Q_post⁻¹ Aᵀ). Every (2π) factor is dropped.
"""
import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from config import FIXED_EFFECT_PRECISION, NEWTON_MAX_HALVINGS, NEWTON_MAX_ITER, NEWTON_TOL
from errors import (
    ConstraintDegeneracy,
    InvalidHyperparameters,
    InvalidState,
    NotPositiveDefinite,
    ValidationError,
)
from linalg.sparse import KrigingCorrector, SparseSym, cholesky
from models.latent import constraints, latent_log_density, log_prior, precision, theta_check
from models.likelihood import PoissonLikelihood, build_design

logger = logging.getLogger(__name__)

REJECTED = (InvalidHyperparameters, NotPositiveDefinite, InvalidState, ConstraintDegeneracy)
MOMENT_CHUNK = 512


@dataclass(frozen=True, eq=False)
class LaplaceEval:
    theta: np.ndarray
    log_post: float
    mode: np.ndarray = None
    factor: object = None
    converged: bool = False
    newton_iters: int = 0
    corrector: object = None
    precision: object = None
    reason: str = None

    @property
    def valid(self):
        return self.converged and np.isfinite(self.log_post)


def _rejected(theta, reason, iters=0):
    return LaplaceEval(theta=np.asarray(theta, dtype=float), log_post=-np.inf, newton_iters=iters, reason=reason)


class LaplaceEngine:
    """Binds a latent model, a likelihood and a design; evaluates θ independently.

    ``likelihood`` defaults to the Poisson model of ``data``; anything with a
    ``terms(eta) -> (loglik, grad, curvature)`` method can stand in.
    """

    def __init__(self, model, data, covariates=None, likelihood=None, design=None):
        if data.I != model.n_regions or data.K != model.K:
            raise ValidationError(
                f"data is {data.I} x {data.K} but the model expects {model.n_regions} x {model.K}"
            )
        self.model = model
        self.data = data
        self.design = design or build_design(data, covariates)
        self.likelihood = likelihood or PoissonLikelihood(data)
        c = constraints(model)
        self.constraints = c.padded(self.design.n_total) if c is not None else None
        if self.constraints is not None:
            A = self.constraints.A
            self._proj = sla.cho_factor(A @ A.T, lower=True)
        n_fixed = self.design.n_fixed
        self._fixed_prior = sp.diags(np.full(n_fixed, FIXED_EFFECT_PRECISION))
        self._fixed_logdet = n_fixed * np.log(FIXED_EFFECT_PRECISION)

    # -- pieces ---------------------------------------------------------

    def prior_precision(self, theta):
        Q = precision(self.model, theta)
        return SparseSym.from_lower(sp.block_diag([Q.lower, self._fixed_prior], format="csc")), Q

    def _posterior_precision(self, Q_aug, curv):
        A = self.design.matrix
        data_part = sp.tril(A.T @ sp.diags(curv) @ A)
        return SparseSym.from_lower(Q_aug.lower + data_part)

    def _objective(self, Q_aug, x):
        try:
            ll, grad, curv = self.likelihood.terms(self.design.forward(x))
        except InvalidState:
            return -np.inf, None, None
        return ll - 0.5 * float(x @ (Q_aug @ x)), grad, curv

    def _project(self, g):
        if self.constraints is None:
            return g
        A = self.constraints.A
        return g - A.T @ sla.cho_solve(self._proj, A @ g)

    # -- evaluation -----------------------------------------------------

    def evaluate(self, theta, x0=None):
        try:
            theta = theta_check(self.model, theta)
            return self._evaluate(theta, x0)
        except REJECTED as exc:
            logger.debug("rejected theta %s: %s", np.round(theta, 4), exc)
            return _rejected(theta, str(exc))

    def _evaluate(self, theta, x0):
        n = self.design.n_total
        Q_aug, Q_latent = self.prior_precision(theta)
        x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)

        obj, grad, curv = self._objective(Q_aug, x)
        if not np.isfinite(obj):
            x = np.zeros(n)
            obj, grad, curv = self._objective(Q_aug, x)
        if self.constraints is not None and np.max(np.abs(self.constraints.residual(x)), initial=0.0) > 1e-12:
            f = cholesky(self._posterior_precision(Q_aug, curv))
            x = KrigingCorrector(f, self.constraints).correct(x)
            obj, grad, curv = self._objective(Q_aug, x)
        if not np.isfinite(obj):
            raise InvalidState("starting point has a non-finite objective")

        g0 = None
        iters = 0
        converged = False
        while True:
            g = self._project(self.design.adjoint(grad) - Q_aug @ x)
            g_norm = float(np.max(np.abs(g)))
            if g0 is None:
                g0 = g_norm
            if g_norm < NEWTON_TOL * (1.0 + g0):
                converged = True
                break
            if iters >= NEWTON_MAX_ITER:
                break

            Q_post = self._posterior_precision(Q_aug, curv)
            f = cholesky(Q_post)
            rhs = self.design.adjoint(grad + curv * self.design.linear(x))
            x_new = f.solve(rhs)
            if self.constraints is not None:
                x_new = KrigingCorrector(f, self.constraints).correct(x_new)
            iters += 1

            step = x_new - x
            for _ in range(NEWTON_MAX_HALVINGS + 1):
                new_obj, new_grad, new_curv = self._objective(Q_aug, x + step)
                if np.isfinite(new_obj) and new_obj >= obj - 1e-12 * abs(obj):
                    break
                step *= 0.5
            else:
                logger.debug("step halving exhausted at iteration %d", iters)
                break
            x = x + step
            obj, grad, curv = new_obj, new_grad, new_curv
            logger.debug("newton %d: objective %.10g, |g|=%.3e", iters, obj, g_norm)

        if not converged:
            logger.warning("Newton iteration did not converge for theta %s", np.round(theta, 4))
            return _rejected(theta, "newton iteration did not converge", iters)

        Q_post = self._posterior_precision(Q_aug, curv)
        f = cholesky(Q_post)
        corrector = None
        schur_logdet = 0.0
        if self.constraints is not None:
            corrector = KrigingCorrector(f, self.constraints)
            schur_logdet = corrector.schur_logdet

        nl = self.design.n_latent
        x_latent, x_fixed = x[:nl], x[nl:]
        ll = self.likelihood.terms(self.design.forward(x))[0]
        log_latent = latent_log_density(self.model, theta, x_latent, Q=Q_latent)
        log_fixed = 0.5 * self._fixed_logdet - 0.5 * FIXED_EFFECT_PRECISION * float(x_fixed @ x_fixed)
        log_post = (
            log_prior(self.model, theta)
            + log_latent
            + log_fixed
            + ll
            - 0.5 * f.logdet
            - 0.5 * schur_logdet
        )
        return LaplaceEval(
            theta=theta,
            log_post=float(log_post),
            mode=x,
            factor=f,
            converged=True,
            newton_iters=iters,
            corrector=corrector,
            precision=Q_post,
        )

    # -- posterior moments of linear combinations ----------------------

    def linear_moments(self, ev, B):
        """Mean B x* and diag(B Σ Bᵀ), Σ the (constrained) Gaussian covariance at ev."""
        B = sp.csr_matrix(B)
        mean = B @ ev.mode
        var = np.empty(B.shape[0])
        for start in range(0, B.shape[0], MOMENT_CHUNK):
            rows = B[start:start + MOMENT_CHUNK]
            cols = rows.T.toarray()
            var[start:start + rows.shape[0]] = np.sum(ev.factor.solve_l(cols) ** 2, axis=0)
        if ev.corrector is not None:
            W = B @ ev.corrector.q_inv_at
            var -= np.sum(W * ev.corrector.schur_solve(W.T).T, axis=1)
        return mean, np.maximum(var, 0.0)

    def predictor_moments(self, ev):
        mean, var = self.linear_moments(ev, self.design.matrix)
        return mean + self.design.offset, var

    def fixed_moments(self, ev):
        nl, nf = self.design.n_latent, self.design.n_fixed
        B = sp.hstack([sp.csr_matrix((nf, nl)), sp.identity(nf, format="csr")])
        return self.linear_moments(ev, B)

    def latent_moments(self, ev):
        nl, nf = self.design.n_latent, self.design.n_fixed
        B = sp.hstack([sp.identity(nl, format="csr"), sp.csr_matrix((nl, nf))])
        return self.linear_moments(ev, B)


def gaussian_approx(model, data, theta, x0=None, covariates=None, likelihood=None):
    return LaplaceEngine(model, data, covariates=covariates, likelihood=likelihood).evaluate(theta, x0)
