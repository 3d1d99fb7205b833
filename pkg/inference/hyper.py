# inference/hyper.py
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import softmax

from config import EXPLORE_DELTA, EXPLORE_MODE, HESSIAN_FLOOR, HESSIAN_STEP, MAX_WORKERS
from errors import OptimizationFailure, ValidationError

logger = logging.getLogger(__name__)

SIMPLEX_STEP = 0.5


class HyperObjective:
    """log π(θ | y) through a Laplace engine, warm-starting Newton from the last good mode."""

    def __init__(self, engine):
        self.engine = engine
        self.n_evals = 0
        self._last_mode = None
        self.best = None

    def evaluate(self, theta, x0=None):
        return self.engine.evaluate(theta, x0=x0 if x0 is not None else self._last_mode)

    def __call__(self, theta):
        ev = self.engine.evaluate(theta, x0=self._last_mode)
        self.n_evals += 1
        if ev.valid:
            self._last_mode = ev.mode
            if self.best is None or ev.log_post > self.best.log_post:
                self.best = ev
        return ev.log_post


def _map(fn, items, workers):
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(fn, items))


def optimize_hyper(log_post, theta_init, step=HESSIAN_STEP, workers=MAX_WORKERS, maxiter=None, hessian_log_post=None):
    """Maximize log_post by Nelder-Mead, then the central-difference Hessian of -log_post.

    `hessian_log_post` replaces log_post for the Hessian evaluations, which run in parallel.

    Returns (theta_mode, H) with H symmetric and eigenvalues floored at HESSIAN_FLOOR.
    """
    theta_init = np.asarray(theta_init, dtype=float).reshape(-1)
    p = theta_init.size
    if p == 0:
        raise ValidationError("empty hyperparameter vector")

    def negative(theta):
        value = log_post(theta)
        return -value if np.isfinite(value) else np.inf

    simplex = np.vstack([theta_init, theta_init + SIMPLEX_STEP * np.eye(p)])
    logger.info("optimizing %d hyperparameters", p)
    result = minimize(
        negative,
        theta_init,
        method="Nelder-Mead",
        options={
            "initial_simplex": simplex,
            "xatol": 1e-7,
            "fatol": 1e-10,
            "maxiter": maxiter or 400 * p,
            "maxfev": (maxiter or 400 * p) * 2,
            "adaptive": p > 2,
        },
    )
    if not np.isfinite(result.fun):
        raise OptimizationFailure("no valid hyperparameter point found")
    if not result.success:
        logger.warning("simplex search stopped early: %s", result.message)
    theta_mode = np.asarray(result.x, dtype=float)
    logger.info("hyperparameter mode found after %d evaluations, log posterior %.6f", result.nfev, -result.fun)

    if hessian_log_post is None:
        H = finite_difference_hessian(log_post, theta_mode, step=step, workers=workers, center=-result.fun)
    else:
        H = finite_difference_hessian(hessian_log_post, theta_mode, step=step, workers=workers)
    return theta_mode, H


def finite_difference_hessian(log_post, theta, step=HESSIAN_STEP, workers=MAX_WORKERS, center=None):
    """Central-difference Hessian of -log_post, symmetrized and eigenvalue-floored."""
    theta = np.asarray(theta, dtype=float)
    p = theta.size
    eye = np.eye(p)
    points = []
    for i in range(p):
        points += [theta + step * eye[i], theta - step * eye[i]]
        for j in range(i):
            for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                points.append(theta + step * (si * eye[i] + sj * eye[j]))
    values = iter(_map(log_post, points, workers))
    f0 = log_post(theta) if center is None else center
    if not np.isfinite(f0):
        raise OptimizationFailure("log posterior is not finite at the mode")

    H = np.empty((p, p))
    for i in range(p):
        fp, fm = next(values), next(values)
        H[i, i] = -(fp - 2.0 * f0 + fm) / step**2
        for j in range(i):
            fpp, fpm, fmp, fmm = (next(values) for _ in range(4))
            H[i, j] = H[j, i] = -(fpp - fpm - fmp + fmm) / (4.0 * step**2)
    if not np.all(np.isfinite(H)):
        raise OptimizationFailure("Hessian evaluations hit rejected hyperparameters")
    return floor_eigenvalues(0.5 * (H + H.T))


def floor_eigenvalues(H, floor=HESSIAN_FLOOR):
    lam, V = np.linalg.eigh(H)
    if np.any(lam < floor):
        logger.warning("Hessian repaired: %d eigenvalue(s) raised to %g", int(np.sum(lam < floor)), floor)
    lam = np.maximum(lam, floor)
    H = (V * lam) @ V.T
    return 0.5 * (H + H.T)


@dataclass(frozen=True, eq=False)
class Ensemble:
    evals: list
    weights: np.ndarray

    @property
    def size(self):
        return len(self.evals)

    @property
    def thetas(self):
        return np.vstack([ev.theta for ev in self.evals])

    @property
    def log_posts(self):
        return np.array([ev.log_post for ev in self.evals])

    def valid(self):
        """(evals, weights) restricted to points with positive weight."""
        keep = [g for g, w in enumerate(self.weights) if w > 0]
        return [self.evals[g] for g in keep], self.weights[keep] / self.weights[keep].sum()


def ensemble_weights(log_posts):
    """Normalized exp(log_post); -inf gets weight 0."""
    log_posts = np.asarray(log_posts, dtype=float)
    finite = np.isfinite(log_posts)
    if not finite.any():
        raise OptimizationFailure("every ensemble point was rejected")
    weights = np.zeros_like(log_posts)
    weights[finite] = softmax(log_posts[finite])
    return weights


def axis_points(theta_mode, H, delta=EXPLORE_DELTA):
    """θ_mode and θ_mode ± δ v_j / √λ_j along the eigenvectors of H."""
    lam, V = np.linalg.eigh(H)
    if np.any(lam <= 0):
        raise ValidationError("Hessian must be positive definite")
    points = [np.asarray(theta_mode, dtype=float)]
    for j in range(lam.size):
        shift = delta * V[:, j] / np.sqrt(lam[j])
        points += [theta_mode + shift, theta_mode - shift]
    return points


def explore_ensemble(evaluate, theta_mode, H, mode=EXPLORE_MODE, delta=EXPLORE_DELTA, workers=MAX_WORKERS):
    """Evaluate the design points in parallel and weight them by their posterior density."""
    if mode == "mode-only":
        points = [np.asarray(theta_mode, dtype=float)]
    elif mode == "axis":
        points = axis_points(theta_mode, H, delta)
    else:
        raise ValidationError(f"unknown explore mode '{mode}'")
    evals = _map(evaluate, points, workers)
    weights = ensemble_weights([ev.log_post for ev in evals])
    n_rejected = int(np.sum(weights == 0))
    if n_rejected:
        logger.warning("%d of %d ensemble points rejected", n_rejected, len(evals))
    logger.info("ensemble of %d points, largest weight %.3f", len(evals), weights.max())
    return Ensemble(evals=evals, weights=weights)
