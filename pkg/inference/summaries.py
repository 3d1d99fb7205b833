# inference/summaries.py
"""
Posterior summaries over the weighted ensemble of Laplace evaluations.

Every scalar linear combination of the augmented field (a linear predictor, a
fixed effect, a spatial effect) has a mixture-of-Gaussians marginal. Moments
are exact; quantiles, DIC and WAIC use a fixed-seed stratified sample from the
mixture, with draws allocated to components in proportion to their weights.
"""
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.special import logsumexp
from scipy.stats import norm

from config import DEFAULT_SEED, MIXTURE_DRAWS, SUMMARY_QUANTILES
from inference.hyper import HyperObjective, explore_ensemble, optimize_hyper
from inference.laplace import LaplaceEngine
from models.likelihood import cell_deviance, cell_log_pmf
from models.transforms import default_theta_init, internal_names, natural_names, natural_vector, to_natural

logger = logging.getLogger(__name__)

DRAW_CHUNK = 256


def quantile_label(q):
    return f"q{q:g}"


def allocate_draws(weights, n_draws):
    """Component index per draw; counts proportional to the weights (largest remainder)."""
    weights = np.asarray(weights, dtype=float)
    raw = weights * n_draws
    counts = np.floor(raw).astype(int)
    short = n_draws - counts.sum()
    if short:
        counts[np.argsort(-(raw - counts), kind="stable")[:short]] += 1
    return np.repeat(np.arange(weights.size), counts)


class PredictorMixture:
    """Mixture of Gaussian marginals: weights (G,), means and sds (G, N)."""

    def __init__(self, weights, means, sds):
        self.weights = np.asarray(weights, dtype=float)
        self.means = np.atleast_2d(np.asarray(means, dtype=float))
        self.sds = np.atleast_2d(np.asarray(sds, dtype=float))

    @property
    def n_entries(self):
        return self.means.shape[1]

    def mean(self):
        return self.weights @ self.means

    def var(self):
        second = self.weights @ (self.sds**2 + self.means**2)
        return np.maximum(second - self.mean() ** 2, 0.0)

    def sd(self):
        return np.sqrt(self.var())

    def exp_mean(self, shift=0.0):
        """E[exp(v - shift)] by log-normal moments."""
        return self.weights @ np.exp(self.means - shift + 0.5 * self.sds**2)

    def exp_sd(self, shift=0.0):
        second = self.weights @ np.exp(2.0 * (self.means - shift) + 2.0 * self.sds**2)
        return np.sqrt(np.maximum(second - self.exp_mean(shift) ** 2, 0.0))

    def select(self, columns):
        return PredictorMixture(self.weights, self.means[:, columns], self.sds[:, columns])

    def draws(self, n_draws=MIXTURE_DRAWS, seed=DEFAULT_SEED):
        """Yield (columns, draws) chunks; draws has shape (n_draws, len(columns))."""
        rng = np.random.default_rng(seed)
        component = allocate_draws(self.weights, n_draws)
        z = norm.ppf((np.arange(n_draws) + rng.uniform(size=n_draws)) / n_draws)
        z = rng.permutation(z)
        for start in range(0, self.n_entries, DRAW_CHUNK):
            cols = np.arange(start, min(start + DRAW_CHUNK, self.n_entries))
            means = self.means[np.ix_(component, cols)]
            sds = self.sds[np.ix_(component, cols)]
            yield cols, means + sds * z[:, None]

    def quantiles(self, probs=SUMMARY_QUANTILES, n_draws=MIXTURE_DRAWS, seed=DEFAULT_SEED, transform=None):
        out = np.empty((len(probs), self.n_entries))
        for cols, values in self.draws(n_draws, seed):
            if transform is not None:
                values = transform(values, cols)
            out[:, cols] = np.quantile(values, probs, axis=0)
        return out


def weighted_quantile(values, weights, q):
    order = np.argsort(values, kind="stable")
    cum = np.cumsum(weights[order])
    idx = min(int(np.searchsorted(cum, q * cum[-1] - 1e-12)), values.size - 1)
    return values[order][idx]


def _weighted_table(points, weights, names, probs):
    mean = weights @ points
    sd = np.sqrt(np.maximum(weights @ (points - mean) ** 2, 0.0))
    table = pd.DataFrame({"mean": mean, "sd": sd}, index=pd.Index(names, name="parameter"))
    for q in probs:
        table[quantile_label(q)] = [weighted_quantile(points[:, j], weights, q) for j in range(points.shape[1])]
    return table


@dataclass(frozen=True, eq=False)
class HyperSummary:
    internal: pd.DataFrame
    natural: pd.DataFrame
    between_cov_mean: np.ndarray


def summarize_hyper(ensemble, model, probs=SUMMARY_QUANTILES):
    """Weighted moments per θ component; natural scale by transforming each point first."""
    evals, weights = ensemble.valid()
    thetas = np.vstack([ev.theta for ev in evals])
    internal = _weighted_table(thetas, weights, internal_names(model), probs)
    natural_points = np.vstack([natural_vector(model, t) for t in thetas])
    natural = _weighted_table(natural_points, weights, natural_names(model), probs)
    cov = sum(w * to_natural(model, t).between_cov for w, t in zip(weights, thetas))
    return HyperSummary(internal=internal, natural=natural, between_cov_mean=0.5 * (cov + cov.T))


def _mixture(evals, weights, moments):
    means, sds = [], []
    for ev in evals:
        m, v = moments(ev)
        means.append(m)
        sds.append(np.sqrt(v))
    return PredictorMixture(weights, np.vstack(means), np.vstack(sds))


def predictor_mixture(engine, ensemble):
    evals, weights = ensemble.valid()
    return _mixture(evals, weights, engine.predictor_moments)


def _cell_index(data):
    regions = np.tile(np.asarray(data.region_labels, dtype=object), data.K)
    variables = np.repeat(np.asarray(data.variable_labels, dtype=object), data.I)
    return pd.MultiIndex.from_arrays([regions, variables], names=["region", "variable"])


def summarize_latent(mixture, data, probs=SUMMARY_QUANTILES, n_draws=MIXTURE_DRAWS, seed=DEFAULT_SEED):
    """Relative risk exp(η - log E) per (region, variable)."""
    offset = data.log_offset()
    table = pd.DataFrame(
        {"mean": mixture.exp_mean(offset), "sd": mixture.exp_sd(offset)},
        index=_cell_index(data),
    )
    qs = mixture.quantiles(probs, n_draws, seed, transform=lambda v, cols: np.exp(v - offset[cols]))
    for q, row in zip(probs, qs):
        table[quantile_label(q)] = row
    table.insert(0, "observed", data.flat(data.observed))
    table.insert(1, "expected", data.flat(data.expected))
    return table


def _gaussian_table(mixture, names, probs, n_draws, seed):
    table = pd.DataFrame({"mean": mixture.mean(), "sd": mixture.sd()}, index=pd.Index(names, name="parameter"))
    for q, row in zip(probs, mixture.quantiles(probs, n_draws, seed)):
        table[quantile_label(q)] = row
    return table


def summarize_fixed(engine, ensemble, probs=SUMMARY_QUANTILES, n_draws=MIXTURE_DRAWS, seed=DEFAULT_SEED):
    evals, weights = ensemble.valid()
    mixture = _mixture(evals, weights, engine.fixed_moments)
    return _gaussian_table(mixture, engine.design.fixed_names, probs, n_draws, seed)


def summarize_effects(engine, ensemble, probs=SUMMARY_QUANTILES, n_draws=MIXTURE_DRAWS, seed=DEFAULT_SEED):
    """Spatial effects θ_ik (the latent block of the field)."""
    evals, weights = ensemble.valid()
    mixture = _mixture(evals, weights, engine.latent_moments)
    table = _gaussian_table(mixture, range(mixture.n_entries), probs, n_draws, seed)
    table.index = _cell_index(engine.data)
    return table


def _observed(mixture, data):
    mask = data.mask
    return mixture.select(np.flatnonzero(mask)), data.y()[mask]


def dic(mixture, data, n_draws=MIXTURE_DRAWS, seed=DEFAULT_SEED, deviance=cell_deviance):
    """(DIC, p_eff) with DIC = 2 E[D(η)] - D(E[η]); saturated Poisson deviance by default."""
    obs, y = _observed(mixture, data)
    d_bar = 0.0
    for cols, values in obs.draws(n_draws, seed):
        d_bar += float(np.sum(np.mean(deviance(y[cols], values), axis=0)))
    d_hat = float(np.sum(deviance(y, obs.mean())))
    p_eff = d_bar - d_hat
    return d_bar + p_eff, p_eff


def loglik_deviance(y, eta):
    return -2.0 * cell_log_pmf(y, eta)


def waic(mixture, data, n_draws=MIXTURE_DRAWS, seed=DEFAULT_SEED):
    """(WAIC, p_eff) from pointwise log predictive densities."""
    obs, y = _observed(mixture, data)
    lppd = 0.0
    p_eff = 0.0
    for cols, values in obs.draws(n_draws, seed):
        ll = cell_log_pmf(y[cols], values)
        lppd += float(np.sum(logsumexp(ll, axis=0) - np.log(n_draws)))
        p_eff += float(np.sum(np.var(ll, axis=0, ddof=1)))
    return -2.0 * (lppd - p_eff), p_eff


def log_marginal_likelihood(mode_log_post, H):
    """Gaussian approximation around the mode; shares the dropped constants of log_post."""
    p = H.shape[0]
    _, logdet = np.linalg.slogdet(H)
    return float(mode_log_post + 0.5 * p * np.log(2.0 * np.pi) - 0.5 * logdet)


def compute_criteria(mixture, data, n_draws=MIXTURE_DRAWS, seed=DEFAULT_SEED):
    dic_sat, p_sat = dic(mixture, data, n_draws, seed)
    dic_ll, p_ll = dic(mixture, data, n_draws, seed, deviance=loglik_deviance)
    waic_value, p_waic = waic(mixture, data, n_draws, seed)
    return {
        "dic": dic_sat,
        "dic_p_eff": p_sat,
        "dic_loglik": dic_ll,
        "dic_loglik_p_eff": p_ll,
        "waic": waic_value,
        "waic_p_eff": p_waic,
    }


@dataclass(eq=False)
class FitResult:
    model: object
    ensemble: object
    theta_mode: np.ndarray
    hessian: np.ndarray
    hyper_internal: pd.DataFrame
    hyper_natural: pd.DataFrame
    between_cov_mean: np.ndarray
    fitted: pd.DataFrame
    fixed: pd.DataFrame
    effects: pd.DataFrame
    criteria: dict
    timings: dict = field(default_factory=dict)
    mcmc: dict = None


def fit(model, data, config, likelihood=None):
    """Mode search, ensemble exploration and summaries for one latent model.

    `config` is a FitConfig; only its inference settings are read here.
    """
    timings = {}
    start = time.perf_counter()
    engine = LaplaceEngine(model, data, covariates=config.covariates, likelihood=likelihood)
    objective = HyperObjective(engine)

    theta_init = default_theta_init(model) if config.init is None else np.asarray(config.init, dtype=float)
    tick = time.perf_counter()
    theta_mode, H = optimize_hyper(
        objective,
        theta_init,
        step=config.hessian_step,
        workers=config.workers,
        hessian_log_post=lambda theta: engine.evaluate(theta, x0=objective.best.mode).log_post,
    )
    timings["optimize"] = time.perf_counter() - tick

    tick = time.perf_counter()
    warm = objective.best.mode if objective.best is not None else None
    ensemble = explore_ensemble(
        lambda theta: engine.evaluate(theta, x0=warm),
        theta_mode,
        H,
        mode=config.explore,
        workers=config.workers,
    )
    timings["explore"] = time.perf_counter() - tick

    tick = time.perf_counter()
    hyper = summarize_hyper(ensemble, model)
    mixture = predictor_mixture(engine, ensemble)
    fitted = summarize_latent(mixture, data, n_draws=config.draws, seed=config.seed)
    fixed = summarize_fixed(engine, ensemble, n_draws=config.draws, seed=config.seed)
    effects = summarize_effects(engine, ensemble, n_draws=config.draws, seed=config.seed)
    criteria = compute_criteria(mixture, data, n_draws=config.draws, seed=config.seed)
    criteria["mlik"] = log_marginal_likelihood(ensemble.evals[0].log_post, H)
    timings["summaries"] = time.perf_counter() - tick
    timings["total"] = time.perf_counter() - start
    logger.info("DIC %.2f (p_eff %.2f), WAIC %.2f", criteria["dic"], criteria["dic_p_eff"], criteria["waic"])

    return FitResult(
        model=model,
        ensemble=ensemble,
        theta_mode=theta_mode,
        hessian=H,
        hyper_internal=hyper.internal,
        hyper_natural=hyper.natural,
        between_cov_mean=hyper.between_cov_mean,
        fitted=fitted,
        fixed=fixed,
        effects=effects,
        criteria=criteria,
        timings=timings,
    )
