# indicators/calc.py
import numpy as np
import pandas as pd

from errors import ValidationError


def _as_matrix(values, name):
    if isinstance(values, pd.Series):
        values = values.to_frame()
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValidationError(f"{name} must be a matrix of regions x variables")
    return arr


def expected_counts(observed, population):
    """Internal standardization: E_ik = r_k N_ik with r_k = sum_i O_ik / sum_i N_ik.

    Cells where the observation is missing (NaN) take no part in the rate.
    """
    obs = _as_matrix(observed, "observed")
    pop = _as_matrix(population, "population")
    if obs.shape != pop.shape:
        raise ValidationError(f"observed {obs.shape} and population {pop.shape} differ in shape")
    present = ~np.isnan(obs)
    if np.any(pop[present] <= 0) or np.any(np.isnan(pop[present])):
        raise ValidationError("population must be positive wherever counts are observed")

    pop_totals = np.where(present, pop, 0.0).sum(axis=0)
    if np.any(pop_totals <= 0):
        bad = np.flatnonzero(pop_totals <= 0) + 1
        raise ValidationError(f"zero total population for variable(s) {bad.tolist()}")
    rates = np.where(present, obs, 0.0).sum(axis=0) / pop_totals
    expected = pop * rates
    if isinstance(observed, pd.DataFrame):
        return pd.DataFrame(expected, index=observed.index, columns=observed.columns)
    return expected


def smr(observed, expected):
    """Standardized mortality ratio O / E."""
    ratio = _as_matrix(observed, "observed") / _as_matrix(expected, "expected")
    if isinstance(observed, pd.DataFrame):
        return pd.DataFrame(ratio, index=observed.index, columns=observed.columns)
    return ratio
