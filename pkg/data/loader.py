# data/loader.py
import json
import logging

import numpy as np
import pandas as pd

from config import ALPHA_MAX, ALPHA_MIN
from errors import ParseError, ValidationError
from indicators.calc import expected_counts
from models.likelihood import CountData
from models.transforms import HyperLayout, NaturalParams, correlation_matrix, from_natural, theta_dim
from spatial.graph import ArealGraph

logger = logging.getLogger(__name__)

COVARIATE_PREFIX = "cov_"


def _content_lines(path):
    """(line number, text) for every non-blank line with `#` comments removed."""
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            text = line.split("#", 1)[0].strip()
            if text:
                yield lineno, text


def load_edge_list(path):
    """Read an adjacency file: a `regions: I` header, then one `i j` pair per line."""
    n_regions = None
    edges = []
    for lineno, text in _content_lines(path):
        if n_regions is None:
            key, _, value = text.partition(":")
            if key.strip().lower() != "regions" or not value.strip():
                raise ParseError("expected header 'regions: <I>'", path=path, line=lineno)
            try:
                n_regions = int(value)
            except ValueError:
                raise ParseError(f"invalid region count '{value.strip()}'", path=path, line=lineno) from None
            continue
        parts = text.replace(",", " ").split()
        if len(parts) != 2:
            raise ParseError(f"expected 'i j', got '{text}'", path=path, line=lineno)
        try:
            i, j = int(parts[0]), int(parts[1])
        except ValueError:
            raise ParseError(f"region ids must be integers, got '{text}'", path=path, line=lineno) from None
        if i < 1 or j < 1:
            raise ValidationError(f"{path}: line {lineno}: region ids start at 1, got '{text}'")
        edges.append((i, j))

    if n_regions is None:
        raise ParseError("empty adjacency file", path=path)
    graph = ArealGraph(n_regions, tuple(edges))
    logger.info("loaded %d regions and %d edges from %s", graph.n_regions, graph.n_edges, path)
    return graph


def _pivot(frame, column, regions, variables):
    table = frame.pivot(index="region", columns="variable", values=column)
    return table.reindex(index=regions, columns=variables).to_numpy(dtype=float)


def load_count_data(path, graph):
    """Read `region,variable,observed,expected|population[,cov_*]` into CountData.

    Variables are indexed by first appearance. Missing (region, variable) cells
    and empty `observed` entries are left out of the likelihood.
    """
    try:
        frame = pd.read_csv(path, dtype={"variable": str})
    except pd.errors.EmptyDataError:
        raise ValidationError(f"{path}: data file is empty") from None
    if frame.empty:
        raise ValidationError(f"{path}: data file has no rows")

    frame.columns = [str(c).strip() for c in frame.columns]
    missing = {"region", "variable", "observed"} - set(frame.columns)
    if missing:
        raise ValidationError(f"{path}: missing column(s) {sorted(missing)}")
    if "expected" not in frame.columns and "population" not in frame.columns:
        raise ValidationError(f"{path}: need an 'expected' or a 'population' column")

    regions = pd.to_numeric(frame["region"], errors="coerce")
    if regions.isna().any() or (regions != regions.round()).any():
        bad = frame.loc[regions.isna() | (regions != regions.round()), "region"].iloc[0]
        raise ValidationError(f"{path}: region ids must be integers, got '{bad}'")
    frame["region"] = regions.astype(int)
    outside = frame.loc[(frame["region"] < 1) | (frame["region"] > graph.n_regions), "region"]
    if not outside.empty:
        raise ValidationError(
            f"{path}: region id {outside.iloc[0]} is not in the adjacency graph (1..{graph.n_regions})"
        )
    if frame.duplicated(["region", "variable"]).any():
        row = frame.loc[frame.duplicated(["region", "variable"]), ["region", "variable"]].iloc[0]
        raise ValidationError(f"{path}: duplicate row for region {row['region']}, variable {row['variable']}")

    variables = list(dict.fromkeys(frame["variable"]))
    region_ids = list(range(1, graph.n_regions + 1))
    observed = _pivot(frame, "observed", region_ids, variables)
    if "expected" in frame.columns:
        expected = _pivot(frame, "expected", region_ids, variables)
    else:
        population = _pivot(frame, "population", region_ids, variables)
        expected = expected_counts(observed, population)
        logger.info("expected counts computed by internal standardization")

    covariates = {
        c[len(COVARIATE_PREFIX):]: _pivot(frame, c, region_ids, variables)
        for c in frame.columns
        if c.startswith(COVARIATE_PREFIX)
    }
    data = CountData(
        observed=observed,
        expected=expected,
        covariates=covariates,
        variable_labels=tuple(variables),
        region_labels=tuple(str(i) for i in region_ids),
    )
    if data.n_obs < data.I * data.K:
        logger.warning("%d of %d cells have no observation", data.I * data.K - data.n_obs, data.I * data.K)
    logger.info("loaded %d regions x %d variables from %s", data.I, data.K, path)
    return data


def write_count_data(path, data):
    """Canonical CSV, variable-major rows; floats written losslessly."""
    columns = {
        "region": np.tile(np.asarray(data.region_labels), data.K),
        "variable": np.repeat(np.asarray(data.variable_labels), data.I),
        "observed": data.flat(data.observed),
        "expected": data.flat(data.expected),
    }
    for name, values in data.covariates.items():
        columns[COVARIATE_PREFIX + name] = data.flat(values)
    frame = pd.DataFrame(columns)
    frame["observed"] = frame["observed"].astype("Int64")
    frame.to_csv(path, index=False, float_format="%.17g")


def _matrix(value, K, name):
    arr = np.asarray(value, dtype=float)
    if arr.shape != (K, K):
        raise ValidationError(f"'{name}' must be a {K}x{K} matrix")
    return arr


def params_to_theta(params, layout):
    """θ from a params document: either `theta` or natural-scale entries."""
    K = layout.K
    if "theta" in params:
        theta = np.asarray(params["theta"], dtype=float).reshape(-1)
        if theta.size != theta_dim(layout):
            raise ValidationError(f"'theta' has length {theta.size}, expected {theta_dim(layout)}")
        return theta

    if "M" in params:
        M = _matrix(params["M"], K, "M")
        natural = NaturalParams(variances=None, correlations=None, between_cov=None, alpha=params.get("alpha"), M=M)
        return from_natural(layout, natural)

    if "variances" not in params:
        raise ValidationError("params need 'theta', 'M' or 'variances'")
    variances = np.asarray(params["variances"], dtype=float).reshape(-1)
    if "correlations" in params:
        corr = _matrix(params["correlations"], K, "correlations")
    else:
        corr = correlation_matrix(K, np.asarray(params.get("rho", []), dtype=float))
    natural = NaturalParams(variances=variances, correlations=corr, between_cov=None, alpha=params.get("alpha"))
    return from_natural(layout, natural)


def infer_dimension(params):
    """Number of variables implied by a params document."""
    if "K" in params:
        return int(params["K"])
    for key in ("M", "variances", "intercepts"):
        if key in params:
            return len(params[key])
    raise ValidationError("cannot tell the number of variables; give 'K' in the params file")


def load_params(path, kind, alpha_range=(ALPHA_MIN, ALPHA_MAX)):
    """Read a JSON params file; returns (layout, θ, intercepts)."""
    try:
        with open(path, encoding="utf-8") as f:
            params = json.load(f)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, path=path, line=exc.lineno) from None
    if not isinstance(params, dict):
        raise ValidationError(f"{path}: params must be a JSON object")
    layout = HyperLayout(kind, infer_dimension(params), alpha_range)
    stored = params.get("model")
    if stored is not None and str(stored).lower() != layout.kind.value:
        raise ValidationError(f"{path}: params are for '{stored}', not '{layout.kind.value}'")
    theta = params_to_theta(params, layout)
    intercepts = np.asarray(params.get("intercepts", np.zeros(layout.K)), dtype=float).reshape(-1)
    if intercepts.size != layout.K:
        raise ValidationError(f"{path}: expected {layout.K} intercepts")
    return layout, theta, intercepts
