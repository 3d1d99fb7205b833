# output/report.py
import json
from collections import namedtuple

import numpy as np
import pandas as pd

from errors import ParseError, ValidationError
from inference.hyper import Ensemble
from inference.summaries import summarize_hyper
from models.transforms import HyperLayout, ModelKind

FORMAT_VERSION = 1

StoredPoint = namedtuple("StoredPoint", ["theta", "log_post"])


def _clean(value):
    """JSON-safe copy: numpy scalars and arrays to Python, NaN to null."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return _clean(value.tolist())
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if np.isfinite(value) else None
    if value is pd.NA:
        return None
    return value


def _records(table):
    return _clean(table.reset_index().to_dict(orient="records"))


def result_document(result, data, config, include_timings=False):
    model = result.model
    doc = {
        "meta": {
            "format_version": FORMAT_VERSION,
            "model": model.kind.value,
            "K": model.K,
            "I": model.n_regions,
            "variables": list(data.variable_labels),
            "alpha_range": list(model.alpha_range),
            "covariates": list(config.covariates) if config.covariates is not None else list(data.covariates),
            "explore": config.explore,
            "hessian_step": config.hessian_step,
            "seed": config.seed,
            "draws": config.draws,
        },
        "hyper_internal": _records(result.hyper_internal),
        "hyper_natural": _records(result.hyper_natural),
        "between_cov": result.between_cov_mean,
        "fixed": _records(result.fixed),
        "fitted": _records(result.fitted),
        "effects": _records(result.effects),
        "criteria": result.criteria,
        "ensemble": {
            "theta": result.ensemble.thetas,
            "log_post": result.ensemble.log_posts,
            "weights": result.ensemble.weights,
            "theta_mode": result.theta_mode,
            "hessian": result.hessian,
        },
        "timing": result.timings if include_timings else {},
    }
    if result.mcmc is not None:
        doc["mcmc"] = result.mcmc
    return _clean(doc)


def _real(value):
    text = format(value, ".17g")
    return text if any(ch in text for ch in ".en") else text + ".0"


class ResultEncoder(json.JSONEncoder):
    """Writes every real with 17 significant digits."""

    def iterencode(self, o, _one_shot=False):
        encoder = json.encoder.encode_basestring_ascii if self.ensure_ascii else json.encoder.encode_basestring
        return json.encoder._make_iterencode(
            {} if self.check_circular else None,
            self.default,
            encoder,
            self.indent,
            _real,
            self.key_separator,
            self.item_separator,
            self.sort_keys,
            self.skipkeys,
            _one_shot,
        )(o, 0)


def write_document(path, doc):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1, allow_nan=False, cls=ResultEncoder)
        f.write("\n")


def read_result(path):
    try:
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, path=path, line=exc.lineno) from None
    for section in ("meta", "ensemble"):
        if section not in doc:
            raise ValidationError(f"{path}: not a fit result (missing '{section}')")
    return doc


def transform_document(doc, kind=None, alpha_range=None):
    """Natural-scale summaries recomputed from every stored ensemble point."""
    meta = doc["meta"]
    stored = ModelKind.parse(meta["model"])
    if kind is not None and ModelKind.parse(kind) is not stored:
        raise ValidationError(f"result was fitted with '{stored.value}', not '{ModelKind.parse(kind).value}'")
    layout = HyperLayout(stored, meta["K"], tuple(alpha_range or meta["alpha_range"]))

    ens = doc["ensemble"]
    log_posts = [np.nan if v is None else v for v in ens["log_post"]]
    weights = np.array([0.0 if w is None else w for w in ens["weights"]])
    points = [StoredPoint(np.asarray(t, dtype=float), lp) for t, lp in zip(ens["theta"], log_posts)]
    summary = summarize_hyper(Ensemble(evals=points, weights=weights), layout)
    return _clean({
        "meta": {"model": stored.value, "K": layout.K, "alpha_range": list(layout.alpha_range)},
        "hyper_natural": _records(summary.natural),
        "between_cov": summary.between_cov_mean,
    })


def _frame(records, index="parameter"):
    frame = pd.DataFrame(records)
    return frame.set_index(index) if index in frame.columns else frame


def print_table(title, frame):
    print(f"\n=== {title} ===")
    if frame is None or len(frame) == 0:
        print("None.")
    else:
        print(frame.to_string(float_format=lambda v: f"{v:.4f}"))


def print_matrix(title, matrix, labels):
    print_table(title, pd.DataFrame(np.asarray(matrix, dtype=float), index=labels, columns=labels))


def print_fit_summary(doc):
    meta = doc["meta"]
    print(f"\nModel: {meta['model']}  (I={meta['I']}, K={meta['K']}, variables: {', '.join(meta['variables'])})")
    print_table("Fixed effects", _frame(doc["fixed"]))
    print_table("Hyperparameters (internal scale)", _frame(doc["hyper_internal"]))
    print_table("Hyperparameters (natural scale)", _frame(doc["hyper_natural"]))
    print_matrix("Between-variable covariance (posterior mean)", doc["between_cov"], meta["variables"])
    criteria = pd.Series(doc["criteria"], name="value").to_frame()
    print_table("Model criteria", criteria)
    if "mcmc" in doc:
        mcmc = doc["mcmc"]
        print_table("MCMC hyperparameters (internal scale)", _frame(mcmc["hyper_internal"]))
        print_table("MCMC criteria", pd.Series(mcmc["criteria"], name="value").to_frame())
        print(f"Acceptance rate per chain: {', '.join(f'{a:.3f}' for a in mcmc['acceptance'])}")
    if doc.get("timing"):
        print_table("Timing (s)", pd.Series(doc["timing"], name="seconds").to_frame())


def print_transform(doc, variables=None):
    labels = variables or [str(k) for k in range(1, doc["meta"]["K"] + 1)]
    print_table("Hyperparameters (natural scale)", _frame(doc["hyper_natural"]))
    print_matrix("Between-variable covariance (posterior mean)", doc["between_cov"], labels)


def print_bounds(lo, hi):
    print(f"alpha_min {lo:.8f}")
    print(f"alpha_max {hi:.8f}")
