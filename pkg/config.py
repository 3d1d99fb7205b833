# config.py
from dataclasses import dataclass, fields, replace

from errors import ParseError, ValidationError

# Autocorrelation range (users usually keep alpha non-negative)
ALPHA_MIN = 0.0
ALPHA_MAX = 1.0

# Prior settings
MMODEL_TAU = 0.001              # fixed precision of the M-model Wishart prior
FIXED_EFFECT_PRECISION = 0.001  # diffuse Gaussian prior on intercepts and coefficients
VARIANCE_LOG_LIMIT = 40.0       # |log precision| beyond this is rejected

# Sparse kernel
CHOLESKY_BACKEND = "auto"       # "auto", "cholmod" or "superlu"
JITTER_START = 1e-8
JITTER_MAX = 1e-4
JITTER_FACTOR = 10.0
EIGEN_TOL = 1e-10

# Laplace engine
NEWTON_MAX_ITER = 50
NEWTON_TOL = 1e-6
NEWTON_MAX_HALVINGS = 30
ETA_MAX = 30.0
JACOBIAN_STEP = 1e-6

# Hyperparameter search
HESSIAN_STEP = 0.005
HESSIAN_FLOOR = 1e-6
EXPLORE_MODE = "axis"           # "mode-only" or "axis"
EXPLORE_DELTA = 1.0
INTRINSIC_LOG_PREC_START = 1.0
MAX_WORKERS = 4

# Posterior summaries
MIXTURE_DRAWS = 10000
SUMMARY_QUANTILES = (0.025, 0.5, 0.975)
DEFAULT_SEED = 42

# MCMC cross-validator
MCMC_ITERS = 50000
MCMC_BURNIN = 10000
MCMC_CHAINS = 1
MCMC_TARGET_ACCEPT = 0.234
MCMC_INITIAL_SCALE = 2.38

MODEL_CHOICES = ("indimcar", "indpmcar", "imcar", "pmcar", "mmodel")
EXPLORE_CHOICES = ("mode-only", "axis")


@dataclass(frozen=True)
class FitConfig:
    model: str = "pmcar"
    n_variables: int = None
    alpha_min: float = ALPHA_MIN
    alpha_max: float = ALPHA_MAX
    explore: str = EXPLORE_MODE
    hessian_step: float = HESSIAN_STEP
    seed: int = DEFAULT_SEED
    draws: int = MIXTURE_DRAWS
    workers: int = MAX_WORKERS
    covariates: tuple = None
    init: tuple = None
    mcmc: bool = False
    iters: int = MCMC_ITERS
    burnin: int = MCMC_BURNIN
    chains: int = MCMC_CHAINS
    out: str = "fit.json"

    def validate(self):
        if self.model not in MODEL_CHOICES:
            raise ValidationError(f"unknown model '{self.model}', expected one of {MODEL_CHOICES}")
        if self.explore not in EXPLORE_CHOICES:
            raise ValidationError(f"unknown explore mode '{self.explore}'")
        if not self.alpha_min < self.alpha_max:
            raise ValidationError("alpha_min must be smaller than alpha_max")
        if self.hessian_step <= 0:
            raise ValidationError("hessian_step must be positive")
        if self.draws < 100:
            raise ValidationError("draws must be at least 100")
        if self.n_variables is not None and self.n_variables < 1:
            raise ValidationError("n_variables must be at least 1")
        if self.workers < 1:
            raise ValidationError("workers must be at least 1")
        if self.mcmc:
            if self.iters <= self.burnin:
                raise ValidationError("iters must exceed burnin")
            if self.chains < 1:
                raise ValidationError("chains must be at least 1")
        return self


def _parse_value(name, kind, raw, path=None, line=None):
    raw = raw.strip()
    try:
        if kind is bool:
            lowered = raw.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if name == "covariates":
            return tuple(part.strip() for part in raw.split(",") if part.strip())
        if name == "init":
            return tuple(float(part) for part in raw.split(",") if part.strip())
        return raw
    except ValueError:
        raise ParseError(f"invalid value '{raw}' for '{name}'", path=path, line=line) from None


_FIELD_TYPES = {f.name: f.type for f in fields(FitConfig)}
_TYPE_MAP = {"str": str, "float": float, "int": int, "bool": bool, "tuple": tuple}


def _field_kind(name):
    kind = _FIELD_TYPES[name]
    if isinstance(kind, str):
        kind = _TYPE_MAP.get(kind, str)
    return kind


def read_config_file(path):
    """Read a flat key=value file into a dict of typed FitConfig overrides."""
    overrides = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"expected key=value, got '{line}'", path=path, line=lineno)
            key, raw = line.split("=", 1)
            key = key.strip().replace("-", "_")
            if key not in _FIELD_TYPES:
                raise ValidationError(f"{path}: line {lineno}: unknown config key '{key}'")
            overrides[key] = _parse_value(key, _field_kind(key), raw, path=path, line=lineno)
    return overrides


def build_fit_config(file_overrides=None, flag_overrides=None):
    """Defaults, then config file, then flags (flags win)."""
    config = FitConfig()
    for overrides in (file_overrides or {}, flag_overrides or {}):
        unknown = set(overrides) - set(_FIELD_TYPES)
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        config = replace(config, **{k: v for k, v in overrides.items() if v is not None})
    return config.validate()
