# spatial/car.py
import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh

from config import EIGEN_TOL
from errors import DomainError, ValidationError
from linalg.sparse import SparseSym
from spatial.graph import adjacency_matrix, neighbor_counts, require_neighbors

logger = logging.getLogger(__name__)

DENSE_EIGEN_LIMIT = 64


def _structure(g, alpha):
    n = neighbor_counts(g).astype(float)
    W = adjacency_matrix(g).lower
    return SparseSym.from_lower(sp.diags(n, format="csc") - alpha * W)


def intrinsic_precision(g):
    """D - W: rows sum to zero, rank I - C."""
    require_neighbors(g)
    return _structure(g, 1.0)


def proper_precision(g, alpha, check=True):
    """D - alpha W, positive definite for alpha inside the admissible interval."""
    require_neighbors(g)
    if check:
        lo, hi = alpha_bounds(g)
        if not lo < alpha < hi:
            raise DomainError(f"alpha={alpha} outside the admissible interval ({lo:.8f}, {hi:.8f})")
    return _structure(g, float(alpha))


@lru_cache(maxsize=32)
def alpha_bounds(g):
    """(1/lambda_min, 1/lambda_max) of D^-1/2 W D^-1/2; lambda_max is always 1."""
    require_neighbors(g)
    n = neighbor_counts(g).astype(float)
    scale = sp.diags(1.0 / np.sqrt(n))
    S = (scale @ adjacency_matrix(g).full() @ scale).tocsr()
    if g.n_regions <= DENSE_EIGEN_LIMIT:
        lam_min = float(np.linalg.eigvalsh(S.toarray())[0])
    else:
        v0 = np.random.default_rng(0).standard_normal(g.n_regions)
        vals = eigsh(S, k=1, which="SA", tol=EIGEN_TOL, v0=v0, return_eigenvectors=False)
        lam_min = float(vals[0])
    if lam_min >= 0:
        raise ValidationError("graph adjacency has no negative eigenvalue")
    logger.debug("alpha bounds for %d regions: lambda_min=%.10f", g.n_regions, lam_min)
    return 1.0 / lam_min, 1.0


@dataclass(frozen=True)
class CarStructure:
    graph: object
    kind: str = "intrinsic"
    alpha: float = None

    def __post_init__(self):
        if self.kind not in ("intrinsic", "proper"):
            raise ValidationError(f"unknown CAR kind '{self.kind}'")
        if self.kind == "proper":
            if self.alpha is None:
                raise ValidationError("proper CAR needs alpha")
            lo, hi = alpha_bounds(self.graph)
            if not lo < self.alpha < hi:
                raise DomainError(f"alpha={self.alpha} outside ({lo:.8f}, {hi:.8f})")

    def precision(self):
        if self.kind == "intrinsic":
            return intrinsic_precision(self.graph)
        return proper_precision(self.graph, self.alpha, check=False)
