"""Brute-force simplex projection by exhaustive support enumeration."""
from functools import lru_cache

import numpy as np

from apps.core.exceptions import ContractError, NumericError

MAX_ORACLE_LENGTH = 16
FEASIBILITY_TOL = 1e-12


@lru_cache(maxsize=None)
def _support_masks(p: int) -> np.ndarray:
    codes = np.arange(1, 2 ** p)
    return ((codes[:, None] >> np.arange(p)) & 1).astype(bool)


def project_simplex_bruteforce(z) -> np.ndarray:
    """
    Euclidean projection of `z` onto the simplex.

    Every non-empty support S gives a candidate tau = (sum_S z - 1) / |S|;
    the projection is the candidate satisfying the KKT conditions
    (z_i > tau on S, z_i <= tau off S).
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1 or not 1 <= z.size <= MAX_ORACLE_LENGTH:
        raise ContractError(f"oracle handles vectors of length 1..{MAX_ORACLE_LENGTH}, got {z.shape}")
    masks = _support_masks(z.size)
    tau = (masks @ z - 1.0) / masks.sum(axis=1)
    shifted = z[None, :] - tau[:, None]
    on_support = np.where(masks, shifted > -FEASIBILITY_TOL, True).all(axis=1)
    off_support = np.where(masks, True, shifted <= FEASIBILITY_TOL).all(axis=1)
    feasible = np.flatnonzero(on_support & off_support)
    if feasible.size == 0:
        raise NumericError("oracle found no feasible support")
    best = feasible[0]
    return np.where(masks[best], np.maximum(shifted[best], 0.0), 0.0)
