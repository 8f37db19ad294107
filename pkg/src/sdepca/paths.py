"""Reproducible Brownian increments.

Every increment is a pure function of ``(seed, path_id, step, component)``:
64 bits from a Philox4x32-10 counter block are mapped to a standard normal by
an inverse-CDF transform and scaled by ``sqrt(h)``. Nothing depends on the
order in which paths are generated or on how many workers are used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ShapeError, ValidationError

SEED_MAX = 2**64 - 1


def _check_seed(seed):
    if int(seed) != seed or not 0 <= int(seed) <= SEED_MAX:
        raise ValidationError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    return int(seed)


def _check_h(h):
    if not (math.isfinite(h) and h > 0):
        raise ValidationError(f"step size h must be positive, got {h}")
    return float(h)


@dataclass(frozen=True)
class IncrementPlan:
    seed: int
    path_id: int
    n_steps: int
    h: float
    m_bm: int = 1

    def __post_init__(self):
        _check_seed(self.seed)
        _check_h(self.h)
        if int(self.n_steps) != self.n_steps or self.n_steps < 0:
            raise ValidationError(f"n_steps must be a nonnegative integer, got {self.n_steps}")
        if int(self.m_bm) != self.m_bm or self.m_bm < 1:
            raise ValidationError(f"m_bm must be a positive integer, got {self.m_bm}")
        if int(self.path_id) != self.path_id or not 0 <= self.path_id < 2**63:
            raise ValidationError(f"path_id must be a nonnegative integer, got {self.path_id}")


def generate_increments(plan: IncrementPlan) -> np.ndarray:
    """Increment table of shape ``(n_steps, m_bm)`` for one path."""
    return generate_batch(plan.seed, [plan.path_id], plan.n_steps, plan.h, plan.m_bm)[0]


def generate_batch(seed, path_ids, n_steps, h, m_bm=1, start_step=0) -> np.ndarray:
    """Increments for several paths at once, shape ``(P, n_steps, m_bm)``.

    ``start_step`` selects a window of steps, so long horizons can be
    generated piecewise with the same result as one call.
    """
    seed = _check_seed(seed)
    h = _check_h(h)
    ids = np.asarray(path_ids, dtype=np.int64).reshape(-1)
    if n_steps == 0 or ids.size == 0:
        return np.zeros((ids.size, int(n_steps), int(m_bm)))
    z = np.asarray(_kernels.normals(seed, ids, int(start_step), int(n_steps), int(m_bm)))
    return math.sqrt(h) * z


def aggregate_increments(fine, r, axis=0) -> np.ndarray:
    """Sum consecutive groups of ``r`` steps along ``axis``.

    Coarse step ``j`` is the sum of fine steps ``j r .. (j + 1) r - 1``, the
    Brownian increment over the longer interval.
    """
    fine = np.asarray(fine, dtype=float)
    if int(r) != r or r < 1:
        raise ValidationError(f"refinement must be a positive integer, got {r}")
    r = int(r)
    axis = axis % fine.ndim
    n = fine.shape[axis]
    if n % r:
        raise ShapeError(f"{n} steps are not divisible by refinement {r}")
    if r == 1:
        return fine.copy()
    shape = fine.shape[:axis] + (n // r, r) + fine.shape[axis + 1:]
    return fine.reshape(shape).sum(axis=axis + 1)
