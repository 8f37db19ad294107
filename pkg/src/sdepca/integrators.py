"""Euler-Maruyama schemes for the SDE and the SDEPCA, plus an exact GBM sampler.

The SDE scheme evaluates the delayed maps at the current state:

    Y_{n+1} = Y_n + (f(Y_n) + u1(Y_n)) h + (g(Y_n) + u2(Y_n)) dW_n

The SDEPCA scheme freezes their argument at the start of the current block
of ``m_sub`` steps:

    X_{n+1} = X_n + (f(X_n) + u1(X_{[n/m]m})) h + (g(X_n) + u2(X_{[n/m]m})) dW_n

Both schemes share one step function, which is what makes the coincidence
properties (``m_sub = 1`` or vanishing delayed maps) hold bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DivergedError, ShapeError, ValidationError
from .model import GridSpec, SystemSpec, make_scalar_linear
from .paths import aggregate_increments, generate_batch

EM_SDE = "em-sde"
EM_SDEPCA = "em-sdepca"
EXACT_GBM = "exact-gbm"
SCHEMES = (EM_SDE, EM_SDEPCA, EXACT_GBM)

DIVERGENCE_THRESHOLD = 1e12

TRAJECTORY_COLUMNS = ("path_id", "step", "t", "component", "value")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One sample path on a grid; ``states[n]`` is the state at ``times[n]``."""

    times: np.ndarray
    states: np.ndarray  # (n_steps + 1, d)
    grid: GridSpec
    scheme: str
    path_id: int = 0

    def delayed_state(self, n):
        """The frozen argument seen by step ``n`` of the SDEPCA scheme."""
        return self.states[self.grid.block_start(n)]

    def rows(self):
        """Rows for the trajectory CSV, ordered by step then component."""
        out = []
        for n, (t, x) in enumerate(zip(self.times, self.states)):
            for i, v in enumerate(x):
                out.append((self.path_id, n, float(t), i, float(v)))
        return out


def _as_x0(spec, x0):
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape != (spec.d,):
        raise ShapeError(f"x0 must have length {spec.d}, got {x0.size}")
    if not np.all(np.isfinite(x0)):
        raise ValidationError("x0 must be finite")
    return x0


def _as_increments(grid, m_bm, increments):
    dw = np.asarray(increments, dtype=float)
    if dw.ndim == 1 and m_bm == 1:
        dw = dw[:, None]
    if dw.shape != (grid.n_steps, m_bm):
        raise ShapeError(f"increments must have shape {(grid.n_steps, m_bm)}, got {dw.shape}")
    return dw


def integrate_batch(spec: SystemSpec, x0, h, m_sub, dW, delayed,
                    threshold=DIVERGENCE_THRESHOLD):
    """Integrate many paths on given increments.

    Parameters
    ----------
    x0 : array_like, shape (d,) or (P, d)
    dW : ndarray, shape (P, N, m_bm)
    delayed : bool
        Selects the SDEPCA scheme; False gives the SDE scheme.

    Returns
    -------
    states : ndarray, shape (P, N + 1, d), NaN from each path's divergence on
    diverged : ndarray, shape (P,), first bad index or -1
    """
    dW = np.asarray(dW, dtype=float)
    P = dW.shape[0]
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (P, spec.d))
    if spec.is_linear:
        states, div = _kernels.em_linear(spec.A, spec.Bs, spec.C, spec.Ds,
                                         np.ascontiguousarray(x0), np.ascontiguousarray(dW),
                                         float(h), int(m_sub), bool(delayed), float(threshold))
        return np.asarray(states), np.asarray(div)
    return _integrate_generic(spec, x0, h, m_sub, dW, delayed, threshold)


def _integrate_generic(spec, x0, h, m_sub, dW, delayed, threshold):
    # numpy path for catalogue systems; same step structure as the kernels
    P, N = dW.shape[:2]
    states = np.empty((P, N + 1, spec.d))
    diverged = np.full(P, -1, dtype=np.int64)
    x = np.array(x0, dtype=float)
    xd = x.copy()
    thr2 = threshold * threshold
    bad = ~(np.sum(x * x, axis=1) <= thr2)
    diverged[bad] = 0
    alive = ~bad
    x[bad] = np.nan
    states[:, 0] = x
    with np.errstate(all="ignore"):
        for n in range(N):
            if not delayed or n % m_sub == 0:
                xd = x.copy()
            drift = spec.f(x) + spec.u1(xd)
            diff = spec.g(x) + spec.u2(xd)
            x = x + drift * h + np.einsum("pim,pm->pi", diff, dW[:, n])
            bad = alive & ~(np.sum(x * x, axis=1) <= thr2)
            diverged[bad] = n + 1
            alive &= ~bad
            x[~alive] = np.nan
            states[:, n + 1] = x
    return states, diverged


def _single_path(spec, x0, grid, increments, delayed, scheme, threshold):
    x0 = _as_x0(spec, x0)
    dw = _as_increments(grid, spec.m_bm, increments)
    states, div = integrate_batch(spec, x0[None], grid.h, grid.m_sub, dw[None], delayed,
                                  threshold)
    if div[0] >= 0:
        raise DivergedError(int(div[0]))
    return Trajectory(grid.times(), states[0], grid, scheme)


def em_sde_path(spec: SystemSpec, x0, grid: GridSpec, increments,
                threshold=DIVERGENCE_THRESHOLD) -> Trajectory:
    """EM scheme for the SDE: the delayed maps act on the current state.

    Raises :class:`DivergedError` if ``|Y_n|`` exceeds ``threshold`` or
    becomes nonfinite.
    """
    return _single_path(spec, x0, grid, increments, False, EM_SDE, threshold)


def em_sdepca_path(spec: SystemSpec, x0, grid: GridSpec, increments,
                   threshold=DIVERGENCE_THRESHOLD) -> Trajectory:
    """EM scheme for the SDEPCA: the delayed maps see ``X_{[n/m]m}``."""
    return _single_path(spec, x0, grid, increments, True, EM_SDEPCA, threshold)


def gbm_exact_path(alpha, beta, x0, grid: GridSpec, increments) -> Trajectory:
    """Exact solution of ``dy = alpha y dt + beta y dW`` at the grid points."""
    alpha, beta, x0 = float(alpha), float(beta), float(np.asarray(x0, dtype=float).reshape(-1)[0])
    dw = _as_increments(grid, 1, increments)[:, 0]
    t = grid.times()
    w = np.concatenate(([0.0], np.cumsum(dw)))
    y = x0 * np.exp((alpha - 0.5 * beta * beta) * t + beta * w)
    return Trajectory(t, y[:, None], grid, EXACT_GBM)


@dataclass(frozen=True)
class StrongErrorTable:
    """Coupled-path strong errors at time ``T`` for a sequence of step sizes.

    ``moment_error[i]`` estimates ``E|y(T) - Y_N|^p`` at step ``h[i]`` and
    ``rms_error`` is its ``1/p`` power. ``slope`` is the least-squares slope
    of ``log moment_error`` against ``log h``.
    """

    h: np.ndarray
    moment_error: np.ndarray
    half_width: np.ndarray
    rms_error: np.ndarray
    slope: float
    p: float
    n_paths: int

    def rows(self):
        return [(float(h), float(e), float(w), float(r), self.slope, self.p, self.n_paths)
                for h, e, w, r in zip(self.h, self.moment_error, self.half_width, self.rms_error)]


STRONG_ERROR_COLUMNS = ("h", "moment_error", "half_width", "rms_error", "slope", "p", "n_paths")


def strong_error_study(alpha, beta, x0=1.0, T=1.0, levels=range(4, 10), p=2.0,
                       n_paths=10_000, seed=0, chunk=2048) -> StrongErrorTable:
    """Measure the EM strong error against the exact GBM solution.

    All step sizes ``h = T 2^-k`` for ``k`` in ``levels`` share one set of
    Brownian paths: increments are drawn on the finest grid and aggregated.
    """
    from scipy.stats import norm

    levels = sorted(int(k) for k in levels)
    if len(levels) < 2:
        raise ValidationError("need at least two refinement levels")
    if p < 2:
        raise ValidationError(f"p must be >= 2, got {p}")
    spec = make_scalar_linear(alpha, beta)
    kmax = levels[-1]
    n_fine = 2**kmax
    h_fine = T / n_fine
    s1 = np.zeros(len(levels))
    s2 = np.zeros(len(levels))
    for start in range(0, n_paths, chunk):
        ids = np.arange(start, min(start + chunk, n_paths))
        fine = generate_batch(seed, ids, n_fine, h_fine)
        w_T = fine[:, :, 0].sum(axis=1)
        exact = x0 * np.exp((alpha - 0.5 * beta * beta) * T + beta * w_T)
        for i, k in enumerate(levels):
            dw = aggregate_increments(fine, 2 ** (kmax - k), axis=1)
            states, div = integrate_batch(spec, [x0], T / 2**k, 1, dw, False)
            if np.any(div >= 0):
                raise DivergedError(int(div[div >= 0][0]))
            e = np.abs(states[:, -1, 0] - exact) ** p
            s1[i] += e.sum()
            s2[i] += (e * e).sum()
    mean = s1 / n_paths
    var = np.maximum(s2 / n_paths - mean * mean, 0.0) * n_paths / (n_paths - 1)
    hw = norm.ppf(0.995) * np.sqrt(var / n_paths)
    hs = T / 2.0 ** np.array(levels)
    slope = float(np.polyfit(np.log(hs), np.log(mean), 1)[0])
    return StrongErrorTable(hs, mean, hw, mean ** (1.0 / p), slope, float(p), int(n_paths))


__all__ = [
    "EM_SDE", "EM_SDEPCA", "EXACT_GBM", "SCHEMES", "DIVERGENCE_THRESHOLD",
    "TRAJECTORY_COLUMNS", "STRONG_ERROR_COLUMNS", "Trajectory", "StrongErrorTable",
    "integrate_batch", "em_sde_path", "em_sdepca_path", "gbm_exact_path",
    "strong_error_study",
]
