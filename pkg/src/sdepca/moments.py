"""pth-moment estimation, decay fitting and exact second-moment oracles.

Monte Carlo estimates are reduced in fixed chunks of paths, summed in chunk
order, so the result does not depend on how many threads did the work.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm
from scipy.stats import norm

from . import _kernels
from .errors import DivergedError, InsufficientDataError, UnsupportedError, ValidationError
from .integrators import DIVERGENCE_THRESHOLD, EM_SDE, EM_SDEPCA, EXACT_GBM, SCHEMES, integrate_batch
from .model import GridSpec, SystemSpec
from .paths import generate_batch

Z99 = float(norm.ppf(0.995))
CHUNK = 2048
MOMENT_COLUMNS = ("t", "value", "half_width", "n_paths", "p")


@dataclass(frozen=True, eq=False)
class MomentSeries:
    """Estimated or exact ``E|X(t)|^p`` on a time grid.

    ``half_widths`` are 99% normal-approximation confidence half-widths and
    are zero for exact series. After a path diverges the values are NaN and
    ``first_divergence`` holds the grid time index of the earliest failure.
    """

    times: np.ndarray
    values: np.ndarray
    half_widths: np.ndarray
    n_paths: int
    p: float
    x0_p: float
    first_divergence: int | None = None
    diverged_paths: int = 0
    exact: bool = False

    @property
    def unstable(self) -> bool:
        return self.first_divergence is not None

    def rows(self):
        return [(float(t), float(v), float(w), self.n_paths, self.p)
                for t, v, w in zip(self.times, self.values, self.half_widths)]

    def to_csv(self, path):
        from .report import emit_report

        return emit_report(self.rows(), MOMENT_COLUMNS, path)


@dataclass(frozen=True)
class DecayFit:
    """Envelope ``E|X(t)|^p <= M |x0|^p exp(-gamma t)`` fitted on ``window``.

    ``residual`` is the largest absolute residual of the log-linear fit.
    """

    M: float
    gamma: float
    window: tuple
    residual: float
    n_points: int
    x0_p: float = 1.0

    def envelope(self, t):
        return self.M * self.x0_p * np.exp(-self.gamma * np.asarray(t, dtype=float))


def _check_p(p):
    p = float(p)
    if not (p >= 2 and math.isfinite(p)):
        raise ValidationError(f"moment order p must be >= 2, got {p}")
    return p


def _abs_pow(x, p):
    r2 = np.sum(x * x, axis=-1)
    if p == 2.0:
        return r2
    return r2 ** (0.5 * p)


def _chunk_sums(spec, scheme, x0, grid, p, seed, start, n):
    N = grid.n_steps
    if scheme in (EM_SDE, EM_SDEPCA) and spec.is_linear:
        s1, s2, div = _kernels.moment_sums(spec.A, spec.Bs, spec.C, spec.Ds, x0, grid.h,
                                           grid.m_sub, N, scheme == EM_SDEPCA, p, seed,
                                           start, n, DIVERGENCE_THRESHOLD)
        return np.asarray(s1), np.asarray(s2), np.asarray(div)
    ids = np.arange(start, start + n)
    dW = generate_batch(seed, ids, N, grid.h, spec.m_bm)
    if scheme == EXACT_GBM:
        a, b, c, d = spec.scalar_coefficients()
        alpha, beta = a + c, b + d
        w = np.concatenate((np.zeros((n, 1)), np.cumsum(dW[:, :, 0], axis=1)), axis=1)
        states = (x0[0] * np.exp((alpha - 0.5 * beta * beta) * grid.times()[None, :]
                                 + beta * w))[:, :, None]
        div = np.full(n, -1, dtype=np.int64)
    else:
        states, div = integrate_batch(spec, x0, grid.h, grid.m_sub, dW, scheme == EM_SDEPCA)
    v = _abs_pow(states, p)
    v = np.where(np.isnan(v), 0.0, v)
    s1 = np.zeros(N + 1)
    s2 = np.zeros(N + 1)
    for row in v:
        s1 += row
        s2 += row * row
    return s1, s2, div


def estimate_pth_moment(spec: SystemSpec, scheme, x0, grid: GridSpec, p=2.0, n_paths=10_000,
                        seed=0, threads=1, chunk=CHUNK) -> MomentSeries:
    """Monte Carlo estimate of ``E|X_n|^p`` along the grid.

    ``scheme`` is ``em-sde``, ``em-sdepca`` or ``exact-gbm`` (scalar linear
    systems only, using the folded coefficients). Path ``i`` always uses the
    increments keyed by ``(seed, i)``. ``chunk`` fixes the reduction order
    and must stay constant for results to be reproducible.
    """
    if scheme not in SCHEMES:
        raise ValidationError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    if scheme == EXACT_GBM and not (spec.is_linear and spec.is_scalar):
        raise UnsupportedError("the exact sampler needs a scalar linear system")
    p = _check_p(p)
    if int(n_paths) != n_paths or n_paths < 2:
        raise ValidationError(f"n_paths must be an integer >= 2, got {n_paths}")
    n_paths = int(n_paths)
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape != (spec.d,) or not np.all(np.isfinite(x0)):
        raise ValidationError(f"x0 must be a finite vector of length {spec.d}")
    threads = max(1, int(threads))
    starts = list(range(0, n_paths, chunk))
    jobs = [(s, min(chunk, n_paths - s)) for s in starts]

    def run(job):
        return _chunk_sums(spec, scheme, x0, grid, p, seed, *job)

    if threads == 1 or len(jobs) == 1:
        parts = [run(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, jobs))
    s1 = np.zeros(grid.n_steps + 1)
    s2 = np.zeros(grid.n_steps + 1)
    divs = []
    for a, b, dv in parts:
        s1 += a
        s2 += b
        divs.append(dv)
    div = np.concatenate(divs)

    mean = s1 / n_paths
    var = np.maximum(s2 / n_paths - mean * mean, 0.0) * (n_paths / (n_paths - 1))
    hw = Z99 * np.sqrt(var / n_paths)
    x0_p = float(_abs_pow(x0, p))
    mean[0] = x0_p
    hw[0] = 0.0
    first = None
    bad = div[div >= 0]
    if bad.size:
        first = int(bad.min())
        mean[first:] = np.nan
        hw[first:] = np.nan
    return MomentSeries(grid.times(), mean, hw, n_paths, p, x0_p, first, int(bad.size))


def require_stable(series: MomentSeries):
    """Raise :class:`DivergedError` if any path of ``series`` diverged."""
    if series.unstable:
        raise DivergedError(series.first_divergence,
                            message=f"{series.diverged_paths} path(s) diverged, first at step "
                                    f"{series.first_divergence}")
    return series


def fit_decay_rate(series: MomentSeries, burn_in_fraction=0.1, max_rel_half_width=0.5) -> DecayFit:
    """Fit an exponential envelope to a moment series.

    A least-squares line is fitted to ``(t, log value)`` over points after
    the burn-in whose relative half-width is at most ``max_rel_half_width``.
    ``gamma`` is minus the slope; the intercept is raised by the largest
    positive residual so the envelope holds at every fitted point.
    """
    t = np.asarray(series.times, dtype=float)
    v = np.asarray(series.values, dtype=float)
    hw = np.asarray(series.half_widths, dtype=float)
    x0_p = float(series.x0_p)
    if not x0_p > 0:
        raise InsufficientDataError("x0 = 0 carries no decay information")
    t_start = t[0] + burn_in_fraction * (t[-1] - t[0])
    with np.errstate(divide="ignore", invalid="ignore"):
        ok = (t >= t_start - 1e-12 * max(1.0, abs(t[-1]))) & np.isfinite(v) & (v > 0)
        ok &= np.isfinite(hw) & (hw <= max_rel_half_width * v)
    if np.count_nonzero(ok) < 5:
        raise InsufficientDataError(
            f"only {np.count_nonzero(ok)} usable points (need 5)")
    tt, y = t[ok], np.log(v[ok])
    tc = tt.mean()
    design = np.column_stack((np.ones_like(tt), tt - tc))
    (c0, c1), *_ = np.linalg.lstsq(design, y - y.mean(), rcond=None)
    c0 += y.mean() - c1 * tc
    resid = y - (c0 + c1 * tt)
    lift = max(float(resid.max()), 0.0)
    M = math.exp(c0 + lift) / x0_p
    # guard the envelope against rounding in exp
    M *= 1.0 + 8 * np.finfo(float).eps
    return DecayFit(M=M, gamma=float(-c1), window=(float(tt[0]), float(tt[-1])),
                    residual=float(np.abs(resid).max()), n_points=int(ok.sum()), x0_p=x0_p)


# Exact oracles ---------------------------------------------------------------

def gbm_pth_moment(alpha, beta, x0, t, p=2.0):
    """``E|y(t)|^p`` for ``dy = alpha y dt + beta y dW``."""
    p = _check_p(p)
    t = np.asarray(t, dtype=float)
    return abs(float(x0)) ** p * np.exp(p * (alpha + 0.5 * (p - 1) * beta * beta) * t)


def gbm_moment_series(alpha, beta, x0, grid: GridSpec, p=2.0) -> MomentSeries:
    t = grid.times()
    v = gbm_pth_moment(alpha, beta, x0, t, p)
    return MomentSeries(t, v, np.zeros_like(v), 0, float(p), abs(float(x0)) ** p, exact=True)


def _expm1_mat(X):
    """``expm(X) - I`` without cancellation for small ``X``."""
    nrm = np.abs(X).sum(axis=1).max()
    if nrm > 0.5:
        return expm(X) - np.eye(len(X))
    term = X.copy()
    acc = X.copy()
    for k in range(2, 40):
        term = term @ X / k
        acc += term
        if np.abs(term).max() <= 1e-18 * max(np.abs(acc).max(), 1e-300):
            break
    return acc


def _em_block_matrix(a, b, c, d, h):
    """One EM-SDEPCA step on ``(E u^2, E uv, E v^2)`` is ``I + N``."""
    s = 1.0 + a * h
    return np.array([
        [2 * a * h + a * a * h * h + h * b * b, 2 * s * c * h + 2 * h * b * d,
         c * c * h * h + h * d * d],
        [0.0, a * h, c * h],
        [0.0, 0.0, 0.0],
    ])


def _scalar_coeffs(spec_or_coeffs):
    if isinstance(spec_or_coeffs, SystemSpec):
        return spec_or_coeffs.scalar_coefficients()
    return tuple(float(v) for v in spec_or_coeffs)


def log_em_second_moment(kind, coeffs, h, m_sub, n):
    """``log(E X_n^2 / x0^2)`` for the scalar linear EM schemes.

    ``n`` is an array of grid indices. For ``kind="sde"`` it may be a float
    array, which allows step sizes far below the int64 range of indices.
    """
    a, b, c, d = _scalar_coeffs(coeffs)
    h = float(h)
    if kind == "sde":
        n = np.asarray(n, dtype=float)
        ae, be = a + c, b + d
        inc = 2 * ae * h + ae * ae * h * h + be * be * h
        if inc <= -1:
            return np.where(n == 0, 0.0, -np.inf)
        return n * math.log1p(inc)
    if kind != "sdepca":
        raise ValidationError(f"kind must be 'sde' or 'sdepca', got {kind!r}")
    k, l = np.divmod(np.asarray(n, dtype=np.int64), int(m_sub))
    return log_em_sdepca_blocks((a, b, c, d), h, m_sub, k, l)


def log_em_sdepca_blocks(coeffs, h, m_sub, k, l):
    """``log(E X_{km+l}^2 / x0^2)`` of the EM-SDEPCA scheme.

    Block index ``k`` and offset ``l`` are given separately so that ``m_sub``
    may be an arbitrarily large integer; for small ``h`` the block powers are
    evaluated through a matrix logarithm instead of repeated products.
    """
    a, b, c, d = _scalar_coeffs(coeffs)
    h = float(h)
    m = int(m_sub)
    k = np.asarray(k, dtype=float)
    l_arr = np.asarray(l)
    N = _em_block_matrix(a, b, c, d, h)
    ones = np.ones(3)
    out = np.empty(l_arr.shape, dtype=float)
    if np.abs(N).sum(axis=1).max() < 1e-2:
        L = _series_log(N)
        log_beta = math.log1p(float((_expm1_mat(float(m) * L) @ ones)[0]))
        for ll in np.unique(l_arr):
            q = float((_expm1_mat(float(ll) * L) @ ones)[0])
            out[l_arr == ll] = math.log1p(q)
        return k * log_beta + out
    P = np.eye(3) + N
    beta = float((np.linalg.matrix_power(P, m) @ ones)[0])
    with np.errstate(divide="ignore"):
        for ll in np.unique(l_arr):
            q = float((np.linalg.matrix_power(P, int(ll)) @ ones)[0])
            out[l_arr == ll] = np.log(q) if q > 0 else -np.inf
        lb = math.log(beta) if beta > 0 else -math.inf
        return np.where(k == 0, 0.0, k * lb) + out


def _series_log(N):
    """``log(I + N)`` by the Mercator series (requires a small ``N``)."""
    term = N.copy()
    acc = N.copy()
    for j in range(2, 80):
        term = term @ N
        step = term * ((-1) ** (j + 1) / j)
        acc += step
        if np.abs(step).max() <= 1e-18 * max(np.abs(acc).max(), 1e-300):
            break
    return acc


def _series_from_log(times, logv, x0, p=2.0):
    x0_p = abs(float(x0)) ** p
    v = x0_p * np.exp(logv)
    return MomentSeries(np.asarray(times, dtype=float), v, np.zeros_like(v), 0, float(p), x0_p,
                        exact=True)


def em_linear_second_moment(kind, a, b, c, d, grid: GridSpec, x0=1.0, stride=1) -> MomentSeries:
    """Exact ``E X_n^2`` of the scalar linear EM schemes on ``grid``.

    ``kind`` is ``sde`` (one-step factor ``(1 + (a+c) h)^2 + (b+d)^2 h``)
    or ``sdepca`` (the block recursion on ``(E u^2, E uv, E v^2)`` with
    ``u = X_{km+l}``, ``v = X_{km}``, reset at each block start).
    """
    n = np.arange(0, grid.n_steps + 1, int(stride))
    logv = log_em_second_moment(kind, (a, b, c, d), grid.h, grid.m_sub, n)
    return _series_from_log(n * grid.h, logv, x0)


def em_second_moment_for(spec: SystemSpec, scheme, grid: GridSpec, x0=1.0, stride=1):
    """Dispatch :func:`em_linear_second_moment` from a spec and scheme tag."""
    if not (spec.is_linear and spec.is_scalar):
        raise UnsupportedError("exact second moments need a scalar linear system")
    kind = {EM_SDE: "sde", EM_SDEPCA: "sdepca"}.get(scheme)
    if kind is None:
        raise ValidationError(f"no EM oracle for scheme {scheme!r}")
    x0 = float(np.asarray(x0, dtype=float).reshape(-1)[0])
    return em_linear_second_moment(kind, *spec.scalar_coefficients(), grid, x0, stride)


def _sdepca_generator(a, b, c, d):
    return np.array([
        [2 * a + b * b, 2 * c + 2 * b * d, d * d],
        [0.0, a, c],
        [0.0, 0.0, 0.0],
    ])


def log_sdepca_second_moment(coeffs, tau, t):
    """``log(E x(t)^2 / x0^2)`` for the scalar linear SDEPCA.

    Inside a block the triple ``(E x^2, E x v, E v^2)`` with ``v = x(k tau)``
    solves a linear ODE; at block ends ``x = v`` resets it. ``t`` may be any
    array of nonnegative times.
    """
    a, b, c, d = _scalar_coeffs(coeffs)
    tau = float(tau)
    t = np.asarray(t, dtype=float)
    G = _sdepca_generator(a, b, c, d)
    ones = np.ones(3)
    k = np.floor(t / tau + 1e-9)
    s = np.maximum(t - k * tau, 0.0)
    log_beta = math.log1p(float((_expm1_mat(G * tau) @ ones)[0]))
    out = np.empty(t.shape, dtype=float)
    for sv in np.unique(s):
        q = float((_expm1_mat(G * sv) @ ones)[0])
        out[s == sv] = math.log1p(q)
    return k * log_beta + out


def sdepca_exact_second_moment(a, b, c, d, tau, t_grid, x0=1.0) -> MomentSeries:
    """Exact ``E x(t)^2`` of the scalar linear SDEPCA on a block-aligned grid.

    ``t_grid`` is a :class:`GridSpec` or a uniform array starting at 0 whose
    spacing divides ``tau``.
    """
    if isinstance(t_grid, GridSpec):
        if abs(t_grid.tau - tau) > 1e-12 * tau:
            raise ValidationError("grid delay does not match tau")
        t = t_grid.times()
    else:
        t = np.asarray(t_grid, dtype=float).reshape(-1)
        if t.size == 0 or t[0] != 0.0:
            raise ValidationError("time grid must start at 0")
        if t.size > 1:
            dt = np.diff(t)
            step = dt[0]
            if step <= 0 or np.max(np.abs(dt - step)) > 1e-9 * step:
                raise ValidationError("time grid must be uniform")
            r = tau / step
            if abs(r - round(r)) > 1e-9 * max(r, 1.0) or round(r) < 1:
                raise ValidationError("time grid is not block aligned: tau / step must be an integer")
    return _series_from_log(t, log_sdepca_second_moment((a, b, c, d), tau, t), x0)
