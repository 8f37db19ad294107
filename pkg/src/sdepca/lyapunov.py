"""Moment decay from the Lyapunov function ``V(y) = |y|^p``.

With the folded coefficients ``F = f + u1`` and ``G = g + u2``, define

    Q(y) = |y|^2 (2 y'F(y) + |G(y)|^2) - (2 - p) |y'G(y)|^2 .

If ``Q(y) <= -lambda |y|^4`` for all ``y`` and some ``lambda > 0`` then the
SDE satisfies ``E|y(t)|^p <= |x0|^p exp(-lambda p t / 2)``. For linear
systems ``Q`` is homogeneous of degree four, so ``lambda`` is minus the
maximum of ``Q`` on the unit sphere.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .errors import DomainError, NoCertificateError, UnsupportedError
from .model import SystemSpec

SPHERE_GRID = "sphere-grid"
RANDOM_SPHERE = "random-sphere"
SCALAR_CLOSED_FORM = "scalar-closed-form"
SCALAR_RAY_GRID = "scalar-ray-grid"


@dataclass(frozen=True, eq=False)
class LyapunovReport:
    """Margin ``lambda`` with the point where the maximum of ``Q`` was found.

    ``method`` names the search that produced the maximum: the
    deterministic grid, a random probe, the scalar closed form, or (for
    catalogue nonlinearities) a scan along the real line.
    """

    p: float
    lam: float
    worst_point: np.ndarray
    n_samples: int
    method: str
    K: float = math.nan

    @property
    def holds(self) -> bool:
        return self.lam > 0

    @property
    def decay_rate(self) -> float:
        return 0.5 * self.lam * self.p

    def row(self):
        """Row in the certificate CSV layout, with ``kind = LYAP``."""
        return ("LYAP", self.p, self.K, "", "", "", "pass" if self.holds else "fail",
                "", "", "", 0.0 if self.holds else math.nan,
                self.decay_rate if self.holds else math.nan)


def _check_p(p):
    p = float(p)
    if not (math.isfinite(p) and p >= 2):
        raise DomainError(f"p must be >= 2, got {p}")
    return p


def _folded(spec, y):
    y = np.asarray(y, dtype=float)
    return spec.f(y) + spec.u1(y), spec.g(y) + spec.u2(y)


def quadratic_form(spec: SystemSpec, p, y):
    """``Q(y)`` for points ``y`` of shape ``(..., d)``."""
    y = np.asarray(y, dtype=float)
    F, G = _folded(spec, y)
    r2 = np.sum(y * y, axis=-1)
    yF = np.sum(y * F, axis=-1)
    G2 = np.sum(G * G, axis=(-2, -1))
    yG = np.einsum("...i,...im->...m", y, G)
    return r2 * (2 * yF + G2) - (2 - p) * np.sum(yG * yG, axis=-1)


def _sphere_grid(d, resolution):
    # Q(-y) = Q(y), so a half sphere suffices; the first angle covers [0, pi)
    if d == 1:
        return np.array([[1.0]])
    n = int(resolution)
    angles = [np.linspace(0.0, np.pi, n, endpoint=False)]
    for _ in range(d - 2):
        angles.append(np.linspace(0.0, np.pi, max(n // 2, 2) + 1))
    pts = []
    for combo in itertools.product(*angles[1:]) if d > 2 else [()]:
        # hyperspherical coordinates, the last angle spanning the half circle
        th = angles[0]
        x = np.empty((len(th), d))
        s = np.ones(len(th))
        for j, phi in enumerate(combo):
            x[:, j] = s * math.cos(phi)
            s = s * math.sin(phi)
        x[:, d - 2] = s * np.cos(th)
        x[:, d - 1] = s * np.sin(th)
        pts.append(x)
    return np.concatenate(pts)


def _grid_resolution(d):
    return {2: 3600, 3: 360, 4: 60}.get(d, 0)


def _maximise_linear(spec, p, resolution, n_random, seed):
    d = spec.d
    q = lambda Y: quadratic_form(spec, p, Y)  # noqa: E731
    candidates = []
    n_samples = 0
    res = _grid_resolution(d) if resolution is None else resolution
    if res:
        grid = _sphere_grid(d, res)
        vals = q(grid)
        i = int(np.argmax(vals))
        candidates.append((float(vals[i]), grid[i], SPHERE_GRID))
        n_samples += len(grid)
    if n_random:
        rng = np.random.default_rng(seed)
        Y = rng.standard_normal((int(n_random), d))
        Y /= np.linalg.norm(Y, axis=1, keepdims=True)
        vals = q(Y)
        i = int(np.argmax(vals))
        candidates.append((float(vals[i]), Y[i], RANDOM_SPHERE))
        n_samples += len(Y)
    best = max(candidates, key=lambda c: c[0])
    # local refinement on the sphere from each candidate; restart while it improves
    obj = lambda z: -float(q(z / np.linalg.norm(z)))  # noqa: E731
    for val0, start, method in candidates:
        x, val = np.asarray(start, dtype=float), val0
        for _ in range(20):
            sol = minimize(obj, x, method="BFGS", options={"gtol": 1e-12})
            z = sol.x / np.linalg.norm(sol.x)
            v = float(q(z))
            if not v > val:
                break
            x, val = z, v
        if val > best[0]:
            best = (val, x, method)
    return best[0], np.asarray(best[1], dtype=float), n_samples, best[2]


def _maximise_scalar_ray(spec, p, n):
    # Q(y) / y^4 = 2 F(y) / y + (p - 1) (G(y) / y)^2 for scalar systems
    r = np.logspace(-6, 6, int(n))
    y = np.concatenate((-r[::-1], r))[:, None]
    vals = quadratic_form(spec, p, y) / y[:, 0] ** 4
    i = int(np.argmax(vals))
    return float(vals[i]), y[i], len(y)


def assumption_margin(spec: SystemSpec, p=2.0, resolution=None, n_random=10_000,
                      seed=0) -> LyapunovReport:
    """Largest ``lambda`` with ``Q(y) <= -lambda |y|^4`` on the tested points.

    Scalar linear systems use the closed form
    ``lambda = -(2 a_eff + (p - 1) b_eff^2)``. Other linear systems search a
    deterministic sphere grid and ``n_random`` seeded random unit vectors,
    then polish the best points by quasi-Newton steps. Scalar catalogue systems are not
    homogeneous and are scanned along the real line.
    """
    p = _check_p(p)
    if spec.is_linear and spec.is_scalar:
        a, b, c, d = spec.scalar_coefficients()
        ae, be = a + c, b + d
        lam = -(2 * ae + (p - 1) * be * be)
        return LyapunovReport(p, float(lam), np.array([1.0]), 1, SCALAR_CLOSED_FORM, spec.K)
    if spec.is_linear:
        qmax, y, n, method = _maximise_linear(spec, p, resolution, n_random, seed)
        return LyapunovReport(p, -qmax + 0.0, y, n, method, spec.K)
    if spec.is_scalar:
        qmax, y, n = _maximise_scalar_ray(spec, p, resolution or 20_001)
        return LyapunovReport(p, -qmax, y, n, SCALAR_RAY_GRID, spec.K)
    raise UnsupportedError("the margin is defined only for linear or scalar systems")


def generator_value(spec: SystemSpec, p, y) -> float:
    """``LV(y)`` for ``V = |y|^p`` under the folded SDE coefficients."""
    p = _check_p(p)
    y = np.asarray(y, dtype=float).reshape(-1)
    r2 = float(y @ y)
    if r2 == 0.0:
        if p < 4:
            raise DomainError("LV is undefined at y = 0 for p < 4")
        return 0.0
    F, G = _folded(spec, y)
    r = math.sqrt(r2)
    yG = y @ G
    return float(p * r ** (p - 2) * (y @ F) + 0.5 * p * r ** (p - 2) * np.sum(G * G)
                 + 0.5 * p * (p - 2) * r ** (p - 4) * float(yG @ yG))


def lyapunov_decay_bound(lam, p, x0, t):
    """``|x0|^p exp(-lambda p t / 2)``; needs ``lambda > 0``."""
    p = _check_p(p)
    if not lam > 0:
        raise NoCertificateError(f"margin lambda = {lam} is not positive; no decay is certified")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("t must be nonnegative")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    return float(np.linalg.norm(x0)) ** p * np.exp(-0.5 * lam * p * t)
