"""Coefficient systems and time grids.

A system is the quadruple ``(f, g, u1, u2)``: instantaneous drift and
diffusion plus the drift and diffusion that act on the state frozen at the
start of the current delay block. All four maps vanish at the origin and
share one global Lipschitz constant ``K``.

Two kinds are supported:

``linear``
    ``f(x) = A x``, ``g(x)[:, i] = B_i x``, ``u1(x) = C x``,
    ``u2(x)[:, i] = D_i x``.
``scalar-bounded-nonlinear``
    ``d = m_bm = 1`` and each map is ``k * phi(x)`` with ``phi`` drawn from
    a small catalogue of functions with slope bounded by one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, UnsupportedError, ValidationError

LINEAR = "linear"
SCALAR_NONLINEAR = "scalar-bounded-nonlinear"

# name -> (function, sup |phi'|)
CATALOGUE = {
    "linear": (lambda x: x, 1.0),
    "sin": (np.sin, 1.0),
    "tanh": (np.tanh, 1.0),
}


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SystemSpec:
    """Immutable coefficient system.

    Use :func:`make_linear_system` or :func:`make_scalar_system` rather than
    constructing this directly; they validate the inputs and certify ``K``.
    """

    d: int
    m_bm: int
    kind: str
    K: float
    A: np.ndarray | None = None
    Bs: np.ndarray | None = None  # (m_bm, d, d)
    C: np.ndarray | None = None
    Ds: np.ndarray | None = None  # (m_bm, d, d)
    maps: tuple = field(default=())  # ((name, scale),) * 4 for the scalar catalogue

    @property
    def is_linear(self) -> bool:
        return self.kind == LINEAR

    @property
    def is_scalar(self) -> bool:
        return self.d == 1 and self.m_bm == 1

    # Coefficient maps, vectorised over leading axes: x has shape (..., d).

    def f(self, x):
        x = np.asarray(x, dtype=float)
        if self.is_linear:
            return np.einsum("ij,...j->...i", self.A, x)
        return _catalogue_eval(self.maps[0], x)

    def g(self, x):
        x = np.asarray(x, dtype=float)
        if self.is_linear:
            return np.einsum("mij,...j->...im", self.Bs, x)
        return _catalogue_eval(self.maps[1], x)[..., None]

    def u1(self, x):
        x = np.asarray(x, dtype=float)
        if self.is_linear:
            return np.einsum("ij,...j->...i", self.C, x)
        return _catalogue_eval(self.maps[2], x)

    def u2(self, x):
        x = np.asarray(x, dtype=float)
        if self.is_linear:
            return np.einsum("mij,...j->...im", self.Ds, x)
        return _catalogue_eval(self.maps[3], x)[..., None]

    def folded_matrices(self):
        """Return ``(A + C, [B_i + D_i])`` for a linear system."""
        if not self.is_linear:
            raise UnsupportedError("folded matrices exist only for linear systems")
        return self.A + self.C, self.Bs + self.Ds

    def scalar_coefficients(self):
        """Return ``(a, b, c, d)`` of a scalar linear system."""
        if not (self.is_linear and self.is_scalar):
            raise UnsupportedError("operation requires a scalar linear system")
        return (float(self.A[0, 0]), float(self.Bs[0, 0, 0]),
                float(self.C[0, 0]), float(self.Ds[0, 0, 0]))

    def describe(self) -> dict:
        """Plain-data description, the inverse of :func:`system_from_description`."""
        if self.is_linear:
            return {
                "kind": LINEAR,
                "A": self.A.tolist(),
                "B": self.Bs.tolist(),
                "C": self.C.tolist(),
                "D": self.Ds.tolist(),
            }
        names = ("f", "g", "u1", "u2")
        out = {"kind": SCALAR_NONLINEAR}
        out.update({n: f"{name}:{scale!r}" for n, (name, scale) in zip(names, self.maps)})
        return out


def _catalogue_eval(entry, x):
    name, scale = entry
    fn, _ = CATALOGUE[name]
    return scale * fn(x)


def _as_matrix_stack(mats, name):
    arr = np.asarray(mats, dtype=float)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ShapeError(f"{name} must be a sequence of square matrices")
    return arr


def make_linear_system(A, Bs, C, Ds) -> SystemSpec:
    """Build a linear system and certify its Lipschitz constant.

    Parameters
    ----------
    A, C : array_like, shape (d, d)
        Drift and delayed-drift matrices.
    Bs, Ds : array_like, shape (m_bm, d, d)
        Diffusion and delayed-diffusion matrices, one per Brownian component.
        A single ``(d, d)`` matrix is accepted as ``m_bm = 1``.
    """
    A = np.asarray(A, dtype=float)
    C = np.asarray(C, dtype=float)
    Bs = _as_matrix_stack(Bs, "Bs")
    Ds = _as_matrix_stack(Ds, "Ds")
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
        raise ShapeError(f"A must be square, got shape {A.shape}")
    d = A.shape[0]
    if C.shape != (d, d):
        raise ShapeError(f"C must have shape {(d, d)}, got {C.shape}")
    if Bs.shape[1:] != (d, d) or Ds.shape[1:] != (d, d):
        raise ShapeError("diffusion matrices must be d x d")
    if Bs.shape[0] != Ds.shape[0] or Bs.shape[0] < 1:
        raise ShapeError("Bs and Ds must have the same length m_bm >= 1")
    for name, arr in (("A", A), ("Bs", Bs), ("C", C), ("Ds", Ds)):
        if not np.all(np.isfinite(arr)):
            raise ValidationError(f"{name} has nonfinite entries")
    spec = SystemSpec(d=d, m_bm=Bs.shape[0], kind=LINEAR, K=0.0,
                      A=_frozen(A), Bs=_frozen(Bs), C=_frozen(C), Ds=_frozen(Ds))
    return _with_k(spec)


def make_scalar_linear(a, b, c=0.0, d=0.0) -> SystemSpec:
    """Shorthand for the scalar linear system ``(a x, b x, c x, d x)``."""
    return make_linear_system([[a]], [[[b]]], [[c]], [[[d]]])


def make_scalar_system(f, g, u1=("linear", 0.0), u2=("linear", 0.0)) -> SystemSpec:
    """Build a scalar system from catalogue entries ``(name, scale)``.

    ``name`` is one of ``linear``, ``sin``, ``tanh``. Arbitrary callables are
    rejected because their Lipschitz constant cannot be certified.
    """
    maps = []
    for entry in (f, g, u1, u2):
        if callable(entry):
            raise UnsupportedError("arbitrary callables are not accepted; use the catalogue")
        name, scale = entry
        if name not in CATALOGUE:
            raise ValidationError(f"unknown catalogue map {name!r}; choose from {sorted(CATALOGUE)}")
        scale = float(scale)
        if not math.isfinite(scale):
            raise ValidationError("catalogue scale must be finite")
        maps.append((name, scale))
    if all(name == "linear" for name, _ in maps):
        return make_scalar_linear(*(s for _, s in maps))
    spec = SystemSpec(d=1, m_bm=1, kind=SCALAR_NONLINEAR, K=0.0, maps=tuple(maps))
    return _with_k(spec)


def _with_k(spec):
    object.__setattr__(spec, "K", lipschitz_bound(spec))
    return spec


def lipschitz_bound(spec: SystemSpec) -> float:
    """Smallest Lipschitz constant this package certifies for ``spec``.

    For linear systems the drift maps contribute their spectral norms and the
    diffusion maps ``sqrt(sum_i ||B_i||_2^2)``, which bounds the Frobenius
    Lipschitz constant. Catalogue maps contribute ``|scale|`` times their
    slope bound. The common constant is the maximum of the four.
    """
    if spec.is_linear:
        norm = lambda M: float(np.linalg.norm(M, 2))  # noqa: E731
        return max(
            norm(spec.A),
            norm(spec.C),
            math.sqrt(sum(norm(B) ** 2 for B in spec.Bs)),
            math.sqrt(sum(norm(D) ** 2 for D in spec.Ds)),
        )
    return max(abs(scale) * CATALOGUE[name][1] for name, scale in spec.maps)


def eval_coefficients(spec: SystemSpec, x, x_delayed):
    """Evaluate ``(f(x) + u1(x_delayed), g(x) + u2(x_delayed))``.

    Returns the drift vector of length ``d`` and the ``d x m_bm`` diffusion
    matrix.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    x_delayed = np.asarray(x_delayed, dtype=float).reshape(-1)
    if x.shape != (spec.d,) or x_delayed.shape != (spec.d,):
        raise ShapeError(f"state vectors must have length {spec.d}")
    return spec.f(x) + spec.u1(x_delayed), spec.g(x) + spec.u2(x_delayed)


def max_lipschitz_ratio(spec: SystemSpec, n_pairs=1000, radius=10.0, seed=0):
    """Largest observed ``|phi(x) - phi(y)| / |x - y|`` over the four maps.

    Points are drawn uniformly from the ball of the given radius. Useful as
    an empirical check of :func:`lipschitz_bound`.
    """
    rng = np.random.default_rng(seed)

    def ball(n):
        v = rng.standard_normal((n, spec.d))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        r = radius * rng.random(n) ** (1.0 / spec.d)
        return v * r[:, None]

    x, y = ball(n_pairs), ball(n_pairs)
    dist = np.linalg.norm(x - y, axis=1)
    worst = 0.0
    for fn in (spec.f, spec.u1):
        worst = max(worst, float(np.max(np.linalg.norm(fn(x) - fn(y), axis=1) / dist)))
    for fn in (spec.g, spec.u2):
        diff = fn(x) - fn(y)
        worst = max(worst, float(np.max(np.sqrt(np.sum(diff**2, axis=(1, 2))) / dist)))
    return worst


def system_from_description(desc: dict) -> SystemSpec:
    """Inverse of :meth:`SystemSpec.describe`."""
    kind = desc.get("kind", LINEAR)
    if kind == LINEAR:
        try:
            return make_linear_system(desc["A"], desc["B"], desc["C"], desc["D"])
        except KeyError as exc:
            raise ValidationError(f"linear system needs A, B, C, D (missing {exc})") from None
    if kind == SCALAR_NONLINEAR:
        maps = []
        for key in ("f", "g", "u1", "u2"):
            text = desc.get(key, "linear:0.0")
            name, _, scale = str(text).partition(":")
            try:
                maps.append((name.strip(), float(scale)))
            except ValueError:
                raise ValidationError(f"bad catalogue entry {key} = {text!r}") from None
        return make_scalar_system(*maps)
    raise ValidationError(f"unknown system kind {kind!r}")


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid ``t_n = n h`` with ``h = tau / m_sub``.

    The horizon is rounded up to a whole number of delay blocks, so grid
    index ``n`` decomposes as ``n = k m_sub + l`` with ``0 <= l < m_sub``.
    """

    tau: float
    m_sub: int
    horizon: float

    def __post_init__(self):
        if not (math.isfinite(self.tau) and self.tau > 0):
            raise ValidationError(f"tau must be positive and finite, got {self.tau}")
        if int(self.m_sub) != self.m_sub or self.m_sub < 1:
            raise ValidationError(f"m_sub must be a positive integer, got {self.m_sub}")
        if not (math.isfinite(self.horizon) and self.horizon > 0):
            raise ValidationError(f"horizon must be positive and finite, got {self.horizon}")
        object.__setattr__(self, "m_sub", int(self.m_sub))

    @property
    def h(self) -> float:
        return self.tau / self.m_sub

    @property
    def n_blocks(self) -> int:
        return max(1, math.ceil(self.horizon / self.tau - 1e-9))

    @property
    def n_steps(self) -> int:
        return self.n_blocks * self.m_sub

    @property
    def T(self) -> float:
        """Horizon actually covered, a whole number of blocks."""
        return self.n_blocks * self.tau

    def times(self, stride=1):
        return np.arange(0, self.n_steps + 1, stride) * self.h

    def block_of(self, n):
        """Return ``(k, l)`` with ``n = k m_sub + l``."""
        return divmod(int(n), self.m_sub)

    def block_start(self, n):
        return (int(n) // self.m_sub) * self.m_sub

    def refine(self, r):
        """Same delay and horizon with ``r`` times as many substeps."""
        return GridSpec(self.tau, self.m_sub * int(r), self.horizon)
