"""Explicit stability-transfer constants and certificates.

Four certificates move an exponential pth-moment decay pair between the
four systems::

    Q1: SDEPCA -> SDE        condition on tau
    Q2: SDE    -> EM-SDE     condition on h
    Q3: EM-SDE -> EM-SDEPCA  condition on tau
    Q4: EM-SDEPCA -> SDEPCA  condition on h

The constants grow like ``exp(K T)`` for large horizons and the admissible
``tau`` and ``h`` are often far below the smallest double, so every quantity
that can leave the floating point range (``tau``, ``h``, ``M``, ``n_hat`` and
the constants themselves) is carried as a natural logarithm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from .errors import (DomainError, MonotonicityError, NoCertificateError,
                     UnrepresentableCertificateError, ValidationError)
from .report import format_from_log

Q1, Q2, Q3, Q4 = "Q1", "Q2", "Q3", "Q4"
KINDS = (Q1, Q2, Q3, Q4)
TAU_KINDS = (Q1, Q3)
H_KINDS = (Q2, Q4)
MAX_N_HAT = 2**62
LN2 = math.log(2.0)
LN3 = math.log(3.0)
# exp() of anything below this underflows; above it a float is usable
_REPRESENTABLE = -700.0

CERTIFICATE_COLUMNS = ("kind", "p", "K", "tau", "h", "delta", "verdict", "lhs_log", "rhs_log",
                       "n_hat", "implied_M_log", "implied_gamma")

# source node -> (certificate, target node)
CYCLE = {"SDE": (Q2, "EMSDE"), "EMSDE": (Q3, "EMSDEPCA"),
         "EMSDEPCA": (Q4, "SDEPCA"), "SDEPCA": (Q1, "SDE")}
NODES = tuple(CYCLE)


def _check_pK(p, K):
    p, K = float(p), float(K)
    if not (math.isfinite(p) and p >= 2):
        raise DomainError(f"p must be >= 2, got {p}")
    if not (math.isfinite(K) and K >= 0):
        raise DomainError(f"K must be nonnegative and finite, got {K}")
    return p, K


def _log(x):
    return math.log(x) if x > 0 else -math.inf


def log_expm1(x):
    """``log(exp(x) - 1)`` for ``x >= 0`` without overflow."""
    if x <= 0:
        return -math.inf
    if x > 40.0:
        return x + math.log1p(-math.exp(-x))
    return math.log(math.expm1(x))


def _log_pow_K(K, e):
    return e * math.log(K) if K > 0 else -math.inf


def _hk(p, K):
    # exponent rate shared by H1, H3 and the implied M2, L2
    return 2 * p * K * (1 + (p - 1) * K)


# Constants: every function takes logs of tau so tiny delays are allowed.

def log_C1(p, K, log_tau):
    return ((2 * p - 1) * LN2 + _log_pow_K(K, p)
            + np.logaddexp(0.5 * p * log_tau, 0.5 * p * math.log(p * (p - 1) / 2)))


def log_C2(p, K, log_tau):
    return (p - 1) * LN2 + log_C1(p, K, log_tau) - math.log(p)


def C3(p, K):
    return (4 * p - 1 + 2 ** (p - 1) + 2 * (p - 1) * (2 * p - 1 + 2 ** (p - 1)) * K) * K


def log_H1(p, K, T):
    return _hk(p, K) * T


log_H3 = log_H1


def log_H4(p, K, log_tau, T):
    return log_C2(p, K, log_tau) + log_expm1(C3(p, K) * T)


def log_H6(p, K, T):
    return (math.log1p(4 * (p - 1) * K) + 2 * p * LN2 + _log_pow_K(K, p + 1)
            + K * T * (5 * p - 1 + 4 * (p - 1) * (2 * p - 1) * K) + _log(T))


def log_H7(p, K, T):
    return ((2 * p - 1) * LN2 + _log_pow_K(K, p)
            + np.logaddexp(0.5 * p * _log(T), 0.5 * p * math.log(p * (p - 1) / 2))
            + _hk(p, K) * T)


def log_H8(p, K, T):
    return float(np.logaddexp(log_H6(p, K, T), log_H7(p, K, T)))


def log_H9(p, K, T):
    return (math.log1p(4 * (p - 1) * K) + (2 * p + 1) * LN2 + _log_pow_K(K, p + 1)
            + 2 * K * T * (3 * p - 1 + (p - 1) * (5 * p - 4) * K) + _log(T))


@dataclass(frozen=True)
class ConstantTable:
    """All constants at ``(p, K, tau, T)``; ``log_*`` fields are natural logs.

    ``log_H4`` uses ``T`` as its horizon and ``tau`` for its ``C2`` factor.
    A zero constant (``K = 0``) has log ``-inf``.
    """

    p: float
    K: float
    tau: float
    T: float
    log_C1: float
    log_C2: float
    C3: float
    log_H1: float
    log_H3: float
    log_H4: float
    log_H6: float
    log_H7: float
    log_H8: float
    log_H9: float

    def value(self, name):
        """Plain value of a constant (may overflow to ``inf``)."""
        if name == "C3":
            return self.C3
        with np.errstate(over="ignore"):
            return float(np.exp(getattr(self, "log_" + name)))


def constant_table(p, K, tau, T) -> ConstantTable:
    p, K = _check_pK(p, K)
    tau, T = float(tau), float(T)
    if not (tau > 0 and math.isfinite(tau)):
        raise DomainError(f"tau must be positive, got {tau}")
    if not (T > 0 and math.isfinite(T)):
        raise DomainError(f"T must be positive, got {T}")
    lt = math.log(tau)
    return ConstantTable(
        p=p, K=K, tau=tau, T=T,
        log_C1=float(log_C1(p, K, lt)), log_C2=float(log_C2(p, K, lt)), C3=C3(p, K),
        log_H1=log_H1(p, K, T), log_H3=log_H3(p, K, T), log_H4=float(log_H4(p, K, lt, T)),
        log_H6=log_H6(p, K, T), log_H7=float(log_H7(p, K, T)), log_H8=log_H8(p, K, T),
        log_H9=log_H9(p, K, T),
    )


# Parameters and certificates ---------------------------------------------------

@dataclass(frozen=True)
class CertificateParams:
    """Inputs to a certificate, with ``tau``, ``h`` and ``M`` held as logs.

    ``(M, gamma)`` is the decay pair assumed for the source system: (M1,
    gamma1) for Q1, (M2, gamma2) for Q2, (L2, lambda2) for Q3 and (L1,
    lambda1) for Q4. ``max_n_hat=None`` lifts the integer range limit on
    ``n_hat`` and lets it be carried as a logarithm.
    """

    p: float
    K: float
    log_M: float
    gamma: float
    log_tau: float | None = None
    log_h: float | None = None
    delta: float = 0.5
    max_n_hat: int | None = MAX_N_HAT

    @classmethod
    def make(cls, p, K, M=None, gamma=None, tau=None, h=None, delta=0.5, *, log_M=None,
             log_tau=None, log_h=None, max_n_hat=MAX_N_HAT):
        def lg(x, lx, name):
            if lx is not None:
                return float(lx)
            if x is None:
                return None
            x = float(x)
            if not x > 0:
                raise DomainError(f"{name} must be positive, got {x}")
            return math.log(x)

        log_M = lg(M, log_M, "M")
        if log_M is None or gamma is None:
            raise ValidationError("an assumed decay pair (M, gamma) is required")
        return cls(float(p), float(K), log_M, float(gamma), lg(tau, log_tau, "tau"),
                   lg(h, log_h, "h"), float(delta), max_n_hat)

    @property
    def tau(self):
        return math.exp(self.log_tau) if self.log_tau is not None else None

    @property
    def h(self):
        return math.exp(self.log_h) if self.log_h is not None else None

    @property
    def M(self):
        return math.exp(self.log_M) if self.log_M < 709.0 else math.inf

    def with_tau(self, tau=None, *, log_tau=None):
        return replace(self, log_tau=math.log(tau) if log_tau is None else float(log_tau))

    def with_h(self, h=None, *, log_h=None):
        return replace(self, log_h=math.log(h) if log_h is None else float(log_h))


@dataclass(frozen=True)
class Certificate:
    """Outcome of one certificate check.

    ``lhs_log < rhs_log`` is the decisive inequality. For Q1 and Q3 it
    reads ``log(R - delta) < log(1 - delta)`` and ``log_R`` holds ``log R``;
    for Q2 and Q4 it reads ``log(c h^{p/2}) < log(e^{-x/2} - e^{-3x/4})``.
    ``n_hat`` is an exact integer when it fits, else None with ``log_n_hat``
    set. The implied pair is NaN when the verdict is fail.
    """

    kind: str
    params: CertificateParams
    passed: bool
    lhs_log: float
    rhs_log: float
    n_hat: int | None
    log_n_hat: float | None
    implied_log_M: float
    implied_gamma: float
    log_R: float | None = None
    horizon: float | None = None  # n_hat tau, or T for Q2
    extras: dict = field(default_factory=dict)

    @property
    def verdict(self):
        return "pass" if self.passed else "fail"

    @property
    def margin(self):
        return self.lhs_log - self.rhs_log

    def row(self):
        pr = self.params
        n_hat = (str(self.n_hat) if self.n_hat is not None
                 else (format_from_log(self.log_n_hat) if self.log_n_hat is not None else ""))
        return (self.kind, pr.p, pr.K,
                format_from_log(pr.log_tau) if pr.log_tau is not None else "",
                format_from_log(pr.log_h) if pr.log_h is not None else "",
                pr.delta if self.kind in TAU_KINDS else "",
                self.verdict, float(self.lhs_log), float(self.rhs_log), n_hat,
                float(self.implied_log_M), float(self.implied_gamma))


def _block_count(Z, log_tau, rule, max_n_hat):
    """``n_hat`` for the horizon ``Z`` on blocks of length ``tau``.

    ``rule`` is ``ceil`` (smallest n with n tau >= Z) or ``floor+1``. Returns
    ``(n_hat or None, log n_hat, n_hat tau)``; ``n_hat >= 1`` always.
    """
    if not Z > 0:
        return 1, 0.0, math.exp(log_tau)
    if log_tau > _REPRESENTABLE:
        tau = Fraction(math.exp(log_tau))
        q = Fraction(Z) / tau
        n = math.ceil(q) if rule == "ceil" else math.floor(q) + 1
        n = max(n, 1)
        if max_n_hat is not None and n > max_n_hat:
            raise UnrepresentableCertificateError(
                f"n_hat = {n} exceeds the limit {max_n_hat}; pass max_n_hat=None to allow it")
        return n, math.log(n), float(n * tau)
    if max_n_hat is not None:
        raise UnrepresentableCertificateError(
            f"n_hat ~ exp({math.log(Z) - log_tau:.6g}) exceeds the limit {max_n_hat}")
    # n_hat tau lies within tau of Z, far below double resolution here
    return None, math.log(Z) - log_tau, Z


def _need(value, name, kind):
    if value is None:
        raise ValidationError(f"{kind} needs {name}")
    return value


def _validate(kind, pr):
    if kind not in KINDS:
        raise ValidationError(f"unknown certificate kind {kind!r}; choose from {KINDS}")
    _check_pK(pr.p, pr.K)
    if not (math.isfinite(pr.gamma) and pr.gamma > 0):
        raise DomainError(f"assumed decay rate must be positive, got {pr.gamma}")
    if not math.isfinite(pr.log_M):
        raise DomainError("assumed M must be positive and finite")
    if kind in TAU_KINDS and not 0 < pr.delta < 1:
        raise DomainError(f"delta must lie in (0, 1), got {pr.delta}")
    if kind in (Q1, Q3, Q4):
        _need(pr.log_tau, "tau", kind)
    if kind in H_KINDS:
        _need(pr.log_h, "h", kind)


# Decisive terms, separated from the checks so the solvers can reuse them.

def _q1_horizon(pr):
    return max(((pr.p - 1) * LN2 + pr.log_M - math.log(pr.delta)) / pr.gamma, 0.0)


def _q1_term(pr, log_tau):
    p, K = pr.p, pr.K
    A = _q1_horizon(pr)
    tau = math.exp(log_tau)
    return float((p - 1) * LN2 + log_C2(p, K, log_tau) + 0.5 * p * log_tau
                 + log_expm1(C3(p, K) * (A + tau)))


def _q3_horizon(pr):
    return max(((pr.p - 1) * LN2 + pr.log_M - math.log(pr.delta)) / pr.gamma, 0.0)


def _q3_term(pr, log_tau):
    p, K = pr.p, pr.K
    B = _q3_horizon(pr)
    tau = math.exp(log_tau)
    return float((p - 1) * LN2 + log_H4(p, K, log_tau, 2 * (B + tau)) + 0.5 * p * log_tau)


def _gap_log(x):
    """``log(e^{-x/2} - e^{-3x/4})`` for ``x > 0``."""
    if x <= 0:
        return -math.inf
    return -0.5 * x + math.log(-math.expm1(-0.25 * x))


def _q4_setup(pr):
    p = pr.p
    Z = 4 * ((p - 1) * LN3 + pr.log_M) / pr.gamma
    n, log_n, nt = _block_count(Z, pr.log_tau, "floor+1", pr.max_n_hat)
    coef = (p - 1) * LN3 + log_H8(p, pr.K, 2 * nt)
    return n, log_n, nt, coef, _gap_log(pr.gamma * nt)


def _q2_setup(pr):
    p = pr.p
    T = 1 + 4 * ((p - 1) * LN2 + pr.log_M) / pr.gamma
    if not T > 0:
        raise DomainError(f"the horizon T = {T} is not positive; the assumed M is too small")
    coef = (p - 1) * LN2 + log_H9(p, pr.K, 2 * T)
    return T, coef, _gap_log(pr.gamma * T)


def check_certificate(kind, params: CertificateParams) -> Certificate:
    """Evaluate certificate ``kind`` and its implied decay pair."""
    pr = params
    _validate(kind, pr)
    p, K = pr.p, pr.K
    nan = math.nan
    if kind in TAU_KINDS:
        if kind == Q1:
            Z = _q1_horizon(pr)
            n, log_n, nt = _block_count(Z, pr.log_tau, "ceil", pr.max_n_hat)
            lhs = _q1_term(pr, pr.log_tau)
        else:
            Z = _q3_horizon(pr)
            n, log_n, nt = _block_count(Z, pr.log_tau, "floor+1", pr.max_n_hat)
            lhs = _q3_term(pr, pr.log_tau)
        rhs = math.log1p(-pr.delta)
        log_R = float(np.logaddexp(math.log(pr.delta), lhs))
        passed = lhs < rhs
        if passed:
            g = -log_R / nt
            if kind == Q1:
                lm = (g + _hk(p, K)) * nt
            else:
                lm = log_H3(p, K, nt) + g * nt
        else:
            g = lm = nan
        return Certificate(kind, pr, passed, lhs, rhs, n, log_n, lm, g, log_R, nt)
    lh = pr.log_h
    if kind == Q4:
        n, log_n, nt, coef, rhs = _q4_setup(pr)
        lhs = coef + 0.5 * p * lh
        passed = lhs < rhs
        g = 0.5 * pr.gamma if passed else nan
        lm = log_H1(p, K, nt) + 0.5 * pr.gamma * nt if passed else nan
        return Certificate(kind, pr, passed, lhs, rhs, n, log_n, lm, g, None, nt)
    T, coef, rhs = _q2_setup(pr)
    lhs = coef + 0.5 * p * lh
    passed = lhs < rhs
    g = 0.5 * pr.gamma if passed else nan
    lm = 0.5 * pr.gamma * T + _hk(p, K) * T if passed else nan
    return Certificate(kind, pr, passed, lhs, rhs, None, None, lm, g, None, T)


# Threshold solving -----------------------------------------------------------

@dataclass(frozen=True)
class Threshold:
    """Largest admissible ``tau`` (Q1, Q3) or ``h`` (Q2, Q4), as a log.

    The value lies inside the pass region, a few ulps (closed form) or a
    relative 1e-12 (bisection) below the boundary; the condition fails
    beyond it.
    For Q4, ``m`` is the smallest integer with ``tau / m <= h*`` (or
    ``log_m`` when it does not fit a float). ``scan`` is the monotonicity
    table used before bisection.
    """

    kind: str
    log_value: float
    method: str
    m: int | None = None
    log_m: float | None = None
    scan: tuple = ()

    @property
    def value(self):
        if self.log_value == math.inf:
            return math.inf
        return math.exp(self.log_value)

    def describe(self):
        return format_from_log(self.log_value)


def _margin_fn(kind, pr):
    if kind == Q1:
        rhs = math.log1p(-pr.delta)
        return lambda lt: _q1_term(pr, lt) - rhs
    if kind == Q3:
        rhs = math.log1p(-pr.delta)
        return lambda lt: _q3_term(pr, lt) - rhs
    if kind == Q4:
        _, _, _, coef, rhs = _q4_setup(pr)
    else:
        _, coef, rhs = _q2_setup(pr)
    return lambda lh: coef + 0.5 * pr.p * lh - rhs


def _bracket(margin, limit=2.0**40):
    """Find ``lo < hi`` with ``margin(lo) < 0 <= margin(hi)`` in log space."""
    m0 = margin(0.0)
    if m0 < 0:
        lo, step = 0.0, 1.0
        while True:
            hi = lo + step
            if margin(hi) >= 0:
                return lo, hi
            if hi > 700.0:
                return None  # no threshold inside the floating point range
            lo, step = hi, step * 2
    hi, step = 0.0, 1.0
    while True:
        lo = hi - step
        if margin(lo) < 0:
            return lo, hi
        if step > limit:
            raise NoCertificateError("condition fails for every tau tried")
        hi, step = lo, step * 2


def _scan(margin, lo, hi, n=33):
    xs = np.linspace(lo, hi, n)
    table = [(float(x), float(margin(x))) for x in xs]
    vals = [m for _, m in table]
    for a, b in zip(vals, vals[1:]):
        if b < a - 1e-9 * max(1.0, abs(a)):
            raise MonotonicityError("condition is not monotone on the bracket", table)
    return tuple(table)


def _bisect(margin, lo, hi, tol=1e-12):
    # invariant: margin(lo) < 0 <= margin(hi); an absolute width in log
    # space is a relative tolerance on the threshold itself
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if margin(mid) < 0:
            lo = mid
        else:
            hi = mid
    return lo, hi


def solve_threshold(kind, params: CertificateParams, method="auto") -> Threshold:
    """Largest ``tau`` or ``h`` for which certificate ``kind`` passes.

    Q1 and Q3 are inverted by bracketing in ``log tau``, a coarse
    monotonicity scan and bisection. Q2 and Q4 have a closed form because
    ``h`` enters only through ``h^{p/2}``; ``method="bisect"`` solves them
    numerically instead, for cross-checking. ``params.tau`` is ignored for
    Q1 and Q3 and ``params.h`` for Q2 and Q4.
    """
    pr = params
    if kind in TAU_KINDS:
        probe = replace(pr, log_tau=0.0)
    else:
        probe = replace(pr, log_h=0.0)
    _validate(kind, probe)
    if pr.K == 0:
        return Threshold(kind, math.inf, "trivial")
    margin = _margin_fn(kind, probe)
    closed = kind in H_KINDS and method in ("auto", "closed")
    if closed:
        if kind == Q4:
            _, _, _, coef, rhs = _q4_setup(probe)
        else:
            _, coef, rhs = _q2_setup(probe)
        lv = (rhs - coef) * 2.0 / pr.p
        # step just inside the pass region despite rounding in lhs and rhs
        step = math.ulp(lv)
        while not coef + 0.5 * pr.p * lv < rhs:
            lv -= step
            step *= 2
        scan = ()
        how = "closed-form"
    else:
        br = _bracket(margin)
        if br is None:
            return Threshold(kind, math.inf, "unbounded")
        scan = _scan(margin, *br)
        lo, hi = _bisect(margin, *br)
        lv = lo
        how = "bisection"
    m = log_m = None
    if kind == Q4:
        m, log_m = substeps_for(pr.log_tau, lv)
    return Threshold(kind, float(lv), how, m, log_m, scan)


def substeps_for(log_tau, log_h):
    """Smallest ``m >= 1`` with ``tau / m <= h``, as ``(m or None, log m)``."""
    r = log_tau - log_h
    if r <= 0:
        return 1, 0.0
    if log_tau > _REPRESENTABLE and log_h > _REPRESENTABLE and r < 600:
        m = math.ceil(Fraction(math.exp(log_tau)) / Fraction(math.exp(log_h)))
        return m, math.log(m)
    return None, r


def best_delta(kind, params: CertificateParams, deltas=None):
    """Grid-search ``delta`` for Q1 or Q3.

    Returns the passing certificate with the largest implied rate, or the
    failing one with the smallest margin when none pass.
    """
    if kind not in TAU_KINDS:
        raise ValidationError("delta only enters Q1 and Q3")
    if deltas is None:
        deltas = np.round(np.linspace(0.05, 0.95, 19), 10)
    best = None
    for dlt in deltas:
        c = check_certificate(kind, replace(params, delta=float(dlt)))
        key = (c.passed, c.implied_gamma if c.passed else -c.margin)
        if best is None or key > best[0]:
            best = (key, c)
    return best[1]


# Closing the cycle -------------------------------------------------------------

@dataclass(frozen=True)
class ChainResult:
    """Certificates around the full cycle at one common ``(tau, h)``."""

    start: str
    log_tau: float
    log_h: float
    m: int | None
    log_m: float
    certificates: tuple
    rounds: int

    @property
    def passed(self):
        return all(c.passed for c in self.certificates)

    def rows(self):
        return [c.row() for c in self.certificates]


def chain_certificates(p, K, M, gamma, start="SDE", delta=0.5, log_tau=0.0, *, log_M=None,
                       max_rounds=200) -> ChainResult:
    """Transfer a decay pair around all four systems.

    Starting from the pair ``(M, gamma)`` of the ``start`` system, the
    certificates are applied in cycle order. Whenever a delay condition
    fails, ``tau`` is halved below its threshold and the cycle is repeated,
    until one pass needs no change. The step ``h = tau / m`` is then chosen
    below half of every step threshold and all four certificates are
    re-checked with the final ``(tau, h)``.
    """
    if start not in CYCLE:
        raise ValidationError(f"start must be one of {NODES}")
    lm0 = math.log(M) if log_M is None else float(log_M)
    lt = float(log_tau)
    for rounds in range(1, max_rounds + 1):
        node, lm, g = start, lm0, float(gamma)
        changed = False
        h_bounds = []
        for _ in range(4):
            kind, nxt = CYCLE[node]
            pr = CertificateParams(float(p), float(K), lm, g, lt, None, delta, None)
            if kind in TAU_KINDS:
                th = solve_threshold(kind, pr)
                if lt >= th.log_value:
                    lt = th.log_value - LN2
                    changed = True
                    break
                c = check_certificate(kind, pr)
            else:
                th = solve_threshold(kind, pr)
                h_bounds.append(th.log_value)
                c = check_certificate(kind, pr.with_h(log_h=th.log_value - LN2))
            lm, g, node = c.implied_log_M, c.implied_gamma, nxt
        if not changed:
            break
    else:
        raise NoCertificateError(f"the cycle did not settle after {max_rounds} rounds")
    lh = min([lt] + [b - LN2 for b in h_bounds])
    m, log_m = substeps_for(lt, lh)
    lh = lt - log_m if m is None else lt - math.log(m)
    if m is not None and lt > _REPRESENTABLE:
        lh = math.log(math.exp(lt) / m)
    certs = []
    node, lm, g = start, lm0, float(gamma)
    for _ in range(4):
        kind, nxt = CYCLE[node]
        pr = CertificateParams(float(p), float(K), lm, g, lt, lh, delta, None)
        c = check_certificate(kind, pr)
        certs.append(c)
        if not c.passed:
            break
        lm, g, node = c.implied_log_M, c.implied_gamma, nxt
    return ChainResult(start, lt, lh, m, log_m, tuple(certs), rounds)
