"""Pure numpy implementation of the hot kernels.

This module defines the reference semantics; the compiled module
``_ckernels`` implements the same functions. Normal variates agree between
the two up to the last-ulp behaviour of the platform ``log``.
"""

import numpy as np

PHILOX_M0 = np.uint64(0xD2511F53)
PHILOX_M1 = np.uint64(0xCD9E8D57)
PHILOX_W0 = np.uint64(0x9E3779B9)
PHILOX_W1 = np.uint64(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)
_TWO_M52 = 2.0**-52

# Wichura AS241 (PPND16) coefficients, low to high order.
_A = (3.3871328727963666080e0, 1.3314166789178437745e2, 1.9715909503065514427e3,
      1.3731693765509461125e4, 4.5921953931549871457e4, 6.7265770927008700853e4,
      3.3430575583588128105e4, 2.5090809287301226727e3)
_B = (1.0, 4.2313330701600911252e1, 6.8718700749205790830e2, 5.3941960214247511077e3,
      2.1213794301586595867e4, 3.9307895800092710610e4, 2.8729085735721942674e4,
      5.2264952788528545610e3)
_C = (1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0,
      3.64784832476320460504e0, 1.27045825245236838258e0, 2.41780725177450611770e-1,
      2.27238449892691845833e-2, 7.74545014278341407640e-4)
_D = (1.0, 2.05319162663775882187e0, 1.67638483018380384940e0, 6.89767334985100004550e-1,
      1.48103976427480074590e-1, 1.51986665636164571966e-2, 5.47593808499534494600e-4,
      1.05075007164441684324e-9)
_E = (6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0,
      2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
      2.71155556874348757815e-5, 2.01033439929228813265e-7)
_F = (1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1, 1.48753612908506148525e-2,
      7.86869131145613259100e-4, 1.84631831751005468180e-5, 1.42151175831644588870e-7,
      2.04426310338993978564e-15)


def _horner(coeffs, r):
    acc = coeffs[7]
    for c in coeffs[6::-1]:
        acc = acc * r + c
    return acc


def philox4x32(c0, c1, c2, c3, k0, k1):
    """Philox4x32-10 block function on uint32 values held in uint64 arrays."""
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) for c in (c0, c1, c2, c3))
    k0 = np.asarray(k0, dtype=np.uint64)
    k1 = np.asarray(k1, dtype=np.uint64)
    for r in range(10):
        if r:
            k0 = (k0 + PHILOX_W0) & _MASK32
            k1 = (k1 + PHILOX_W1) & _MASK32
        p0 = PHILOX_M0 * c0
        p1 = PHILOX_M1 * c2
        c0, c1, c2, c3 = ((p1 >> _SHIFT32) ^ c1 ^ k0, p1 & _MASK32,
                          (p0 >> _SHIFT32) ^ c3 ^ k1, p0 & _MASK32)
    return c0, c1, c2, c3


def counter_uint64(seed, path_ids, index):
    """64 random bits for each ``(seed, path_id, index)``.

    Two consecutive indices share one Philox block: even indices take words
    0-1 and odd indices take words 2-3.
    """
    seed = np.uint64(seed)
    path_ids = np.asarray(path_ids, dtype=np.uint64)
    index = np.asarray(index, dtype=np.uint64)
    block = index >> np.uint64(1)
    w0, w1, w2, w3 = philox4x32(block & _MASK32, block >> _SHIFT32,
                                path_ids & _MASK32, path_ids >> _SHIFT32,
                                seed & _MASK32, seed >> _SHIFT32)
    odd = (index & np.uint64(1)).astype(bool)
    lo = np.where(odd, w2, w0)
    hi = np.where(odd, w3, w1)
    return lo | (hi << _SHIFT32)


def uniform_open(bits):
    """Map 64 random bits to the open interval (0, 1) using the top 52 bits."""
    return ((np.asarray(bits, dtype=np.uint64) >> np.uint64(12)).astype(np.float64) + 0.5) * _TWO_M52


def ndtri(u):
    """Inverse standard normal CDF, Wichura's AS241 (relative error ~1e-16)."""
    u = np.asarray(u, dtype=np.float64)
    q = u - 0.5
    out = np.empty_like(u)
    central = np.abs(q) <= 0.425
    if np.any(central):
        qc = q[central]
        r = 0.180625 - qc * qc
        out[central] = qc * _horner(_A, r) / _horner(_B, r)
    tail = ~central
    if np.any(tail):
        qt = q[tail]
        r = np.where(qt < 0.0, u[tail], 1.0 - u[tail])
        r = np.sqrt(-np.log(r))
        near = r <= 5.0
        val = np.empty_like(r)
        rn = r[near] - 1.6
        val[near] = _horner(_C, rn) / _horner(_D, rn)
        rf = r[~near] - 5.0
        val[~near] = _horner(_E, rf) / _horner(_F, rf)
        out[tail] = np.where(qt < 0.0, -val, val)
    return out


def normals(seed, path_ids, start_step, n_steps, m_bm):
    """Standard normals of shape ``(len(path_ids), n_steps, m_bm)``."""
    path_ids = np.asarray(path_ids, dtype=np.int64).astype(np.uint64)
    index = (np.arange(start_step * m_bm, (start_step + n_steps) * m_bm, dtype=np.uint64))
    bits = counter_uint64(seed, path_ids[:, None], index[None, :])
    return ndtri(uniform_open(bits)).reshape(len(path_ids), n_steps, m_bm)


def _step_linear(A, Bs, C, Ds, x, xd, dw, h):
    drift = np.einsum("ij,pj->pi", A, x) + np.einsum("ij,pj->pi", C, xd)
    diff = np.einsum("mij,pj->pim", Bs, x) + np.einsum("mij,pj->pim", Ds, xd)
    return x + drift * h + np.einsum("pim,pm->pi", diff, dw)


def em_linear(A, Bs, C, Ds, x0, dW, h, m_sub, delayed, threshold):
    """Integrate a batch of linear EM paths on given increments.

    Parameters
    ----------
    x0 : ndarray, shape (P, d)
    dW : ndarray, shape (P, N, m_bm)
    delayed : bool
        True for the piecewise-constant-argument scheme, where the delayed
        maps see the state at the start of the current block of ``m_sub``
        steps; False evaluates them at the current state.

    Returns
    -------
    states : ndarray, shape (P, N + 1, d)
        NaN from the first diverged index on.
    diverged : ndarray of int64, shape (P,)
        First index with ``|X_n| > threshold`` or nonfinite, else -1.
    """
    x0 = np.asarray(x0, dtype=float)
    P, N = dW.shape[0], dW.shape[1]
    d = x0.shape[1]
    states = np.empty((P, N + 1, d))
    states[:, 0] = x0
    diverged = np.full(P, -1, dtype=np.int64)
    alive = np.ones(P, dtype=bool)
    thr2 = threshold * threshold
    x = x0.copy()
    xd = x0.copy()
    r2 = np.sum(x * x, axis=1)
    bad = ~(r2 <= thr2)
    diverged[bad] = 0
    alive &= ~bad
    states[bad, 0] = np.nan
    for n in range(N):
        if delayed and n % m_sub == 0:
            xd = x.copy()
        x = _step_linear(A, Bs, C, Ds, x, xd if delayed else x, dW[:, n], h)
        r2 = np.sum(x * x, axis=1)
        bad = alive & ~(r2 <= thr2)
        if np.any(bad):
            diverged[bad] = n + 1
            alive &= ~bad
        x[~alive] = np.nan
        states[:, n + 1] = x
    return states, diverged


def _abs_pow(x, p):
    r2 = np.sum(x * x, axis=-1)
    if p == 2.0:
        return r2
    if p == 4.0:
        return r2 * r2
    return r2 ** (0.5 * p)


def moment_sums(A, Bs, C, Ds, x0, h, m_sub, n_steps, delayed, p, seed, path_start,
                n_paths, threshold):
    """Per-step sums of ``|X_n|^p`` and ``|X_n|^{2p}`` over a chunk of paths.

    Increments are generated from ``(seed, path_id, step, component)``
    with ``path_id = path_start .. path_start + n_paths - 1``. Diverged
    paths stop contributing from their divergence index on.

    Returns ``(s1, s2, diverged)``.
    """
    d = len(x0)
    m_bm = Bs.shape[0]
    ids = np.arange(path_start, path_start + n_paths, dtype=np.int64)
    dW = np.sqrt(h) * normals(seed, ids, 0, n_steps, m_bm)
    states, diverged = em_linear(A, Bs, C, Ds, np.broadcast_to(x0, (n_paths, d)), dW,
                                 h, m_sub, delayed, threshold)
    v = _abs_pow(states, p)
    v = np.where(np.isnan(v), 0.0, v)
    s1 = np.zeros(n_steps + 1)
    s2 = np.zeros(n_steps + 1)
    # sequential accumulation in path order, matching the compiled kernel
    for i in range(n_paths):
        s1 += v[i]
        s2 += v[i] * v[i]
    return s1, s2, diverged
