# cython: language_level=3
"""Compiled kernels: counter-based normals and linear Euler-Maruyama batches.

Same contracts as ``_pykernels``; see that module for the reference
semantics. The fused ``moment_sums`` kernel releases the GIL.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, log, pow, isfinite
from libc.stdint cimport uint32_t, uint64_t, int64_t
from libc.stdlib cimport malloc, free

cnp.import_array()

cdef double TWO_M52 = 2.220446049250313e-16

cdef double[8] PA = [3.3871328727963666080e0, 1.3314166789178437745e2, 1.9715909503065514427e3,
                     1.3731693765509461125e4, 4.5921953931549871457e4, 6.7265770927008700853e4,
                     3.3430575583588128105e4, 2.5090809287301226727e3]
cdef double[8] PB = [1.0, 4.2313330701600911252e1, 6.8718700749205790830e2, 5.3941960214247511077e3,
                     2.1213794301586595867e4, 3.9307895800092710610e4, 2.8729085735721942674e4,
                     5.2264952788528545610e3]
cdef double[8] PC = [1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0,
                     3.64784832476320460504e0, 1.27045825245236838258e0, 2.41780725177450611770e-1,
                     2.27238449892691845833e-2, 7.74545014278341407640e-4]
cdef double[8] PD = [1.0, 2.05319162663775882187e0, 1.67638483018380384940e0, 6.89767334985100004550e-1,
                     1.48103976427480074590e-1, 1.51986665636164571966e-2, 5.47593808499534494600e-4,
                     1.05075007164441684324e-9]
cdef double[8] PE = [6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0,
                     2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
                     2.71155556874348757815e-5, 2.01033439929228813265e-7]
cdef double[8] PF = [1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1, 1.48753612908506148525e-2,
                     7.86869131145613259100e-4, 1.84631831751005468180e-5, 1.42151175831644588870e-7,
                     2.04426310338993978564e-15]


cdef inline double horner(double* c, double r) noexcept nogil:
    cdef double acc = c[7]
    cdef int i
    for i in range(6, -1, -1):
        acc = acc * r + c[i]
    return acc


cdef inline double ppnd16(double u) noexcept nogil:
    cdef double q = u - 0.5
    cdef double r, val
    if q <= 0.425 and q >= -0.425:
        r = 0.180625 - q * q
        return q * horner(PA, r) / horner(PB, r)
    if q < 0.0:
        r = u
    else:
        r = 1.0 - u
    r = sqrt(-log(r))
    if r <= 5.0:
        r = r - 1.6
        val = horner(PC, r) / horner(PD, r)
    else:
        r = r - 5.0
        val = horner(PE, r) / horner(PF, r)
    if q < 0.0:
        return -val
    return val


cdef inline void philox(uint32_t* ctr, uint32_t k0, uint32_t k1) noexcept nogil:
    cdef uint32_t c0 = ctr[0], c1 = ctr[1], c2 = ctr[2], c3 = ctr[3]
    cdef uint32_t t0, t2
    cdef uint64_t p0, p1
    cdef int r
    for r in range(10):
        if r:
            k0 = k0 + <uint32_t>0x9E3779B9
            k1 = k1 + <uint32_t>0xBB67AE85
        p0 = <uint64_t>0xD2511F53 * <uint64_t>c0
        p1 = <uint64_t>0xCD9E8D57 * <uint64_t>c2
        t0 = (<uint32_t>(p1 >> 32)) ^ c1 ^ k0
        t2 = (<uint32_t>(p0 >> 32)) ^ c3 ^ k1
        c1 = <uint32_t>p1
        c3 = <uint32_t>p0
        c0 = t0
        c2 = t2
    ctr[0] = c0
    ctr[1] = c1
    ctr[2] = c2
    ctr[3] = c3


cdef inline double bits_to_normal(uint32_t lo, uint32_t hi) noexcept nogil:
    cdef uint64_t w = (<uint64_t>lo) | ((<uint64_t>hi) << 32)
    return ppnd16(((<double>(w >> 12)) + 0.5) * TWO_M52)


cdef void fill_normals(uint64_t seed, uint64_t path, uint64_t start, int64_t n,
                       double* out) noexcept nogil:
    """Normals for counter indices start .. start + n - 1 of one path."""
    cdef uint32_t ctr[4]
    cdef uint64_t idx, block
    cdef uint64_t last_block = <uint64_t>(-1)
    cdef int64_t i
    cdef bint have = 0
    cdef uint32_t k0 = <uint32_t>seed, k1 = <uint32_t>(seed >> 32)
    for i in range(n):
        idx = start + <uint64_t>i
        block = idx >> 1
        if not have or block != last_block:
            ctr[0] = <uint32_t>block
            ctr[1] = <uint32_t>(block >> 32)
            ctr[2] = <uint32_t>path
            ctr[3] = <uint32_t>(path >> 32)
            philox(ctr, k0, k1)
            last_block = block
            have = 1
        if idx & 1:
            out[i] = bits_to_normal(ctr[2], ctr[3])
        else:
            out[i] = bits_to_normal(ctr[0], ctr[1])


def counter_uint64(uint64_t seed, path_ids, index):
    """64 random bits for each (seed, path_id, index); broadcasting like numpy."""
    p, ix = np.broadcast_arrays(np.asarray(path_ids, dtype=np.uint64),
                                np.asarray(index, dtype=np.uint64))
    cdef cnp.uint64_t[::1] pf = np.ascontiguousarray(p).ravel()
    cdef cnp.uint64_t[::1] xf = np.ascontiguousarray(ix).ravel()
    out = np.empty(pf.shape[0], dtype=np.uint64)
    cdef cnp.uint64_t[::1] o = out
    cdef uint32_t ctr[4]
    cdef Py_ssize_t i
    cdef uint64_t block
    with nogil:
        for i in range(pf.shape[0]):
            block = xf[i] >> 1
            ctr[0] = <uint32_t>block
            ctr[1] = <uint32_t>(block >> 32)
            ctr[2] = <uint32_t>pf[i]
            ctr[3] = <uint32_t>(pf[i] >> 32)
            philox(ctr, <uint32_t>seed, <uint32_t>(seed >> 32))
            if xf[i] & 1:
                o[i] = (<uint64_t>ctr[2]) | ((<uint64_t>ctr[3]) << 32)
            else:
                o[i] = (<uint64_t>ctr[0]) | ((<uint64_t>ctr[1]) << 32)
    return out.reshape(p.shape)


def ndtri(u):
    """Inverse standard normal CDF (AS241)."""
    arr = np.ascontiguousarray(u, dtype=np.float64)
    flat = arr.ravel()
    out = np.empty_like(flat)
    cdef double[::1] src = flat
    cdef double[::1] dst = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(src.shape[0]):
            dst[i] = ppnd16(src[i])
    return out.reshape(arr.shape)


def normals(uint64_t seed, path_ids, int64_t start_step, int64_t n_steps, int m_bm):
    """Standard normals of shape (len(path_ids), n_steps, m_bm)."""
    cdef cnp.int64_t[::1] ids = np.ascontiguousarray(path_ids, dtype=np.int64)
    cdef Py_ssize_t P = ids.shape[0]
    out = np.empty((P, n_steps, m_bm), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    cdef Py_ssize_t i
    cdef int64_t n = n_steps * m_bm
    if n == 0:
        return out
    with nogil:
        for i in range(P):
            fill_normals(seed, <uint64_t>ids[i], <uint64_t>(start_step * m_bm), n, &o[i, 0, 0])
    return out


cdef inline void em_step(const double* A, const double* Bs, const double* C, const double* Ds,
                         const double* x, const double* xd, const double* dw, double h,
                         int d, int m, double* out) noexcept nogil:
    # out = x + (A x + C xd) h + sum_k (B_k x + D_k xd) dw_k
    cdef int i, j, k
    cdef double drift, diff, g, gd
    for i in range(d):
        drift = 0.0
        for j in range(d):
            drift = drift + A[i * d + j] * x[j]
        g = 0.0
        for j in range(d):
            g = g + C[i * d + j] * xd[j]
        drift = drift + g
        diff = 0.0
        for k in range(m):
            g = 0.0
            for j in range(d):
                g = g + Bs[(k * d + i) * d + j] * x[j]
            gd = 0.0
            for j in range(d):
                gd = gd + Ds[(k * d + i) * d + j] * xd[j]
            diff = diff + (g + gd) * dw[k]
        out[i] = x[i] + drift * h + diff


cdef inline double norm2(double* x, int d) noexcept nogil:
    cdef double s = 0.0
    cdef int i
    for i in range(d):
        s = s + x[i] * x[i]
    return s


def em_linear(A, Bs, C, Ds, x0, dW, double h, int m_sub, bint delayed, double threshold):
    """Batch EM integration of a linear system on given increments."""
    cdef const double[:, ::1] a = np.ascontiguousarray(A, dtype=np.float64)
    cdef const double[:, :, ::1] b = np.ascontiguousarray(Bs, dtype=np.float64)
    cdef const double[:, ::1] c = np.ascontiguousarray(C, dtype=np.float64)
    cdef const double[:, :, ::1] dd = np.ascontiguousarray(Ds, dtype=np.float64)
    cdef const double[:, ::1] x0v = np.ascontiguousarray(x0, dtype=np.float64)
    cdef const double* pa = &a[0, 0]
    cdef const double* pb = &b[0, 0, 0]
    cdef const double* pc = &c[0, 0]
    cdef const double* pd = &dd[0, 0, 0]
    cdef const double[:, :, ::1] w = np.ascontiguousarray(dW, dtype=np.float64)
    cdef Py_ssize_t P = w.shape[0], N = w.shape[1]
    cdef int m = <int>w.shape[2], d = <int>x0v.shape[1]
    states = np.empty((P, N + 1, d), dtype=np.float64)
    diverged = np.full(P, -1, dtype=np.int64)
    cdef double[:, :, ::1] s = states
    cdef cnp.int64_t[::1] dv = diverged
    cdef double* xd = <double*>malloc(d * sizeof(double))
    cdef double thr2 = threshold * threshold
    cdef double r2
    cdef Py_ssize_t p, n
    cdef int i
    cdef bint dead
    cdef double nan_value = np.nan
    if xd == NULL:
        raise MemoryError()
    try:
        with nogil:
            for p in range(P):
                dead = 0
                for i in range(d):
                    s[p, 0, i] = x0v[p, i]
                r2 = norm2(&s[p, 0, 0], d)
                if not (r2 <= thr2):
                    dead = 1
                    dv[p] = 0
                for n in range(N):
                    if dead:
                        break
                    if delayed:
                        if n % m_sub == 0:
                            for i in range(d):
                                xd[i] = s[p, n, i]
                        em_step(pa, pb, pc, pd, &s[p, n, 0], xd, &w[p, n, 0], h, d, m, &s[p, n + 1, 0])
                    else:
                        em_step(pa, pb, pc, pd, &s[p, n, 0], &s[p, n, 0], &w[p, n, 0], h, d, m, &s[p, n + 1, 0])
                    r2 = norm2(&s[p, n + 1, 0], d)
                    if not (r2 <= thr2):
                        dead = 1
                        dv[p] = n + 1
                if dead:
                    for n in range(dv[p], N + 1):
                        for i in range(d):
                            s[p, n, i] = nan_value
    finally:
        free(xd)
    return states, diverged


cdef inline double abs_pow(double r2, double p) noexcept nogil:
    if p == 2.0:
        return r2
    if p == 4.0:
        return r2 * r2
    return pow(r2, 0.5 * p)


def moment_sums(A, Bs, C, Ds, x0, double h, int m_sub, int64_t n_steps, bint delayed,
                double p, uint64_t seed, int64_t path_start, int64_t n_paths, double threshold):
    """Fused increment generation, EM integration and moment accumulation."""
    cdef const double[:, ::1] a = np.ascontiguousarray(A, dtype=np.float64)
    cdef const double[:, :, ::1] b = np.ascontiguousarray(Bs, dtype=np.float64)
    cdef const double[:, ::1] c = np.ascontiguousarray(C, dtype=np.float64)
    cdef const double[:, :, ::1] dd = np.ascontiguousarray(Ds, dtype=np.float64)
    cdef const double[::1] x0v = np.ascontiguousarray(x0, dtype=np.float64)
    cdef const double* pa = &a[0, 0]
    cdef const double* pb = &b[0, 0, 0]
    cdef const double* pc = &c[0, 0]
    cdef const double* pd = &dd[0, 0, 0]
    cdef int d = <int>x0v.shape[0], m = <int>b.shape[0]
    s1 = np.zeros(n_steps + 1, dtype=np.float64)
    s2 = np.zeros(n_steps + 1, dtype=np.float64)
    diverged = np.full(n_paths, -1, dtype=np.int64)
    cdef double[::1] o1 = s1, o2 = s2
    cdef cnp.int64_t[::1] dv = diverged
    cdef double sqrt_h = sqrt(h)
    cdef double thr2 = threshold * threshold
    cdef int64_t nw = n_steps * m
    cdef double* z = <double*>malloc((nw + 1) * sizeof(double))
    cdef double* buf = <double*>malloc(3 * d * sizeof(double))
    cdef double* x
    cdef double* xn
    cdef double* xd
    cdef double* tmp
    cdef double r2, v
    cdef int64_t q, n, k
    cdef int i
    if z == NULL or buf == NULL:
        free(z)
        free(buf)
        raise MemoryError()
    xd = buf + 2 * d
    try:
        with nogil:
            for q in range(n_paths):
                x = buf
                xn = buf + d
                fill_normals(seed, <uint64_t>(path_start + q), 0, nw, z)
                for k in range(nw):
                    z[k] = sqrt_h * z[k]
                for i in range(d):
                    x[i] = x0v[i]
                r2 = norm2(x, d)
                if not (r2 <= thr2):
                    dv[q] = 0
                    continue
                v = abs_pow(r2, p)
                o1[0] = o1[0] + v
                o2[0] = o2[0] + v * v
                for n in range(n_steps):
                    if delayed:
                        if n % m_sub == 0:
                            for i in range(d):
                                xd[i] = x[i]
                        em_step(pa, pb, pc, pd, x, xd, &z[n * m], h, d, m, xn)
                    else:
                        em_step(pa, pb, pc, pd, x, x, &z[n * m], h, d, m, xn)
                    tmp = x
                    x = xn
                    xn = tmp
                    r2 = norm2(x, d)
                    if not (r2 <= thr2):
                        dv[q] = n + 1
                        break
                    v = abs_pow(r2, p)
                    o1[n + 1] = o1[n + 1] + v
                    o2[n + 1] = o2[n + 1] + v * v
    finally:
        free(z)
        free(buf)
    return s1, s2, diverged
