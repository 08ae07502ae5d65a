# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels; see ``_pykernels`` for the reference semantics."""

import numpy as np
from libc.math cimport exp, fabs, INFINITY, isfinite
from libc.float cimport DBL_EPSILON

cdef enum:
    OK = 0
    MAXITER = 1
    STALLED = 2
    OVERFLOW = 3

cdef double EXP_LIMIT = 700.0


cdef class _Work:
    cdef int n, l, m
    cdef double[:, ::1] Q
    cdef double[:, :, ::1] dQ
    cdef double[:, :, :, ::1] d2Q
    cdef double[::1] right, left, y, e, pbuf
    cdef double[:, ::1] A
    cdef double[::1] b
    cdef double[:, ::1] dr
    cdef double[::1] grad
    cdef double[:, ::1] hess

    def __cinit__(self, int n, int l, int order):
        self.n = n
        self.l = l
        self.m = max(n + 1, l)
        self.Q = np.zeros((n, n))
        self.dQ = np.zeros((l, n, n))
        if order >= 2:
            self.d2Q = np.zeros((l, l, n, n))
        else:
            self.d2Q = np.zeros((1, 1, 1, 1))
        self.right = np.ones(n)
        self.left = np.ones(n)
        self.y = np.zeros(n)
        self.e = np.zeros(1)
        self.pbuf = np.zeros(l)
        self.A = np.zeros((self.m, self.m))
        self.b = np.zeros(self.m)
        self.dr = np.zeros((l, n))
        self.grad = np.zeros(l)
        self.hess = np.zeros((l, l))


cdef int _solve(double[:, ::1] A, double[::1] b, int m) nogil:
    """Gaussian elimination with partial pivoting; solution overwrites b."""
    cdef int i, j, k, piv
    cdef double best, tmp, f
    for k in range(m):
        piv = k
        best = fabs(A[k, k])
        for i in range(k + 1, m):
            if fabs(A[i, k]) > best:
                best = fabs(A[i, k])
                piv = i
        if best == 0.0:
            return 1
        if piv != k:
            for j in range(m):
                tmp = A[k, j]
                A[k, j] = A[piv, j]
                A[piv, j] = tmp
            tmp = b[k]
            b[k] = b[piv]
            b[piv] = tmp
        for i in range(k + 1, m):
            f = A[i, k] / A[k, k]
            if f != 0.0:
                for j in range(k, m):
                    A[i, j] -= f * A[k, j]
                b[i] -= f * b[k]
    for k in range(m - 1, -1, -1):
        tmp = b[k]
        for j in range(k + 1, m):
            tmp -= A[k, j] * b[j]
        b[k] = tmp / A[k, k]
    return 0


cdef inline double _qt(double[:, ::1] Q, int i, int j, int transpose) nogil:
    if transpose:
        return Q[j, i]
    return Q[i, j]


cdef int _noda(_Work W, int transpose, double[::1] r, double tol, int max_iter,
               double* lam, int* iters):
    cdef int n = W.n
    cdef int it, i, j
    cdef double hi, lo, s, sa, ratio, shift, mx, mn, noise, width, magmax, num, den, lam_ls, res
    cdef int ok
    shift = 0.0
    for i in range(n):
        if fabs(W.Q[i, i]) > shift:
            shift = fabs(W.Q[i, i])
    shift += 1.0
    for i in range(n):
        r[i] = 1.0
    for it in range(max_iter):
        hi = -INFINITY
        lo = INFINITY
        noise = 0.0
        magmax = 0.0
        num = 0.0
        den = 0.0
        for i in range(n):
            s = 0.0
            sa = 0.0
            for j in range(n):
                s += _qt(W.Q, i, j, transpose) * r[j]
                sa += fabs(_qt(W.Q, i, j, transpose)) * r[j]
            W.y[i] = s
            num += s * r[i]
            den += r[i] * r[i]
            ratio = s / r[i]
            if ratio > hi:
                hi = ratio
            if ratio < lo:
                lo = ratio
            if sa / r[i] > noise:
                noise = sa / r[i]
            if sa > magmax:
                magmax = sa
        # the ratios cannot be resolved below the rounding in Q r
        noise *= 8.0 * DBL_EPSILON
        width = hi - lo
        if width <= tol * (1.0 + fabs(hi)) or width <= noise:
            lam[0] = 0.5 * (hi + lo)
            iters[0] = it
            return OK
        # tiny entries of r are only normwise accurate, which can floor the
        # bracket; fall back to the normwise eigen-residual
        lam_ls = num / den
        res = 0.0
        for i in range(n):
            if fabs(W.y[i] - lam_ls * r[i]) > res:
                res = fabs(W.y[i] - lam_ls * r[i])
        if res <= tol * (1.0 + fabs(lam_ls)) or res <= 8.0 * DBL_EPSILON * magmax:
            lam[0] = lam_ls
            iters[0] = it
            return OK
        for i in range(n):
            for j in range(n):
                W.A[i, j] = -_qt(W.Q, i, j, transpose)
            W.A[i, i] += hi
            W.b[i] = r[i]
        ok = _solve(W.A, W.b, n) == 0
        if ok:
            for i in range(n):
                if not isfinite(W.b[i]) or W.b[i] <= 0.0:
                    ok = False
                    break
        if not ok:
            for i in range(n):
                s = shift * r[i]
                for j in range(n):
                    s += _qt(W.Q, i, j, transpose) * r[j]
                if not isfinite(s) or s <= 0.0:
                    lam[0] = 0.5 * (hi + lo)
                    iters[0] = it
                    return STALLED
                W.b[i] = s
        mx = 0.0
        for i in range(n):
            if W.b[i] > mx:
                mx = W.b[i]
        mn = INFINITY
        for i in range(n):
            r[i] = W.b[i] / mx
            if r[i] < mn:
                mn = r[i]
        if mn <= 1e-300:
            lam[0] = 0.5 * (hi + lo)
            iters[0] = it
            return STALLED
    hi = -INFINITY
    lo = INFINITY
    for i in range(n):
        s = 0.0
        for j in range(n):
            s += _qt(W.Q, i, j, transpose) * r[j]
        ratio = s / r[i]
        if ratio > hi:
            hi = ratio
        if ratio < lo:
            lo = ratio
    lam[0] = 0.5 * (hi + lo)
    iters[0] = max_iter
    return MAXITER


cdef int _perron(_Work W, double tol, int max_iter, double* lam, int* iters):
    cdef int n = W.n
    cdef int st_r, st_l, it_r = 0, it_l = 0, i
    cdef double lam_l, dot
    if n == 1:
        lam[0] = W.Q[0, 0]
        W.right[0] = 1.0
        W.left[0] = 1.0
        iters[0] = 0
        return OK
    st_r = _noda(W, 0, W.right, tol, max_iter, lam, &it_r)
    st_l = _noda(W, 1, W.left, tol, max_iter, &lam_l, &it_l)
    dot = 0.0
    for i in range(n):
        dot += W.left[i] * W.right[i]
    for i in range(n):
        W.left[i] /= dot
    iters[0] = it_r + it_l
    return st_r if st_r > st_l else st_l


cdef int _tilted(_Work W, double[:, ::1] rates, double[:, ::1] gx, long[:, ::1] target,
                 long[::1] kind, double[::1] p, int order):
    cdef int n_reac = rates.shape[0]
    cdef int n = W.n, l = W.l
    cdef int j, s, t, i, k
    cdef double ex, rho, re, expo
    W.Q[:, :] = 0.0
    if order >= 1:
        W.dQ[:, :, :] = 0.0
    if order >= 2:
        W.d2Q[:, :, :, :] = 0.0
    for j in range(n_reac):
        expo = 0.0
        for i in range(l):
            expo += gx[j, i] * p[i]
        if fabs(expo) > EXP_LIMIT:
            return OVERFLOW
        ex = exp(expo)
        for s in range(n):
            rho = rates[j, s]
            if rho == 0.0:
                continue
            t = target[j, s]
            if kind[j] == 1:
                W.Q[s, s] += rho * (ex - 1.0)
                t = s
            elif kind[j] == 2:
                W.Q[s, s] -= rho
                W.Q[s, t] += rho * ex
            else:
                W.Q[s, s] -= rho
                W.Q[s, t] += rho
                continue
            re = rho * ex
            if order >= 1:
                for i in range(l):
                    W.dQ[i, s, t] += re * gx[j, i]
            if order >= 2:
                for i in range(l):
                    for k in range(l):
                        W.d2Q[i, k, s, t] += re * gx[j, i] * gx[j, k]
    return OK


cdef int _eval(_Work W, double[:, ::1] rates, double[:, ::1] gx, long[:, ::1] target,
               long[::1] kind, double[::1] p, int order, double tol, int max_iter,
               double* lam):
    cdef int n = W.n, l = W.l
    cdef int st, iters, i, k, a, c
    cdef double s, val
    st = _tilted(W, rates, gx, target, kind, p, order)
    if st != OK:
        lam[0] = float("nan")
        return st
    st = _perron(W, tol, max_iter, lam, &iters)
    if order >= 1:
        for i in range(l):
            s = 0.0
            for a in range(n):
                val = 0.0
                for c in range(n):
                    val += W.dQ[i, a, c] * W.right[c]
                s += W.left[a] * val
            W.grad[i] = s
    if order >= 2:
        if n == 1:
            for i in range(l):
                for k in range(l):
                    W.hess[i, k] = W.d2Q[i, k, 0, 0]
            return st
        for i in range(l):
            for a in range(n):
                for c in range(n):
                    W.A[a, c] = W.Q[a, c]
                W.A[a, a] -= lam[0]
                W.A[a, n] = W.right[a]
                W.A[n, a] = W.left[a]
                val = 0.0
                for c in range(n):
                    val += W.dQ[i, a, c] * W.right[c]
                W.b[a] = W.grad[i] * W.right[a] - val
            W.A[n, n] = 0.0
            W.b[n] = 0.0
            if _solve(W.A, W.b, n + 1) != 0:
                return STALLED
            for a in range(n):
                W.dr[i, a] = W.b[a]
        for i in range(l):
            for k in range(i, l):
                s = 0.0
                for a in range(n):
                    val = 0.0
                    for c in range(n):
                        val += W.d2Q[i, k, a, c] * W.right[c] + W.dQ[i, a, c] * W.dr[k, c] + W.dQ[k, a, c] * W.dr[i, c]
                    s += W.left[a] * val
                W.hess[i, k] = s
                W.hess[k, i] = s
    return st


def perron(Q, double tol=1e-13, int max_iter=200):
    Qa = np.ascontiguousarray(Q, dtype=float)
    cdef int n = Qa.shape[0]
    cdef _Work W = _Work(n, 1, 0)
    np.asarray(W.Q)[:, :] = Qa
    cdef double lam
    cdef int iters
    st = _perron(W, tol, max_iter, &lam, &iters)
    return lam, np.asarray(W.right).copy(), np.asarray(W.left).copy(), iters, st


def crn_eval(double[:, ::1] rates, double[:, ::1] gx, long[:, ::1] target, long[::1] kind,
             p, int order=1, double tol=1e-13, int max_iter=200):
    cdef double[::1] pv = np.ascontiguousarray(p, dtype=float)
    cdef _Work W = _Work(rates.shape[1], gx.shape[1], order)
    cdef double lam
    st = _eval(W, rates, gx, target, kind, pv, order, tol, max_iter, &lam)
    n = rates.shape[1]
    if st == OVERFLOW:
        return lam, np.ones(n), np.ones(n) / n, np.zeros(gx.shape[1]), np.zeros((gx.shape[1], gx.shape[1])), st
    return (lam, np.asarray(W.right).copy(), np.asarray(W.left).copy(),
            np.asarray(W.grad).copy(), np.asarray(W.hess).copy(), st)


cdef double _value(_Work W, double[:, ::1] rates, double[:, ::1] gx, long[:, ::1] target,
                   long[::1] kind, double[::1] p, double tol, int max_iter, int* st):
    cdef double lam
    st[0] = _eval(W, rates, gx, target, kind, p, 0, tol, max_iter, &lam)
    return lam


def crn_legendre(double[:, ::1] rates, double[:, ::1] gx, long[:, ::1] target, long[::1] kind,
                 v_in, double radius, double tol=1e-10, int max_iter=100,
                 double eig_tol=1e-13, int eig_max_iter=200):
    cdef double[::1] v = np.ascontiguousarray(v_in, dtype=float)
    cdef int l = v.shape[0]
    cdef int n = rates.shape[1]
    cdef _Work W = _Work(n, l, 2)
    cdef double[::1] p = np.zeros(l)
    cdef double[::1] best_p = np.zeros(l)
    cdef double[::1] pt = np.zeros(l)
    cdef double[::1] pn = np.zeros(l)
    cdef double[::1] g = np.zeros(l)
    cdef double[::1] d = np.zeros(l)
    cdef int[::1] free = np.zeros(l, dtype=np.intc)
    cdef double[:, ::1] Hf = np.zeros((l, l))
    cdef double[::1] bf = np.zeros(l)
    cdef double levels[5]
    cdef int nlev, flat, rem, i, k, it, st, ls, nf, fi, fk, accepted, status, moved, total, ok
    cdef double H, obj, best_obj, scale, pg_norm, mu, tr, dg, t, Hn, obj_n, lin, outward, lam
    if radius <= 0.0:
        nlev = 1
        levels[0] = 0.0
    else:
        nlev = 5
        levels[0] = -radius
        levels[1] = -0.5 * radius
        levels[2] = 0.0
        levels[3] = 0.5 * radius
        levels[4] = radius
    best_obj = -INFINITY
    total = 1
    for i in range(l):
        total *= nlev
    for flat in range(total):
        rem = flat
        for i in range(l):
            pt[i] = levels[rem % nlev]
            rem = rem // nlev
        H = _value(W, rates, gx, target, kind, pt, eig_tol, eig_max_iter, &st)
        obj = -H
        for i in range(l):
            obj += pt[i] * v[i]
        if obj > best_obj:
            best_obj = obj
            best_p[:] = pt
    p[:] = best_p
    scale = 0.0
    for i in range(l):
        if fabs(v[i]) > scale:
            scale = fabs(v[i])
    scale += 1.0
    status = MAXITER
    pg_norm = INFINITY
    for i in range(l):
        g[i] = 0.0
        free[i] = 1
    it = 0
    while it < max_iter:
        st = _eval(W, rates, gx, target, kind, p, 2, eig_tol, eig_max_iter, &lam)
        if st == OVERFLOW:
            status = OVERFLOW
            break
        obj = -lam
        for i in range(l):
            obj += p[i] * v[i]
            g[i] = v[i] - W.grad[i]
        pg_norm = 0.0
        nf = 0
        for i in range(l):
            if (p[i] <= -radius and g[i] < 0.0) or (p[i] >= radius and g[i] > 0.0):
                free[i] = 0
            else:
                free[i] = 1
                nf += 1
                if fabs(g[i]) > pg_norm:
                    pg_norm = fabs(g[i])
        if pg_norm <= tol * scale:
            status = OK
            break
        tr = 0.0
        fi = 0
        for i in range(l):
            if not free[i]:
                continue
            tr += W.hess[i, i]
            fk = 0
            for k in range(l):
                if free[k]:
                    Hf[fi, fk] = W.hess[i, k]
                    fk += 1
            bf[fi] = g[i]
            fi += 1
        mu = 1e-12 * (1.0 + tr)
        for i in range(nf):
            Hf[i, i] += mu
        ok = _solve(Hf, bf, nf) == 0
        dg = 0.0
        if ok:
            fi = 0
            for i in range(l):
                if free[i]:
                    if not isfinite(bf[fi]):
                        ok = False
                    dg += bf[fi] * g[i]
                    fi += 1
        if not ok or dg <= 0.0:
            for i in range(l):
                d[i] = g[i] if free[i] else 0.0
        else:
            fi = 0
            for i in range(l):
                if free[i]:
                    d[i] = bf[fi]
                    fi += 1
                else:
                    d[i] = 0.0
        t = 1.0
        accepted = 0
        for ls in range(60):
            lin = 0.0
            for i in range(l):
                pn[i] = p[i] + t * d[i]
                if pn[i] < -radius:
                    pn[i] = -radius
                elif pn[i] > radius:
                    pn[i] = radius
                lin += g[i] * (pn[i] - p[i])
            Hn = _value(W, rates, gx, target, kind, pn, eig_tol, eig_max_iter, &st)
            obj_n = -Hn
            for i in range(l):
                obj_n += pn[i] * v[i]
            # eigenvalues are only accurate to eig_tol (1 + |H|)
            if obj_n >= obj + 1e-4 * lin - eig_tol * (1.0 + fabs(lam)):
                accepted = 1
                break
            t *= 0.5
        moved = 0
        for i in range(l):
            if pn[i] != p[i]:
                moved = 1
        if not accepted or not moved:
            status = STALLED
            break
        p[:] = pn
        it += 1
    H = _value(W, rates, gx, target, kind, p, eig_tol, eig_max_iter, &st)
    obj = -H
    for i in range(l):
        obj += p[i] * v[i]
    outward = 0.0
    for i in range(l):
        if not free[i] and fabs(g[i]) > outward:
            outward = fabs(g[i])
    return obj, np.asarray(p).copy(), it, status, pg_norm, outward


def sl_sweep(double[::1] f, double[:, ::1] base, long[:, :, ::1] idx, double[:, :, ::1] w, double beta):
    cdef Py_ssize_t N = base.shape[0], C = base.shape[1], Kk = idx.shape[2]
    out_np = np.empty(N)
    arg_np = np.empty(N, dtype=np.int64)
    cdef double[::1] out = out_np
    cdef long[::1] arg = arg_np
    cdef Py_ssize_t nidx, c, k, barg
    cdef double best, s, val
    with nogil:
        for nidx in range(N):
            best = -INFINITY
            barg = 0
            for c in range(C):
                s = 0.0
                for k in range(Kk):
                    s = s + w[nidx, c, k] * f[idx[nidx, c, k]]
                val = base[nidx, c] + beta * s
                if val > best:
                    best = val
                    barg = c
            out[nidx] = best
            arg[nidx] = barg
    return out_np, arg_np


def doubling_argmax(double[::1] us, double[::1] vs, double[:, ::1] X, double alpha):
    cdef Py_ssize_t n = X.shape[0], l = X.shape[1]
    cdef Py_ssize_t i, j, k, bi = 0, bj = 0
    cdef double best = -INFINITY, d2, diff, phi
    with nogil:
        for i in range(n):
            for j in range(n):
                d2 = 0.0
                for k in range(l):
                    diff = X[i, k] - X[j, k]
                    d2 = d2 + diff * diff
                phi = us[i] - vs[j] - 0.5 * alpha * d2
                if phi > best:
                    best = phi
                    bi = i
                    bj = j
    return bi, bj, best
