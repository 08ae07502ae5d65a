"""Pure-Python (numpy) kernels.

Reference implementation of every routine in ``_ckernels.pyx``.  Signatures
and status codes are identical so the two backends are interchangeable.

Status codes: 0 ok, 1 max_iter reached, 2 stalled / reducible, 3 overflow.
"""

import numpy as np

OK, MAXITER, STALLED, OVERFLOW = 0, 1, 2, 3
REDUCIBLE = STALLED
EXP_LIMIT = 700.0


def _noda(Q, r, tol, max_iter):
    """Noda (shifted inverse) iteration for the Perron root of a Metzler matrix.

    Keeps ``r > 0`` and the Collatz-Wielandt bracket ``min(Qr/r) <= lam <=
    max(Qr/r)``; stops once the bracket is narrower than ``tol * (1 + |lam|)``
    or than the rounding level of ``Q r``, or once the normwise residual
    ``|Q r - lam r|_inf`` meets the same tolerance.
    """
    n = Q.shape[0]
    shift = 1.0 + np.max(np.abs(np.diag(Q)))
    eye = np.eye(n)
    absQ = np.abs(Q)
    for it in range(max_iter):
        Qr = Q @ r
        ratios = Qr / r
        hi = ratios.max()
        lo = ratios.min()
        mag = absQ @ r
        # the ratios cannot be resolved below the rounding in Q r
        noise = 8.0 * np.finfo(float).eps * np.max(mag / r)
        if hi - lo <= tol * (1.0 + abs(hi)) or hi - lo <= noise:
            return 0.5 * (hi + lo), r, it, OK
        # tiny entries of r are only normwise accurate, which can floor the
        # bracket; fall back to the normwise eigen-residual
        lam_ls = (Qr @ r) / (r @ r)
        res = np.max(np.abs(Qr - lam_ls * r))
        if res <= tol * (1.0 + abs(lam_ls)) or res <= 8.0 * np.finfo(float).eps * np.max(mag):
            return lam_ls, r, it, OK
        try:
            y = np.linalg.solve(hi * eye - Q, r)
        except np.linalg.LinAlgError:
            y = None
        if y is None or not np.all(np.isfinite(y)) or np.any(y <= 0.0):
            # shifted power step keeps positivity when the solve degenerates
            y = Q @ r + shift * r
            if not np.all(np.isfinite(y)) or np.any(y <= 0.0):
                return 0.5 * (hi + lo), r, it, REDUCIBLE
        r = y / y.max()
        if r.min() <= 1e-300:
            return 0.5 * (hi + lo), r, it, REDUCIBLE
    ratios = (Q @ r) / r
    return 0.5 * (ratios.max() + ratios.min()), r, max_iter, MAXITER


def perron(Q, tol=1e-13, max_iter=200):
    """Principal eigenvalue with right (max-entry 1) and left (left.right = 1) vectors."""
    Q = np.asarray(Q, dtype=float)
    n = Q.shape[0]
    if n == 1:
        return float(Q[0, 0]), np.ones(1), np.ones(1), 0, OK
    lam, right, it_r, st_r = _noda(Q, np.ones(n), tol, max_iter)
    _, left, it_l, st_l = _noda(Q.T.copy(), np.ones(n), tol, max_iter)
    status = max(st_r, st_l)
    left = left / (left @ right)
    return float(lam), right, left, it_r + it_l, status


def crn_tilted(rates, gx, target, kind, p):
    """Tilted matrix ``diag(V) + L`` plus first and second p-derivatives.

    ``rates[j, s]`` is the rate of reaction ``j`` from fast state ``s`` with
    the slow state already substituted; ``target[j, s]`` is the index of the
    destination fast state.
    """
    n_reac, n = rates.shape
    l = gx.shape[1]
    Q = np.zeros((n, n))
    dQ = np.zeros((l, n, n))
    d2Q = np.zeros((l, l, n, n))
    expo = gx @ p
    if np.any(np.abs(expo) > EXP_LIMIT):
        return Q, dQ, d2Q, OVERFLOW
    e = np.exp(expo)
    for j in range(n_reac):
        kj = kind[j]
        g = gx[j]
        gg = np.outer(g, g)
        for s in range(n):
            rho = rates[j, s]
            if rho == 0.0:
                continue
            t = target[j, s]
            if kj == 1:
                Q[s, s] += rho * (e[j] - 1.0)
                dQ[:, s, s] += rho * e[j] * g
                d2Q[:, :, s, s] += rho * e[j] * gg
            elif kj == 2:
                Q[s, s] -= rho
                Q[s, t] += rho * e[j]
                dQ[:, s, t] += rho * e[j] * g
                d2Q[:, :, s, t] += rho * e[j] * gg
            else:
                Q[s, s] -= rho
                Q[s, t] += rho
    return Q, dQ, d2Q, OK


def eval_tilted(Q, dQ, d2Q, order=1, tol=1e-13, max_iter=200):
    """Perron root of an assembled tilted matrix with its p-derivatives.

    Returns ``(lam, right, left, grad, hess, status)``; the Hessian comes from
    the bordered linear system for the derivative of the right vector.
    """
    n = Q.shape[0]
    l = dQ.shape[0]
    grad = np.zeros(l)
    hess = np.zeros((l, l))
    lam, right, left, _, st = perron(Q, tol, max_iter)
    if order >= 1:
        for i in range(l):
            grad[i] = left @ (dQ[i] @ right)
    if order >= 2 and n > 1:
        B = np.zeros((n + 1, n + 1))
        B[:n, :n] = Q - lam * np.eye(n)
        B[:n, n] = right
        B[n, :n] = left
        dr = np.zeros((l, n))
        for i in range(l):
            rhs = np.zeros(n + 1)
            rhs[:n] = grad[i] * right - dQ[i] @ right
            dr[i] = np.linalg.solve(B, rhs)[:n]
        for i in range(l):
            for k in range(i, l):
                val = left @ (d2Q[i, k] @ right) + left @ (dQ[i] @ dr[k]) + left @ (dQ[k] @ dr[i])
                hess[i, k] = hess[k, i] = val
    elif order >= 2:
        hess[:, :] = d2Q[:, :, 0, 0]
    return lam, right, left, grad, hess, st


def crn_eval(rates, gx, target, kind, p, order=1, tol=1e-13, max_iter=200):
    """H, right, left, grad (order >= 1), hessian (order == 2), status."""
    l = gx.shape[1]
    p = np.asarray(p, dtype=float)
    Q, dQ, d2Q, st = crn_tilted(rates, gx, target, kind, p)
    n = Q.shape[0]
    if st != OK:
        return np.nan, np.ones(n), np.ones(n) / n, np.zeros(l), np.zeros((l, l)), st
    return eval_tilted(Q, dQ, d2Q, order, tol, max_iter)


def _scan_levels(radius):
    if radius <= 0.0:
        return np.zeros(1)
    return np.array([-radius, -0.5 * radius, 0.0, 0.5 * radius, radius])


def projected_newton(fun, v, radius, tol=1e-10, max_iter=100, noise=1e-13):
    """Maximize ``p.v - H(p)`` over the box ``|p_i| <= radius``.

    ``fun(p, order)`` returns ``(H, grad, hess)`` (grad/hess only as far as
    ``order`` asks).  Coarse grid scan for the seed, then projected Newton
    with backtracking.  ``noise`` is the relative accuracy of ``H``; the
    sufficient-increase test cannot resolve changes below it.  Returns ``(value, p, iterations, status,
    projected_grad, outward_slope)``.
    """
    v = np.asarray(v, dtype=float)
    l = v.shape[0]
    levels = _scan_levels(radius)
    best_obj, best_p = -np.inf, np.zeros(l)
    for flat in range(levels.size**l):
        pt = np.empty(l)
        rem = flat
        for i in range(l):
            pt[i] = levels[rem % levels.size]
            rem //= levels.size
        H = fun(pt, 0)[0]
        obj = pt @ v - H
        if obj > best_obj:
            best_obj, best_p = obj, pt
    p = best_p.copy()
    scale = 1.0 + np.max(np.abs(v))
    status = MAXITER
    pg_norm = np.inf
    grad = np.zeros(l)
    active = np.zeros(l, dtype=bool)
    it = 0
    while it < max_iter:
        H, gH, hess, st = fun(p, 2)
        if st == OVERFLOW:
            status = OVERFLOW
            break
        obj = p @ v - H
        grad = v - gH
        active = ((p <= -radius) & (grad < 0.0)) | ((p >= radius) & (grad > 0.0))
        free = ~active
        pg = np.where(free, grad, 0.0)
        pg_norm = np.max(np.abs(pg)) if l else 0.0
        if pg_norm <= tol * scale:
            status = OK
            break
        d = np.zeros(l)
        idx = np.flatnonzero(free)
        Hf = hess[np.ix_(idx, idx)]
        mu = 1e-12 * (1.0 + np.trace(Hf))
        try:
            df = np.linalg.solve(Hf + mu * np.eye(idx.size), grad[idx])
            if not np.all(np.isfinite(df)) or df @ grad[idx] <= 0.0:
                df = grad[idx]
        except np.linalg.LinAlgError:
            df = grad[idx]
        d[idx] = df
        t = 1.0
        accepted = False
        for _ in range(60):
            pn = np.clip(p + t * d, -radius, radius)
            obj_n = pn @ v - fun(pn, 0)[0]
            if obj_n >= obj + 1e-4 * (grad @ (pn - p)) - noise * (1.0 + abs(H)):
                accepted = True
                break
            t *= 0.5
        if not accepted or np.all(pn == p):
            status = STALLED
            break
        p = pn
        it += 1
    H = fun(p, 0)[0]
    outward = float(np.max(np.abs(grad[active]))) if np.any(active) else 0.0
    return float(p @ v - H), p, it, status, float(pg_norm), outward


def crn_legendre(rates, gx, target, kind, v, radius, tol=1e-10, max_iter=100,
                 eig_tol=1e-13, eig_max_iter=200):
    def fun(p, order):
        out = crn_eval(rates, gx, target, kind, p, order, eig_tol, eig_max_iter)
        return out[0], out[3], out[4], out[5]

    return projected_newton(fun, v, radius, tol, max_iter, eig_tol)


def sl_sweep(f, base, idx, w, beta):
    """One semi-Lagrangian update.

    ``base[n, c]`` holds the running payoff of candidate ``c`` at node ``n``
    (``-inf`` for unusable candidates); ``idx``/``w`` the interpolation
    stencil of its foot point.  Returns the new iterate and the argmax.
    """
    vals = base + beta * np.sum(w * f[idx], axis=-1)
    arg = np.argmax(vals, axis=1)
    return vals[np.arange(vals.shape[0]), arg], arg


def doubling_argmax(us, vs, X, alpha, chunk=512):
    """Maximize ``us[i] - vs[j] - alpha/2 |X_i - X_j|^2`` over node pairs.

    Ties resolve to the lowest flattened pair index ``i * n + j``.
    """
    n = X.shape[0]
    best = -np.inf
    bi = bj = 0
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        d2 = np.sum((X[start:stop, None, :] - X[None, :, :]) ** 2, axis=-1)
        phi = us[start:stop, None] - vs[None, :] - 0.5 * alpha * d2
        k = int(np.argmax(phi))
        val = phi.flat[k]
        if val > best:
            best = val
            bi, bj = start + k // n, k % n
    return bi, bj, float(best)
