"""Hamiltonians of the reaction-network and finite-control families.

For a network the Hamiltonian at ``(x, p)`` is the principal eigenvalue of
the tilted fast generator ``diag(V) + L_{x,p}`` on the fast state space.  Its
variational form is ``sup_theta [Lambda(theta) - I(theta)]`` with ``Lambda``
the theta-average of the potential ``V`` and ``I`` the Donsker-Varadhan cost
of the tilted generator.

Every evaluator exposes the same small surface used by the solvers:

``dim``
    number of slow coordinates;
``value(x, p)``, ``value_grad(x, p)``
    scalar evaluation;
``many(X, P)``
    values and gradients at stacked points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.optimize import linprog

from . import _kernels as K
from ._kernels._pykernels import crn_tilted, eval_tilted, projected_newton
from .model import (
    ControlHamiltonian,
    FastStateSpace,
    MultiScaleNetwork,
    enumerate_fast_states,
    strongly_connected_components,
)


class EigenError(RuntimeError):
    pass


class NonConvergenceError(EigenError):
    pass


class ReducibleError(EigenError):
    pass


class TiltOverflowError(OverflowError):
    pass


class DegenerateSupportError(ValueError):
    pass


@dataclass(frozen=True)
class TiltedOperator:
    x: np.ndarray
    p: np.ndarray
    V: np.ndarray
    L: np.ndarray

    @property
    def dim(self) -> int:
        return self.V.shape[0]

    @property
    def matrix(self) -> np.ndarray:
        return np.diag(self.V) + self.L


@dataclass(frozen=True)
class HamiltonianValue:
    value: float
    right: np.ndarray
    left: np.ndarray
    theta_star: np.ndarray
    grad_p: np.ndarray
    residual: float


@dataclass(frozen=True)
class ThetaMeasure:
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or np.any(w < 0) or not np.isclose(w.sum(), 1.0, atol=1e-12):
            raise ValueError("theta must be a probability vector")
        object.__setattr__(self, "weights", w)

    @classmethod
    def of(cls, weights) -> "ThetaMeasure":
        w = np.asarray(weights, dtype=float)
        return cls(w / w.sum())


# --------------------------------------------------------------------------
# network structure


@dataclass(frozen=True)
class Frozen:
    """Network data with the slow state substituted, ready for the kernels."""

    rates: np.ndarray
    gx: np.ndarray
    target: np.ndarray
    kind: np.ndarray
    blocks: tuple | None = None


class _Structure:
    """Index tables that do not depend on the slow state."""

    def __init__(self, net: MultiScaleNetwork, fss: FastStateSpace):
        n_r, n = len(net.reactions), len(fss)
        Y = fss.as_array()
        self.gx = np.array([r.gamma_x for r in net.reactions], dtype=float).reshape(n_r, net.slow_dim)
        self.kind = np.array([r.kind for r in net.reactions], dtype=np.int64)
        self.target = np.empty((n_r, n), dtype=np.int64)
        valid = np.ones((n_r, n), dtype=bool)
        for j, r in enumerate(net.reactions):
            for s, y in enumerate(fss.states):
                if r.kind == 1:
                    self.target[j, s] = s
                    continue
                t = fss.index.get(tuple(a + b for a, b in zip(y, r.gamma_y)), -1)
                self.target[j, s] = t
                # jumps that leave the fast state space never fire
                valid[j, s] = t >= 0
        owner, coef, xexp = [], [], []
        for j, r in enumerate(net.reactions):
            for mono in r.rate.monomials:
                ye = np.array(mono.y_exp, dtype=float) if mono.y_exp else np.zeros(net.fast_dim)
                owner.append(j)
                coef.append(mono.k * np.prod(Y**ye, axis=1) * valid[j])
                xexp.append(mono.x_exp)
        self.owner = np.zeros((n_r, len(owner)))
        self.owner[owner, np.arange(len(owner))] = 1.0
        self.coef = np.array(coef).reshape(len(owner), n)
        self.xexp = np.array(xexp, dtype=float).reshape(len(owner), net.slow_dim)
        self.target = np.where(valid, self.target, 0)

    def rates(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        xm = np.prod(x[None, :] ** self.xexp, axis=1)
        return self.owner @ (self.coef * xm[:, None])


def assemble_tilted(net: MultiScaleNetwork, fss: FastStateSpace, x, p) -> TiltedOperator:
    st = _Structure(net, fss)
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    if np.any(x < 0):
        raise ValueError("slow state must be nonnegative")
    Q, _, _, status = K.crn_tilted(st.rates(x), st.gx, st.target, st.kind, p)
    if status == K.OVERFLOW:
        raise TiltOverflowError("exponential tilt exceeds the floating-point range")
    n = Q.shape[0]
    rates = st.rates(x)
    e = np.exp(st.gx @ p)
    V = np.zeros(n)
    for j in range(len(st.kind)):
        if st.kind[j] in (1, 2):
            V += rates[j] * (e[j] - 1.0)
    L = Q - np.diag(V)
    return TiltedOperator(x, p, V, L)


def _is_irreducible(Q: np.ndarray) -> bool:
    off = Q > 0
    np.fill_diagonal(off, False)
    return len(strongly_connected_components(off)) == 1


def principal_eigen(op: TiltedOperator | np.ndarray, tol: float = 1e-13, max_iter: int = 200):
    """Perron root of ``diag(V) + L`` with positive right and left vectors.

    ``right`` has max entry 1 and ``left . right = 1``.
    """
    Q = op.matrix if isinstance(op, TiltedOperator) else np.asarray(op, dtype=float)
    if Q.shape[0] > 1 and not _is_irreducible(Q):
        raise ReducibleError("positivity graph of the generator is not strongly connected")
    lam, right, left, _, status = K.perron(Q, tol, max_iter)
    if status == K.MAXITER:
        raise NonConvergenceError(f"eigen iteration did not converge in {max_iter} steps")
    if status == K.REDUCIBLE:
        raise ReducibleError("zero entry in converged eigenvector")
    return lam, right, left


class CRNHamiltonian:
    """Effective Hamiltonian of a two-time-scale network."""

    def __init__(self, net: MultiScaleNetwork, fss: FastStateSpace | None = None,
                 tol: float = 1e-13, max_iter: int = 200):
        self.net = net
        self.fss = fss if fss is not None else enumerate_fast_states(net.fast_dim, net.conservation)
        self.tol = tol
        self.max_iter = max_iter
        self.dim = net.slow_dim
        self._last = None

    @cached_property
    def _structure(self) -> _Structure:
        return _Structure(self.net, self.fss)

    def frozen(self, x) -> Frozen:
        x = np.asarray(x, dtype=float)
        key = x.tobytes()
        if self._last is not None and self._last[0] == key:
            return self._last[1]
        st = self._structure
        rates = st.rates(x)
        n = rates.shape[1]
        blocks = None
        if n > 1:
            moves = (st.kind[:, None] >= 2) & (rates > 0) & (st.target != np.arange(n)[None, :])
            adj = np.zeros((n, n), dtype=bool)
            js, ss = np.nonzero(moves)
            adj[ss, st.target[js, ss]] = True
            comps = strongly_connected_components(adj)
            if len(comps) > 1:
                blocks = tuple(np.array(c, dtype=np.int64) for c in comps)
        fz = Frozen(rates, st.gx, st.target, st.kind, blocks)
        self._last = (key, fz)
        return fz

    def _eval_frozen(self, fz: Frozen, p, order):
        p = np.asarray(p, dtype=float)
        if fz.blocks is None:
            out = K.crn_eval(fz.rates, fz.gx, fz.target, fz.kind, p, order, self.tol, self.max_iter)
            _check(out[-1], self.max_iter)
            return out
        return _block_eval(fz, p, order, self.tol, self.max_iter)

    def _raw(self, x, p, order):
        return self._eval_frozen(self.frozen(x), p, order)

    def value(self, x, p) -> float:
        return float(self._raw(x, p, 0)[0])

    def value_grad(self, x, p):
        out = self._raw(x, p, 1)
        return float(out[0]), out[3]

    def value_grad_hess(self, x, p):
        out = self._raw(x, p, 2)
        return float(out[0]), out[3], out[4]

    def evaluate(self, x, p) -> HamiltonianValue:
        lam, right, left, grad, _, _ = self._raw(x, p, 1)
        Q = assemble_tilted(self.net, self.fss, x, p).matrix
        residual = float(np.max(np.abs(Q @ right - lam * right)))
        return HamiltonianValue(float(lam), right, left, left * right, grad, residual)

    def many(self, X, P):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        P = np.atleast_2d(np.asarray(P, dtype=float))
        if X.shape[0] == 1 and P.shape[0] > 1:
            X = np.repeat(X, P.shape[0], axis=0)
        H = np.empty(P.shape[0])
        G = np.empty_like(P)
        cache_x = None
        for i in range(P.shape[0]):
            if cache_x is None or not np.array_equal(X[i], cache_x):
                fz = self.frozen(X[i])
                cache_x = X[i]
            out = self._eval_frozen(fz, P[i], 1)
            H[i], G[i] = out[0], out[3]
        return H, G

    def legendre_at(self, x, v, radius, tol, max_iter):
        fz = self.frozen(x)
        v = np.asarray(v, dtype=float)
        if fz.blocks is None:
            out = K.crn_legendre(fz.rates, fz.gx, fz.target, fz.kind, v,
                                 float(radius), tol, max_iter, self.tol, self.max_iter)
        else:
            def fun(p, order):
                res = _block_eval(fz, p, max(order, 0), self.tol, self.max_iter)
                return res[0], res[3], res[4], res[5]

            out = projected_newton(fun, v, float(radius), tol, max_iter, self.tol)
        if out[3] == K.OVERFLOW:
            raise TiltOverflowError("exponential tilt exceeds the floating-point range")
        return out


def _block_eval(fz: Frozen, p, order, tol, max_iter):
    """Spectral abscissa of a reducible tilted generator.

    A Metzler matrix in block-triangular form has the union of its diagonal
    blocks' spectra, so the principal eigenvalue is the largest block Perron
    root.  Eigenvectors are supported on the winning block.
    """
    Q, dQ, d2Q, st = crn_tilted(fz.rates, fz.gx, fz.target, fz.kind, np.asarray(p, dtype=float))
    if st == K.OVERFLOW:
        return np.nan, None, None, np.zeros(fz.gx.shape[1]), None, K.OVERFLOW
    best = None
    for c in fz.blocks:
        ix = np.ix_(c, c)
        out = eval_tilted(Q[ix], dQ[:, c][:, :, c], d2Q[:, :, c][:, :, :, c], order, tol, max_iter)
        _check(out[-1], max_iter)
        if best is None or out[0] > best[1][0]:
            best = (c, out)
    c, (lam, r, w, grad, hess, _) = best
    n = Q.shape[0]
    right = np.zeros(n)
    left = np.zeros(n)
    right[c] = r
    left[c] = w
    return lam, right, left, grad, hess, K.OK


def _check(status, max_iter):
    if status == K.OVERFLOW:
        raise TiltOverflowError("exponential tilt exceeds the floating-point range")
    if status == K.MAXITER:
        raise NonConvergenceError(f"eigen iteration did not converge in {max_iter} steps")
    if status == K.REDUCIBLE:
        raise ReducibleError("zero entry in converged eigenvector")


# --------------------------------------------------------------------------
# functional operations on networks


def eval_H(net, fss, x, p, tol: float = 1e-13, max_iter: int = 200) -> HamiltonianValue:
    return CRNHamiltonian(net, fss, tol, max_iter).evaluate(x, p)


def eval_Lambda(net, fss, x, p, theta: ThetaMeasure) -> float:
    op = assemble_tilted(net, fss, x, p)
    return float(theta.weights @ op.V)


def _dv_terms(L, theta, phi):
    off = L - np.diag(np.diag(L))
    E = theta[:, None] * off * np.exp(phi[None, :] - phi[:, None])
    g = E.sum() + theta @ np.diag(L)
    grad = E.sum(axis=0) - E.sum(axis=1)
    hess = np.diag(E.sum(axis=0) + E.sum(axis=1)) - (E + E.T)
    return g, grad, hess


def eval_I(net, fss, x, p, theta: ThetaMeasure, tol: float = 1e-12, max_iter: int = 200) -> float:
    """Donsker-Varadhan cost ``-inf_phi sum_y theta_y (e^-phi L e^phi)(y)``.

    Newton in log coordinates with the first entry of ``phi`` pinned to 0,
    warm-started at the log of the right Perron vector.
    """
    w = theta.weights
    if np.any(w <= 0.0):
        raise DegenerateSupportError("degenerate support: theta must charge every fast state")
    op = assemble_tilted(net, fss, x, p)
    n = op.dim
    if n == 1:
        return float(-op.L[0, 0] * w[0])
    try:
        _, right, _ = principal_eigen(op)
        phi = np.log(right) - np.log(right[0])
    except EigenError:
        phi = np.zeros(n)
    g, grad, hess = _dv_terms(op.L, w, phi)
    # g is a sum of terms of size ~ theta . |diag L|; changes below their
    # rounding are noise for the sufficient-decrease test
    slack = 1e-14 * (1.0 + float(w @ np.abs(np.diag(op.L))))
    for _ in range(max_iter):
        gr = grad[1:]
        if np.max(np.abs(gr)) <= tol * (1.0 + abs(g)):
            return float(-g)
        Hr = hess[1:, 1:]
        try:
            step = np.linalg.solve(Hr + 1e-14 * np.trace(Hr) * np.eye(n - 1), gr)
        except np.linalg.LinAlgError:
            step = gr
        t = 1.0
        while t > 1e-12:
            cand = phi.copy()
            cand[1:] -= t * step
            if np.max(np.abs(cand)) > 700.0:
                raise DegenerateSupportError("degenerate support: cost is unbounded below")
            gn, gradn, hessn = _dv_terms(op.L, w, cand)
            if gn <= g - 1e-4 * t * (gr @ step) + slack:
                break
            t *= 0.5
        else:
            return float(-g)
        phi, g, grad, hess = cand, gn, gradn, hessn
    raise NonConvergenceError("Donsker-Varadhan minimization did not converge")


def sup_theta_gap(net, fss, x, p, n_samples: int = 64, seed: int = 0, include_star: bool = True):
    """Best sampled ``Lambda - I`` over full-support measures and its gap to H.

    Returns ``(best, gap, samples)`` where ``samples`` lists every evaluated
    ``Lambda - I``.  The gap is nonnegative in exact arithmetic; a negative
    value within rounding of ``H`` is reported as 0.
    """
    hv = eval_H(net, fss, x, p)
    rng = np.random.default_rng(seed)
    d = len(fss)
    thetas = []
    if n_samples > 0:
        raw = rng.exponential(size=(n_samples, d))
        thetas.extend(raw / raw.sum(axis=1, keepdims=True))
    if include_star:
        thetas.append(hv.theta_star / hv.theta_star.sum())
    op = assemble_tilted(net, fss, x, p)
    vals = []
    for th in thetas:
        tm = ThetaMeasure(th)
        vals.append(float(th @ op.V) - eval_I(net, fss, x, p, tm))
    best = max(vals) if vals else -math.inf
    gap = hv.value - best
    if -1e-12 * (1.0 + abs(hv.value)) <= gap < 0.0:
        gap = 0.0
    return best, gap, vals


# --------------------------------------------------------------------------
# finite control family


class ControlEvaluator:
    """Evaluator for ``H(x, p) = max_a { -f(x, a) . p - l(x, a) }``."""

    def __init__(self, ch: ControlHamiltonian):
        self.ch = ch
        self.dim = ch.slow_dim
        self.labels = [c.label for c in ch.controls]
        l = self.dim
        self._terms = []
        for c in ch.controls:
            comps = [[(m.k, np.array(m.x_exp, dtype=float)) for m in d.monomials] for d in c.drift]
            cost = [(m.k, np.array(m.x_exp, dtype=float)) for m in c.cost.monomials]
            self._terms.append((comps, cost))
        self._const = all(
            not np.any(e) for comps, cost in self._terms for part in comps + [cost] for _, e in part
        )
        if self._const:
            self._F0, self._C0 = self._drift_cost(np.zeros((1, l)))

    def _drift_cost(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        N, A, l = X.shape[0], len(self._terms), self.dim
        F = np.zeros((N, A, l))
        C = np.zeros((N, A))
        for a, (comps, cost) in enumerate(self._terms):
            for i, part in enumerate(comps):
                for k, e in part:
                    F[:, a, i] += k * np.prod(X**e, axis=1)
            for k, e in cost:
                C[:, a] += k * np.prod(X**e, axis=1)
        return F, C

    def drift_cost(self, X):
        if self._const:
            N = np.atleast_2d(X).shape[0]
            return np.broadcast_to(self._F0, (N,) + self._F0.shape[1:]), np.broadcast_to(self._C0, (N, self._C0.shape[1]))
        return self._drift_cost(X)

    def argmax(self, x, p):
        F, C = self.drift_cost(np.asarray(x, dtype=float)[None, :])
        vals = -F[0] @ np.asarray(p, dtype=float) - C[0]
        a = int(np.argmax(vals))
        return float(vals[a]), a, -F[0, a]

    def value(self, x, p) -> float:
        return self.argmax(x, p)[0]

    def value_grad(self, x, p):
        val, _, grad = self.argmax(x, p)
        return val, grad.copy()

    def many(self, X, P):
        P = np.atleast_2d(np.asarray(P, dtype=float))
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[0] == 1 and P.shape[0] > 1:
            X = np.repeat(X, P.shape[0], axis=0)
        F, C = self.drift_cost(X)
        vals = -np.einsum("nal,nl->na", F, P) - C
        a = np.argmax(vals, axis=1)
        rows = np.arange(P.shape[0])
        return vals[rows, a], -F[rows, a]

    def legendre_exact(self, x, v, radius):
        """Box-restricted conjugate as a linear program in ``(p, t)``.

        Returns ``(value, p, radius_limited)``; the radius flag is raised when
        doubling the box still increases the value.
        """
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        F, C = self.drift_cost(x[None, :])
        F, C = F[0], C[0]

        def solve(R):
            l = self.dim
            c = np.concatenate([-v, [1.0]])
            A_ub = np.hstack([-F, -np.ones((F.shape[0], 1))])
            bounds = [(-R, R)] * l + [(None, None)]
            res = linprog(c, A_ub=A_ub, b_ub=C, bounds=bounds, method="highs")
            if res.status != 0:
                raise NonConvergenceError(f"linear program failed: {res.message}")
            return -res.fun, res.x[:l]

        value, p = solve(radius)
        limited = False
        if radius > 0:
            wider, _ = solve(2.0 * radius)
            limited = wider > value + 1e-9 * (1.0 + abs(value))
        return float(value), p, limited


def eval_H_control(ch: ControlHamiltonian, x, p):
    ev = ControlEvaluator(ch)
    val, a, _ = ev.argmax(x, p)
    return val, ev.labels[a]


def make_evaluator(model, tol: float = 1e-13):
    if isinstance(model, ControlHamiltonian):
        return ControlEvaluator(model)
    return CRNHamiltonian(model, tol=tol)
