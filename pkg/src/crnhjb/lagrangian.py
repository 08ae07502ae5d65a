"""Legendre dual of a Hamiltonian and discrete path actions."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from . import _kernels as K
from ._kernels._pykernels import projected_newton


@dataclass(frozen=True)
class LegendreConfig:
    p_radius: float = 10.0
    tol: float = 1e-10
    max_iter: int = 100


@dataclass(frozen=True)
class LegendreResult:
    value: float
    argmax_p: np.ndarray
    iterations: int
    converged: bool
    radius_limited: bool = False
    outward_slope: float = 0.0
    flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class PathSample:
    times: np.ndarray
    points: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        x = np.asarray(self.points, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if t.ndim != 1 or t.size < 2:
            raise ValueError("a path needs at least two samples")
        if x.shape[0] != t.size:
            raise ValueError("times and points have different lengths")
        if np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing")
        if np.any(x < 0):
            raise ValueError("path leaves the nonnegative orthant")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "points", x)


@dataclass
class ActionResult:
    value: float
    flags: list[str] = field(default_factory=list)
    terms: np.ndarray | None = None


def _fd_hessian(ham, x, p, g0, h=1e-6):
    l = p.size
    out = np.empty((l, l))
    for j in range(l):
        step = h * (1.0 + abs(p[j]))
        e = np.zeros(l)
        e[j] = step
        out[:, j] = (ham.value_grad(x, p + e)[1] - g0) / step
    return 0.5 * (out + out.T)


def legendre(ham, x, v, cfg: LegendreConfig = LegendreConfig()) -> LegendreResult:
    """``L(x, v) = sup_{|p_i| <= R} [p.v - H(x, p)]``.

    Finite-control Hamiltonians are conjugated exactly as a linear program;
    everything else goes through projected Newton ascent seeded by a coarse
    grid scan.  A maximizer on the box face with the objective still
    increasing outward is flagged ``radius-limited``: the true value is then
    larger than reported (possibly infinite).
    """
    x = np.asarray(x, dtype=float)
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if hasattr(ham, "legendre_exact"):
        value, p, limited = ham.legendre_exact(x, v, cfg.p_radius)
        flags = ("radius-limited",) if limited else ()
        return LegendreResult(value, p, 0, True, limited, math.inf if limited else 0.0, flags)
    if hasattr(ham, "legendre_at"):
        value, p, it, status, pg, outward = ham.legendre_at(x, v, cfg.p_radius, cfg.tol, cfg.max_iter)
    else:
        def fun(p, order):
            if order == 0:
                return ham.value(x, p), None, None, K.OK
            if hasattr(ham, "value_grad_hess"):
                H, g, hs = ham.value_grad_hess(x, p)
            else:
                H, g = ham.value_grad(x, p)
                hs = _fd_hessian(ham, x, p, g)
            return H, g, hs, K.OK

        value, p, it, status, pg, outward = projected_newton(fun, v, cfg.p_radius, cfg.tol, cfg.max_iter)
    scale = 1.0 + float(np.max(np.abs(v)))
    converged = status == K.OK or (status == K.STALLED and pg <= 1e-6 * scale)
    limited = outward > cfg.tol * scale
    flags = []
    if limited:
        flags.append("radius-limited")
    if not converged:
        flags.append("not-converged")
    return LegendreResult(float(value), np.asarray(p), int(it), bool(converged), bool(limited),
                          float(outward), tuple(flags))


def path_action(ham, path: PathSample, cfg: LegendreConfig = LegendreConfig()) -> ActionResult:
    """Midpoint quadrature of ``int L(gamma, gamma')`` along a sampled path."""
    dt = np.diff(path.times)
    mids = 0.5 * (path.points[1:] + path.points[:-1])
    vel = np.diff(path.points, axis=0) / dt[:, None]
    terms = np.empty(dt.size)
    flags = []
    infinite = False
    for k in range(dt.size):
        res = legendre(ham, mids[k], vel[k], cfg)
        if res.radius_limited:
            infinite = True
        if not res.converged and "not-converged" not in flags:
            flags.append("not-converged")
        terms[k] = dt[k] * res.value
    if infinite:
        flags.insert(0, "radius-limited")
        return ActionResult(math.inf, flags, terms)
    total = 0.0
    for term in terms:
        total += term
    return ActionResult(total, flags, terms)


def velocity_bounds(ham, x, p_radius: float, n_samples: int = 64):
    """Box containing ``grad_p H(x, p)`` over ``|p_i| <= p_radius``.

    Sampled on an unscrambled Sobol sequence (plus ``p = 0``); each bound is
    pushed away from zero by 10 % of its magnitude, so a bound that is
    exactly zero stays zero.
    """
    x = np.asarray(x, dtype=float)
    l = ham.dim
    pts = [np.zeros(l)]
    if p_radius > 0 and n_samples > 0:
        sob = qmc.Sobol(d=l, scramble=False).random(n_samples)
        pts.extend(p_radius * (2.0 * sob - 1.0))
    P = np.array(pts)
    _, G = ham.many(np.repeat(x[None, :], P.shape[0], axis=0), P)
    lo = G.min(axis=0)
    hi = G.max(axis=0)
    return lo - 0.1 * np.abs(lo), hi + 0.1 * np.abs(hi)


def read_path_csv(path) -> PathSample:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0].strip() != "t":
        raise ValueError("path CSV needs a header starting with 't'")
    data = np.array([[float(c) for c in r] for r in rows[1:] if r], dtype=float)
    return PathSample(data[:, 0], data[:, 1:])
