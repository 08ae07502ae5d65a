"""Grid solvers for the stationary and time-dependent Hamilton-Jacobi equations.

Stationary problem ``f - lam H(x, grad f) = h`` is solved as the value of a
discounted control problem with running payoff ``h / lam - L(x, v)``
(semi-Lagrangian value iteration).  The evolution ``u_t = H(x, grad u)`` uses
explicit Lax-Friedrichs steps.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .lagrangian import LegendreConfig, legendre, velocity_bounds


class GridMismatchError(ValueError):
    pass


class NonConvergenceError(RuntimeError):
    pass


class CFLError(ValueError):
    pass


# --------------------------------------------------------------------------
# grids


@dataclass(frozen=True)
class Grid:
    """Rectangular tensor grid ``[lower, upper]`` with ``cells`` intervals per axis."""

    upper: tuple[float, ...]
    cells: tuple[int, ...]
    lower: tuple[float, ...] | None = None

    def __post_init__(self):
        upper = tuple(float(u) for u in np.atleast_1d(self.upper))
        cells = np.atleast_1d(self.cells).astype(int)
        if cells.size == 1 and len(upper) > 1:
            cells = np.repeat(cells, len(upper))
        lower = (0.0,) * len(upper) if self.lower is None else tuple(float(a) for a in np.atleast_1d(self.lower))
        if len(lower) != len(upper) or cells.size != len(upper):
            raise ValueError("grid bounds and cell counts disagree in dimension")
        if any(u <= a for a, u in zip(lower, upper)):
            raise ValueError("upper must exceed lower on every axis")
        if np.any(cells < 3):
            raise ValueError("need at least 3 cells per axis")
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "cells", tuple(int(c) for c in cells))

    @property
    def dim(self) -> int:
        return len(self.upper)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(c + 1 for c in self.cells)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def spacing(self) -> np.ndarray:
        return (np.array(self.upper) - np.array(self.lower)) / np.array(self.cells)

    @property
    def axes(self) -> list[np.ndarray]:
        return [np.linspace(a, b, c + 1) for a, b, c in zip(self.lower, self.upper, self.cells)]

    def nodes(self) -> np.ndarray:
        """Node coordinates, row-major (last axis fastest)."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def interior_mask(self) -> np.ndarray:
        masks = [np.zeros(s, dtype=bool) for s in self.shape]
        for m in masks:
            m[1:-1] = True
        mesh = np.meshgrid(*masks, indexing="ij")
        return np.logical_and.reduce([m.ravel() for m in mesh])

    def shell_mask(self, fraction: float = 0.2) -> np.ndarray:
        """Nodes whose position along some axis lies in the outer ``fraction`` of the box."""
        X = self.nodes()
        lo, hi = np.array(self.lower), np.array(self.upper)
        rel = (X - lo) / (hi - lo)
        return np.any(rel > 1.0 - fraction + 1e-12, axis=1)

    def stencil(self, points):
        """Multilinear interpolation stencil of points projected onto the box.

        Returns ``(idx, w, projected)`` with ``idx``/``w`` of shape
        ``(n_points, 2**dim)``.
        """
        P = np.atleast_2d(np.asarray(points, dtype=float))
        lo, hi = np.array(self.lower), np.array(self.upper)
        clipped = np.clip(P, lo, hi)
        projected = np.any(clipped != P, axis=1)
        t = (clipped - lo) / self.spacing
        near = np.rint(t)
        t = np.where(np.abs(t - near) < 1e-9, near, t)
        cells = np.array(self.cells)
        i0 = np.clip(np.floor(t).astype(np.int64), 0, cells - 1)
        frac = t - i0
        strides = np.array([int(np.prod(self.shape[k + 1:])) for k in range(self.dim)], dtype=np.int64)
        n_corner = 2**self.dim
        idx = np.zeros((P.shape[0], n_corner), dtype=np.int64)
        w = np.ones((P.shape[0], n_corner))
        for c in range(n_corner):
            for k in range(self.dim):
                bit = (c >> (self.dim - 1 - k)) & 1
                idx[:, c] += (i0[:, k] + bit) * strides[k]
                w[:, c] *= frac[:, k] if bit else 1.0 - frac[:, k]
        return idx, w, projected

    def interpolate(self, values, points) -> np.ndarray:
        idx, w, _ = self.stencil(points)
        return np.sum(w * np.asarray(values)[idx], axis=1)

    def same_as(self, other: "Grid") -> bool:
        return self.upper == other.upper and self.lower == other.lower and self.cells == other.cells

    def to_json(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper), "cells": list(self.cells)}


@dataclass(frozen=True)
class GridFunction:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.size != self.grid.size:
            raise ValueError(f"expected {self.grid.size} values, got {v.size}")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid function has non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_callable(cls, grid: Grid, fn) -> "GridFunction":
        return cls(grid, np.asarray(fn(grid.nodes()), dtype=float))

    def reshaped(self) -> np.ndarray:
        return self.values.reshape(self.grid.shape)

    def write_csv(self, path) -> None:
        X = self.grid.nodes()
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow([f"x_{i + 1}" for i in range(self.grid.dim)] + ["value"])
            for row, val in zip(X, self.values):
                wr.writerow([format(c, ".17g") for c in row] + [format(val, ".17g")])

    @classmethod
    def read_csv(cls, path) -> "GridFunction":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0][-1].strip() != "value":
            raise ValueError("grid CSV needs a header x_1..x_l,value")
        data = np.array([[float(c) for c in r] for r in rows[1:] if r], dtype=float)
        X, vals = data[:, :-1], data[:, -1]
        axes = [np.unique(X[:, k]) for k in range(X.shape[1])]
        grid = Grid(tuple(a[-1] for a in axes), tuple(a.size - 1 for a in axes), tuple(a[0] for a in axes))
        if grid.size != X.shape[0] or not np.allclose(grid.nodes(), X, rtol=1e-12, atol=1e-12):
            raise ValueError("CSV rows are not a row-major tensor grid")
        return cls(grid, vals)


@dataclass
class SolveReport:
    iterations: int
    final_update_sup: float
    residual_sup: float
    cfl_dt: float | None = None
    flags: list[str] = field(default_factory=list)
    info: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {
            "iterations": self.iterations,
            "final_update_sup": self.final_update_sup,
            "residual_sup": self.residual_sup,
            "cfl_dt": self.cfl_dt,
            "flags": list(self.flags),
        }
        out.update(self.info)
        return out


# --------------------------------------------------------------------------
# stationary equation


@dataclass(frozen=True)
class StationaryConfig:
    vgrid: int = 3
    dt: float | None = None
    tol: float = 1e-10
    max_iter: int = 200_000
    v_radius: float = 1.0
    p_radius: float = 10.0
    radius_slack: float = 1e-3


@dataclass(frozen=True)
class SLTable:
    """Per-node candidate velocities with their running cost and foot stencils.

    Independent of ``h`` and ``lam``, so one table serves many solves.
    """

    grid: Grid
    dt: float
    velocities: np.ndarray  # (N, C, l)
    cost: np.ndarray  # (N, C), +inf for unusable candidates
    idx: np.ndarray  # (N, C, 2**l)
    w: np.ndarray  # (N, C, 2**l)
    stats: dict


def build_sl_table(ham, grid: Grid, cfg: StationaryConfig = StationaryConfig()) -> SLTable:
    if cfg.vgrid < 1:
        raise ValueError("velocity grid is empty")
    X = grid.nodes()
    N, l = X.shape
    n_tensor = cfg.vgrid**l
    C = n_tensor + 2
    Vel = np.zeros((N, C, l))
    cost = np.full((N, C), np.inf)
    lcfg = LegendreConfig(p_radius=cfg.p_radius)
    dropped = unconverged = 0
    for n in range(N):
        x = X[n]
        lo, hi = velocity_bounds(ham, x, cfg.v_radius)
        axes = [np.linspace(lo[k], hi[k], cfg.vgrid) for k in range(l)]
        mesh = np.meshgrid(*axes, indexing="ij")
        Vel[n, :n_tensor] = np.stack([m.ravel() for m in mesh], axis=1)
        # slot n_tensor holds v = 0, the last slot the zero-cost velocity
        Vel[n, -1] = ham.value_grad(x, np.zeros(l))[1]
        for c in range(C - 1):
            res = legendre(ham, x, Vel[n, c], lcfg)
            scale = 1.0 + float(np.max(np.abs(Vel[n, c])))
            if res.radius_limited and res.outward_slope > cfg.radius_slack * scale:
                dropped += 1
                continue
            if not res.converged:
                unconverged += 1
            cost[n, c] = max(res.value, 0.0)
        # L(x, grad_p H(x, 0)) = 0 because H(x, 0) = 0 and H is convex
        cost[n, -1] = 0.0
    usable = np.isfinite(cost)
    vmax = float(np.max(np.abs(np.where(usable[..., None], Vel, 0.0))))
    dt = cfg.dt if cfg.dt is not None else float(np.min(grid.spacing)) / max(vmax, 1e-12)
    feet = X[:, None, :] + dt * Vel
    idx, w, projected = grid.stencil(feet.reshape(-1, l))
    idx = idx.reshape(N, C, -1)
    w = w.reshape(N, C, -1)
    projected = projected.reshape(N, C) & usable
    stats = {
        "candidates_per_node": C,
        "dropped_radius_limited": int(dropped),
        "legendre_unconverged": int(unconverged),
        "boundary_activity": float(projected.sum() / usable.sum()),
        "max_speed": vmax,
    }
    return SLTable(grid, float(dt), Vel, cost, np.ascontiguousarray(idx), np.ascontiguousarray(w), stats)


def solve_stationary(ham, h, lam: float, cfg: StationaryConfig = StationaryConfig(),
                     table: SLTable | None = None):
    """Fixed point of the discounted semi-Lagrangian update.

    ``f(x) = max_v { (1 - b) h(x) - lam (1 - b) L(x, v) + b f(x + dt v) }``
    with ``b = exp(-dt / lam)`` and ``f(x + dt v)`` interpolated on the grid.
    ``h`` may be a list of grid functions: they are iterated jointly with a
    shared stopping rule, which keeps the comparison ``h1 <= h2 => f1 <= f2``
    exact in floating point.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    batch = not isinstance(h, GridFunction)
    hs = list(h) if batch else [h]
    grid = hs[0].grid
    for g in hs[1:]:
        if not g.grid.same_as(grid):
            raise GridMismatchError("all right-hand sides must share a grid")
    if table is None:
        table = build_sl_table(ham, grid, cfg)
    elif not table.grid.same_as(grid):
        raise GridMismatchError("table was built on another grid")
    beta = math.exp(-table.dt / lam)
    gain = 1.0 - beta
    penalty = lam * gain
    bases = [np.ascontiguousarray(gain * g.values[:, None] - penalty * table.cost) for g in hs]
    if np.any(np.all(np.isinf(bases[0]), axis=1)):
        raise ValueError("velocity grid is empty at some node")
    fs = [g.values.copy() for g in hs]
    threshold = cfg.tol * gain
    update = np.inf
    prev = None
    ratio_max = 0.0
    it = 0
    while it < cfg.max_iter:
        new = [K.sl_sweep(f, b, table.idx, table.w, beta)[0] for f, b in zip(fs, bases)]
        update = max(float(np.max(np.abs(a - b))) for a, b in zip(new, fs))
        fs = new
        it += 1
        if prev is not None and prev > 0 and update > 1e-300:
            ratio_max = max(ratio_max, update / prev)
        prev = update
        if update <= threshold:
            break
    flags = []
    if update > threshold:
        raise NonConvergenceError(f"value iteration did not reach tol after {cfg.max_iter} sweeps")
    if table.stats["boundary_activity"] > 0:
        flags.append("boundary-active")
    if table.stats["legendre_unconverged"]:
        flags.append("legendre-unconverged")
    outs = [GridFunction(grid, f) for f in fs]
    res = residual_check(outs[0], hs[0], lam, ham)
    report = SolveReport(it, update, res[1], None, flags, {
        "dt": table.dt,
        "discount": beta,
        "contraction_max": ratio_max,
        "lambda": lam,
        "vgrid": cfg.vgrid,
        **table.stats,
    })
    return (outs if batch else outs[0]), report


def residual_check(f: GridFunction, h: GridFunction, lam: float, ham):
    """``f - lam H(x, Df) - h`` with centered differences inside, one-sided on faces.

    Returns ``(residual GridFunction, sup norm)``.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    if not f.grid.same_as(h.grid):
        raise GridMismatchError("f and h live on different grids")
    grid = f.grid
    grads = np.gradient(f.reshaped(), *grid.spacing, edge_order=1)
    if grid.dim == 1:
        grads = [grads]
    P = np.stack([g.ravel() for g in grads], axis=1)
    H, _ = ham.many(grid.nodes(), P)
    r = f.values - lam * H - h.values
    return GridFunction(grid, r), float(np.max(np.abs(r)))


def discrete_comparison(u: GridFunction, v: GridFunction) -> dict:
    if not u.grid.same_as(v.grid):
        raise GridMismatchError("u and v live on different grids")
    d = u.values - v.values
    k = int(np.argmax(d))
    return {"sup_diff": float(d[k]), "argmax": k, "node": u.grid.nodes()[k].tolist()}


# --------------------------------------------------------------------------
# evolution equation


@dataclass(frozen=True)
class EvolutionConfig:
    cfl: float = 0.5
    sigma: tuple[float, ...] | None = None
    snapshots: tuple[float, ...] = ()
    dt: float | None = None


def _one_sided(U, spacing):
    """Backward and forward differences with a constant ghost layer."""
    Dm, Dp = [], []
    for k, h in enumerate(spacing):
        d = np.diff(U, axis=k) / h
        pad = [(0, 0)] * U.ndim
        pad[k] = (1, 0)
        Dm.append(np.pad(d, pad).ravel())
        pad[k] = (0, 1)
        Dp.append(np.pad(d, pad).ravel())
    return np.stack(Dm, axis=1), np.stack(Dp, axis=1)


def estimate_sigma(ham, u0: GridFunction) -> np.ndarray:
    """Lax-Friedrichs dissipation from ``|H_p|`` over the gradient range of ``u0``, inflated 25 %."""
    Dm, Dp = _one_sided(u0.reshaped(), u0.grid.spacing)
    radius = float(max(np.max(np.abs(Dm)), np.max(np.abs(Dp))))
    X = u0.grid.nodes()
    sig = np.zeros(u0.grid.dim)
    for x in X:
        lo, hi = velocity_bounds(ham, x, radius, n_samples=16)
        sig = np.maximum(sig, np.maximum(np.abs(lo), np.abs(hi)))
    return 1.25 * np.maximum(sig, 1e-12)


def solve_evolution(ham, u0: GridFunction, T: float, cfg: EvolutionConfig = EvolutionConfig()):
    """Explicit Lax-Friedrichs integration of ``u_t = H(x, grad u)`` up to ``T``.

    Returns the snapshots (requested times, then ``T``) and a report.
    """
    if not T > 0:
        raise ValueError("T must be positive")
    if not 0 < cfg.cfl <= 1:
        raise CFLError("cfl must lie in (0, 1]")
    grid = u0.grid
    h = grid.spacing
    sigma = np.asarray(cfg.sigma, dtype=float) if cfg.sigma is not None else estimate_sigma(ham, u0)
    sigma = np.broadcast_to(sigma, (grid.dim,)).copy()
    dt_cfl = cfg.cfl * float(np.min(h)) / float(np.sum(sigma))
    if cfg.dt is not None:
        if cfg.dt * float(np.sum(sigma)) / float(np.min(h)) > 1.0:
            raise CFLError("forced time step violates the CFL bound")
        dt_cfl = cfg.dt
    X = grid.nodes()
    times = sorted(t for t in set(cfg.snapshots) if 0 < t < T) + [T]
    U = u0.values.copy()
    t = 0.0
    steps = 0
    underflow = False
    out = []
    for target in times:
        while t < target:
            dt = min(dt_cfl, target - t)
            if target - (t + dt) < 1e-12 * dt_cfl:
                dt = target - t
            Dm, Dp = _one_sided(U.reshape(grid.shape), h)
            Hc, G = ham.many(X, 0.5 * (Dm + Dp))
            if np.any(np.abs(G) > sigma[None, :]):
                underflow = True
            U = U + dt * (Hc + np.sum(0.5 * sigma[None, :] * (Dp - Dm), axis=1))
            t = target if dt == target - t else t + dt
            steps += 1
        out.append(GridFunction(grid, U.copy()))
    flags = ["sigma-underflow", "non-monotone"] if underflow else []
    report = SolveReport(steps, 0.0, math.nan, dt_cfl, flags, {"sigma": sigma.tolist(), "T": T,
                                                                 "times": times})
    return out, report
