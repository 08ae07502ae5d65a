"""Numerical certificates for the structural assumptions and the doubling argument."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .hamiltonian import DegenerateSupportError, ThetaMeasure, TiltOverflowError, eval_I, eval_Lambda
from .hjb import Grid, GridFunction, GridMismatchError
from .model import CapacityError

KINDS = ("log-quadratic", "quadratic")


@dataclass(frozen=True)
class ContainmentSpec:
    kind: str = "log-quadratic"
    c_estimate: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown containment kind {self.kind!r}")

    def value(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        sq = np.sum(X * X, axis=1)
        return 0.5 * np.log1p(sq) if self.kind == "log-quadratic" else 0.5 * sq

    def grad(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        if self.kind == "log-quadratic":
            return X / (1.0 + np.sum(X * X, axis=1))[:, None]
        return X.copy()


def check_containment(ham, spec: ContainmentSpec, grid: Grid, shell: float = 0.2) -> dict:
    """Evaluate ``H(x, grad Upsilon(x))`` on the grid.

    Passes when the largest value on the outer shell does not exceed the
    largest value inside it, i.e. the sampled values stop growing outward.
    """
    X = grid.nodes()
    P = spec.grad(X)
    try:
        H, _ = ham.many(X, P)
    except (TiltOverflowError, OverflowError):
        return {"kind": spec.kind, "pass": False, "c_estimate": math.inf, "argmax": None,
                "interior_max": None, "shell_max": math.inf, "flags": ["overflow"]}
    mask = grid.shell_mask(shell)
    k = int(np.argmax(H))
    inner = float(np.max(H[~mask])) if np.any(~mask) else -math.inf
    outer = float(np.max(H[mask]))
    return {
        "kind": spec.kind,
        "pass": bool(outer <= inner),
        "c_estimate": float(H[k]),
        "argmax": X[k].tolist(),
        "interior_max": inner,
        "shell_max": outer,
        "flags": [],
    }


def check_convexity_and_zero(ham, xs, n_triples: int = 200, p_radius: float = 2.0, seed: int = 0,
                             zero_tol: float = 1e-10, convex_tol: float = 1e-9) -> dict:
    """Midpoint-style convexity in ``p`` and ``H(x, 0) = 0`` at each sample state."""
    rng = np.random.default_rng(seed)
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    l = xs.shape[1]
    worst_zero, worst_convex = 0.0, -math.inf
    at_zero = at_convex = None
    for x in xs:
        z = abs(ham.value(x, np.zeros(l)))
        if z > worst_zero:
            worst_zero, at_zero = z, x.tolist()
        P1 = rng.uniform(-p_radius, p_radius, (n_triples, l))
        P2 = rng.uniform(-p_radius, p_radius, (n_triples, l))
        t = rng.uniform(0.0, 1.0, n_triples)
        Pm = t[:, None] * P1 + (1.0 - t)[:, None] * P2
        X = np.repeat(x[None, :], n_triples, axis=0)
        H1, _ = ham.many(X, P1)
        H2, _ = ham.many(X, P2)
        Hm, _ = ham.many(X, Pm)
        viol = Hm - (t * H1 + (1.0 - t) * H2)
        k = int(np.argmax(viol))
        if viol[k] > worst_convex:
            worst_convex = float(viol[k])
            at_convex = {"x": x.tolist(), "p1": P1[k].tolist(), "p2": P2[k].tolist(), "t": float(t[k])}
    zero_ok = worst_zero <= zero_tol
    convex_ok = worst_convex <= convex_tol
    return {
        "pass": bool(zero_ok and convex_ok),
        "zero": {"pass": bool(zero_ok), "worst": worst_zero, "at": at_zero},
        "convexity": {"pass": bool(convex_ok), "worst": worst_convex, "at": at_convex},
    }


# --------------------------------------------------------------------------
# doubling of variables


@dataclass
class DoublingReport:
    rows: list[dict]
    passed: bool
    per_eps: dict
    flags: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"pass": self.passed, "per_eps": self.per_eps, "rows": self.rows, "flags": self.flags}

    def write_csv(self, path) -> None:
        l = len(self.rows[0]["x"]) if self.rows else 0
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["eps", "alpha"] + [f"x_{i + 1}" for i in range(l)]
                        + [f"y_{i + 1}" for i in range(l)] + ["penalty", "H_diff"])
            for r in self.rows:
                wr.writerow([format(v, ".17g") for v in [r["eps"], r["alpha"], *r["x"], *r["y"],
                                                          r["penalty"], r["H_diff"]]])


def doubling_certificate(u: GridFunction, v: GridFunction, spec: ContainmentSpec, eps_list,
                         alpha_list, ham, tol: float = 1e-2, pair_cap: int = 10**8) -> DoublingReport:
    """Exhaustive doubling-of-variables maximization over node pairs.

    For every ``(eps, alpha)`` the pair ``(x, y)`` maximizing
    ``u(x)/(1-eps) - v(y)/(1+eps) - alpha/2 |x-y|^2 - eps/(1-eps) Ups(x)
    - eps/(1+eps) Ups(y)`` is recorded with the penalty ``alpha/2 |x-y|^2``
    and ``H(x, p) - H(y, p)`` at ``p = alpha (x - y)``.  Ties go to the
    lowest flattened pair index.
    """
    if not u.grid.same_as(v.grid):
        raise GridMismatchError("u and v live on different grids")
    X = np.ascontiguousarray(u.grid.nodes())
    n = X.shape[0]
    if n * n > pair_cap:
        raise CapacityError(f"{n * n} node pairs exceed the cap of {pair_cap}")
    alphas = sorted(float(a) for a in alpha_list)
    ups = spec.value(X)
    rows = []
    per_eps = {}
    flags = []
    passed = True
    for eps in eps_list:
        eps = float(eps)
        if not 0 <= eps < 1:
            raise ValueError("eps must lie in [0, 1)")
        us = np.ascontiguousarray(u.values / (1 - eps) - eps / (1 - eps) * ups)
        vs = np.ascontiguousarray(v.values / (1 + eps) + eps / (1 + eps) * ups)
        diag = float(np.max(us - vs))
        eps_rows = []
        for alpha in alphas:
            i, j, best = K.doubling_argmax(us, vs, X, alpha)
            x, y = X[i], X[j]
            d2 = float(np.sum((x - y) ** 2))
            penalty = 0.5 * alpha * d2
            p = alpha * (x - y)
            try:
                hdiff = ham.value(x, p) - ham.value(y, p)
            except (TiltOverflowError, OverflowError):
                hdiff = math.inf
                flags.append(f"overflow at eps={eps:g}, alpha={alpha:g}")
            row = {"eps": eps, "alpha": alpha, "x": x.tolist(), "y": y.tolist(), "penalty": penalty,
                   "H_diff": float(hdiff), "phi_max": best, "diagonal_sup": diag}
            rows.append(row)
            eps_rows.append(row)
        top = eps_rows[len(eps_rows) // 2:]
        decay = all(b["penalty"] <= a["penalty"] for a, b in zip(top, top[1:]))
        final = eps_rows[-1]["H_diff"] <= tol if eps_rows else True
        per_eps[str(eps)] = {"penalty_non_increasing": bool(decay), "final_H_diff_ok": bool(final),
                                        "final_penalty": eps_rows[-1]["penalty"] if eps_rows else None}
        passed = passed and decay and final
    return DoublingReport(rows, bool(passed), per_eps, flags)


# --------------------------------------------------------------------------
# lower semicontinuity of the cost I - Lambda


def lsc_spot_check(net, fss, sequence, limit, tol: float = 1e-4) -> dict:
    """Liminf direction of ``(I - Lambda)(x_n, p_n, theta_n) -> (I - Lambda)(x, p, theta)``.

    ``sequence`` and ``limit`` hold ``(x, p, theta)`` triples; the tail is
    the second half of the sequence.
    """

    def cost(x, p, th):
        th = ThetaMeasure.of(th)
        return eval_I(net, fss, x, p, th) - eval_Lambda(net, fss, x, p, th)

    seq = list(sequence)
    flags = []
    if len(seq) >= 2:
        a = np.concatenate([np.ravel(c) for c in seq[-1]])
        b = np.concatenate([np.ravel(c) for c in seq[-2]])
        if np.max(np.abs(a - b)) >= 1e-6:
            flags.append("sequence-not-settled")
    try:
        target = cost(*limit)
        tail = [cost(*item) for item in seq[len(seq) // 2:]]
    except DegenerateSupportError as err:
        return {"pass": None, "status": "inconclusive", "reason": str(err), "flags": flags}
    liminf = min(tail) if tail else math.inf
    ok = liminf >= target - tol
    return {"pass": bool(ok), "status": "pass" if ok else "fail", "limit_value": target,
            "tail_liminf": liminf, "flags": flags}
