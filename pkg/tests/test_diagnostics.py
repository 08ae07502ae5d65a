"""Containment, convexity, doubling and lower-semicontinuity checks."""

import csv

import numpy as np
import pytest

from crnhjb.diagnostics import (
    ContainmentSpec,
    check_containment,
    check_convexity_and_zero,
    doubling_certificate,
    lsc_spot_check,
)
from crnhjb.hamiltonian import ControlEvaluator, CRNHamiltonian
from crnhjb.hjb import Grid, GridFunction, GridMismatchError, solve_stationary
from crnhjb.model import (
    CapacityError,
    controls_from_json,
    eikonal_controls,
    enumerate_fast_states,
    network_from_json,
)

EPS = (0.1, 0.01)
ALPHAS = (1, 10, 100, 1000, 10000)


def _superlinear():
    # f(x, a) = a x^2 with a = +-1, no running cost: H(x, p) = x^2 |p|
    mono = lambda k: {"monomials": [{"k": k, "x_exp": [2]}]}
    zero = {"monomials": [{"k": 0.0, "x_exp": [0]}]}
    return ControlEvaluator(controls_from_json({"controls": [
        {"label": "+", "drift": [mono(1.0)], "cost": zero},
        {"label": "-", "drift": [mono(-1.0)], "cost": zero},
    ]}))


def _slow_only(scale):
    # single fast state and only slow reactions: H is linear in the rates
    def rx(gx, k, x_exp):
        return {"gamma_x": gx, "gamma_y": [0], "rate": {"monomials": [{"k": k, "x_exp": x_exp, "y_exp": [0]}]}}

    return network_from_json({"slow_dim": 2, "fast_dim": 1, "conservation_M": 0, "reactions": [
        rx([1, 0], 1.5 * scale, [0, 0]), rx([-1, 0], 0.5 * scale, [1, 0]),
        rx([0, 1], 1.0 * scale, [0, 0]), rx([0, -1], 2.0 * scale, [0, 1]),
    ]})


# --------------------------------------------------------------------------
# containment


def test_containment_spec_formulas():
    X = np.array([[0.0, 0.0], [1.0, 2.0]])
    lq, q = ContainmentSpec("log-quadratic"), ContainmentSpec("quadratic")
    np.testing.assert_allclose(lq.value(X), [0.0, 0.5 * np.log(6.0)])
    np.testing.assert_allclose(lq.grad(X)[1], [1 / 6, 2 / 6])
    np.testing.assert_allclose(q.value(X), [0.0, 2.5])
    np.testing.assert_array_equal(q.grad(X), X)
    with pytest.raises(ValueError):
        ContainmentSpec("cubic")


def test_containment_mm_log_quadratic(mm_ham, mm_grid):
    rep = check_containment(mm_ham, ContainmentSpec("log-quadratic"), mm_grid)
    assert rep["pass"] and np.isfinite(rep["c_estimate"])
    assert rep["shell_max"] <= rep["interior_max"]
    assert rep["c_estimate"] == max(rep["shell_max"], rep["interior_max"])


def test_containment_eikonal():
    rep = check_containment(ControlEvaluator(eikonal_controls(2)), ContainmentSpec("log-quadratic"),
                            Grid((10.0, 10.0), (40, 40)))
    assert rep["pass"]


def test_containment_superlinear_fails():
    # [DERIVED] H(x, x / (1 + x^2)) = x^3 / (1 + x^2) grows linearly
    rep = check_containment(_superlinear(), ContainmentSpec("log-quadratic"), Grid((10.0,), (40,)))
    assert not rep["pass"]
    assert rep["argmax"] == [10.0]
    assert rep["c_estimate"] == pytest.approx(1000.0 / 101.0)


def test_containment_rate_scaling_slow_only():
    grid = Grid((5.0, 5.0), (10, 10))
    spec = ContainmentSpec("log-quadratic")
    est = [check_containment(CRNHamiltonian(_slow_only(s)), spec, grid)["c_estimate"] for s in (1.0, 2.0)]
    assert est[0] > 0
    assert est[1] == pytest.approx(2.0 * est[0], rel=1e-14)


# --------------------------------------------------------------------------
# convexity and normalization


def test_convexity_and_zero_mm(mm_ham, rng):
    xs = rng.uniform(0.1, 10.0, (20, 2))
    rep = check_convexity_and_zero(mm_ham, xs)
    assert rep["pass"]
    assert rep["zero"]["worst"] <= 1e-10
    assert rep["convexity"]["worst"] <= 1e-9


def test_convexity_and_zero_absolute_value():
    ev = ControlEvaluator(eikonal_controls(1, cost=0.0))
    rep = check_convexity_and_zero(ev, [[0.5], [2.0]])
    assert rep["pass"] and rep["zero"]["worst"] == 0.0


class _Shifted:
    def __init__(self, ham, c):
        self._h, self._c, self.dim = ham, c, ham.dim

    def value(self, x, p):
        return self._h.value(x, p) + self._c

    def many(self, X, P):
        H, G = self._h.many(X, P)
        return H + self._c, G


def test_corrupted_evaluator_fails_zero_check(mm_ham):
    rep = check_convexity_and_zero(_Shifted(mm_ham, 0.1), [[1.0, 1.0]])
    assert not rep["pass"] and not rep["zero"]["pass"]
    assert rep["convexity"]["pass"]


def test_convexity_report_is_seeded(mm_ham):
    a = check_convexity_and_zero(mm_ham, [[1.0, 2.0]], n_triples=20, seed=3)
    b = check_convexity_and_zero(mm_ham, [[1.0, 2.0]], n_triples=20, seed=3)
    assert a == b


# --------------------------------------------------------------------------
# doubling


def _smooth_u(grid):
    X = grid.nodes()
    return GridFunction(grid, 0.1 * np.sin(X[:, 0] / 2.0) * np.cos(X[:, 1] / 3.0))


def test_doubling_identical_smooth(mm_ham, mm_grid):
    u = _smooth_u(mm_grid)
    rep = doubling_certificate(u, u, ContainmentSpec(), EPS, ALPHAS, mm_ham)
    assert rep.passed
    for row in rep.rows:
        assert row["x"] == row["y"]
        assert row["penalty"] == 0.0 and row["H_diff"] == 0.0


@pytest.fixture(scope="module")
def solved_pair(mm_ham, mm_grid, mm_table):
    X = mm_grid.nodes()
    h1 = GridFunction(mm_grid, np.sin(X[:, 0] / 3.0) + 0.5 * np.cos(X[:, 1] / 4.0))
    h2 = GridFunction(mm_grid, np.tanh(X[:, 0] - X[:, 1]) * 0.8)
    (f1, f2), _ = solve_stationary(mm_ham, [h1, h2], 1.0, table=mm_table)
    return f1, f2


def test_doubling_identical_solver_output(mm_ham, solved_pair):
    # the diagonal wins exactly once alpha dominates the grid-scale slope
    u = solved_pair[0]
    rep = doubling_certificate(u, u, ContainmentSpec(), EPS, ALPHAS, mm_ham)
    for row in rep.rows:
        if row["alpha"] > ALPHAS[0]:
            assert row["penalty"] == 0.0 and row["H_diff"] == 0.0


def test_doubling_distinct_solutions(mm_ham, solved_pair):
    u, v = solved_pair
    rep = doubling_certificate(u, v, ContainmentSpec(), EPS, ALPHAS, mm_ham)
    assert rep.passed
    for eps in EPS:
        rows = [r for r in rep.rows if r["eps"] == eps]
        assert [r["alpha"] for r in rows] == sorted(r["alpha"] for r in rows)
        assert rows[-1]["penalty"] < 1e-3
        assert rows[-1]["H_diff"] <= 1e-2
        assert rep.per_eps[str(eps)]["penalty_non_increasing"]


def test_doubling_shift_keeps_pairs(mm_ham, mm_grid):
    u = _smooth_u(mm_grid)
    v = GridFunction(mm_grid, u.values - 1.0)
    a = doubling_certificate(u, u, ContainmentSpec(), EPS, ALPHAS, mm_ham)
    b = doubling_certificate(u, v, ContainmentSpec(), EPS, ALPHAS, mm_ham)
    for ra, rb in zip(a.rows, b.rows):
        assert (ra["x"], ra["y"]) == (rb["x"], rb["y"])
        assert rb["phi_max"] - ra["phi_max"] == pytest.approx(1.0 / (1.0 + ra["eps"]), abs=1e-12)
        assert rb["penalty"] == 0.0


def test_doubling_guards(mm_ham, mm_grid):
    u = _smooth_u(mm_grid)
    with pytest.raises(CapacityError):
        doubling_certificate(u, u, ContainmentSpec(), EPS, ALPHAS, mm_ham, pair_cap=1000)
    other = GridFunction(Grid((5.0, 5.0), (40, 40)), u.values)
    with pytest.raises(GridMismatchError):
        doubling_certificate(u, other, ContainmentSpec(), EPS, ALPHAS, mm_ham)
    with pytest.raises(ValueError):
        doubling_certificate(u, u, ContainmentSpec(), (1.0,), ALPHAS, mm_ham)


def test_doubling_csv(tmp_path, mm_ham):
    g = Grid((2.0, 2.0), (4, 4))
    u = _smooth_u(g)
    rep = doubling_certificate(u, u, ContainmentSpec(), (0.1,), (1, 10), mm_ham)
    path = tmp_path / "d.csv"
    rep.write_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["eps", "alpha", "x_1", "x_2", "y_1", "y_2", "penalty", "H_diff"]
    assert len(rows) == 3


def test_doubling_failure_detected(mm_ham, mm_grid):
    # a jump in u keeps the optimizers apart at moderate alpha
    X = mm_grid.nodes()
    u = GridFunction(mm_grid, np.where(X[:, 0] > 5.0, 3.0, 0.0))
    rep = doubling_certificate(u, u, ContainmentSpec(), (0.01,), (1, 10), mm_ham)
    assert rep.rows[0]["penalty"] > 0


# --------------------------------------------------------------------------
# lower semicontinuity


@pytest.fixture(scope="module")
def fss1(mm):
    return enumerate_fast_states(2, 1)


def test_lsc_constant_sequence(mm, fss1):
    item = ((1.0, 1.0), (0.3, -0.2), (0.4, 0.6))
    rep = lsc_spot_check(mm, fss1, [item] * 6, item)
    assert rep["pass"] and rep["tail_liminf"] == rep["limit_value"]


def test_lsc_along_line(mm, fss1):
    target = np.array([0.4, 0.6])
    seq = [((1.0, 1.0), (0.3, -0.2), target + 0.3 * 2.0**-k * np.array([1.0, -1.0])) for k in range(30)]
    rep = lsc_spot_check(mm, fss1, seq, ((1.0, 1.0), (0.3, -0.2), target), tol=1e-4)
    assert rep["pass"] and rep["flags"] == []


def test_lsc_point_mass_inconclusive(mm, fss1):
    seq = [((1.0, 1.0), (0.0, 0.0), (1.0 - 2.0**-k, 2.0**-k)) for k in range(1, 10)]
    rep = lsc_spot_check(mm, fss1, seq, ((1.0, 1.0), (0.0, 0.0), (1.0, 0.0)))
    assert rep["status"] == "inconclusive" and rep["pass"] is None
