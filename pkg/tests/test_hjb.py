"""Grids, the stationary semi-Lagrangian solver and the evolution scheme."""

import math

import numpy as np
import pytest

import crnhjb._kernels as K
from crnhjb.hamiltonian import ControlEvaluator
from crnhjb.hjb import (
    CFLError,
    EvolutionConfig,
    Grid,
    GridFunction,
    GridMismatchError,
    NonConvergenceError,
    StationaryConfig,
    discrete_comparison,
    residual_check,
    solve_evolution,
    solve_stationary,
)
from crnhjb.lagrangian import velocity_bounds
from crnhjb.model import eikonal_controls, quadratic_controls

QUAD = ControlEvaluator(quadratic_controls(3.0, 601))


# --------------------------------------------------------------------------
# grids


def test_grid_geometry():
    g = Grid((2.0, 3.0), (4, 6))
    assert g.dim == 2 and g.shape == (5, 7) and g.size == 35
    np.testing.assert_allclose(g.spacing, [0.5, 0.5])
    X = g.nodes()
    assert X.shape == (35, 2)
    np.testing.assert_array_equal(X[0], [0.0, 0.0])
    np.testing.assert_array_equal(X[1], [0.0, 0.5])
    np.testing.assert_array_equal(X[-1], [2.0, 3.0])
    assert g.interior_mask().sum() == 3 * 5


@pytest.mark.parametrize("upper, cells", [((1.0,), (2,)), ((0.0,), (4,)), ((1.0, 1.0), (4, 4, 4))])
def test_grid_rejects_bad_shapes(upper, cells):
    with pytest.raises(ValueError):
        Grid(upper, cells)


def test_shell_mask_is_outer_band():
    g = Grid((10.0,), (10,))
    m = g.shell_mask(0.2)
    x = g.nodes()[:, 0]
    np.testing.assert_array_equal(m, x > 8.0)


def test_interpolation_exact_on_multilinear(rng):
    # [DERIVED] multilinear interpolation reproduces a + b x + c y + d x y
    g = Grid((2.0, 3.0), (5, 7))
    fn = lambda X: 1.0 + 2.0 * X[:, 0] - 0.5 * X[:, 1] + 0.25 * X[:, 0] * X[:, 1]
    vals = fn(g.nodes())
    pts = rng.uniform(0.0, 1.0, (50, 2)) * [2.0, 3.0]
    np.testing.assert_allclose(g.interpolate(vals, pts), fn(pts), atol=1e-13)


def test_stencil_projects_outside_points():
    g = Grid((1.0,), (4,))
    idx, w, proj = g.stencil(np.array([[-0.3], [0.5], [1.7]]))
    assert proj.tolist() == [True, False, True]
    np.testing.assert_allclose(g.interpolate(np.arange(5.0), np.array([[-0.3], [1.7]])), [0.0, 4.0])


def test_grid_function_guards_and_csv(tmp_path):
    g = Grid((1.0, 2.0), (3, 4))
    with pytest.raises(ValueError):
        GridFunction(g, np.zeros(3))
    with pytest.raises(ValueError):
        GridFunction(g, np.full(g.size, np.nan))
    f = GridFunction.from_callable(g, lambda X: np.sin(X[:, 0]) / 3.0 + X[:, 1] ** 0.5)
    with pytest.raises(ValueError):
        f.values[0] = 1.0
    path = tmp_path / "f.csv"
    f.write_csv(path)
    assert path.read_text().splitlines()[0] == "x_1,x_2,value"
    back = GridFunction.read_csv(path)
    assert back.grid.same_as(g)
    np.testing.assert_array_equal(back.values, f.values)


# --------------------------------------------------------------------------
# stationary solver


def _random_h(grid, rng, scale=1.0):
    X = grid.nodes()
    a = rng.normal(size=3)
    return GridFunction(grid, scale * (a[0] * np.sin(X[:, 0] / 3) + a[1] * np.cos(X[:, 1] / 4)
                                       + a[2] * np.tanh(X[:, 0] - X[:, 1])))


def test_constant_h_is_fixed(mm_ham, mm_grid, mm_table):
    for c in (0.0, 1.7, -3.0):
        h = GridFunction(mm_grid, np.full(mm_grid.size, c))
        for lam in (0.5, 2.0):
            f, rep = solve_stationary(mm_ham, h, lam, table=mm_table)
            assert np.max(np.abs(f.values - c)) <= 1e-10


def test_monotone_in_h_exact(mm_ham, mm_grid, mm_table, rng):
    h1 = _random_h(mm_grid, rng)
    h2 = GridFunction(mm_grid, h1.values + rng.uniform(0.0, 0.5, mm_grid.size))
    (f1, f2), _ = solve_stationary(mm_ham, [h1, h2], 1.0, table=mm_table)
    assert np.all(f1.values <= f2.values)


def test_comparison_bound(mm_ham, mm_grid, mm_table, rng):
    for _ in range(3):
        h1, h2 = _random_h(mm_grid, rng), _random_h(mm_grid, rng)
        (f1, f2), rep = solve_stationary(mm_ham, [h1, h2], 1.0, table=mm_table)
        bound = float(np.max(h1.values - h2.values))
        assert discrete_comparison(f1, f2)["sup_diff"] <= bound + 1e-10


def test_comparison_with_bounded_gap(mm_ham, mm_grid, mm_table, rng):
    h2 = _random_h(mm_grid, rng)
    h1 = GridFunction(mm_grid, h2.values + rng.uniform(-0.5, 0.3, mm_grid.size))
    (f1, f2), _ = solve_stationary(mm_ham, [h1, h2], 0.7, table=mm_table)
    assert discrete_comparison(f1, f2)["sup_diff"] <= 0.3 + 1e-8


def test_contraction_factor(mm_ham, mm_grid, mm_table, rng):
    f, rep = solve_stationary(mm_ham, _random_h(mm_grid, rng), 1.0, table=mm_table)
    assert rep.info["discount"] == pytest.approx(math.exp(-mm_table.dt), rel=1e-15)
    assert rep.info["contraction_max"] <= rep.info["discount"] + 1e-12
    assert rep.final_update_sup <= 1e-10 * (1 - rep.info["discount"])
    assert math.isfinite(rep.residual_sup)


def test_sweep_is_monotone(mm_grid, mm_table, rng):
    # raising any input node never lowers any output node
    base = np.ascontiguousarray(0.1 * rng.normal(size=(1, 1)) - mm_table.cost)
    f = rng.normal(size=mm_grid.size)
    out = K.sl_sweep(f, base, mm_table.idx, mm_table.w, 0.9)[0]
    for _ in range(20):
        g = f.copy()
        k = rng.integers(mm_grid.size)
        g[k] += rng.uniform(0.0, 1.0)
        assert np.all(K.sl_sweep(g, base, mm_table.idx, mm_table.w, 0.9)[0] >= out)


def test_stationary_guards(mm_ham, mm_grid, mm_table):
    h = GridFunction(mm_grid, np.zeros(mm_grid.size))
    with pytest.raises(ValueError):
        solve_stationary(mm_ham, h, 0.0, table=mm_table)
    other = GridFunction(Grid((5.0, 5.0), (40, 40)), np.zeros(mm_grid.size))
    with pytest.raises(GridMismatchError):
        solve_stationary(mm_ham, other, 1.0, table=mm_table)
    with pytest.raises(ValueError):
        solve_stationary(mm_ham, h, 1.0, StationaryConfig(vgrid=0))
    with pytest.raises(NonConvergenceError):
        solve_stationary(mm_ham, GridFunction(mm_grid, mm_grid.nodes()[:, 0]), 1.0,
                         StationaryConfig(max_iter=2), table=mm_table)


def test_eikonal_stationary_distance():
    # free unit-speed motion to the right never lowers h = x
    g = Grid((4.0,), (80,))
    h = GridFunction(g, g.nodes()[:, 0])
    ev = ControlEvaluator(eikonal_controls(1, cost=0.0))
    f, rep = solve_stationary(ev, h, 1.0, StationaryConfig(vgrid=3))
    assert np.all(f.values >= h.values - 1e-12)
    assert np.all(np.diff(f.values) >= -1e-12)


def test_boundary_velocity_safety(mm_ham, mm_grid, mm_table):
    # characteristics never leave through a zero face
    X = mm_grid.nodes()
    for i in range(2):
        face = X[:, i] == 0.0
        for x in X[face][::5]:
            lo, _ = velocity_bounds(mm_ham, x, 1.0)
            assert lo[i] >= -1e-9
        usable = np.isfinite(mm_table.cost[face])
        assert np.all(mm_table.velocities[face][..., i][usable] >= -1e-9)


def test_residual_of_constants(mm_ham, mm_grid):
    c = GridFunction(mm_grid, np.full(mm_grid.size, 2.5))
    r, sup = residual_check(c, c, 3.0, mm_ham)
    assert sup == 0.0 and np.all(r.values == 0.0)
    with pytest.raises(ValueError):
        residual_check(c, c, 0.0, mm_ham)


def test_discrete_comparison_basics():
    g = Grid((1.0,), (4,))
    v = GridFunction(g, np.array([0.0, 1.0, 2.0, 1.0, 0.0]))
    same = discrete_comparison(v, v)
    assert same["sup_diff"] == 0.0 and same["argmax"] == 0
    up = GridFunction(g, v.values + 1.0)
    assert discrete_comparison(up, v)["sup_diff"] == 1.0
    with pytest.raises(GridMismatchError):
        discrete_comparison(v, GridFunction(Grid((2.0,), (4,)), v.values))


# --------------------------------------------------------------------------
# evolution


def test_evolution_preserves_constants(mm_ham):
    g = Grid((5.0, 5.0), (20, 20))
    u0 = GridFunction(g, np.full(g.size, -1.25))
    out, rep = solve_evolution(mm_ham, u0, 0.3, EvolutionConfig(sigma=(3.0, 3.0)))
    np.testing.assert_array_equal(out[-1].values, u0.values)


def test_evolution_nonexpansive(rng):
    g = Grid((2.0,), (100,))
    X = g.nodes()[:, 0]
    u0 = GridFunction(g, -(X - 1.0) ** 2)
    v0 = GridFunction(g, -(X - 1.0) ** 2 + 0.2 * np.sin(3 * X) + rng.uniform(-0.1, 0.1, X.size))
    cfg = EvolutionConfig(sigma=(3.5,))
    (u,), ru = solve_evolution(QUAD, u0, 0.5, cfg)
    (v,), rv = solve_evolution(QUAD, v0, 0.5, cfg)
    assert ru.flags == [] and rv.flags == []
    assert np.max(np.abs(u.values - v.values)) <= np.max(np.abs(u0.values - v0.values)) + 1e-12


def _hopf_lax_error(cells):
    g = Grid((2.0,), (cells,))
    u0 = GridFunction.from_callable(g, lambda X: -(X[:, 0] - 1.0) ** 2)
    (u,), rep = solve_evolution(QUAD, u0, 0.5)
    x = g.nodes()[:, 0]
    # sup_y [-(y-1)^2 - (x-y)^2 / (2t)] = -(x-1)^2 / (1 + 2t)
    exact = -((x - 1.0) ** 2) / 2.0
    m = g.interior_mask()
    return float(np.max(np.abs(u.values - exact)[m])), float(g.spacing[0]), rep


def test_hopf_lax_benchmark():
    e1, dx, rep = _hopf_lax_error(100)
    e2, _, _ = _hopf_lax_error(200)
    assert rep.flags == []
    assert e1 <= 5 * dx
    assert 1.5 <= e1 / e2 <= 2.5


def test_snapshots_hit_requested_times():
    g = Grid((2.0,), (50,))
    u0 = GridFunction.from_callable(g, lambda X: -(X[:, 0] - 1.0) ** 2)
    out, rep = solve_evolution(QUAD, u0, 0.5, EvolutionConfig(snapshots=(0.1, 0.25, 0.7)))
    assert rep.info["times"] == [0.1, 0.25, 0.5]
    assert len(out) == 3
    (direct,), _ = solve_evolution(QUAD, u0, 0.1, EvolutionConfig(sigma=rep.info["sigma"]))
    np.testing.assert_array_equal(direct.values, out[0].values)


def test_forced_step_and_cfl_guards():
    g = Grid((2.0,), (50,))
    u0 = GridFunction(g, np.zeros(g.size))
    with pytest.raises(CFLError):
        solve_evolution(QUAD, u0, 0.1, EvolutionConfig(sigma=(3.0,), dt=1.0))
    with pytest.raises(CFLError):
        solve_evolution(QUAD, u0, 0.1, EvolutionConfig(cfl=1.5))
    with pytest.raises(ValueError):
        solve_evolution(QUAD, u0, 0.0)


def test_sigma_underflow_flagged():
    g = Grid((2.0,), (50,))
    u0 = GridFunction.from_callable(g, lambda X: -(X[:, 0] - 1.0) ** 2)
    _, rep = solve_evolution(QUAD, u0, 0.1, EvolutionConfig(sigma=(0.5,)))
    assert "sigma-underflow" in rep.flags and "non-monotone" in rep.flags
