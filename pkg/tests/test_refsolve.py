"""Reference solver validity: closed forms, conservation, convergence, file IO."""

import numpy as np
import pytest

from stpinn import pde
from stpinn.refsolve import (
    GridSolution,
    SolverInstability,
    coarsen_cells,
    mse,
    relative_l2,
    solve_burgers,
    solve_diff_react,
    solve_diff_sorb,
    solve_problem,
)


def make_grid(values, x_lo=0.0, x_hi=1.0, t_hi=1.0):
    values = np.asarray(values, dtype=float)
    return GridSolution(values.shape[1], values.shape[0], x_lo, x_hi, t_hi, values)


# ---------------------------------------------------------------- metrics

def test_relative_l2_basics():
    ref = make_grid(np.ones((2, 2)))
    assert relative_l2(ref, ref) == 0.0
    assert relative_l2(make_grid(2 * np.ones((2, 2))), ref) == pytest.approx(1.0)
    off = np.ones((2, 2))
    off[0, 0] += 1.0
    assert relative_l2(make_grid(off), ref) == pytest.approx(0.5)


def test_relative_l2_errors():
    a = make_grid(np.ones((2, 2)))
    b = make_grid(np.ones((2, 3)))
    with pytest.raises(ValueError):
        relative_l2(a, b)
    with pytest.raises(ValueError):
        relative_l2(a, make_grid(np.zeros((2, 2))))
    assert mse(a, make_grid(np.zeros((2, 2)))) == pytest.approx(1.0)


def test_grid_rejects_non_finite():
    bad = np.ones((2, 2))
    bad[1, 1] = np.nan
    with pytest.raises(ValueError):
        make_grid(bad)


def test_grid_file_round_trip(tmp_path, rng):
    g = make_grid(rng.normal(size=(5, 9)), x_lo=0.125, x_hi=0.875, t_hi=2.0)
    p = tmp_path / "ref.grid"
    g.save(p)
    h = GridSolution.load(p)
    assert (h.nx, h.nt, h.x_lo, h.x_hi, h.t_hi) == (9, 5, 0.125, 0.875, 2.0)
    np.testing.assert_array_equal(h.values, g.values)
    p2 = tmp_path / "ref2.grid"
    h.save(p2)
    assert p.read_bytes() == p2.read_bytes()
    (tmp_path / "bad.grid").write_bytes(b"wrong v0\n---\n")
    with pytest.raises(ValueError):
        GridSolution.load(tmp_path / "bad.grid")


# ---------------------------------------------------------------- burgers

def test_burgers_zero_and_constant_ic():
    g0 = solve_burgers(lambda x: np.zeros_like(x), 0.01, nx=32, nt=5, t_hi=0.2, refine=1)
    np.testing.assert_array_equal(g0.values, 0.0)
    gc = solve_burgers(lambda x: np.full_like(x, 0.7), 0.01, nx=32, nt=5, t_hi=0.2, refine=1)
    np.testing.assert_allclose(gc.values, 0.7, rtol=0, atol=1e-13)


def test_burgers_mass_conservation():
    ic = pde.sample_sinusoid_ic(7, 1.0)
    g = solve_burgers(ic, 0.01, nx=256, nt=9, t_hi=1.0, refine=1)
    mass = g.values.mean(axis=1)  # sum u dx = mean(u) * L on uniform cells
    drift = np.abs(mass - mass[0])
    scale = max(np.abs(mass[0]), np.abs(g.values).max())
    assert drift.max() / scale < 1e-8


def test_burgers_self_convergence():
    # error vs a 4x finer run shrinks by >= 1.8x when doubling resolution
    ic = pde.sample_sinusoid_ic(3, 1.0)
    t_hi = 0.4
    sols = {
        n: solve_burgers(ic, 0.01, nx=n, nt=3, t_hi=t_hi, refine=1)
        for n in (128, 256, 512)
    }
    fine = sols[512].values[-1]
    err = {
        n: np.linalg.norm(coarsen_cells(fine, 512 // n) - sols[n].values[-1])
        / np.sqrt(n)
        for n in (128, 256)
    }
    assert err[128] / err[256] >= 1.8


def test_burgers_cell_centered_coords():
    g = solve_burgers(lambda x: np.zeros_like(x), 0.01, nx=32, nt=3, t_hi=0.1, refine=2)
    xs = g.x_coords
    assert xs[0] == pytest.approx(0.5 / 32)
    assert xs[-1] == pytest.approx(1 - 0.5 / 32)
    np.testing.assert_allclose(np.diff(xs), 1 / 32)
    np.testing.assert_allclose(g.t_coords, [0, 0.05, 0.1])


def test_burgers_instability_cap():
    ic = pde.sample_sinusoid_ic(3, 1.0)
    with pytest.raises(SolverInstability):
        solve_burgers(ic, 0.01, nx=64, nt=3, t_hi=1.0, refine=1, max_steps=10)


# ---------------------------------------------------------------- diff-react

def test_diff_react_heat_mode_decay():
    # rho = 0, single sine mode: u = exp(-nu (2 pi)^2 t) sin(2 pi x)
    nu, t_hi = 0.5, 0.05
    ic = pde.SinusoidIC((1.0,), (1,), (0.0,), 1.0)
    g = solve_diff_react(ic, nu, 0.0, nx=1024, nt=2, t_hi=t_hi)
    want = np.exp(-nu * (2 * np.pi) ** 2 * t_hi) * np.sin(2 * np.pi * g.x_coords)
    assert np.max(np.abs(g.values[-1] - want)) < 1e-3


def test_diff_react_constant_ic_logistic():
    c, rho = 0.2, 1.0
    g = solve_diff_react(lambda x: np.full_like(x, c), 0.5, rho, nx=64, nt=11, t_hi=1.0)
    t = g.t_coords[:, None]
    e = c * np.exp(rho * t)
    want = e / (1 - c + e)
    assert np.max(np.abs(g.values - want)) < 1e-4


def test_diff_react_zero_ic():
    g = solve_diff_react(lambda x: np.zeros_like(x), 0.5, 1.0, nx=32, nt=4, t_hi=0.2)
    np.testing.assert_array_equal(g.values, 0.0)


def test_diff_react_self_convergence():
    ic = pde.sample_sinusoid_ic(11, 1.0)
    sols = {
        n: solve_diff_react(ic, 0.5, 1.0, nx=n, nt=2, t_hi=0.05)
        for n in (64, 128, 256)
    }
    fine = sols[256].values[-1]
    err = {n: np.linalg.norm(fine[:: 256 // n] - sols[n].values[-1]) / np.sqrt(n)
           for n in (64, 128)}
    assert err[64] / err[128] >= 1.8


# ---------------------------------------------------------------- diff-sorb

def test_diff_sorb_interior_equilibrium():
    # all-ones initial state: away from the draining right boundary layer the
    # field stays at the boundary-consistent equilibrium
    g = solve_diff_sorb(lambda x: np.ones_like(x), 5e-4, nx=256, nt=6, t_hi=50.0)
    left_half = g.values[:, : 128]
    assert np.max(np.abs(left_half - 1.0)) < 1e-3
    g2 = solve_diff_sorb(lambda x: np.ones_like(x), 5e-4, nx=512, nt=6, t_hi=50.0)
    # self-consistency at doubled resolution
    assert np.max(np.abs(g2.values[:, ::2][:, :128] - left_half)) < 1e-3


def test_diff_sorb_bounds_with_noise_ics():
    # maximum principle holds away from the right boundary column; the
    # one-sided Robin discretization admits a small negative boundary layer
    for seed in range(10):
        vals = pde.noise_ic(seed, 128)
        g = solve_diff_sorb(vals, 5e-4, nx=128, nt=6, t_hi=100.0)
        interior = g.values[:, :-1]
        assert interior.min() >= -0.05
        assert g.values.max() <= 1.0 + 1e-9
        assert g.values[1:, :64].min() >= 0.0  # smoothed region stays nonnegative
        assert g.values[:, -1].min() >= -1.2  # mirrored boundary node, bounded


def test_diff_sorb_time_refinement():
    # halving the substep size at solver defaults barely moves the field
    vals = pde.noise_ic(1, 128)
    a = solve_diff_sorb(vals, 5e-4, nx=128, nt=4, t_hi=100.0)
    b = solve_diff_sorb(vals, 5e-4, nx=128, nt=4, t_hi=100.0, cfl=0.075)
    rms = np.sqrt(np.mean((a.values - b.values) ** 2))
    assert rms < 1e-4


def test_diff_sorb_robin_row_consistency():
    # stored rows satisfy the discrete right-boundary rule exactly
    vals = pde.noise_ic(2, 64)
    g = solve_diff_sorb(vals, 5e-4, nx=64, nt=4, t_hi=50.0)
    dx = (g.x_hi - g.x_lo) / (g.nx - 1)
    for row in g.values:
        assert row[0] == 1.0
        lhs = row[-1]
        rhs = 5e-4 * (row[-1] - row[-2]) / dx
        assert abs(lhs - rhs) < 1e-12


def test_solve_problem_dispatch():
    ic = pde.sample_sinusoid_ic(0, 1.0)
    g = solve_problem(pde.burgers_problem(ic, t_hi=0.1), nx=32, nt=3)
    assert (g.nx, g.nt) == (32, 3)
    g = solve_problem(pde.diff_react_problem(ic, t_hi=0.05), nx=32, nt=3)
    assert g.t_hi == 0.05
    noise = pde.step_evaluator(pde.noise_ic(0, 32), 0.0, 1.0)
    g = solve_problem(pde.diff_sorb_problem(noise, t_hi=10.0), nx=32, nt=3)
    assert g.values[0, 0] == 1.0


def test_solver_determinism():
    ic = pde.sample_sinusoid_ic(5, 1.0)
    a = solve_burgers(ic, 0.01, nx=64, nt=4, t_hi=0.3)
    b = solve_burgers(ic, 0.01, nx=64, nt=4, t_hi=0.3)
    np.testing.assert_array_equal(a.values, b.values)
