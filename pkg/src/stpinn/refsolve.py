"""Finite-difference reference solvers and the sampled-grid container.

These produce the ground-truth fields used for labeling and for final error
evaluation, replacing external benchmark downloads.  Schemes are fixed, not
configurable, so the oracles stay stable:

  burgers      conservative finite volume, local Lax-Friedrichs flux for
               u^2/2, flux-form central diffusion, explicit RK2 (Heun),
               periodic, cell-centered
  diff_react   node-centered central diffusion + pointwise logistic
               reaction, RK2, periodic
  diff_sorb    nonlinear diffusion D/R(u) per node, explicit RK2,
               u(t,0) = 1 pinned, right boundary from the one-sided
               discretization of u = D u_x rearranged for the end node

All solvers take CFL-limited internal substeps that land exactly on the
requested output times.  Internal resolution may exceed the output grid
(solve fine, sample down); restriction is block-averaging for cell-centered
fields and node subsampling for node-centered ones.

``GridSolution`` stores the samples; coordinates are inclusive linspaces of
the stored bounds (for cell-centered fields the bounds are the first/last
cell centers, not the domain walls).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pde import PdeProblem, retardation

GRID_MAGIC = "stpinn-grid v1"


class SolverInstability(RuntimeError):
    """Raised when a solve exceeds its substep cap or produces non-finite values."""


@dataclass
class GridSolution:
    """Discretized field on an (nt, nx) grid of uniformly spaced samples."""

    nx: int
    nt: int
    x_lo: float
    x_hi: float
    t_hi: float
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.nt, self.nx):
            raise ValueError(f"values shape {self.values.shape} != (nt={self.nt}, nx={self.nx})")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid contains non-finite values")

    @property
    def x_coords(self) -> np.ndarray:
        return np.linspace(self.x_lo, self.x_hi, self.nx)

    @property
    def t_coords(self) -> np.ndarray:
        return np.linspace(0.0, self.t_hi, self.nt)

    def node_coords(self) -> np.ndarray:
        """All (t, x) sample coordinates, row-major, shape (nt*nx, 2)."""
        t, x = np.meshgrid(self.t_coords, self.x_coords, indexing="ij")
        return np.column_stack([t.ravel(), x.ravel()])

    def save(self, path) -> None:
        head = (
            f"{GRID_MAGIC}\n"
            f"nx={self.nx} nt={self.nt} x_lo={self.x_lo!r} x_hi={self.x_hi!r} "
            f"t_hi={self.t_hi!r}\n---\n"
        )
        with open(path, "wb") as fh:
            fh.write(head.encode("ascii"))
            fh.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "GridSolution":
        with open(path, "rb") as fh:
            blob = fh.read()
        head, _, rest = blob.partition(b"---\n")
        lines = head.decode("ascii").splitlines()
        if not lines or lines[0] != GRID_MAGIC:
            raise ValueError(f"{path}: not a {GRID_MAGIC!r} file")
        kv = dict(tok.split("=", 1) for tok in lines[1].split())
        nx, nt = int(kv["nx"]), int(kv["nt"])
        values = np.frombuffer(rest, dtype="<f8").astype(np.float64)
        if values.size != nx * nt:
            raise ValueError(f"{path}: expected {nx * nt} values, found {values.size}")
        return cls(nx, nt, float(kv["x_lo"]), float(kv["x_hi"]), float(kv["t_hi"]),
                   values.reshape(nt, nx))


def relative_l2(pred: GridSolution, ref: GridSolution) -> float:
    """||pred - ref||_2 / ||ref||_2 over all grid values."""
    if (pred.nt, pred.nx) != (ref.nt, ref.nx):
        raise ValueError("grids have different dimensions")
    denom = float(np.linalg.norm(ref.values))
    if denom == 0.0:
        raise ValueError("reference norm is zero")
    return float(np.linalg.norm(pred.values - ref.values)) / denom


def mse(pred: GridSolution, ref: GridSolution) -> float:
    if (pred.nt, pred.nx) != (ref.nt, ref.nx):
        raise ValueError("grids have different dimensions")
    return float(np.mean((pred.values - ref.values) ** 2))


def coarsen_cells(u: np.ndarray, k: int) -> np.ndarray:
    """Block-average a cell-centered row onto a k-times-coarser grid."""
    if u.size % k:
        raise ValueError("length not divisible by coarsening factor")
    return u.reshape(-1, k).mean(axis=1)


def _march(u, t_hi, nt, stable_dt, step, restrict, max_steps, name):
    """Advance ``u`` with exact landings on linspace(0, t_hi, nt) outputs."""
    row0 = restrict(u)
    out = np.empty((nt, row0.size))
    out[0] = row0
    t_edges = np.linspace(0.0, t_hi, nt)
    eps = 1e-12 * t_hi
    steps = 0
    t = 0.0
    for j in range(1, nt):
        target = t_edges[j]
        while True:
            rem = target - t
            if rem <= eps:
                break
            dt = stable_dt(u)
            if not dt > 0.0:
                raise SolverInstability(f"{name}: non-positive stable step (state diverged?)")
            if dt >= rem:
                step(u, rem)
                t = target
            else:
                step(u, dt)
                t += dt
            steps += 1
            if steps > max_steps:
                raise SolverInstability(
                    f"{name}: exceeded {max_steps} substeps before t={target:g}; "
                    "configuration looks unstable"
                )
        if not np.all(np.isfinite(u)):
            raise SolverInstability(f"{name}: non-finite state at t={target:g}")
        out[j] = restrict(u)
    return out


def solve_burgers(ic, nu: float, nx: int, nt: int, x_lo: float = 0.0, x_hi: float = 1.0,
                  t_hi: float = 2.0, refine: int = 2, cfl: float = 0.4,
                  max_steps: int = 20_000_000) -> GridSolution:
    """Viscous Burgers with periodic BC; diffusion coefficient is nu/pi."""
    if nx < 16 or nt < 2:
        raise ValueError("grid must be at least 16 x 2")
    if nu <= 0:
        raise ValueError("nu must be positive")
    m = nx * refine
    length = x_hi - x_lo
    dx = length / m
    visc = nu / np.pi
    centers = x_lo + (np.arange(m) + 0.5) * dx
    u = np.asarray(ic(centers), dtype=np.float64).copy()

    diff_dt = 0.5 * dx * dx / visc

    def stable_dt(u):
        amax = float(np.max(np.abs(u)))
        adv_dt = dx / amax if amax > 0 else np.inf
        return cfl * min(adv_dt, diff_dt)

    def step(u, dt):
        k1 = _burgers_rhs(u, dx, visc)
        k2 = _burgers_rhs(u + dt * k1, dx, visc)
        u += (0.5 * dt) * (k1 + k2)

    restrict = (lambda u: coarsen_cells(u, refine)) if refine > 1 else (lambda u: u.copy())
    values = _march(u, t_hi, nt, stable_dt, step, restrict, max_steps, "burgers")
    half = length / (2 * nx)
    return GridSolution(nx, nt, x_lo + half, x_hi - half, t_hi, values)


def _burgers_rhs(u, dx, visc):
    up = np.roll(u, -1)
    f = 0.5 * u * u
    fp = 0.5 * up * up
    alpha = np.maximum(np.abs(u), np.abs(up))
    # interface i+1/2 between cell i and i+1
    flux = 0.5 * (f + fp) - 0.5 * alpha * (up - u)
    dflux = visc * (up - u) / dx
    total = dflux - flux
    return (total - np.roll(total, 1)) / dx


def solve_diff_react(ic, nu: float, rho: float, nx: int, nt: int, x_lo: float = 0.0,
                     x_hi: float = 1.0, t_hi: float = 1.0, refine: int = 1,
                     cfl: float = 0.8, max_steps: int = 20_000_000) -> GridSolution:
    """Diffusion plus logistic reaction, periodic, node-centered."""
    if nx < 16 or nt < 2:
        raise ValueError("grid must be at least 16 x 2")
    m = nx * refine
    length = x_hi - x_lo
    dx = length / m
    nodes = x_lo + np.arange(m) * dx
    u = np.asarray(ic(nodes), dtype=np.float64).copy()

    dt_stable = cfl * 0.5 * dx * dx / nu
    ip = np.roll(np.arange(m), -1)
    im = np.roll(np.arange(m), 1)
    scr = [np.empty(m) for _ in range(3)]
    k1, k2, mid = np.empty(m), np.empty(m), np.empty(m)
    diff = nu / (dx * dx)

    def rhs(u, out):
        up, um, lap = scr
        np.take(u, ip, out=up)
        np.take(u, im, out=um)
        np.add(up, um, out=lap)
        np.subtract(lap, u, out=lap)
        np.subtract(lap, u, out=lap)
        np.multiply(lap, diff, out=lap)
        np.subtract(1.0, u, out=out)
        np.multiply(out, u, out=out)
        np.multiply(out, rho, out=out)
        np.add(out, lap, out=out)

    def step(u, dt):
        rhs(u, k1)
        np.multiply(k1, dt, out=mid)
        np.add(mid, u, out=mid)
        rhs(mid, k2)
        np.add(k1, k2, out=k1)
        np.multiply(k1, 0.5 * dt, out=k1)
        np.add(u, k1, out=u)

    restrict = (lambda u: u[::refine].copy()) if refine > 1 else (lambda u: u.copy())
    values = _march(u, t_hi, nt, lambda u: dt_stable, step, restrict, max_steps, "diff_react")
    return GridSolution(nx, nt, x_lo, x_hi - length / nx, t_hi, values)


def solve_diff_sorb(ic, d_coef: float, nx: int, nt: int, x_lo: float = 0.0,
                    x_hi: float = 1.0, t_hi: float = 500.0, cfl: float = 0.15,
                    max_steps: int = 20_000_000) -> GridSolution:
    """Retarded diffusion with pinned left boundary and one-sided Robin right.

    ``ic`` is either a callable evaluated on the nodes or a length-nx array.
    The stored t=0 row is the initial state with both boundary rules applied.
    """
    if nx < 16 or nt < 2:
        raise ValueError("grid must be at least 16 x 2")
    dx = (x_hi - x_lo) / (nx - 1)
    nodes = x_lo + np.arange(nx) * dx
    u = np.asarray(ic(nodes) if callable(ic) else ic, dtype=np.float64).copy()
    if u.shape != (nx,):
        raise ValueError(f"initial state must have length {nx}")
    # u_N = D (u_N - u_{N-1}) / dx solved for u_N
    robin_gain = d_coef / (d_coef - dx)

    def apply_bcs(u):
        u[0] = 1.0
        u[-1] = robin_gain * u[-2]

    apply_bcs(u)
    inv_dx2 = 1.0 / (dx * dx)

    def stable_dt(u):
        deff_max = d_coef / float(np.min(retardation(u)))
        return cfl * dx * dx / (2.0 * deff_max)

    def interior_rate(u):
        deff = d_coef / retardation(u[1:-1])
        return (inv_dx2 * deff) * (u[2:] - 2.0 * u[1:-1] + u[:-2])

    def step(u, dt):
        # Heun with the algebraic boundary rules re-imposed per stage
        k1 = interior_rate(u)
        mid = u.copy()
        mid[1:-1] += dt * k1
        apply_bcs(mid)
        k2 = interior_rate(mid)
        u[1:-1] += (0.5 * dt) * (k1 + k2)
        apply_bcs(u)

    values = _march(u, t_hi, nt, stable_dt, step, lambda u: u.copy(), max_steps, "diff_sorb")
    return GridSolution(nx, nt, x_lo, x_hi, t_hi, values)


def solve_problem(problem: PdeProblem, nx: int, nt: int, refine: int | None = None) -> GridSolution:
    """Dispatch to the named solver using the problem's coefficients and IC."""
    if problem.name == "burgers":
        return solve_burgers(problem.ic, problem.coefficients["nu"], nx, nt,
                             problem.x_lo, problem.x_hi, problem.t_hi,
                             refine=2 if refine is None else refine)
    if problem.name == "diff_react":
        return solve_diff_react(problem.ic, problem.coefficients["nu"],
                                problem.coefficients["rho"], nx, nt,
                                problem.x_lo, problem.x_hi, problem.t_hi,
                                refine=1 if refine is None else refine)
    if problem.name == "diff_sorb":
        return solve_diff_sorb(problem.ic, problem.coefficients["d_coef"], nx, nt,
                               problem.x_lo, problem.x_hi, problem.t_hi)
    raise ValueError(f"no solver for problem {problem.name!r}")
