"""The three benchmark PDE problems: residuals, coefficients, conditions.

Residual operators take a second-order jet of the solution and return the
governing-equation value per point.  They are plain arithmetic over jet
components, so they run identically on tape variables (training) and raw
arrays (scoring).

Problems:
  burgers      u_t + u u_x = (nu/pi) u_xx, periodic, sinusoid-superposition IC
  diff_react   u_t = nu u_xx + rho u (1 - u), periodic, sinusoid IC
  diff_sorb    u_t = D / R(u) u_xx, u(t,0)=1, u(t,1)=D u_x(t,1), noise IC

R(u) is the Freundlich retardation factor; its negative-power singularity at
u = 0 is made total by clamping the base at 1e-6 (network outputs can go
negative; the physical solution stays in (0, 1] so the clamp is inactive at
convergence).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .jets import Jet2
from .tape import clamp_min, powc, reciprocal

# diffusion-sorption constants (porous medium with Freundlich sorption)
POROSITY = 0.29
BULK_DENSITY = 2888.0
FREUNDLICH_K = 3.5e-4
FREUNDLICH_EXP = 0.875
RETARDATION_SCALE = (1.0 - POROSITY) / POROSITY * BULK_DENSITY * FREUNDLICH_K * FREUNDLICH_EXP
RETARDATION_CLAMP = 1e-6

DEFAULT_COEFFS = {
    "burgers": {"nu": 0.01},
    "diff_react": {"nu": 0.5, "rho": 1.0},
    "diff_sorb": {"d_coef": 5e-4},
}


def retardation(u_val):
    """1 + ((1-phi)/phi) rho_s k n_f u^(n_f - 1), total via the u clamp."""
    base = clamp_min(u_val, RETARDATION_CLAMP)
    return 1.0 + RETARDATION_SCALE * powc(base, FREUNDLICH_EXP - 1.0)


def burgers_residual(u: Jet2, nu: float):
    """u_t + u u_x - (nu/pi) u_xx, the conservative flux expanded by chain rule."""
    return u.grad[0] + u.val * u.grad[1] - (nu / np.pi) * u.hess_at(1, 1)


def diff_react_residual(u: Jet2, nu: float, rho: float):
    """u_t - nu u_xx - rho u (1 - u)."""
    return u.grad[0] - nu * u.hess_at(1, 1) - rho * (u.val * (1.0 - u.val))


def diff_sorb_residual(u: Jet2, d_coef: float):
    """u_t - D / R(u) u_xx; R's u-dependence is differentiated through."""
    return u.grad[0] - d_coef * (reciprocal(retardation(u.val)) * u.hess_at(1, 1))


@dataclass(frozen=True)
class SinusoidIC:
    """Superposition of sinusoidal waves: sum_i A_i sin(2 pi n_i x / L + phi_i)."""

    amplitudes: tuple
    modes: tuple
    phases: tuple
    length: float

    def __post_init__(self):
        n = len(self.amplitudes)
        if not (len(self.modes) == len(self.phases) == n) or n < 1:
            raise ValueError("amplitudes, modes and phases must have equal length >= 1")

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        out = np.zeros_like(x)
        for a, n, phi in zip(self.amplitudes, self.modes, self.phases):
            out += a * np.sin(2.0 * np.pi * n / self.length * x + phi)
        return out


def sample_sinusoid_ic(seed, length: float, n_terms: int = 2) -> SinusoidIC:
    """Random draw: integer modes in [1, 8], amplitudes in [0, 1], phases in (0, 2 pi)."""
    if length <= 0:
        raise ValueError("length must be positive")
    rng = np.random.default_rng(seed)
    modes = rng.integers(1, 9, size=n_terms)
    amps = rng.uniform(0.0, 1.0, size=n_terms)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=n_terms)
    while np.any(phases == 0.0):  # open interval; probability ~2^-53 per draw
        phases = np.where(phases == 0.0, rng.uniform(0.0, 2.0 * np.pi, size=n_terms), phases)
    return SinusoidIC(tuple(amps), tuple(int(m) for m in modes), tuple(phases), length)


def noise_ic(seed, nx: int) -> np.ndarray:
    """i.i.d. uniform(0, 1) per grid cell (diffusion-sorption initial state)."""
    return np.random.default_rng(seed).uniform(0.0, 1.0, size=nx)


def step_evaluator(values: np.ndarray, x_lo: float, x_hi: float) -> Callable:
    """Nearest-node evaluator for a per-cell initial state on [x_lo, x_hi]."""
    values = np.asarray(values, dtype=np.float64)
    n = values.size

    def ev(x):
        idx = np.rint((np.asarray(x) - x_lo) / (x_hi - x_lo) * (n - 1)).astype(int)
        return values[np.clip(idx, 0, n - 1)]

    return ev


@dataclass
class PdeProblem:
    """Domain bounds, fixed coefficients, residual and condition description."""

    name: str
    x_lo: float
    x_hi: float
    t_hi: float
    coefficients: dict
    bc_kind: str  # "periodic" | "dirichlet_robin"
    ic: Callable = field(repr=False)

    def __post_init__(self):
        if self.x_lo >= self.x_hi:
            raise ValueError("x_lo must be below x_hi")
        if self.t_hi <= 0:
            raise ValueError("t_hi must be positive")
        if self.bc_kind not in ("periodic", "dirichlet_robin"):
            raise ValueError(f"unknown bc_kind {self.bc_kind!r}")

    def residual(self, u: Jet2):
        if self.name == "burgers":
            return burgers_residual(u, self.coefficients["nu"])
        if self.name == "diff_react":
            return diff_react_residual(u, self.coefficients["nu"], self.coefficients["rho"])
        if self.name == "diff_sorb":
            return diff_sorb_residual(u, self.coefficients["d_coef"])
        raise ValueError(f"no residual for problem {self.name!r}")


def burgers_problem(ic: Callable, nu: float = 0.01, x_lo: float = 0.0,
                    x_hi: float = 1.0, t_hi: float = 2.0) -> PdeProblem:
    return PdeProblem("burgers", x_lo, x_hi, t_hi, {"nu": nu}, "periodic", ic)


def diff_react_problem(ic: Callable, nu: float = 0.5, rho: float = 1.0,
                       x_lo: float = 0.0, x_hi: float = 1.0, t_hi: float = 1.0) -> PdeProblem:
    return PdeProblem("diff_react", x_lo, x_hi, t_hi, {"nu": nu, "rho": rho},
                      "periodic", ic)


def diff_sorb_problem(ic: Callable, d_coef: float = 5e-4, x_lo: float = 0.0,
                      x_hi: float = 1.0, t_hi: float = 500.0) -> PdeProblem:
    return PdeProblem("diff_sorb", x_lo, x_hi, t_hi, {"d_coef": d_coef},
                      "dirichlet_robin", ic)


@dataclass
class BoundaryTerms:
    """Per-run boundary sample sets; see training.loss_data for the penalties.

    periodic:        pair_ts -> |u(t, x_lo) - u(t, x_hi)|^2 (optionally the
                     same mismatch on u_x)
    dirichlet_robin: dirichlet coords labeled 1.0 at x_lo; robin_ts at x_hi
                     penalizing |u - D u_x|^2
    """

    pair_ts: np.ndarray | None = None
    dirichlet: tuple | None = None  # (coords (n,2), labels (n,))
    robin_ts: np.ndarray | None = None

    @property
    def count(self) -> int:
        n = 0
        if self.pair_ts is not None:
            n += self.pair_ts.size
        if self.dirichlet is not None:
            n += self.dirichlet[1].size
        if self.robin_ts is not None:
            n += self.robin_ts.size
        return n


def boundary_spec(problem: PdeProblem, n_boundary: int, rng) -> BoundaryTerms:
    """Boundary sample generator: n_boundary time draws on the side walls."""
    if n_boundary < 0:
        raise ValueError("n_boundary must be nonnegative")
    if n_boundary == 0:
        return BoundaryTerms()
    ts = rng.uniform(0.0, problem.t_hi, size=n_boundary)
    if problem.bc_kind == "periodic":
        return BoundaryTerms(pair_ts=ts)
    n_dir = n_boundary // 2
    dir_coords = np.column_stack([ts[:n_dir], np.full(n_dir, problem.x_lo)])
    return BoundaryTerms(
        dirichlet=(dir_coords, np.ones(n_dir)),
        robin_ts=ts[n_dir:],
    )
