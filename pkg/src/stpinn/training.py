"""Loss assembly, optimizers, batch sampling, and the outer training loop.

One loop serves both arms: the baseline run is the self-training run with
generation disabled.  Per iteration a fresh tape is built, the weighted loss
is assembled from

  loss_f   mean squared equation residual over the sampled collocation batch
  loss_d   pooled mean over labeled points (initial, intra-domain, Dirichlet)
           plus the periodic pair / Robin boundary penalties
  loss_p   mean squared mismatch against the current pseudo labels

and one Adam step is taken.  Zero-weighted or empty terms are skipped
outright, so a run with w_p = 0 or an empty pseudo set consumes the same
RNG stream and produces bit-identical updates to a baseline run.

The optional refinement phase freezes the last-drawn batch and pseudo set
and runs two-loop L-BFGS with a strong-Wolfe line search on the resulting
deterministic objective.

Loss functions accept either tape-registered layer leaves (training) or a
flat parameter vector (values-only evaluation); they are written against the
shared backend operators, so both paths run the same arithmetic.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .network import MlpSpec, flatten_grads, forward, forward_jet, init_params, register_leaves
from .pde import BoundaryTerms, PdeProblem, boundary_spec
from .refsolve import GridSolution
from .runtime import configure_runtime
from .selftrain import (
    CandidatePool,
    PseudoSet,
    SelfTrainConfig,
    dump_pseudo_event,
    generation_event,
    run_generation_event,
)
from .tape import Tape, asum, mean

HISTORY_HEADER = "iter,loss_total,loss_f,loss_d,loss_p,n_pseudo,phase,wall_ms"


class TrainingDiverged(RuntimeError):
    """Loss went non-finite; carries the iteration and component values."""

    def __init__(self, iteration: int, components: dict):
        self.iteration = iteration
        self.components = components
        parts = ", ".join(f"{k}={v:g}" for k, v in components.items())
        super().__init__(f"non-finite loss at iteration {iteration} ({parts})")


@dataclass(frozen=True)
class LossWeights:
    """Weights of the residual, data and pseudo terms in the total loss."""

    w_f: float = 1.0
    w_d: float = 1.0
    w_p: float = 1.0

    def __post_init__(self):
        vals = (self.w_f, self.w_d, self.w_p)
        if not all(np.isfinite(v) and v >= 0 for v in vals):
            raise ValueError("loss weights must be finite and nonnegative")
        if all(v == 0 for v in vals):
            raise ValueError("at least one loss weight must be positive")


@dataclass
class DataTerms:
    """Fixed labeled/boundary structure for one run (constant across iterations)."""

    coords: np.ndarray  # (n, 2) labeled points
    labels: np.ndarray
    boundary: BoundaryTerms
    x_lo: float
    x_hi: float
    robin_coef: float = 0.0
    match_grad_pairs: bool = False

    @property
    def count(self) -> int:
        n = self.labels.size + self.boundary.count
        if self.boundary.dirichlet is not None:
            n -= self.boundary.dirichlet[1].size  # merged into coords/labels
        if self.match_grad_pairs and self.boundary.pair_ts is not None:
            n += self.boundary.pair_ts.size
        return n


@dataclass
class Batch:
    """One iteration's point sets."""

    sample_pts: np.ndarray
    data: DataTerms
    pseudo_pts: np.ndarray
    pseudo_labels: np.ndarray


def build_data_terms(problem: PdeProblem, grid: GridSolution, n_initial: int,
                     n_data: int, n_boundary: int, rng,
                     match_grad_pairs: bool = False) -> DataTerms:
    """Labeled points from the reference grid plus boundary samples.

    Initial points are drawn from the grid's t = 0 row, intra-domain points
    uniformly from all later rows; labels come from the stored field.
    """
    if n_initial > grid.nx:
        raise ValueError(f"n_initial {n_initial} exceeds grid nx {grid.nx}")
    if n_data > (grid.nt - 1) * grid.nx:
        raise ValueError("n_data exceeds the number of t > 0 grid nodes")
    xs, ts = grid.x_coords, grid.t_coords
    coords = []
    labels = []
    if n_initial > 0:
        sel = np.sort(rng.choice(grid.nx, size=n_initial, replace=False))
        coords.append(np.column_stack([np.zeros(n_initial), xs[sel]]))
        labels.append(grid.values[0, sel])
    if n_data > 0:
        flat = np.sort(rng.choice((grid.nt - 1) * grid.nx, size=n_data, replace=False))
        row = flat // grid.nx + 1
        col = flat % grid.nx
        coords.append(np.column_stack([ts[row], xs[col]]))
        labels.append(grid.values[row, col])
    boundary = boundary_spec(problem, n_boundary, rng)
    if boundary.dirichlet is not None:
        coords.append(boundary.dirichlet[0])
        labels.append(boundary.dirichlet[1])
    all_coords = np.vstack(coords) if coords else np.empty((0, 2))
    all_labels = np.concatenate(labels) if labels else np.empty(0)
    return DataTerms(all_coords, all_labels, boundary, problem.x_lo, problem.x_hi,
                     robin_coef=problem.coefficients.get("d_coef", 0.0),
                     match_grad_pairs=match_grad_pairs)


# --------------------------------------------------------------------- losses

def loss_f(params, spec: MlpSpec, problem: PdeProblem, sample_pts: np.ndarray):
    """Mean squared equation residual over the collocation batch."""
    if len(sample_pts) == 0:
        raise ValueError("loss_f needs at least one sample point")
    jet = forward_jet(params, spec, sample_pts, pairs=((1, 1),))
    r = problem.residual(jet)
    return mean(r * r)


def loss_d(params, spec: MlpSpec, terms: DataTerms):
    """Pooled mean over labeled mismatches and boundary penalties."""
    pieces = []
    count = 0
    if terms.labels.size:
        e = forward(params, spec, terms.coords) - terms.labels
        pieces.append(asum(e * e))
        count += terms.labels.size
    pair_ts = terms.boundary.pair_ts
    if pair_ts is not None and pair_ts.size:
        lo = np.column_stack([pair_ts, np.full(pair_ts.size, terms.x_lo)])
        hi = np.column_stack([pair_ts, np.full(pair_ts.size, terms.x_hi)])
        if terms.match_grad_pairs:
            jlo = forward_jet(params, spec, lo, pairs=())
            jhi = forward_jet(params, spec, hi, pairs=())
            ev = jlo.val - jhi.val
            eg = jlo.grad[1] - jhi.grad[1]
            pieces.append(asum(ev * ev) + asum(eg * eg))
            count += 2 * pair_ts.size
        else:
            e = forward(params, spec, lo) - forward(params, spec, hi)
            pieces.append(asum(e * e))
            count += pair_ts.size
    robin_ts = terms.boundary.robin_ts
    if robin_ts is not None and robin_ts.size:
        coords = np.column_stack([robin_ts, np.full(robin_ts.size, terms.x_hi)])
        jet = forward_jet(params, spec, coords, pairs=())
        e = jet.val - terms.robin_coef * jet.grad[1]
        pieces.append(asum(e * e))
        count += robin_ts.size
    if count == 0:
        return 0.0
    total = pieces[0]
    for p in pieces[1:]:
        total = total + p
    return total * (1.0 / count)


def loss_p(params, spec: MlpSpec, pseudo_pts: np.ndarray, pseudo_labels: np.ndarray):
    """Mean squared mismatch against pseudo labels; 0 for an empty set."""
    if len(pseudo_pts) == 0:
        return 0.0
    e = forward(params, spec, pseudo_pts) - pseudo_labels
    return mean(e * e)


def _is_zero_term(term) -> bool:
    return isinstance(term, (int, float)) and term == 0.0


def total_loss(weights: LossWeights, l_f, l_d, l_p):
    """w_f l_f + w_d l_d + w_p l_p, skipping exactly-zero weights and terms.

    Skipping (rather than multiplying by zero) keeps a run with w_p = 0 or an
    empty pseudo set bit-identical to a baseline run.
    """
    total = None
    for w, term in ((weights.w_f, l_f), (weights.w_d, l_d), (weights.w_p, l_p)):
        if w == 0.0 or _is_zero_term(term):
            continue
        piece = w * term
        total = piece if total is None else total + piece
    if total is None:
        raise ValueError("every loss term is switched off or empty")
    return total


# ------------------------------------------------------------------ optimizers

@dataclass
class AdamState:
    """Bias-corrected first/second moment accumulators."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n))


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray, lr: float):
    """In-place bias-corrected Adam update; returns (params, state)."""
    if grad.shape != params.shape or state.m.shape != params.shape:
        raise ValueError("parameter, gradient and moment shapes must agree")
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * (grad * grad)
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    params -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


@dataclass
class LbfgsResult:
    params: np.ndarray
    loss: float
    grad_norm: float
    iterations: int
    stop: str  # "gtol" | "max_iters" | "line_search"


def _two_loop(g, s_list, y_list, rho_list):
    q = g.copy()
    alphas = []
    for s, y, rho in zip(reversed(s_list), reversed(y_list), reversed(rho_list)):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    if y_list:
        y = y_list[-1]
        q *= float(s_list[-1] @ y) / float(y @ y)
    for (s, y, rho), a in zip(zip(s_list, y_list, rho_list), reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return q


def _zoom(phi, f0, dphi0, a_lo, f_lo, dphi_lo, g_lo, a_hi, f_hi, c1, c2, max_iters=25):
    for _ in range(max_iters):
        width = a_hi - a_lo
        denom = 2.0 * (f_hi - f_lo - dphi_lo * width)
        if denom != 0.0:
            a = a_lo - dphi_lo * width * width / denom
        else:
            a = a_lo + 0.5 * width
        lo, hi = (a_lo, a_hi) if a_lo < a_hi else (a_hi, a_lo)
        margin = 0.1 * abs(width)
        if not (lo + margin <= a <= hi - margin):
            a = a_lo + 0.5 * width
        f, g, dphi = phi(a)
        if f > f0 + c1 * a * dphi0 or f >= f_lo:
            a_hi, f_hi = a, f
        else:
            if abs(dphi) <= -c2 * dphi0:
                return a, f, g
            if dphi * width >= 0.0:
                a_hi, f_hi = a_lo, f_lo
            a_lo, f_lo, dphi_lo, g_lo = a, f, dphi, g
        if abs(a_hi - a_lo) < 1e-16 * max(1.0, abs(a_lo)):
            break
    return None


def _strong_wolfe(fun_grad, x, f0, g0, d, c1, c2, alpha0, max_expand=12):
    """Strong-Wolfe step along d; returns (alpha, f, g) or None on failure."""
    dphi0 = float(g0 @ d)
    if dphi0 >= 0.0:
        return None

    def phi(a):
        f, g = fun_grad(x + a * d)
        return f, g, float(g @ d)

    a_prev, f_prev, dphi_prev, g_prev = 0.0, f0, dphi0, g0
    a = alpha0
    for i in range(max_expand):
        f, g, dphi = phi(a)
        if f > f0 + c1 * a * dphi0 or (i > 0 and f >= f_prev):
            return _zoom(phi, f0, dphi0, a_prev, f_prev, dphi_prev, g_prev, a, f, c1, c2)
        if abs(dphi) <= -c2 * dphi0:
            return a, f, g
        if dphi >= 0.0:
            return _zoom(phi, f0, dphi0, a, f, dphi, g, a_prev, f_prev, c1, c2)
        a_prev, f_prev, dphi_prev, g_prev = a, f, dphi, g
        a = 2.0 * a
    return None


def lbfgs_minimize(fun_grad, x0: np.ndarray, max_iters: int, memory: int = 10,
                   gtol: float = 1e-9, c1: float = 1e-4, c2: float = 0.9,
                   callback=None) -> LbfgsResult:
    """Two-loop-recursion L-BFGS with strong-Wolfe line search.

    ``fun_grad(x) -> (f, grad)`` must be deterministic.  Accepted steps
    satisfy the Wolfe conditions, so the loss is strictly decreasing; on
    line-search failure the best-so-far iterate is returned.
    """
    x = np.asarray(x0, dtype=np.float64).copy()
    f, g = fun_grad(x)
    s_list: list = []
    y_list: list = []
    rho_list: list = []
    stop = "max_iters"
    iters = 0
    for it in range(max_iters):
        gnorm = float(np.linalg.norm(g))
        if gnorm < gtol:
            stop = "gtol"
            break
        d = -_two_loop(g, s_list, y_list, rho_list)
        if float(d @ g) >= 0.0:  # stale curvature; restart from steepest descent
            s_list.clear()
            y_list.clear()
            rho_list.clear()
            d = -g
        alpha0 = 1.0 if s_list else min(1.0, 1.0 / max(gnorm, 1.0))
        ls = _strong_wolfe(fun_grad, x, f, g, d, c1, c2, alpha0)
        if ls is None:
            stop = "line_search"
            break
        alpha, f_new, g_new = ls
        x_new = x + alpha * d
        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-10 * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
            s_list.append(s)
            y_list.append(y)
            rho_list.append(1.0 / sy)
            if len(s_list) > memory:
                s_list.pop(0)
                y_list.pop(0)
                rho_list.pop(0)
        x, f, g = x_new, f_new, g_new
        iters = it + 1
        if callback is not None:
            callback(it, x, f, g)
    return LbfgsResult(x, float(f), float(np.linalg.norm(g)), iters, stop)


# ------------------------------------------------------------------- sampling

def sample_batch(pool_size: int, n_f: int, rng) -> np.ndarray:
    """n_f distinct pool indices, uniform without replacement, index order."""
    if n_f > pool_size:
        raise ValueError(f"batch size {n_f} exceeds pool size {pool_size}")
    return np.sort(rng.choice(pool_size, size=n_f, replace=False))


# -------------------------------------------------------------------- history

@dataclass
class HistoryRow:
    iteration: int
    loss_total: float
    loss_f: float
    loss_d: float
    loss_p: float
    n_pseudo: int
    phase: str
    wall_ms: float

    def to_csv(self) -> str:
        return (f"{self.iteration},{self.loss_total!r},{self.loss_f!r},"
                f"{self.loss_d!r},{self.loss_p!r},{self.n_pseudo},{self.phase},"
                f"{self.wall_ms:.3f}")


def write_history(path, rows: list[HistoryRow]) -> None:
    with open(path, "w") as fh:
        fh.write(HISTORY_HEADER + "\n")
        for row in rows:
            fh.write(row.to_csv() + "\n")


def read_history(path) -> list[HistoryRow]:
    rows = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != HISTORY_HEADER:
            raise ValueError(f"{path}: unexpected history header {header!r}")
        for line in fh:
            it, lt, lf, ld, lp, np_, phase, wall = line.strip().split(",")
            rows.append(HistoryRow(int(it), float(lt), float(lf), float(ld),
                                   float(lp), int(np_), phase, float(wall)))
    return rows


# ------------------------------------------------------------------ train loop

@dataclass(frozen=True)
class TrainSettings:
    """Everything the loop needs besides the problem, grid and network spec."""

    n_f: int
    pool_size: int
    n_boundary: int
    n_initial: int
    n_data: int
    adam_iters: int
    lbfgs_iters: int = 0
    lr: float = 1e-3
    lr_stages: tuple | None = None  # ((iters, lr), ...) staged schedule
    weights: LossWeights = field(default_factory=LossWeights)
    selftrain: SelfTrainConfig | None = None
    match_grad_pairs: bool = False
    lbfgs_memory: int = 10

    def __post_init__(self):
        if self.n_f < 1 or self.pool_size < 1:
            raise ValueError("n_f and pool_size must be positive")
        if self.n_f > self.pool_size:
            raise ValueError("n_f cannot exceed pool_size")
        if min(self.n_boundary, self.n_initial, self.n_data) < 0:
            raise ValueError("point counts must be nonnegative")
        if self.adam_iters < 0 or self.lbfgs_iters < 0:
            raise ValueError("iteration counts must be nonnegative")

    def lr_at(self, iteration: int) -> float:
        if not self.lr_stages:
            return self.lr
        upto = 0
        for n, lr in self.lr_stages:
            upto += n
            if iteration < upto:
                return lr
        return self.lr_stages[-1][1]


@dataclass
class EventRecord:
    """Snapshot taken at one generation event (for invariant checks/dumps)."""

    iteration: int
    params: np.ndarray
    indices: np.ndarray
    labels: np.ndarray
    flags: np.ndarray


@dataclass
class TrainResult:
    params: np.ndarray
    history: list
    events: list
    pool: CandidatePool
    pseudo: PseudoSet


def _loss_parts(params, spec, problem, batch: Batch, weights: LossWeights):
    """The three loss terms, skipping switched-off ones (taped or plain)."""
    lf = loss_f(params, spec, problem, batch.sample_pts) if weights.w_f != 0.0 else 0.0
    ld = loss_d(params, spec, batch.data) if weights.w_d != 0.0 else 0.0
    lp = (loss_p(params, spec, batch.pseudo_pts, batch.pseudo_labels)
          if weights.w_p != 0.0 else 0.0)
    return lf, ld, lp


def _as_float(term) -> float:
    return float(term) if isinstance(term, (int, float)) else float(term.value)


def loss_and_grad(theta: np.ndarray, spec: MlpSpec, problem: PdeProblem,
                  batch: Batch, weights: LossWeights):
    """Total loss, component values and the flat parameter gradient."""
    t = Tape()
    leaves = register_leaves(t, theta, spec)
    lf, ld, lp = _loss_parts(leaves, spec, problem, batch, weights)
    total = total_loss(weights, lf, ld, lp)
    flat = [v for pair in leaves for v in pair]
    grad = flatten_grads(t.grad(total, flat), spec)
    comps = (_as_float(total), _as_float(lf), _as_float(ld), _as_float(lp))
    return comps, grad


def loss_values(theta: np.ndarray, spec: MlpSpec, problem: PdeProblem,
                batch: Batch, weights: LossWeights):
    """Component losses without a tape (plain numpy evaluation)."""
    lf, ld, lp = _loss_parts(theta, spec, problem, batch, weights)
    total = total_loss(weights, lf, ld, lp)
    return tuple(_as_float(v) for v in (total, lf, ld, lp))


def train(problem: PdeProblem, grid: GridSolution, spec: MlpSpec,
          settings: TrainSettings, seed, pseudo_dump=None,
          timing: bool = True) -> TrainResult:
    """Full training run: Adam (with generation events) then optional L-BFGS.

    Deterministic given (problem, grid, spec, settings, seed): all randomness
    flows from one seed sequence, and generation events draw nothing.
    Raises TrainingDiverged if the loss goes non-finite.
    """
    configure_runtime()
    ss = np.random.SeedSequence(seed)
    seed_init, seed_pool, seed_data, seed_batch = ss.spawn(4)
    theta = init_params(spec, seed_init)
    rng_pool = np.random.default_rng(seed_pool)
    pool_coords = np.column_stack([
        rng_pool.uniform(0.0, problem.t_hi, size=settings.pool_size),
        rng_pool.uniform(problem.x_lo, problem.x_hi, size=settings.pool_size),
    ])
    pool = CandidatePool(pool_coords)
    terms = build_data_terms(problem, grid, settings.n_initial, settings.n_data,
                             settings.n_boundary, np.random.default_rng(seed_data),
                             settings.match_grad_pairs)
    rng_batch = np.random.default_rng(seed_batch)
    pseudo = PseudoSet.empty()
    history: list[HistoryRow] = []
    events: list[EventRecord] = []
    adam = AdamState.zeros(theta.size)

    dump_fh = None
    if pseudo_dump is not None:
        dump_fh = open(pseudo_dump, "w")
        dump_fh.write("event_iter,index,t,x,label,flag\n")
    try:
        for it in range(settings.adam_iters):
            tic = time.perf_counter() if timing else 0.0
            if settings.selftrain is not None and generation_event(it, settings.selftrain):
                pseudo = run_generation_event(theta, spec, problem, pool,
                                              settings.selftrain)
                events.append(EventRecord(it, theta.copy(), pseudo.indices.copy(),
                                          pseudo.labels.copy(), pool.flags.copy()))
                if dump_fh is not None:
                    dump_pseudo_event(dump_fh, it, pool, pseudo)
            idx = sample_batch(settings.pool_size, settings.n_f, rng_batch)
            batch = Batch(pool.coords[idx], terms,
                          pool.coords[pseudo.indices], pseudo.labels)
            comps, grad = loss_and_grad(theta, spec, problem, batch, settings.weights)
            if not np.isfinite(comps[0]):
                raise TrainingDiverged(it, dict(zip(("total", "f", "d", "p"), comps)))
            adam_step(adam, theta, grad, settings.lr_at(it))
            wall = (time.perf_counter() - tic) * 1e3 if timing else 0.0
            history.append(HistoryRow(it, *comps, len(pseudo), "adam", wall))

        if settings.lbfgs_iters > 0:
            frozen_idx = sample_batch(settings.pool_size, settings.n_f, rng_batch)
            frozen = Batch(pool.coords[frozen_idx], terms,
                           pool.coords[pseudo.indices], pseudo.labels)
            base_iter = settings.adam_iters

            def fun_grad(x):
                comps, grad = loss_and_grad(x, spec, problem, frozen, settings.weights)
                if not np.isfinite(comps[0]):
                    raise TrainingDiverged(base_iter, dict(zip(("total", "f", "d", "p"), comps)))
                return comps[0], grad

            tic_holder = [time.perf_counter() if timing else 0.0]

            def on_step(k, x, f, g):
                comps = loss_values(x, spec, problem, frozen, settings.weights)
                wall = (time.perf_counter() - tic_holder[0]) * 1e3 if timing else 0.0
                tic_holder[0] = time.perf_counter() if timing else 0.0
                history.append(HistoryRow(base_iter + k, *comps, len(pseudo),
                                          "lbfgs", wall))

            result = lbfgs_minimize(fun_grad, theta, settings.lbfgs_iters,
                                    memory=settings.lbfgs_memory, callback=on_step)
            theta = result.params
    finally:
        if dump_fh is not None:
            dump_fh.close()
    return TrainResult(theta, history, events, pool, pseudo)
