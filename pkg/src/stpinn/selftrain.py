"""Pseudo-label generation: residual scoring, top-fraction selection, flags.

One generation event runs in four steps over a fixed candidate pool:

  1. score every candidate by its squared equation residual (values only),
  2. keep the smallest-score fraction q as this event's candidates,
  3. increment the flag of every kept index, reset all others to zero,
  4. rebuild the pseudo set from scratch: exactly the indices whose flag
     exceeds the stability threshold r, labeled with the current network's
     prediction at their coordinates.

Labels never survive an event; a point that keeps earning selection gets a
fresh label each time.  Flags count consecutive selection events, so a point
must stay among the best-fitting fraction for r+1 events before it is
trusted with a pseudo label.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .network import MlpSpec, forward, forward_jet
from .pde import PdeProblem


@dataclass(frozen=True)
class SelfTrainConfig:
    """Generation hyperparameters: period p, max fraction q, stability r."""

    period: int = 100
    max_fraction: float = 0.2
    stable_coeff: int = 10
    warmup: int = 500

    def __post_init__(self):
        if self.period < 1:
            raise ValueError("period must be >= 1")
        if not (0.0 < self.max_fraction <= 1.0):
            raise ValueError("max_fraction must be in (0, 1]")
        if self.stable_coeff < 0:
            raise ValueError("stable_coeff must be nonnegative")
        if self.warmup < 0:
            raise ValueError("warmup must be nonnegative")


@dataclass
class CandidatePool:
    """Fixed collocation candidates plus per-point consecutive-selection flags."""

    coords: np.ndarray  # (n, 2), never mutated after construction
    flags: np.ndarray = field(default=None)

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 2 or self.coords.shape[1] != 2 or len(self.coords) == 0:
            raise ValueError("pool coords must be a nonempty (n, 2) array")
        if self.flags is None:
            self.flags = np.zeros(len(self.coords), dtype=np.int64)
        elif self.flags.shape != (len(self.coords),):
            raise ValueError("flags length must match coords")

    def __len__(self) -> int:
        return len(self.coords)


@dataclass
class PseudoSet:
    """Current pseudo-labeled subset: pool indices plus fresh labels."""

    indices: np.ndarray
    labels: np.ndarray

    @classmethod
    def empty(cls) -> "PseudoSet":
        return cls(np.empty(0, dtype=np.int64), np.empty(0))

    def __len__(self) -> int:
        return len(self.indices)


def score_candidates(theta: np.ndarray, spec: MlpSpec, problem: PdeProblem,
                     pool: CandidatePool) -> np.ndarray:
    """Squared equation residual per pool point; values only, no tape."""
    jet = forward_jet(theta, spec, pool.coords, pairs=((1, 1),))
    r = np.asarray(problem.residual(jet))
    return r * r


def select_top_q(scores: np.ndarray, q: float) -> np.ndarray:
    """Indices of the floor(n q) smallest scores, ties broken by lower index.

    The result is reported in ascending index order.
    """
    scores = np.asarray(scores)
    n = scores.size
    if n < 1:
        raise ValueError("scores must be nonempty")
    if not (0.0 < q <= 1.0):
        raise ValueError("q must be in (0, 1]")
    k = int(np.floor(n * q))
    if k == 0:
        return np.empty(0, dtype=np.int64)
    order = np.lexsort((np.arange(n), scores))
    return np.sort(order[:k])


def update_flags(pool: CandidatePool, selected: np.ndarray) -> CandidatePool:
    """Selected indices gain one consecutive hit; everything else resets to 0."""
    new = np.zeros_like(pool.flags)
    new[selected] = pool.flags[selected] + 1
    pool.flags = new
    return pool


def harvest_pseudo(theta: np.ndarray, spec: MlpSpec, pool: CandidatePool,
                   stable_coeff: int) -> PseudoSet:
    """Rebuild the pseudo set: flag > r, labeled by the current network."""
    idx = np.flatnonzero(pool.flags > stable_coeff)
    if idx.size == 0:
        return PseudoSet.empty()
    labels = forward(theta, spec, pool.coords[idx])
    return PseudoSet(idx, np.asarray(labels))


def generation_event(iteration: int, config: SelfTrainConfig) -> bool:
    """True on the warmup iteration and every ``period`` iterations after."""
    if iteration < 0:
        raise ValueError("iteration must be nonnegative")
    return iteration >= config.warmup and (iteration - config.warmup) % config.period == 0


def run_generation_event(theta: np.ndarray, spec: MlpSpec, problem: PdeProblem,
                         pool: CandidatePool, config: SelfTrainConfig) -> PseudoSet:
    """One full generation event; mutates the pool's flags."""
    scores = score_candidates(theta, spec, problem, pool)
    selected = select_top_q(scores, config.max_fraction)
    update_flags(pool, selected)
    return harvest_pseudo(theta, spec, pool, config.stable_coeff)


def dump_pseudo_event(fh, event_iter: int, pool: CandidatePool, pseudo: PseudoSet) -> None:
    """Append one event's pseudo set as CSV rows (for offline analysis)."""
    for idx, label in zip(pseudo.indices, pseudo.labels):
        t, x = pool.coords[idx]
        fh.write(f"{event_iter},{int(idx)},{float(t)!r},{float(x)!r},"
                 f"{float(label)!r},{int(pool.flags[idx])}\n")
