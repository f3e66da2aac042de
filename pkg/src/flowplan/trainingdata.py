"""Heuristic generation of flow-training trajectory datasets.

Two generators produce one-channel B x N training batches:

* `generate_a2df`: two Gaussian groups sorted by trajectory sum in opposite
  directions, paired via a stochastic index rule, and joined with the
  two-degree-of-freedom composition (integrate group 1, add group 2).
* `generate_ail`: four derivative-level Gaussian segment groups of width N/4,
  joined by three successive sort-and-pair concatenations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np


class Provenance(str, Enum):
    A2DF = "a2df"
    AIL = "ail"


@dataclass(frozen=True)
class HeuristicParams:
    eps_switch: float  # variance of the index-pairing Gaussian
    eps_draw_1: float  # drawing variance, group 1 (derivative level for A2DF)
    eps_draw_2: float  # drawing variance, group 2

    def __post_init__(self):
        if self.eps_switch < 0 or self.eps_draw_1 < 0 or self.eps_draw_2 < 0:
            raise ValueError("heuristic variances must be non-negative")


@dataclass(frozen=True)
class TrainingBatch:
    rows: np.ndarray  # (B, N), one channel
    provenance: Provenance
    seed: int
    params: dict

    def __post_init__(self):
        if self.rows.ndim != 2 or self.rows.shape[0] < 1:
            raise ValueError(f"rows must be (B>=1, N), got {self.rows.shape}")
        if self.provenance == Provenance.AIL and self.rows.shape[1] % 4 != 0:
            raise ValueError("AIL batches require N divisible by 4")

    def to_csv(self, path) -> None:
        np.savetxt(path, self.rows, delimiter=",")


def trajectory_sums(M: np.ndarray) -> np.ndarray:
    """Per-row sum of all entries, the directional measure rho."""
    M = np.asarray(M, dtype=float)
    return M.sum(axis=1)


def sort_by_measure(M: np.ndarray, rho: np.ndarray, direction: str = "asc") -> np.ndarray:
    """Rows of M reordered so rho is monotone; stable, ties keep original order."""
    if direction not in ("asc", "desc"):
        raise ValueError(f"direction must be 'asc' or 'desc', got {direction!r}")
    M = np.asarray(M)
    rho = np.asarray(rho, dtype=float)
    if rho.shape[0] != M.shape[0]:
        raise ValueError("measure length must match row count")
    key = rho if direction == "asc" else -rho
    order = np.argsort(key, kind="stable")
    return M[order]


def draw_via_heuristic(B: int, h: HeuristicParams, rng: np.random.Generator) -> tuple[int, int]:
    """Stochastic index pairing: uniform b1, Gaussian-perturbed, ceiled, clipped b2.

    Returns 1-based indices in {1..B}^2. eps_switch is the variance of the
    perturbation (std = sqrt(eps_switch)).
    """
    if B < 1:
        raise ValueError("B must be >= 1")
    b1 = int(rng.integers(1, B + 1))
    b2 = b1 + math.sqrt(h.eps_switch) * rng.standard_normal()
    b2 = int(min(max(math.ceil(b2), 1), B))
    return b1, b2


def join_trajectories(
    A: np.ndarray, C: np.ndarray, h: HeuristicParams, rng: np.random.Generator
) -> np.ndarray:
    """Sort A ascending / C descending by trajectory sums, pair rows via the
    heuristic, and concatenate the paired rows. Row widths may differ."""
    A = np.asarray(A, dtype=float)
    C = np.asarray(C, dtype=float)
    if A.shape[0] != C.shape[0]:
        raise ValueError(f"row-count mismatch: {A.shape[0]} vs {C.shape[0]}")
    B = A.shape[0]
    A_hat = sort_by_measure(A, trajectory_sums(A), "asc")
    C_hat = sort_by_measure(C, trajectory_sums(C), "desc")
    out = np.empty((B, A.shape[1] + C.shape[1]))
    for b in range(B):
        b1, b2 = draw_via_heuristic(B, h, rng)
        out[b, : A.shape[1]] = A_hat[b1 - 1]
        out[b, A.shape[1] :] = C_hat[b2 - 1]
    return out


def generate_a2df(
    B: int,
    N: int,
    h: HeuristicParams,
    rng: np.random.Generator,
    dt: float = 0.1,
    seed: int | None = None,
) -> TrainingBatch:
    """Training batch for the adaptive two-degree-of-freedom concept."""
    if B < 1 or N < 1:
        raise ValueError(f"B and N must be positive, got B={B}, N={N}")
    g1 = math.sqrt(h.eps_draw_1) * rng.standard_normal((B, N))
    g2 = math.sqrt(h.eps_draw_2) * rng.standard_normal((B, N))
    g1_hat = sort_by_measure(g1, trajectory_sums(g1), "asc")
    g2_hat = sort_by_measure(g2, trajectory_sums(g2), "desc")
    rows = np.empty((B, N))
    for b in range(B):
        b1, b2 = draw_via_heuristic(B, h, rng)
        rows[b] = _compose_2df(g1_hat[b1 - 1], g2_hat[b2 - 1], dt)
    return TrainingBatch(
        rows,
        Provenance.A2DF,
        seed if seed is not None else -1,
        {"eps_switch": h.eps_switch, "eps_draw_1": h.eps_draw_1, "eps_draw_2": h.eps_draw_2, "dt": dt},
    )


def _compose_2df(deriv_row: np.ndarray, add_row: np.ndarray, dt: float) -> np.ndarray:
    # Integrate the derivative-level row with v_0 = 0, then add elementwise.
    integ = np.concatenate([[0.0], np.cumsum(deriv_row[:-1]) * dt])
    return integ + add_row


def generate_ail(
    B: int,
    N: int,
    eps_draw: float,
    eps_switch: float,
    rng: np.random.Generator,
    seed: int | None = None,
) -> TrainingBatch:
    """Derivative-level training batch built from four joined N/4 segments."""
    if N % 4 != 0:
        raise ValueError(f"N must be divisible by 4, got {N}")
    if B < 1:
        raise ValueError(f"B must be positive, got {B}")
    if eps_draw < 0:
        raise ValueError("eps_draw must be non-negative")
    h = HeuristicParams(eps_switch=eps_switch, eps_draw_1=eps_draw, eps_draw_2=eps_draw)
    seg = N // 4
    groups = [math.sqrt(eps_draw) * rng.standard_normal((B, seg)) for _ in range(4)]
    rows = join_trajectories(groups[0], groups[1], h, rng)
    rows = join_trajectories(rows, groups[2], h, rng)
    rows = join_trajectories(rows, groups[3], h, rng)
    return TrainingBatch(
        rows,
        Provenance.AIL,
        seed if seed is not None else -1,
        {"eps_switch": eps_switch, "eps_draw": eps_draw},
    )
