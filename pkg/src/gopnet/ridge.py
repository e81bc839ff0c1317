"""Closed-form ridge / pseudoinverse solves for the linear output layer.

The primal form (H'H + cI)^-1 H'Y is used when d < N and the dual form
H'(HH' + cI)^-1 Y when d >= N, so the inverted Gram matrix is always the
smaller one.  c = 0 falls back to an SVD solve that raises SingularSystem
on numerically rank-deficient systems.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DimensionMismatch, SingularSystem

# Relative singular-value cutoff for unregularized solves.
RANK_TOL = 1e-10


class Metric(Enum):
    MSE = "mse"
    ACCURACY = "accuracy"


@dataclass(frozen=True)
class RidgeProblem:
    H: np.ndarray  # [N, d]
    Y: np.ndarray  # [N, C]
    c: float

    def __post_init__(self):
        if self.H.ndim != 2 or self.Y.ndim != 2:
            raise DimensionMismatch("H and Y must be 2-D")
        if self.H.shape[0] != self.Y.shape[0]:
            raise DimensionMismatch(
                f"H has {self.H.shape[0]} rows, Y has {self.Y.shape[0]}")
        if self.H.shape[0] < 1 or self.H.shape[1] < 1 or self.Y.shape[1] < 1:
            raise DimensionMismatch("H and Y need at least one row and column")
        if self.c < 0:
            raise ValueError("ridge coefficient must be non-negative")
        if not (np.isfinite(self.H).all() and np.isfinite(self.Y).all()):
            raise ValueError("H and Y must be finite")


def solve_ridge(H: np.ndarray, Y: np.ndarray, c: float = 0.0) -> np.ndarray:
    """Ridge solution B [d, C] minimizing ||H B - Y||^2 + c ||B||^2."""
    H = np.ascontiguousarray(H, dtype=float)
    Y = np.ascontiguousarray(Y, dtype=float)
    RidgeProblem(H, Y, c)
    n, d = H.shape
    if c == 0.0:
        return _pinv_solve(H, Y)
    if d < n:
        gram = H.T @ H + c * np.eye(d)
        return np.linalg.solve(gram, H.T @ Y)
    gram = H @ H.T + c * np.eye(n)
    return H.T @ np.linalg.solve(gram, Y)


def _pinv_solve(H: np.ndarray, Y: np.ndarray) -> np.ndarray:
    u, s, vt = np.linalg.svd(H, full_matrices=False)
    cutoff = RANK_TOL * s.max() if s.size else 0.0
    if s.size == 0 or s.max() == 0.0 or (s <= cutoff).any():
        raise SingularSystem(
            "system is numerically rank-deficient with c = 0; use c > 0")
    return (vt.T / s) @ (u.T @ Y)


def solve_augmented(H_existing, H_new: np.ndarray, Y: np.ndarray,
                    c: float = 0.0) -> np.ndarray:
    """Ridge solve on the column concatenation [H_existing, H_new].

    H_existing may be None or have zero columns, in which case this equals
    solve_ridge(H_new, Y, c) exactly.
    """
    H_new = np.asarray(H_new, dtype=float)
    if H_existing is None or H_existing.shape[1] == 0:
        stacked = H_new
    else:
        H_existing = np.asarray(H_existing, dtype=float)
        if H_existing.shape[0] != H_new.shape[0]:
            raise DimensionMismatch(
                f"row counts differ: {H_existing.shape[0]} vs {H_new.shape[0]}")
        stacked = np.hstack([H_existing, H_new])
    return solve_ridge(stacked, Y, c)


@dataclass
class CandidateResult:
    score: float
    best_c: float
    B: np.ndarray


def _score(P: np.ndarray, Y: np.ndarray, metric: Metric) -> float:
    if metric is Metric.MSE:
        return float(np.mean((P - Y) ** 2))
    return float(np.mean(P.argmax(axis=1) == Y.argmax(axis=1)))


def _better(score, c, best: CandidateResult | None, metric: Metric) -> bool:
    if best is None:
        return True
    if metric is Metric.MSE:
        return score < best.score or (score == best.score and c > best.best_c)
    return score > best.score or (score == best.score and c > best.best_c)


def evaluate_candidate(H: np.ndarray, Y: np.ndarray, c_grid,
                       metric: Metric = Metric.MSE,
                       H_val: np.ndarray | None = None,
                       Y_val: np.ndarray | None = None) -> CandidateResult:
    """Fit B on (H, Y) for each c in the grid and score the best.

    Scores on the validation pair when given, otherwise on the training
    pair.  Ties on score go to the larger c.  A SingularSystem from a grid
    value is propagated only when every value fails.
    """
    if H_val is None:
        H_score, Y_score = H, Y
    else:
        H_score, Y_score = H_val, Y_val
    best: CandidateResult | None = None
    last_error: Exception | None = None
    for c in c_grid:
        try:
            B = solve_ridge(H, Y, c)
        except SingularSystem as exc:
            last_error = exc
            continue
        if not np.isfinite(B).all():
            last_error = SingularSystem(f"non-finite solution at c = {c}")
            continue
        score = _score(H_score @ B, Y_score, metric)
        if not np.isfinite(score):
            last_error = SingularSystem(f"non-finite score at c = {c}")
            continue
        if _better(score, c, best, metric):
            best = CandidateResult(score, float(c), B)
    if best is None:
        raise last_error if last_error is not None else SingularSystem(
            "empty ridge coefficient grid")
    return best
