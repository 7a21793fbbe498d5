"""Entropy-regularized balanced assignment via Sinkhorn-Knopp scaling.

Targets are the maximizers of  Tr(Q C Z^T) + epsilon * H(Q)  over the
transportation polytope with uniform marginals (1/B per frame row, 1/K per
codeword column); the column constraint is what forces balanced codebook
usage.  Rows of the returned matrix are rescaled into per-frame probability
distributions.  All updates run in the log domain so tiny epsilon values
stay finite.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import ValidationError
from .model import Codebook


@dataclass(frozen=True)
class SinkhornConfig:
    epsilon: float = 0.02
    n_iters: int = 3
    mode: str = "fixed"            # "fixed" | "tol"
    tol: float = 1e-8
    max_iters: int = 10_000

    def validate(self) -> None:
        if self.epsilon <= 0:
            raise ValidationError(f"epsilon must be positive, got {self.epsilon:g}")
        if self.n_iters < 1:
            raise ValidationError(f"n_iters must be >= 1, got {self.n_iters}")
        if self.mode not in ("fixed", "tol"):
            raise ValidationError(f"mode must be 'fixed' or 'tol', got {self.mode!r}")
        if self.tol <= 0:
            raise ValidationError(f"tol must be positive, got {self.tol:g}")


def _scaling_rounds(log_q: np.ndarray, n_iters: int | None, tol: float | None,
                    max_iters: int) -> tuple[np.ndarray, float, int]:
    """Alternate row scalings (to 1/B) and column scalings (to 1/K).

    Returns (log plan, worst marginal violation, rounds used).  Violation is
    measured on the row sums, since each round ends with an exact column
    scaling.
    """
    n_rows, n_cols = log_q.shape
    log_r = -np.log(n_rows)
    log_c = -np.log(n_cols)
    violation = np.inf
    rounds = 0
    limit = n_iters if n_iters is not None else max_iters
    for _ in range(limit):
        log_q = log_q - logsumexp(log_q, axis=1, keepdims=True) + log_r
        log_q = log_q - logsumexp(log_q, axis=0, keepdims=True) + log_c
        rounds += 1
        if tol is not None:
            row_sums = np.exp(logsumexp(log_q, axis=1))
            violation = float(np.abs(row_sums - 1.0 / n_rows).max())
            if violation < tol:
                break
    else:
        if tol is not None:
            row_sums = np.exp(logsumexp(log_q, axis=1))
            violation = float(np.abs(row_sums - 1.0 / n_rows).max())
    return log_q, violation, rounds


def sinkhorn_plan(scores: np.ndarray, epsilon: float, n_iters: int | None,
                  tol: float | None, max_iters: int = 10_000) -> np.ndarray:
    """Transport plan for a raw score matrix (rows sum to 1/B, columns to 1/K)."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or 0 in scores.shape:
        raise ValidationError(f"score matrix must be 2-D and non-empty, "
                              f"got shape {scores.shape}")
    if not np.all(np.isfinite(scores)):
        raise ValidationError("score matrix contains non-finite entries")
    log_q, violation, rounds = _scaling_rounds(scores / epsilon, n_iters, tol,
                                               max_iters)
    if tol is not None and violation >= tol:
        raise ValidationError(
            f"Sinkhorn did not converge in {rounds} rounds; marginal "
            f"violation {violation:.3g} >= tol {tol:.3g}")
    return np.exp(log_q)


def sinkhorn_exact(scores: np.ndarray, epsilon: float, tol: float = 1e-8,
                   max_iters: int = 10_000) -> np.ndarray:
    """Converged reference plan; marginals within tol of (1/B, 1/K)."""
    return sinkhorn_plan(scores, epsilon, n_iters=None, tol=tol,
                         max_iters=max_iters)


def smooth_targets(z: np.ndarray, codebook: Codebook,
                   config: SinkhornConfig) -> np.ndarray:
    """Smoothed per-frame target distributions over the codebook.

    Rows of the balanced plan are rescaled by B (up to the residual of the
    final column scaling) so every row sums to one exactly.  Callers treat
    the result as constant: no gradient flows back through it.
    """
    config.validate()
    z = np.asarray(z, dtype=np.float64)
    row_norms = np.linalg.norm(z, axis=1)
    if np.abs(row_norms - 1.0).max() > 1e-6:
        raise ValidationError("z rows are not unit-norm")
    if codebook.k == 0:
        raise ValidationError("empty codebook")
    if z.shape[0] < codebook.k:
        warnings.warn(
            f"batch of {z.shape[0]} frames is smaller than the codebook "
            f"({codebook.k}); balanced column marginals are unreliable",
            stacklevel=2)
    scores = z @ codebook.codewords.T
    if config.mode == "fixed":
        plan = sinkhorn_plan(scores, config.epsilon, n_iters=config.n_iters,
                             tol=None)
    else:
        plan = sinkhorn_plan(scores, config.epsilon, n_iters=None,
                             tol=config.tol, max_iters=config.max_iters)
    return plan / plan.sum(axis=1, keepdims=True)


def plan_objective(plan: np.ndarray, scores: np.ndarray,
                   epsilon: float) -> float:
    """Value of the smoothing objective Tr(Q C Z^T) + epsilon * H(Q)."""
    q = np.asarray(plan, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_q = np.where(q > 0, np.log(np.where(q > 0, q, 1.0)), 0.0)
    entropy = -float(np.sum(q * log_q))
    return float(np.sum(q * scores)) + epsilon * entropy


def marginal_violations(plan: np.ndarray) -> tuple[float, float]:
    """(row, column) deviations of a plan from uniform (1/B, 1/K) marginals."""
    n_rows, n_cols = plan.shape
    row = float(np.abs(plan.sum(axis=1) - 1.0 / n_rows).max())
    col = float(np.abs(plan.sum(axis=0) - 1.0 / n_cols).max())
    return row, col
