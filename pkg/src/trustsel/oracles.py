"""Independent brute-force oracles the solver is checked against.

These deliberately avoid the solver's incremental machinery: supports are
enumerated exhaustively and least squares is solved densely, so agreement is
evidence rather than tautology.
"""

from __future__ import annotations

from itertools import combinations

import numpy as np


def full_least_squares_residual(columns: np.ndarray, target: np.ndarray) -> float:
    """Residual norm of the dense least-squares fit on all columns (rows of ``columns``)."""
    coeffs, *_ = np.linalg.lstsq(columns.T, target, rcond=None)
    return float(np.linalg.norm(target - columns.T @ coeffs))


def best_subset_least_squares(
    columns: np.ndarray, target: np.ndarray, k: int
) -> tuple[tuple[int, ...], float]:
    """Exhaustive search over all C(N, k) supports for the least-squares optimum."""
    n = columns.shape[0]
    best_support: tuple[int, ...] = ()
    best_residual = float(np.linalg.norm(target))
    for support in combinations(range(n), k):
        basis = columns[list(support)].T
        coeffs, *_ = np.linalg.lstsq(basis, target, rcond=None)
        residual = float(np.linalg.norm(target - basis @ coeffs))
        if residual < best_residual:
            best_residual = residual
            best_support = support
    return best_support, best_residual


def rescan_replacement(
    entry_columns: np.ndarray,
    coefficients: np.ndarray,
    approximation: np.ndarray,
    target: np.ndarray,
    incoming: np.ndarray,
) -> tuple[str, int | None, float, float | None]:
    """Re-derive the replacement decision with a plain scalar scan.

    Returns (outcome, evicted position, incoming projection, best score); the
    loop mirrors the published rule but shares no code with the solver.
    """
    rho = np.asarray(target, dtype=float) - np.asarray(approximation, dtype=float)
    pi = abs(float(np.dot(incoming, rho)))
    best_pos = None
    pi_max = -float("inf")
    for pos in range(entry_columns.shape[0]):
        proj = abs(float(np.dot(entry_columns[pos], rho)))
        gamma = float(coefficients[pos])
        if pi > proj and gamma <= 0.0 and (proj + gamma) > pi_max:
            pi_max = proj + gamma
            best_pos = pos
    if best_pos is None:
        return "rejected", None, pi, None
    return "replaced", best_pos, pi, pi_max
