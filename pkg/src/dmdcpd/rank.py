"""Rank selection by optimal singular value hard thresholding for unknown noise."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

__all__ = ["RankSuggestion", "omega_approx", "suggest_rank"]


@dataclass(frozen=True)
class RankSuggestion:
    rank: int
    threshold: float
    kept_energy: float
    singular_values: np.ndarray


def omega_approx(beta: float) -> float:
    """Cubic fit of the optimal threshold coefficient for aspect ratio ``beta``."""
    return 0.56 * beta ** 3 - 0.95 * beta ** 2 + 1.82 * beta + 1.43


def suggest_rank(X) -> RankSuggestion:
    """Keep singular values above ``omega(beta) * median(s)``.

    The aspect ratio is taken as ``rows / cols`` and inverted when the matrix
    is wide-side-short, with a warning, since the threshold is defined for
    ``beta <= 1``. At least one direction is always kept.

    Args:
        X: data matrix, typically the embedded snapshots of one window.

    Returns:
        The suggested rank, the threshold and the fraction of energy kept.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or min(X.shape) == 0:
        raise ValueError(f"need a nonempty matrix, got shape {X.shape}")
    rows, cols = X.shape
    beta = rows / cols
    if beta > 1:
        warnings.warn(f"window has fewer columns ({cols}) than rows ({rows}); "
                      "using the inverted aspect ratio", RuntimeWarning, stacklevel=2)
        beta = 1 / beta
    s = np.linalg.svd(X, compute_uv=False)
    tau = omega_approx(beta) * float(np.median(s))
    # a noiseless low-rank matrix has a roundoff median; never keep roundoff
    tau = max(tau, np.finfo(float).eps * max(X.shape) * float(s[0]))
    rank = max(1, int(np.sum(s > tau)))
    energy = float(np.sum(s[:rank] ** 2) / max(np.sum(s ** 2), np.finfo(float).tiny))
    return RankSuggestion(rank, tau, energy, s)
