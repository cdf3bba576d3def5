"""NAB-style scoring of alarm sequences against labeled change points.

Scoring windows start at each change point and extend to the right, so an
alarm raised before the change is a false positive. Only the earliest alarm
inside a window earns credit, weighted by a scaled sigmoid of its position;
later alarms in the same window are ignored.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError

__all__ = ["NabProfile", "PROFILES", "scaled_sigmoid", "scoring_windows", "nab_score",
           "nab_scores", "sweep_threshold", "alarms_from_scores", "default_window",
           "write_results"]


@dataclass(frozen=True)
class NabProfile:
    """Application profile weights."""

    name: str
    tp: float = 1.0
    fp: float = -0.11
    fn: float = -1.0

    def __post_init__(self):
        if self.tp <= 0 or self.fp > 0 or self.fn > 0:
            raise ConfigError(
                f"profile {self.name!r} needs tp > 0 and fp, fn <= 0")


PROFILES: Dict[str, NabProfile] = {
    "standard": NabProfile("standard", 1.0, -0.11, -1.0),
    "low_fp": NabProfile("low_fp", 1.0, -0.22, -1.0),
    "low_fn": NabProfile("low_fn", 1.0, -0.11, -2.0),
}


def scaled_sigmoid(x):
    """``2 / (1 + exp(5x)) - 1``, clipped to -1 beyond ``x = 3``."""
    x = np.asarray(x, dtype=float)
    with np.errstate(over="ignore"):
        out = 2.0 / (1.0 + np.exp(5.0 * x)) - 1.0
    return np.where(x > 3.0, -1.0, out)


def default_window(n_total: int, n_labels: int) -> int:
    """Window length: a tenth of the data span shared among the labels."""
    if n_labels < 1:
        raise ConfigError("at least one label is needed")
    return max(1, int(n_total / (10 * n_labels)))


def scoring_windows(labels: Sequence[int], length: int) -> List[Tuple[int, int]]:
    """Half-open windows ``[label, label + length)``, overlapping ones merged."""
    if length < 1:
        raise ConfigError(f"window length must be positive, got {length}")
    windows: List[List[int]] = []
    for lab in sorted(int(x) for x in labels):
        if windows and lab < windows[-1][1]:
            windows[-1][1] = max(windows[-1][1], lab + length)
        else:
            windows.append([lab, lab + length])
    return [(a, b) for a, b in windows]


def _raw_score(alarms, windows, profile):
    tp_norm = float(scaled_sigmoid(-1.0))
    hit = [False] * len(windows)
    total = 0.0
    for i in sorted(set(int(a) for a in alarms)):
        # last window starting at or before i
        w = -1
        for j, (lo, _) in enumerate(windows):
            if lo <= i:
                w = j
        if w < 0:
            total += profile.fp
            continue
        lo, hi = windows[w]
        if i < hi:
            if not hit[w]:
                hit[w] = True
                pos = -(hi - i) / (hi - lo)
                total += profile.tp * float(scaled_sigmoid(pos)) / tp_norm
            continue
        pos = abs(hi - 1 - i) / max(hi - lo - 1, 1)
        total += -profile.fp * float(scaled_sigmoid(pos))
    total += profile.fn * hit.count(False)
    return total


def nab_score(alarms: Iterable[int], labels: Sequence[int], length: int,
              profile: NabProfile | str = "standard") -> float:
    """Normalized NAB score: 0 for no alarms, 100 for alarms exactly at every label.

    Args:
        alarms: snapshot indices at which an alarm was raised.
        labels: change-point indices.
        length: scoring window length in snapshots.
        profile: profile weights or the name of a built-in profile.

    Raises:
        ConfigError: on an empty label set or an unknown profile.

    >>> nab_score([], [100], 10)
    0.0
    >>> nab_score([100], [100], 10)
    100.0
    """
    if isinstance(profile, str):
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
        profile = PROFILES[profile]
    if len(labels) == 0:
        raise ConfigError("the score is undefined without labels")
    windows = scoring_windows(labels, length)
    null = profile.fn * len(windows)
    perfect = profile.tp * len(windows)
    raw = _raw_score(list(alarms), windows, profile)
    return round(100.0 * (raw - null) / (perfect - null), 10)


def nab_scores(alarms, labels, length) -> Dict[str, float]:
    """Scores under every built-in profile."""
    alarms = list(alarms)
    return {name: nab_score(alarms, labels, length, prof) for name, prof in PROFILES.items()}


def alarms_from_scores(k, stat, threshold: float) -> np.ndarray:
    """Indices ``k`` whose statistic exceeds ``threshold``."""
    k = np.asarray(k)
    return k[np.asarray(stat, dtype=float) > threshold]


def sweep_threshold(k, stat, labels, length: int, profile="standard",
                    thresholds: Optional[Sequence[float]] = None):
    """Evaluate the NAB score over a grid of thresholds.

    Args:
        k: snapshot index of every score.
        stat: detection statistic for every score.
        thresholds: grid; by default 0 plus the quantiles of the positive
            statistic values.

    Returns:
        ``(best_threshold, thresholds, scores)``; ties go to the lowest threshold.
    """
    stat = np.asarray(stat, dtype=float)
    if thresholds is None:
        pos = stat[stat > 0]
        grid = np.quantile(pos, np.linspace(0.0, 1.0, 101)) if pos.size else np.zeros(0)
        thresholds = np.unique(np.concatenate([[0.0], grid]))
    thresholds = np.asarray(thresholds, dtype=float)
    curve = np.array([nab_score(alarms_from_scores(k, stat, t), labels, length, profile)
                      for t in thresholds])
    best = int(np.argmax(curve))
    return float(thresholds[best]), thresholds, curve


def write_results(path, rows: Iterable[Tuple[str, Dict[str, float]]]):
    """Write a results table with one row per algorithm and a column per profile."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["algorithm", *PROFILES])
        for name, scores in rows:
            out.writerow([name, *(f"{scores[p]:.2f}" for p in PROFILES)])
