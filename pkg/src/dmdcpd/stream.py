"""Snapshot ingestion: delay embedding, control handling and the rolling store.

Raw snapshot pairs arrive in mini-batches. Each batch is delay-embedded
(Hankel rows, oldest delay on top), compensated by a known control matrix or
augmented with embedded control rows, and appended to a store that keeps
just enough history to slice the learning, base and test windows.
"""
from __future__ import annotations

import warnings
from itertools import combinations_with_replacement
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError

__all__ = [
    "HankelConfig",
    "WindowLayout",
    "RawBatch",
    "EmbeddedWindows",
    "hankelize",
    "Hankelizer",
    "DelayEmbedder",
    "prepare_pair",
    "SnapshotStore",
    "polynomial_lift",
]


@dataclass(frozen=True)
class HankelConfig:
    """Delay embedding depth ``h`` and stride ``step`` (both in snapshots)."""

    h: int = 0
    step: int = 1

    def __post_init__(self):
        if self.h < 0:
            raise ConfigError(f"delay depth must be nonnegative, got {self.h}")
        if self.step < 1:
            raise ConfigError(f"delay step must be >= 1, got {self.step}")
        if self.h > 0 and self.h % self.step:
            raise ConfigError(
                f"delay depth {self.h} is not a multiple of delay step {self.step}")

    @property
    def n_delays(self) -> int:
        """Number of stacked copies per signal, current snapshot included."""
        return self.h // self.step + 1

    def rows(self, m: int) -> int:
        return m * self.n_delays


@dataclass(frozen=True)
class WindowLayout:
    """Sizes of the base (a), gap (b), test (c) and learning (d) windows."""

    a: int = 100
    b: int = 0
    c: int = 100
    d: int = 300

    def __post_init__(self):
        if self.a < 1 or self.c < 1 or self.d < 1 or self.b < 0:
            raise ConfigError(
                f"invalid window layout a={self.a}, b={self.b}, c={self.c}, d={self.d}")
        if self.d < self.a:
            warnings.warn(
                f"learning window d={self.d} is smaller than base window a={self.a}",
                stacklevel=3)

    @property
    def capacity(self) -> int:
        return self.b + self.c + self.d

    @property
    def warm_columns(self) -> int:
        return self.a + self.b + self.c


@dataclass
class RawBatch:
    """A mini-batch of raw snapshot pairs.

    Attributes:
        states: ``m x j`` snapshots ``x_t``.
        shifted: ``m x j`` snapshots ``x_t'`` one step ahead of ``states``.
        controls: ``l x j`` inputs applied at ``t``; ``None`` when uncontrolled.
        timestamps: length-``j`` strictly increasing times; defaults to indices.
        weights: length-``j`` positive sample weights; defaults to ones.
    """

    states: np.ndarray
    shifted: np.ndarray
    controls: Optional[np.ndarray] = None
    timestamps: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        self.states = _as_2d(self.states)
        self.shifted = _as_2d(self.shifted)
        j = self.states.shape[1]
        if self.shifted.shape != self.states.shape:
            raise ConfigError(
                f"states {self.states.shape} and shifted states {self.shifted.shape} differ")
        if self.controls is None:
            self.controls = np.zeros((0, j))
        else:
            self.controls = _as_2d(self.controls)
            if self.controls.shape[1] != j:
                raise ConfigError(
                    f"controls have {self.controls.shape[1]} columns, expected {j}")
        if self.timestamps is None:
            self.timestamps = np.arange(j)
        else:
            self.timestamps = np.asarray(self.timestamps)
            if self.timestamps.shape != (j,):
                raise ConfigError("timestamps must have one entry per column")
            if j > 1 and not np.all(self.timestamps[1:] > self.timestamps[:-1]):
                raise ConfigError("timestamps must be strictly increasing")
        if self.weights is None:
            self.weights = np.ones(j)
        else:
            self.weights = np.asarray(self.weights, dtype=float)
            if self.weights.shape != (j,) or np.any(self.weights <= 0):
                raise ConfigError("weights must be positive, one per column")

    def __len__(self) -> int:
        return self.states.shape[1]

    @classmethod
    def from_series(cls, values, controls=None, timestamps=None) -> "RawBatch":
        """Pair consecutive samples of an ``m x n`` series into ``n - 1`` pairs.

        ``values`` may be 1-D for a scalar signal. Controls and timestamps are
        taken at the earlier sample of each pair.
        """
        values = _as_2d(values)
        n = values.shape[1]
        if n < 2:
            empty = np.zeros((values.shape[0], 0))
            ctrl = None if controls is None else _as_2d(controls)[:, :0]
            ts = None if timestamps is None else np.asarray(timestamps)[:0]
            return cls(empty, empty.copy(), ctrl, ts)
        ctrl = None if controls is None else _as_2d(controls)[:, : n - 1]
        ts = None if timestamps is None else np.asarray(timestamps)[: n - 1]
        return cls(values[:, :-1], values[:, 1:], ctrl, ts)

    def split(self, size: int):
        """Yield consecutive sub-batches of at most ``size`` columns."""
        for i in range(0, len(self), size):
            sl = slice(i, i + size)
            yield RawBatch(self.states[:, sl], self.shifted[:, sl],
                           self.controls[:, sl], self.timestamps[sl], self.weights[sl])


def _as_2d(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        return a[np.newaxis, :]
    if a.ndim != 2:
        raise ConfigError(f"expected a 1-D or 2-D array, got shape {a.shape}")
    return a


def hankelize(batch, cfg: HankelConfig, history=None):
    """Delay-embed the columns of ``batch``.

    Column ``t`` of the output stacks ``[x_{t-h}; x_{t-h+step}; ...; x_t]``.
    Columns without ``h`` prior snapshots (counting ``history``) are dropped.

    Args:
        batch: ``m x j`` raw snapshots.
        cfg: embedding depth and stride.
        history: ``m x n_hist`` raw snapshots immediately preceding ``batch``.

    Returns:
        ``(embedded, n_skipped)``: the ``m * n_delays x (j - n_skipped)``
        embedding and the number of leading columns still warming up.

    >>> hankelize(np.array([[1., 2., 3., 4.]]), HankelConfig(2, 1))[0]
    array([[1., 2.],
           [2., 3.],
           [3., 4.]])
    """
    batch = _as_2d(batch)
    m, j = batch.shape
    if cfg.h == 0:
        return batch.copy(), 0
    if history is None:
        history = np.zeros((m, 0))
    history = _as_2d(history)[:, -cfg.h:] if history.size else np.zeros((m, 0))
    full = np.hstack([history, batch])
    n_hist = history.shape[1]
    first = max(0, cfg.h - n_hist)
    if first >= j:
        return np.zeros((cfg.rows(m), 0)), j
    newest = n_hist + np.arange(first, j)
    offsets = np.arange(-cfg.h, 1, cfg.step)
    idx = newest[np.newaxis, :] + offsets[:, np.newaxis]
    # full[:, idx] is m x n_delays x n_out; delays must become the outer row block
    emb = full[:, idx].transpose(1, 0, 2).reshape(cfg.rows(m), len(newest))
    return emb, first


class Hankelizer:
    """Stateful wrapper around :func:`hankelize` keeping the last ``h`` columns."""

    def __init__(self, m: int, cfg: HankelConfig):
        self.m = m
        self.cfg = cfg
        self.history = np.zeros((m, 0))

    def push(self, batch):
        emb, skipped = hankelize(batch, self.cfg, self.history)
        if self.cfg.h:
            self.history = np.hstack([self.history, _as_2d(batch)])[:, -self.cfg.h:]
        return emb, skipped


class DelayEmbedder:
    """Embeds states, shifted states and controls with a common warm-up.

    States and controls may use different delay configurations. A column is
    emitted only once every signal has enough history, so all three outputs
    stay aligned on the same time index.
    """

    def __init__(self, m: int, l: int, state_cfg: HankelConfig,
                 control_cfg: Optional[HankelConfig] = None):
        self.m, self.l = m, l
        self.state_cfg = state_cfg
        self.control_cfg = control_cfg if control_cfg is not None else state_cfg
        self._x = Hankelizer(m, state_cfg)
        self._xp = Hankelizer(m, state_cfg)
        self._u = Hankelizer(l, self.control_cfg)
        self.lag = max(state_cfg.h, self.control_cfg.h if l else 0)
        self.seen = 0

    @property
    def state_rows(self) -> int:
        return self.state_cfg.rows(self.m)

    @property
    def control_rows(self) -> int:
        return self.control_cfg.rows(self.l)

    def push(self, batch: RawBatch):
        """Embed a batch; returns ``(X_h, X'_h, Theta_h, n_skipped)``."""
        j = len(batch)
        if batch.states.shape[0] != self.m or batch.controls.shape[0] != self.l:
            raise ConfigError(
                f"batch has {batch.states.shape[0]} states / {batch.controls.shape[0]} "
                f"controls, engine expects {self.m} / {self.l}")
        x, _ = self._x.push(batch.states)
        xp, _ = self._xp.push(batch.shifted)
        u, _ = self._u.push(batch.controls)
        skipped = min(j, max(0, self.lag - self.seen))
        self.seen += j
        n_out = j - skipped
        u = u[:, u.shape[1] - n_out:] if self.l else np.zeros((0, n_out))
        return x[:, x.shape[1] - n_out:], xp[:, xp.shape[1] - n_out:], u, skipped


def prepare_pair(x_h, xp_h, u_h, known_b=None):
    """Fold embedded controls into the snapshot pair.

    With a known control matrix the shifted snapshots are compensated,
    ``X' - B Theta``; otherwise control rows are stacked below the state rows.
    """
    x_h = _as_2d(x_h)
    xp_h = _as_2d(xp_h)
    u_h = np.asarray(u_h, dtype=float).reshape(-1, x_h.shape[1]) if np.size(u_h) else \
        np.zeros((0, x_h.shape[1]))
    if xp_h.shape != x_h.shape:
        raise ConfigError(f"embedded pair shapes differ: {x_h.shape} vs {xp_h.shape}")
    if known_b is not None:
        known_b = np.atleast_2d(np.asarray(known_b, dtype=float))
        if known_b.shape != (x_h.shape[0], u_h.shape[0]):
            raise ConfigError(
                f"control matrix must be {x_h.shape[0]}x{u_h.shape[0]}, got {known_b.shape}")
        return x_h, xp_h - known_b @ u_h
    return np.vstack([x_h, u_h]), xp_h


def polynomial_lift(x, degree: int = 2):
    """Append monomials of the state rows up to ``degree`` (no constant term).

    Rows are ordered by degree, then lexicographically, e.g. for two states
    and degree 2: ``x1, x2, x1^2, x1 x2, x2^2``.
    """
    x = _as_2d(x)
    rows = [x]
    for deg in range(2, degree + 1):
        for combo in combinations_with_replacement(range(x.shape[0]), deg):
            rows.append(np.prod(x[list(combo)], axis=0, keepdims=True))
    return np.vstack(rows)


@dataclass
class EmbeddedWindows:
    """Slices handed to detection and learning after one store advance.

    ``learn_x`` / ``learn_y`` hold the learning pair slice; its first
    ``n_revert`` columns leave the learning window and its last ``n_new``
    columns enter it. ``base`` and ``test`` are ``None`` until the store
    holds ``a + b + c`` columns.
    """

    k: int
    learn_x: np.ndarray
    learn_y: np.ndarray
    learn_w: np.ndarray
    n_revert: int
    n_new: int
    base: Optional[np.ndarray] = None
    test: Optional[np.ndarray] = None
    timestamps: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def revert_x(self):
        return self.learn_x[:, : self.n_revert]

    @property
    def revert_y(self):
        return self.learn_y[:, : self.n_revert]

    @property
    def revert_w(self):
        return self.learn_w[: self.n_revert]

    @property
    def new_x(self):
        return self.learn_x[:, self.learn_x.shape[1] - self.n_new:]

    @property
    def new_y(self):
        return self.learn_y[:, self.learn_y.shape[1] - self.n_new:]

    @property
    def new_w(self):
        return self.learn_w[self.learn_w.shape[0] - self.n_new:]


class SnapshotStore:
    """Rolling buffer of the last ``b + c + d`` embedded snapshot pairs.

    Columns live in a buffer of twice the capacity so appends are amortized
    O(rows * j); ``k`` counts every column ever appended.
    """

    def __init__(self, layout: WindowLayout, x_rows: int, y_rows: int):
        self.layout = layout
        cap = layout.capacity
        self._x = np.empty((x_rows, 2 * cap))
        self._y = np.empty((y_rows, 2 * cap))
        self._w = np.empty(2 * cap)
        self._start = 0
        self._end = 0
        self.k = 0

    def __len__(self) -> int:
        return self._end - self._start

    def _global(self, lo, hi):
        """Buffer slice for global column indices ``[lo, hi)`` clipped to the store."""
        first = self.k - len(self)
        lo = max(lo, first)
        hi = max(hi, lo)
        return slice(self._start + lo - first, self._start + hi - first)

    def _view(self, arr, sl):
        v = arr[..., sl]
        v.flags.writeable = False
        return v

    def advance(self, x_bar, y_bar, weights=None, timestamps=None) -> EmbeddedWindows:
        """Append ``j`` embedded pairs and slice the windows around them."""
        lay = self.layout
        x_bar = _as_2d(x_bar)
        y_bar = _as_2d(y_bar)
        j = x_bar.shape[1]
        if j > lay.c:
            raise ConfigError(f"mini-batch of {j} columns exceeds test window c={lay.c}")
        if weights is None:
            weights = np.ones(j)
        if timestamps is None:
            timestamps = np.arange(self.k, self.k + j)
        k = self.k
        edge = k - lay.b - lay.c
        # learning slice comes from the pre-roll store
        sl = self._global(edge - lay.d, edge + j)
        learn_x = self._x[:, sl].copy()
        learn_y = self._y[:, sl].copy()
        learn_w = self._w[sl].copy()
        n_new = max(0, edge + j) - max(0, edge)
        n_revert = max(0, learn_x.shape[1] - lay.d)

        self._append(x_bar, y_bar, np.asarray(weights, float))
        k = self.k
        win = EmbeddedWindows(k, learn_x, learn_y, learn_w, n_revert, n_new)
        win.timestamps = np.asarray(timestamps)
        if len(self) >= lay.warm_columns:
            win.base = self._view(self._x, self._global(k - lay.a - lay.b - lay.c,
                                                        k - lay.b - lay.c))
            win.test = self._view(self._x, self._global(k - lay.c, k))
        return win

    def _append(self, x, y, w):
        j = x.shape[1]
        cap = self.layout.capacity
        if self._end + j > self._x.shape[1]:
            keep = min(len(self), cap)
            src = slice(self._end - keep, self._end)
            self._x[:, :keep] = self._x[:, src]
            self._y[:, :keep] = self._y[:, src]
            self._w[:keep] = self._w[src]
            self._start, self._end = 0, keep
        self._x[:, self._end:self._end + j] = x
        self._y[:, self._end:self._end + j] = y
        self._w[self._end:self._end + j] = w
        self._end += j
        self.k += j
        if len(self) > cap:
            self._start = self._end - cap

    def learning_window(self):
        """Copies of the pairs and weights currently inside the learning window."""
        lay = self.layout
        edge = self.k - lay.b - lay.c
        sl = self._global(edge - lay.d, edge)
        return self._x[:, sl].copy(), self._y[:, sl].copy(), self._w[sl].copy()

    @property
    def x(self):
        return self._view(self._x, slice(self._start, self._end))

    @property
    def y(self):
        return self._view(self._y, slice(self._start, self._end))
