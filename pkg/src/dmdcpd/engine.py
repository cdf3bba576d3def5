"""Change-point detection driven by truncated online DMD with control.

Every pass embeds the incoming pairs, scores the current base and test
windows against the tracked subspace and only then learns from the columns
that entered the learning window. Detection therefore never sees a model
that was fit on its own test window.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np

from .errors import ConfigError, CpdError, NumericalError, StateError
from .online_dmd import ModeSet, OnlineDMD, project_reconstruct
from .online_svd import OnlineSVD
from .stream import (DelayEmbedder, EmbeddedWindows, HankelConfig, RawBatch,
                     SnapshotStore, WindowLayout, prepare_pair)

__all__ = ["CpdConfig", "CpdScore", "CpdDmd", "score_windows"]

log = logging.getLogger(__name__)

SCORE_MODES = ("ratio", "difference", "both")
BASES = ("pod", "modes")


@dataclass
class CpdConfig:
    """Hyperparameters of the detector.

    Attributes:
        layout: base/gap/test/learning window sizes.
        hankel: delay embedding of the states.
        control_hankel: delay embedding of the controls; defaults to ``hankel``.
        p: reduced state rank.
        q: reduced control rank (0 when there are no controls or ``B`` is known).
        threshold: alarm when the ratio score exceeds it.
        score_mode: which score drives ``alarm``; both are always reported.
        rho: diffuse prior scale of the RLS precision matrix.
        svd_tol: online SVD tolerance; ``None`` scales with the row count.
        known_b: control matrix in embedded coordinates, enables compensation.
        interleave: score and learn column by column inside a mini-batch, so
            that any batch size reproduces the single-column score sequence.
            When false, one score is emitted per batch and the batch is
            learned as a single mini-batch update.
        basis: ``"pod"`` scores against the tracked POD basis, ``"modes"``
            against the span of the state DMD modes.
        polar_alignment: see :class:`~dmdcpd.online_dmd.OnlineDMD`.
        min_learn: learned columns required before the first fit and hence
            before the first score; ``None`` uses the embedded row count,
            the least that makes the least-squares problem full rank.
    """

    layout: WindowLayout = field(default_factory=WindowLayout)
    hankel: HankelConfig = field(default_factory=HankelConfig)
    control_hankel: Optional[HankelConfig] = None
    p: int = 2
    q: int = 0
    threshold: float = 0.0
    score_mode: str = "both"
    rho: float = 1e4
    svd_tol: Optional[float] = None
    known_b: Optional[np.ndarray] = None
    interleave: bool = True
    basis: str = "pod"
    polar_alignment: bool = False
    min_learn: Optional[int] = None

    def __post_init__(self):
        if self.threshold < 0:
            raise ConfigError(f"threshold must be nonnegative, got {self.threshold}")
        if self.score_mode not in SCORE_MODES:
            raise ConfigError(f"score_mode must be one of {SCORE_MODES}")
        if self.basis not in BASES:
            raise ConfigError(f"basis must be one of {BASES}")
        if self.p < 1 or self.q < 0:
            raise ConfigError(f"invalid ranks p={self.p}, q={self.q}")
        if self.min_learn is not None and self.min_learn > self.layout.d:
            raise ConfigError(
                f"min_learn={self.min_learn} exceeds the learning window d={self.layout.d}")

    @property
    def rank(self) -> int:
        return self.p + self.q

    def to_dict(self) -> dict:
        out = asdict(self)
        if self.known_b is not None:
            out["known_b"] = np.asarray(self.known_b).tolist()
        return out


@dataclass(frozen=True)
class CpdScore:
    """Detection statistics for one step.

    ``k`` counts the snapshot pairs consumed so far; the test window covers
    the ``c`` embedded columns ending at pair ``k - 1``.
    """

    k: int
    timestamp: object
    base_error: float
    test_error: float
    ratio: float
    difference: float
    alarm: bool
    degenerate_base: bool = False


def score_windows(base, test, basis, threshold=0.0, score_mode="both"):
    """Mean reconstruction errors of two windows and the derived scores.

    Returns:
        ``(base_error, test_error, ratio, difference, alarm, degenerate)``.
    """
    _, _, eb = project_reconstruct(basis, base)
    _, _, et = project_reconstruct(basis, test)
    e_base = float(np.mean(eb))
    e_test = float(np.mean(et))
    scale = max(float(np.mean(np.sum(np.asarray(base) ** 2, axis=0))), 1.0)
    floor = np.finfo(float).eps * scale
    degenerate = e_base <= floor
    ratio = max(0.0, e_test / max(e_base, floor) - 1.0)
    diff = e_test - e_base
    stat = diff if score_mode == "difference" else ratio
    return e_base, e_test, ratio, diff, bool(stat > threshold), degenerate


class CpdDmd:
    """Streaming change-point detector.

    Args:
        config: detector hyperparameters.
        n_states: number of raw state signals ``m``.
        n_controls: number of raw control signals ``l``.
    """

    def __init__(self, config: CpdConfig, n_states: int, n_controls: int = 0):
        self.config = cfg = config
        self.m, self.l = n_states, n_controls
        self.embedder = DelayEmbedder(n_states, n_controls, cfg.hankel, cfg.control_hankel)
        sr, cr = self.embedder.state_rows, self.embedder.control_rows
        if cfg.known_b is not None:
            if n_controls == 0:
                raise ConfigError("a known control matrix needs control inputs")
            self.x_rows = sr
        else:
            self.x_rows = sr + cr
        self.state_rows = sr
        if cfg.rank > self.x_rows:
            raise ConfigError(
                f"rank p+q={cfg.rank} exceeds embedded dimension {self.x_rows}")
        if cfg.p > sr:
            raise ConfigError(f"state rank p={cfg.p} exceeds {sr} embedded state rows")
        needed = max(self.x_rows, cfg.rank + 1)
        self.min_learn = max(needed, cfg.min_learn or 0)
        if cfg.layout.d < needed:
            raise ConfigError(
                f"learning window d={cfg.layout.d} cannot hold the {needed} "
                "columns needed for a full-rank least-squares problem")
        self.store = SnapshotStore(cfg.layout, self.x_rows, sr)
        self.svd: Optional[OnlineSVD] = None
        self.dmd: Optional[OnlineDMD] = None
        self._init_x: list = []
        self._init_y: list = []
        self._init_w: list = []
        self.n_pairs = 0
        self.n_refits = 0

    @property
    def ready(self) -> bool:
        return self.svd is not None and len(self.store) >= self.config.layout.warm_columns

    @property
    def basis(self):
        """Orthonormal basis the windows are projected on."""
        self.svd.flush()
        if self.config.basis == "pod":
            return self.svd.U
        return np.linalg.qr(self.svd.U[:, : self.config.p])[0]

    @property
    def U_state(self):
        """State rows of the first ``p`` POD directions."""
        return self.svd.U[: self.state_rows, : self.config.p]

    def modes(self) -> ModeSet:
        return self.dmd.modes(self.U_state)

    def step(self, batch: RawBatch) -> List[CpdScore]:
        """Process one mini-batch and return the scores it produced."""
        if len(batch) > self.config.layout.c:
            raise ConfigError(
                f"mini-batch of {len(batch)} pairs exceeds test window c={self.config.layout.c}")
        first_pair = self.n_pairs
        try:
            x_h, xp_h, u_h, skipped = self.embedder.push(batch)
            x_bar, y_bar = prepare_pair(x_h, xp_h, u_h, self.config.known_b)
            self.n_pairs += len(batch)
            w = batch.weights[skipped:]
            ts = batch.timestamps[skipped:]
            if x_bar.shape[1] == 0:
                return []
            if self.config.interleave:
                scores = []
                for i in range(x_bar.shape[1]):
                    sl = slice(i, i + 1)
                    s = self._pass(x_bar[:, sl], y_bar[:, sl], w[sl], ts[sl],
                                   first_pair + skipped + i + 1)
                    if s is not None:
                        scores.append(s)
                return scores
            s = self._pass(x_bar, y_bar, w, ts, self.n_pairs)
            return [] if s is None else [s]
        except CpdError as exc:
            raise type(exc)(f"step at pair {first_pair}: {exc}") from exc

    def _pass(self, x_bar, y_bar, w, ts, k) -> Optional[CpdScore]:
        win = self.store.advance(x_bar, y_bar, w, ts)
        score = None
        if self.ready and win.base is not None:
            score = self.detect(win, k, ts[-1])
        self.learn(win)
        return score

    def detect(self, win: EmbeddedWindows, k, timestamp) -> CpdScore:
        cfg = self.config
        eb, et, ratio, diff, alarm, degenerate = score_windows(
            win.base, win.test, self.basis, cfg.threshold, cfg.score_mode)
        if degenerate:
            log.debug("degenerate base window at pair %d", k)
        return CpdScore(k, _scalar(timestamp), eb, et, ratio, diff, alarm, degenerate)

    def learn(self, win: EmbeddedWindows):
        """Revert columns leaving the learning window, then add the new ones."""
        cfg = self.config
        if self.svd is None:
            if win.n_revert:
                raise CpdError("learning window overflowed before initialization")
            if win.n_new:
                self._init_x.append(win.new_x)
                self._init_y.append(win.new_y)
                self._init_w.append(win.new_w)
            if sum(x.shape[1] for x in self._init_x) >= self.min_learn:
                self._initialize()
            return
        U_prev = self.svd.U.copy()
        if win.n_revert:
            self.svd.revert(win.n_revert)
        if win.n_new:
            self.svd.update(win.new_x)
        self.svd.flush()
        U = self.svd.U
        self.dmd.align(U_prev, U)
        try:
            if win.n_revert:
                self.dmd.revert(U.T @ win.revert_x, self.U_state.T @ win.revert_y,
                                win.revert_w)
            if win.n_new:
                self.dmd.update(U.T @ win.new_x, self.U_state.T @ win.new_y, win.new_w)
        except (StateError, NumericalError) as exc:
            # columns learned before a direction entered the basis carry energy
            # the recursive Gram never saw; refit on the stored learning window
            log.debug("refitting reduced operator at pair %d: %s", self.n_pairs, exc)
            self._refit()

    def _refit(self):
        cfg = self.config
        X, Y, w = self.store.learning_window()
        U = self.svd.U
        self.dmd = OnlineDMD.from_batch(U.T @ X, self.U_state.T @ Y, w, cfg.p, cfg.q,
                                        cfg.rho, polar=cfg.polar_alignment)
        self.n_refits += 1

    def _initialize(self):
        cfg = self.config
        X = np.hstack(self._init_x)
        Y = np.hstack(self._init_y)
        w = np.concatenate(self._init_w)
        self._init_x, self._init_y, self._init_w = [], [], []
        self.svd = OnlineSVD.initialize(X, cfg.rank, tol=cfg.svd_tol)
        self.dmd = OnlineDMD.from_batch(self.svd.U.T @ X, self.U_state.T @ Y, w, cfg.p,
                                        cfg.q, cfg.rho, polar=cfg.polar_alignment)
        log.debug("initialized on %d columns", X.shape[1])

    def run(self, batch: RawBatch, batch_size: int = 1) -> List[CpdScore]:
        """Replay a long batch in chunks of ``batch_size`` pairs."""
        scores = []
        for part in batch.split(batch_size):
            scores.extend(self.step(part))
        return scores


def _scalar(t):
    return t.item() if isinstance(t, np.generic) else t
