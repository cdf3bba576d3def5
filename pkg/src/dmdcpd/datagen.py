"""Synthetic benchmark streams with known change points."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Tuple

import numpy as np

__all__ = ["StepsSpec", "TwoTankSpec", "gen_steps", "simulate_two_tanks",
           "two_tank_rhs"]


@dataclass(frozen=True)
class StepsSpec:
    """Piecewise-constant signal with steps of increasing size.

    Step ``i`` (1-based) at snapshot ``i * step_every`` raises the level by
    ``i * step_size``, so both the jump and the distance from the starting
    level grow with ``i``.
    """

    n_total: int = 10000
    step_every: int = 1000
    n_steps: int = 9
    step_size: float = 0.5
    noise: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.noise < 0:
            raise ValueError("noise must be nonnegative")


def gen_steps(spec: StepsSpec = StepsSpec()) -> Tuple[np.ndarray, np.ndarray]:
    """Return ``(signal, labels)``; the signal has shape ``(n_total,)``."""
    rng = np.random.default_rng(spec.seed)
    labels = spec.step_every * np.arange(1, spec.n_steps + 1)
    labels = labels[labels < spec.n_total]
    level = np.zeros(spec.n_total)
    for i, k in enumerate(labels, start=1):
        level[k:] += i * spec.step_size
    return level + spec.noise * rng.standard_normal(spec.n_total), labels


@dataclass(frozen=True)
class TwoTankSpec:
    """Two cascaded tanks fed through a delayed valve.

    Times are in samples unless noted; ``dt`` is the sampling period in
    seconds. ``tau`` is drawn uniformly from ``tau_range`` when ``None``.
    """

    k1: float = 0.02
    k2: float = 0.02
    F1: float = 1.0
    F2: float = 1.0
    dt: float = 10.0
    n: int = 12000
    tau: int | None = None
    tau_range: Tuple[int, int] = (20, 30)
    control_every: int = 200
    q_max: float = 0.03
    noise_var: float = 0.35
    bias: float = 1.0
    bias_window: Tuple[int, int] = (4000, 5000)
    gain: float = 2.0
    gain_window: Tuple[int, int] = (7600, 8600)
    trend_slope: float = 1e-3
    trend_start: int = 9800
    faults: bool = True
    seed: int = 0

    def __post_init__(self):
        for name in ("k1", "k2", "F1", "F2", "dt"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def labels(self) -> np.ndarray:
        return np.array([self.bias_window[0], self.gain_window[0], self.trend_start])

    @property
    def fault_ends(self) -> np.ndarray:
        return np.array([self.bias_window[1], self.gain_window[1], self.n])

    def without_faults(self, **changes) -> "TwoTankSpec":
        return replace(self, faults=False, **changes)


def two_tank_rhs(h, q, spec: TwoTankSpec):
    """Level derivatives for inflow ``q`` (already delayed)."""
    h1, h2 = np.sqrt(np.maximum(h, 0.0))
    out1 = spec.k1 * h1
    return np.array([q - out1 / spec.F1, out1 / spec.F2 - spec.k2 * h2 / spec.F2])


def _rk4(h, q, spec):
    dt = spec.dt
    k1 = two_tank_rhs(h, q, spec)
    k2 = two_tank_rhs(h + 0.5 * dt * k1, q, spec)
    k3 = two_tank_rhs(h + 0.5 * dt * k2, q, spec)
    k4 = two_tank_rhs(h + dt * k3, q, spec)
    return np.maximum(h + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4), 0.0)


def simulate_two_tanks(spec: TwoTankSpec = TwoTankSpec()):
    """Simulate the delayed two-tank system.

    Returns:
        ``(levels, controls, labels)``: observed levels ``2 x n`` with noise
        and sensor faults, valve commands ``1 x n`` and fault onsets (empty
        when ``spec.faults`` is false).
    """
    rng = np.random.default_rng(spec.seed)
    tau = spec.tau
    if tau is None:
        tau = int(rng.integers(spec.tau_range[0], spec.tau_range[1] + 1))
    n_epochs = -(-spec.n // spec.control_every)
    # (0, q_max]: 1 - U[0, 1) never hits zero
    epochs = spec.q_max * (1.0 - rng.random(n_epochs))
    q = np.repeat(epochs, spec.control_every)[: spec.n]

    gain = np.ones(spec.n)
    if spec.faults:
        gain[slice(*spec.gain_window)] = spec.gain

    # steady state of the first command: k1 sqrt(h1) = F1 q, k2 sqrt(h2) = k1 sqrt(h1)
    h = np.array([(spec.F1 * q[0] / spec.k1) ** 2, (spec.F1 * q[0] / spec.k2) ** 2])
    fifo = np.full(tau, q[0]) if tau else np.zeros(0)
    levels = np.empty((2, spec.n))
    for k in range(spec.n):
        levels[:, k] = h
        if tau:
            q_del = fifo[k % tau]
            fifo[k % tau] = q[k]
        else:
            q_del = q[k]
        h = _rk4(h, gain[k] * q_del, spec)

    obs = levels + np.sqrt(spec.noise_var) * rng.standard_normal(levels.shape)
    labels = np.zeros(0, dtype=int)
    if spec.faults:
        obs[:, slice(*spec.bias_window)] += spec.bias
        ramp = np.arange(spec.n - spec.trend_start)
        obs[:, spec.trend_start:] += spec.trend_slope * ramp
        labels = spec.labels
    return obs, q[np.newaxis, :], labels
