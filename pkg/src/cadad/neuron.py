"""Discrete-time leaky integrate-and-fire dynamics.

The membrane update is

    v_pre[t] = leak * v[t-1] + I[t]
    S[t]     = 1  if v_pre[t] >= v_threshold else 0
    v[t]     = v_pre[t] * (1 - S[t]) + v_reset * S[t]      (hard reset)

State starts quiescent at v_reset. The Heaviside threshold is paired with a
fast-sigmoid surrogate derivative for backpropagation; `smooth_spike` is the
exact antiderivative of that surrogate and replaces the Heaviside when a
fully differentiable forward pass is needed (finite-difference checks).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, NumericsError


@dataclass(frozen=True)
class NeuronConfig:
    """Constants of one LIF population. `leak` is the per-step decay in (0, 1)."""

    leak: float = 0.6
    v_threshold: float = 1.0
    v_reset: float = 0.0
    surrogate_slope: float = 5.0

    def __post_init__(self) -> None:
        if not 0.0 < self.leak < 1.0:
            raise ConfigError(f"leak must be in (0, 1), got {self.leak}")
        if not self.v_reset < self.v_threshold:
            raise ConfigError(
                f"v_reset ({self.v_reset}) must be below v_threshold ({self.v_threshold})"
            )
        if not self.surrogate_slope > 0.0:
            raise ConfigError(f"surrogate_slope must be positive, got {self.surrogate_slope}")

    @classmethod
    def from_tau(cls, tau_ms: float, dt_ms: float, **kwargs) -> "NeuronConfig":
        """Build with leak = exp(-dt/tau) from a membrane time constant."""
        if tau_ms <= 0.0 or dt_ms <= 0.0:
            raise ConfigError(f"tau_ms and dt_ms must be positive, got {tau_ms}, {dt_ms}")
        return cls(leak=math.exp(-dt_ms / tau_ms), **kwargs)


def surrogate_derivative(u, slope: float = 5.0) -> np.ndarray:
    """Fast-sigmoid stand-in for the Heaviside derivative.

    slope / (2 * (1 + slope*|u|)^2); peak slope/2 at u=0, unit integral over R.
    """
    if slope <= 0.0:
        raise ContractError(f"slope must be positive, got {slope}")
    u = np.asarray(u, dtype=float)
    return slope / (2.0 * (1.0 + slope * np.abs(u)) ** 2)


def smooth_spike(u, slope: float = 5.0) -> np.ndarray:
    """Relaxed spike in (0, 1); its derivative is exactly `surrogate_derivative`."""
    if slope <= 0.0:
        raise ContractError(f"slope must be positive, got {slope}")
    u = np.asarray(u, dtype=float)
    return 0.5 * (1.0 + slope * u / (1.0 + slope * np.abs(u)))


def lif_step(v_prev, current, cfg: NeuronConfig, relaxed: bool = False):
    """One membrane update. Returns (v_next, spikes, v_pre).

    With relaxed=True the threshold is replaced by `smooth_spike` and the
    spike output is graded in (0, 1); the default output is binary.
    """
    v_prev = np.asarray(v_prev, dtype=float)
    current = np.asarray(current, dtype=float)
    if v_prev.shape != current.shape:
        raise ContractError(f"shape mismatch: v_prev {v_prev.shape} vs current {current.shape}")
    if not np.all(np.isfinite(v_prev)) or not np.all(np.isfinite(current)):
        raise NumericsError("non-finite membrane state or input current")
    v_pre = cfg.leak * v_prev + current
    if relaxed:
        spikes = smooth_spike(v_pre - cfg.v_threshold, cfg.surrogate_slope)
    else:
        spikes = (v_pre >= cfg.v_threshold).astype(float)
    v_next = v_pre * (1.0 - spikes) + cfg.v_reset * spikes
    return v_next, spikes, v_pre


def run_lif_sequence(currents, cfg: NeuronConfig, relaxed: bool = False):
    """Iterate `lif_step` over the leading time axis from a quiescent start.

    currents: [T, ...]. Returns (spikes, v_pre_trace), both [T, ...].
    """
    currents = np.asarray(currents, dtype=float)
    if currents.ndim < 1 or currents.shape[0] < 1:
        raise ContractError(f"need a nonempty time axis, got shape {currents.shape}")
    v = np.full(currents.shape[1:], cfg.v_reset, dtype=float)
    spikes = np.empty_like(currents)
    v_pre_trace = np.empty_like(currents)
    for t in range(currents.shape[0]):
        v, s, v_pre = lif_step(v, currents[t], cfg, relaxed=relaxed)
        spikes[t] = s
        v_pre_trace[t] = v_pre
    return spikes, v_pre_trace
