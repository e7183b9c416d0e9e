"""Congestion-aware dynamic axonal delay engine.

Per layer and per sample, input spikes S[t, j] pass through:

    a_raw[t]    = mean_j S[t - round(d_base[j]), j]          (channel-mean load)
    a_smooth[t] = causal box average of a_raw over k_smooth steps
    scale(e)    = annealed shift scale for epoch e
    raw[t]      = scale * d_max * f(gamma * a_smooth[t])     (f bounded nonlinearity)
    d_shift[t]  = slope-limited raw[t], |increment| <= 0.99
    d_eff[t,j]  = clip(d_base[j] + d_shift[t], 0, d_max)
    out[t,j]    = linear-interpolation read of S at t - d_eff[t,j]

The slope limit keeps the emission-time map t -> t - d_shift[t] strictly
increasing (margin >= 0.01), so delayed spike order is preserved. Every
function takes arrays with optional leading batch axes; shapes below are
written for the unbatched [T, C] case.

Gradient conventions: the interpolated read is piecewise linear in the delay,
and its exact derivative is S[floor] - S[ceil] (zero outside the signal).
The clamp passes gradient where it is inactive (pre-clamp value inside
[0, d_max] inclusive) and blocks it where it clips. By default the dynamic
shift is treated as a stop-gradient modulator; `congestion_grad=True` also
routes shift gradients back through the slope limiter, the nonlinearity, the
smoother, and the load average into the input spikes.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, ContractError

MODES = ("none", "static", "dynamic")
NONLINEARITIES = ("tanh", "sigmoid", "relu", "arctan")

# Largest per-step change of the dynamic shift; 1 - MAX_SHIFT_STEP is the
# guaranteed emission-time margin.
MAX_SHIFT_STEP = 0.99
TIME_MAP_MIN_MARGIN = 0.01


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


_F = {
    "tanh": np.tanh,
    "sigmoid": lambda x: _sigmoid(np.asarray(x, dtype=float)),
    "relu": lambda x: np.maximum(x, 0.0),
    "arctan": np.arctan,
}

_DF = {
    "tanh": lambda x: 1.0 - np.tanh(x) ** 2,
    "sigmoid": lambda x: _sigmoid(np.asarray(x, dtype=float))
    * (1.0 - _sigmoid(np.asarray(x, dtype=float))),
    "relu": lambda x: (x > 0.0).astype(float),
    "arctan": lambda x: 1.0 / (1.0 + x**2),
}


@dataclass(frozen=True)
class DelayHyper:
    """Shift-path hyperparameters shared by every layer of a network."""

    d_max: float
    gamma: float = 1.0
    k_smooth: int = 20
    s_max: float = 0.3
    s_min: float = 0.02
    e_decay: int = 30
    nonlinearity: str = "tanh"
    congestion_grad: bool = False

    def __post_init__(self) -> None:
        if self.d_max <= 0.0:
            raise ConfigError(f"d_max must be positive, got {self.d_max}")
        if self.gamma <= 0.0:
            raise ConfigError(f"gamma must be positive, got {self.gamma}")
        if self.k_smooth < 1:
            raise ConfigError(f"k_smooth must be >= 1, got {self.k_smooth}")
        if not 0.0 <= self.s_min <= self.s_max:
            raise ConfigError(f"need 0 <= s_min <= s_max, got {self.s_min}, {self.s_max}")
        if self.e_decay < 0:
            raise ConfigError(f"e_decay must be >= 0, got {self.e_decay}")
        if self.nonlinearity not in NONLINEARITIES:
            raise ConfigError(
                f"unknown nonlinearity {self.nonlinearity!r}, expected one of {NONLINEARITIES}"
            )

    def instantiate(self, d_base: np.ndarray, mode: str) -> "DelayParams":
        return DelayParams(
            d_base=np.asarray(d_base, dtype=float),
            d_max=self.d_max,
            gamma=self.gamma,
            k_smooth=self.k_smooth,
            s_max=self.s_max,
            s_min=self.s_min,
            e_decay=self.e_decay,
            nonlinearity=self.nonlinearity,
            mode=mode,
            congestion_grad=self.congestion_grad,
        )


@dataclass(eq=False)
class DelayParams:
    """Per-layer delay state: learnable d_base [C] plus shift hyperparameters."""

    d_base: np.ndarray
    d_max: float
    gamma: float = 1.0
    k_smooth: int = 20
    s_max: float = 0.3
    s_min: float = 0.02
    e_decay: int = 30
    nonlinearity: str = "tanh"
    mode: str = "dynamic"
    congestion_grad: bool = False

    def __post_init__(self) -> None:
        self.d_base = np.asarray(self.d_base, dtype=float)
        if self.d_base.ndim != 1 or self.d_base.size < 1:
            raise ConfigError(f"d_base must be a nonempty vector, got shape {self.d_base.shape}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown delay mode {self.mode!r}, expected one of {MODES}")
        # shared hyperparameter validation
        DelayHyper(
            d_max=self.d_max,
            gamma=self.gamma,
            k_smooth=self.k_smooth,
            s_max=self.s_max,
            s_min=self.s_min,
            e_decay=self.e_decay,
            nonlinearity=self.nonlinearity,
            congestion_grad=self.congestion_grad,
        )
        if np.any(self.d_base < 0.0) or np.any(self.d_base > self.d_max):
            raise ConfigError("d_base entries must lie in [0, d_max]")

    @property
    def n_channels(self) -> int:
        return self.d_base.size

    @property
    def n_learnable(self) -> int:
        """Learnable delay parameters contributed by this layer (C, or 0 when off)."""
        return 0 if self.mode == "none" else self.d_base.size

    def project_(self) -> None:
        """Clip d_base into [0, d_max] in place (called after optimizer steps)."""
        np.clip(self.d_base, 0.0, self.d_max, out=self.d_base)


@dataclass
class DelayTrace:
    """Forward record of one delay application; leading axes are batch axes.

    a_raw, a_smooth, d_shift: [..., T]; d_eff, frac, floor_idx, ceil_idx:
    [..., T, C]; scale is the annealed shift scale used.
    """

    a_raw: np.ndarray
    a_smooth: np.ndarray
    d_shift: np.ndarray
    d_eff: np.ndarray
    frac: np.ndarray
    floor_idx: np.ndarray
    ceil_idx: np.ndarray
    scale: float
    discretized: bool = False

    def csv_rows(self, sample=()):
        """Rows (t, a_raw, a_smooth, d_shift, d_eff_min, d_eff_max) for one sample.

        `sample` indexes the leading batch axes; default works for unbatched
        traces.
        """
        a_raw = self.a_raw[sample]
        a_smooth = self.a_smooth[sample]
        d_shift = self.d_shift[sample]
        d_eff = self.d_eff[sample]
        return [
            (t, a_raw[t], a_smooth[t], d_shift[t], d_eff[t].min(), d_eff[t].max())
            for t in range(a_raw.shape[0])
        ]


def round_half_up(x) -> np.ndarray:
    """Deterministic nearest-integer rounding; ties go up."""
    return np.floor(np.asarray(x, dtype=float) + 0.5).astype(np.int64)


def congestion_raw(spikes, d_base) -> np.ndarray:
    """Channel-mean spike load after shifting each channel by round(d_base[j]).

    spikes: [..., T, C]; lookups before the start of the signal read 0.
    Returns [..., T].
    """
    spikes = np.asarray(spikes, dtype=float)
    if spikes.ndim < 2:
        raise ContractError(f"spikes must be at least [T, C], got shape {spikes.shape}")
    T, C = spikes.shape[-2], spikes.shape[-1]
    d_base = np.asarray(d_base, dtype=float)
    if d_base.shape != (C,):
        raise ContractError(f"d_base shape {d_base.shape} does not match C={C}")
    if np.any(d_base < 0.0):
        raise ContractError("d_base must be nonnegative")
    idx = np.arange(T)[:, None] - round_half_up(d_base)[None, :]  # [T, C]
    vals = spikes[..., np.clip(idx, 0, T - 1), np.arange(C)]
    vals = np.where(idx >= 0, vals, 0.0)
    return vals.mean(axis=-1)


def smooth(a_raw, k_smooth: int) -> np.ndarray:
    """Causal box average over the window [t - k_smooth + 1, t], zero history."""
    if k_smooth < 1:
        raise ConfigError(f"k_smooth must be >= 1, got {k_smooth}")
    a = np.asarray(a_raw, dtype=float)
    if k_smooth == 1:
        return a.copy()
    cs = np.cumsum(a, axis=-1)
    out = cs.copy()
    if a.shape[-1] > k_smooth:
        out[..., k_smooth:] = cs[..., k_smooth:] - cs[..., :-k_smooth]
    return out / float(k_smooth)


def smooth_backward(g_smooth, k_smooth: int) -> np.ndarray:
    """Adjoint of `smooth`: anticausal box average with the same window."""
    g = np.asarray(g_smooth, dtype=float)
    rev = np.flip(g, axis=-1)
    return np.flip(smooth(rev, k_smooth), axis=-1)


def anneal_scale(epoch: int, s_max: float, s_min: float, e_decay: int) -> float:
    """Exponentially annealed shift scale: s_max at epoch 0 down to s_min.

    e_decay=0 means no annealing phase: the scale is s_min from the start.
    """
    if epoch < 0:
        raise ContractError(f"epoch must be >= 0, got {epoch}")
    if e_decay < 0:
        raise ConfigError(f"e_decay must be >= 0, got {e_decay}")
    if not 0.0 <= s_min <= s_max:
        raise ConfigError(f"need 0 <= s_min <= s_max, got {s_min}, {s_max}")
    if e_decay == 0 or s_min == s_max:
        return float(s_min)
    if s_min == 0.0:
        raise ConfigError("s_min=0 with e_decay>0 makes the decay ratio degenerate")
    return float(max(s_max * (s_min / s_max) ** (epoch / e_decay), s_min))


def raw_shift(a_smooth, scale: float, gamma: float, d_max: float, nonlinearity: str) -> np.ndarray:
    """Unconstrained shift scale * d_max * f(gamma * a_smooth)."""
    if nonlinearity not in _F:
        raise ConfigError(
            f"unknown nonlinearity {nonlinearity!r}, expected one of {NONLINEARITIES}"
        )
    if scale < 0.0:
        raise ContractError(f"scale must be >= 0, got {scale}")
    a = np.asarray(a_smooth, dtype=float)
    return scale * d_max * _F[nonlinearity](gamma * a)


def slope_limit(raw) -> np.ndarray:
    """Clip successive increments to [-MAX_SHIFT_STEP, MAX_SHIFT_STEP].

    out[0] = raw[0]; out[t] = out[t-1] + clip(raw[t] - raw[t-1]).
    """
    raw = np.asarray(raw, dtype=float)
    if raw.ndim < 1 or raw.shape[-1] < 1:
        raise ContractError(f"need a nonempty time axis, got shape {raw.shape}")
    if raw.shape[-1] == 1:
        return raw.copy()
    inc = np.clip(np.diff(raw, axis=-1), -MAX_SHIFT_STEP, MAX_SHIFT_STEP)
    first = raw[..., :1]
    return np.concatenate([first, first + np.cumsum(inc, axis=-1)], axis=-1)


def effective_delay(d_base, d_shift, d_max: float) -> np.ndarray:
    """clip(d_base[j] + d_shift[t], 0, d_max) -> [..., T, C]."""
    d_base = np.asarray(d_base, dtype=float)
    d_shift = np.asarray(d_shift, dtype=float)
    return np.clip(d_base + d_shift[..., None], 0.0, d_max)


def _offsets(d, T: int):
    """floor index, ceil index and fractional part of the read position t - d."""
    d = np.asarray(d, dtype=float)
    if np.any(d < 0.0):
        raise ContractError("delays must be nonnegative")
    t = np.arange(T, dtype=float).reshape(T, 1)
    pos = t - d
    lo = np.floor(pos)
    return lo.astype(np.int64), np.ceil(pos).astype(np.int64), pos - lo


def _gather_zero(signal, idx) -> np.ndarray:
    """signal[..., idx, c] along the time axis; negative indices read 0."""
    T = signal.shape[-2]
    shape = np.broadcast_shapes(signal.shape, idx.shape)
    sig = np.broadcast_to(signal, shape)
    idxb = np.broadcast_to(idx, shape)
    vals = np.take_along_axis(sig, np.clip(idxb, 0, T - 1), axis=-2)
    return np.where(idxb >= 0, vals, 0.0)


def delayed_read(signal, d) -> np.ndarray:
    """Linear-interpolation read of `signal` at positions t - d.

    signal: [..., T, C]; d broadcastable against it (per-channel, per-step, or
    full). Integer-valued delays reduce to exact index lookups; d=0 is an
    exact pass-through.
    """
    signal = np.asarray(signal, dtype=float)
    if signal.ndim < 2:
        raise ContractError(f"signal must be at least [T, C], got shape {signal.shape}")
    lo, hi, frac = _offsets(d, signal.shape[-2])
    return (1.0 - frac) * _gather_zero(signal, lo) + frac * _gather_zero(signal, hi)


def delayed_read_backward(upstream, signal, d):
    """Adjoint of `delayed_read`.

    Returns (grad_signal, grad_d) where grad_signal scatters (1-frac) to the
    floor step and frac to the ceil step, and grad_d[t, j] = upstream[t, j] *
    (signal[floor] - signal[ceil]) with out-of-range reads worth 0. grad_d has
    the full broadcast shape [..., T, C]; callers reduce it over the axes their
    delay parameterization shares.
    """
    upstream = np.asarray(upstream, dtype=float)
    signal = np.asarray(signal, dtype=float)
    if upstream.shape != signal.shape:
        raise ContractError(
            f"upstream shape {upstream.shape} must match signal shape {signal.shape}"
        )
    T, C = signal.shape[-2], signal.shape[-1]
    d = np.broadcast_to(np.asarray(d, dtype=float), signal.shape)
    lo, hi, frac = _offsets(d, T)
    grad_d = upstream * (_gather_zero(signal, lo) - _gather_zero(signal, hi))

    up = upstream.reshape(-1, T, C)
    lo2 = lo.reshape(-1, T, C)
    hi2 = hi.reshape(-1, T, C)
    frac2 = frac.reshape(-1, T, C)
    B = up.shape[0]
    b_idx = np.broadcast_to(np.arange(B)[:, None, None], (B, T, C))
    c_idx = np.broadcast_to(np.arange(C)[None, None, :], (B, T, C))
    grad_signal = np.zeros((B, T, C), dtype=float)
    m = lo2 >= 0
    np.add.at(grad_signal, (b_idx[m], lo2[m], c_idx[m]), ((1.0 - frac2) * up)[m])
    m = hi2 >= 0
    np.add.at(grad_signal, (b_idx[m], hi2[m], c_idx[m]), (frac2 * up)[m])
    return grad_signal.reshape(signal.shape), grad_d


def discretize_for_inference(d) -> np.ndarray:
    """Round delays to integer steps (ties up) so reads become index lookups."""
    d = np.asarray(d, dtype=float)
    if np.any(d < 0.0):
        raise ContractError("delays must be nonnegative")
    return np.floor(d + 0.5).astype(np.int64)


@dataclass(frozen=True)
class TimeMapReport:
    """Monotonicity audit of the emission-time map t -> t - d_shift[t]."""

    ok: bool
    min_margin: float
    violations: int


def check_time_map(d_shift, tol: float = 1e-9) -> TimeMapReport:
    """Minimum margin 1 - (d_shift[t] - d_shift[t-1]) across the trajectory.

    Passes when every margin reaches TIME_MAP_MIN_MARGIN; `tol` absorbs the
    ulp-level float error a slope-limited running sum can accumulate.
    """
    d = np.asarray(d_shift, dtype=float)
    if d.ndim < 1:
        raise ContractError("d_shift must have a time axis")
    if d.shape[-1] < 2:
        return TimeMapReport(True, 1.0, 0)
    margins = 1.0 - np.diff(d, axis=-1)
    violations = int(np.sum(margins < TIME_MAP_MIN_MARGIN - tol))
    return TimeMapReport(violations == 0, float(margins.min()), violations)


def delay_forward(spikes, params: DelayParams, epoch: int, discretize: bool = False):
    """Apply one layer's delay path to its input spikes.

    spikes: [..., T, C]. Returns (delayed, trace); mode "none" returns the
    input unchanged with trace None. With discretize=True the effective delays
    are rounded before the read (inference only; not differentiable).
    """
    spikes = np.asarray(spikes, dtype=float)
    if params.mode == "none":
        return spikes, None
    T, C = spikes.shape[-2], spikes.shape[-1]
    if C != params.n_channels:
        raise ContractError(f"spikes have C={C} but params expect {params.n_channels}")
    batch_shape = spikes.shape[:-2]

    if params.mode == "static":
        d_shift = np.zeros(batch_shape + (T,), dtype=float)
        a_raw = np.zeros_like(d_shift)
        a_smooth = np.zeros_like(d_shift)
        scale = 0.0
    else:
        a_raw = congestion_raw(spikes, params.d_base)
        a_smooth = smooth(a_raw, params.k_smooth)
        scale = anneal_scale(epoch, params.s_max, params.s_min, params.e_decay)
        d_shift = slope_limit(
            raw_shift(a_smooth, scale, params.gamma, params.d_max, params.nonlinearity)
        )

    d_eff = effective_delay(params.d_base, d_shift, params.d_max)
    d_used = discretize_for_inference(d_eff).astype(float) if discretize else d_eff
    d_full = np.broadcast_to(d_used, spikes.shape)
    lo, hi, frac = _offsets(d_full, T)
    delayed = (1.0 - frac) * _gather_zero(spikes, lo) + frac * _gather_zero(spikes, hi)
    trace = DelayTrace(
        a_raw=a_raw,
        a_smooth=a_smooth,
        d_shift=d_shift,
        d_eff=d_used,
        frac=frac,
        floor_idx=lo,
        ceil_idx=hi,
        scale=scale,
        discretized=discretize,
    )
    return delayed, trace


def _shift_path_backward(g_shift, spikes, trace: DelayTrace, params: DelayParams) -> np.ndarray:
    """Gradient of the dynamic shift w.r.t. the input spikes (congestion path).

    g_shift: [..., T] = dL/d d_shift. Returns dL/d spikes, [..., T, C].
    """
    T, C = spikes.shape[-2], spikes.shape[-1]
    # slope limiter: out[t] = raw[0] + sum of clipped increments up to t
    raw = raw_shift(trace.a_smooth, trace.scale, params.gamma, params.d_max, params.nonlinearity)
    suffix = np.flip(np.cumsum(np.flip(g_shift, axis=-1), axis=-1), axis=-1)  # G[t]
    g_raw = np.zeros_like(raw)
    if T > 1:
        passthrough = (np.abs(np.diff(raw, axis=-1)) <= MAX_SHIFT_STEP).astype(float)
        p = suffix[..., 1:] * passthrough  # contribution of increment t to all later outputs
        g_raw[..., 0] = suffix[..., 0]
        g_raw[..., 1:] = p
        g_raw[..., :-1] -= p
    else:
        g_raw[..., 0] = suffix[..., 0]
    # nonlinearity
    x = params.gamma * trace.a_smooth
    g_a_smooth = g_raw * (trace.scale * params.d_max * params.gamma) * _DF[params.nonlinearity](x)
    # box smoother transpose, then undo the channel mean with the same lookup shifts
    g_a_raw = smooth_backward(g_a_smooth, params.k_smooth)
    idx = np.arange(T)[:, None] - round_half_up(params.d_base)[None, :]  # [T, C]
    contrib = np.broadcast_to((g_a_raw / C)[..., None], spikes.shape)
    flat = contrib.reshape(-1, T, C)
    B = flat.shape[0]
    g_spikes = np.zeros((B, T, C), dtype=float)
    b_idx = np.broadcast_to(np.arange(B)[:, None, None], (B, T, C))
    t_idx = np.broadcast_to(idx[None, :, :], (B, T, C))
    c_idx = np.broadcast_to(np.arange(C)[None, None, :], (B, T, C))
    m = t_idx >= 0
    np.add.at(g_spikes, (b_idx[m], t_idx[m], c_idx[m]), flat[m])
    return g_spikes.reshape(spikes.shape)


def delay_backward(upstream, spikes, trace: Optional[DelayTrace], params: DelayParams):
    """Adjoint of `delay_forward`. Returns (grad_spikes, grad_d_base).

    grad_d_base is None for mode "none". The clamp on d_base + d_shift passes
    gradient where it did not clip. The congestion path contributes extra
    spike gradients only when params.congestion_grad is set.
    """
    upstream = np.asarray(upstream, dtype=float)
    spikes = np.asarray(spikes, dtype=float)
    if params.mode == "none":
        return upstream, None
    if trace is None:
        raise ContractError("trace from the matching forward pass is required")
    if trace.discretized:
        raise ContractError("cannot backpropagate through a discretized forward pass")
    grad_signal, grad_d = delayed_read_backward(
        upstream, spikes, np.broadcast_to(trace.d_eff, spikes.shape)
    )
    pre_clamp = params.d_base + trace.d_shift[..., None]
    grad_d = grad_d * ((pre_clamp >= 0.0) & (pre_clamp <= params.d_max))
    reduce_axes = tuple(range(grad_d.ndim - 1))
    grad_d_base = grad_d.sum(axis=reduce_axes)
    if params.mode == "dynamic" and params.congestion_grad:
        grad_signal = grad_signal + _shift_path_backward(
            grad_d.sum(axis=-1), spikes, trace, params
        )
    return grad_signal, grad_d_base
