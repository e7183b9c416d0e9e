"""Event streams, time binning, and the synthetic coincidence task.

Event file format (text, UTF-8):

    # events v1 channels=<C> classes=<K>
    sample <id> label <k> duration_ms <d>
    <time_ms> <channel>
    ...
    <blank line>

Times are decimal with at most 3 fractional digits. A blank line (or EOF)
closes a sample block. Parsing is strict; errors carry line numbers.
"""
from __future__ import annotations

import re
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, ContractError, EventFileError
from .seeding import rng_for

_TIME_RE = re.compile(r"^\d+(\.\d{1,3})?$")
_HEADER_RE = re.compile(r"^# events v1 channels=(\d+) classes=(\d+)$")
_SAMPLE_RE = re.compile(r"^sample (\d+) label (\d+) duration_ms (\d+(?:\.\d{1,3})?)$")


@dataclass
class EventStream:
    """One sample: spike times (ms) with channel indices and a class label."""

    times_ms: np.ndarray
    channels: np.ndarray
    label: int
    duration_ms: float
    sample_id: int = 0

    def __post_init__(self) -> None:
        self.times_ms = np.asarray(self.times_ms, dtype=float)
        self.channels = np.asarray(self.channels, dtype=np.int64)
        if self.times_ms.shape != self.channels.shape:
            raise ContractError("times and channels must align")


@dataclass(frozen=True)
class BinningConfig:
    dt_ms: float
    t_steps: int
    channels: int
    clamp_binary: bool = True

    def __post_init__(self) -> None:
        if self.dt_ms <= 0.0:
            raise ConfigError(f"dt_ms must be positive, got {self.dt_ms}")
        if self.t_steps < 1 or self.channels < 1:
            raise ConfigError("t_steps and channels must be positive")


@dataclass
class SpikeDataset:
    """Dense binned spikes [N, T, C] with integer labels [N]."""

    frames: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        self.frames = np.asarray(self.frames, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.frames.ndim != 3 or self.labels.shape != (self.frames.shape[0],):
            raise ContractError("frames must be [N, T, C] with matching labels")

    def __len__(self) -> int:
        return self.frames.shape[0]


def bin_events(stream: EventStream, cfg: BinningConfig) -> np.ndarray:
    """Dense frame [T, C]. Events at t >= T*dt are dropped (truncated tail)."""
    frame = np.zeros((cfg.t_steps, cfg.channels), dtype=float)
    if stream.times_ms.size == 0:
        return frame
    if np.any(stream.channels < 0) or np.any(stream.channels >= cfg.channels):
        bad = int(stream.channels[(stream.channels < 0) | (stream.channels >= cfg.channels)][0])
        raise ContractError(f"channel {bad} outside [0, {cfg.channels})")
    if np.any(stream.times_ms < 0.0):
        raise ContractError("negative event time")
    t_idx = np.floor(stream.times_ms / cfg.dt_ms).astype(np.int64)
    keep = t_idx < cfg.t_steps
    np.add.at(frame, (t_idx[keep], stream.channels[keep]), 1.0)
    if cfg.clamp_binary:
        np.minimum(frame, 1.0, out=frame)
    return frame


def bin_dataset(streams, cfg: BinningConfig) -> SpikeDataset:
    frames = np.stack([bin_events(s, cfg) for s in streams])
    labels = np.array([s.label for s in streams], dtype=np.int64)
    return SpikeDataset(frames=frames, labels=labels)


def save_event_file(path, streams, channels: int, classes: int) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# events v1 channels={channels} classes={classes}\n")
        for s in streams:
            fh.write(f"sample {s.sample_id} label {s.label} duration_ms {s.duration_ms:.3f}\n")
            for t, c in zip(s.times_ms, s.channels):
                fh.write(f"{t:.3f} {c}\n")
            fh.write("\n")


def load_event_file(path):
    """Parse an event file. Returns (streams, channels, classes)."""
    streams = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().split("\n")
    except OSError as exc:
        raise EventFileError(f"cannot read {path}: {exc}") from exc
    if not lines or not (m := _HEADER_RE.match(lines[0])):
        raise EventFileError(f"{path}:1: missing or malformed header")
    channels, classes = int(m.group(1)), int(m.group(2))
    current = None  # (sample_id, label, duration, times, chans)

    def close_current():
        nonlocal current
        if current is None:
            return
        sid, label, duration, times, chans = current
        times = np.asarray(times, dtype=float)
        chans = np.asarray(chans, dtype=np.int64)
        if times.size and np.any(np.diff(times) < 0):
            warnings.warn(f"sample {sid}: events out of order, sorting by time")
            order = np.argsort(times, kind="stable")
            times, chans = times[order], chans[order]
        streams.append(
            EventStream(
                times_ms=times, channels=chans, label=label, duration_ms=duration, sample_id=sid
            )
        )
        current = None

    for ln, line in enumerate(lines[1:], start=2):
        line = line.strip()
        if not line:
            close_current()
            continue
        if line.startswith("sample "):
            close_current()
            m = _SAMPLE_RE.match(line)
            if not m:
                raise EventFileError(f"{path}:{ln}: malformed sample line: {line!r}")
            sid, label = int(m.group(1)), int(m.group(2))
            if label >= classes:
                raise EventFileError(f"{path}:{ln}: label {label} outside [0, {classes})")
            current = (sid, label, float(m.group(3)), [], [])
            continue
        parts = line.split()
        if len(parts) != 2 or not _TIME_RE.match(parts[0]) or not parts[1].isdigit():
            raise EventFileError(f"{path}:{ln}: malformed event line: {line!r}")
        if current is None:
            raise EventFileError(f"{path}:{ln}: event before any sample header")
        ch = int(parts[1])
        if ch >= channels:
            raise EventFileError(f"{path}:{ln}: channel {ch} outside [0, {channels})")
        current[3].append(float(parts[0]))
        current[4].append(ch)
    close_current()
    return streams, channels, classes


@dataclass(frozen=True)
class SynthConfig:
    """Geometry and noise knobs of the synthetic coincidence task."""

    n_classes: int = 4
    channels: int = 24
    t_steps: int = 64
    jitter_steps: int = 2
    burst_prob: float = 0.2
    burst_rate: float = 0.6
    max_lag: int = 8
    n_train: int = 256
    n_eval: int = 128
    dt_ms: float = 10.0
    decoys: bool = True
    n_volleys: int = 1

    def __post_init__(self) -> None:
        if self.n_classes < 2:
            raise ConfigError("need at least 2 classes")
        if self.n_volleys < 1:
            raise ConfigError("n_volleys must be >= 1")
        if self.channels < 2 * self.n_classes:
            raise ConfigError(
                f"need channels >= 2*n_classes, got {self.channels} < {2 * self.n_classes}"
            )
        if self.t_steps <= self.max_lag + 2 * self.jitter_steps:
            raise ConfigError("t_steps too small for max_lag plus jitter")
        if not 0.0 <= self.burst_prob <= 1.0 or not 0.0 <= self.burst_rate <= 1.0:
            raise ConfigError("burst_prob and burst_rate must be in [0, 1]")
        if self.jitter_steps < 0 or self.max_lag < 0:
            raise ConfigError("jitter_steps and max_lag must be >= 0")

    def binning(self, clamp_binary: bool = True) -> BinningConfig:
        return BinningConfig(
            dt_ms=self.dt_ms,
            t_steps=self.t_steps,
            channels=self.channels,
            clamp_binary=clamp_binary,
        )


def _signature_channels(cfg: SynthConfig):
    per_class = cfg.channels // cfg.n_classes
    groups = [
        np.arange(k * per_class, (k + 1) * per_class, dtype=np.int64)
        for k in range(cfg.n_classes)
    ]
    flat = np.concatenate(groups)
    assert len(np.unique(flat)) == len(flat), "class signatures must be disjoint"
    return groups


def _one_sample(cfg: SynthConfig, groups, lags, sample_id: int, label: int, seed: int, split: str):
    rng = rng_for(seed, f"synth:{split}:{sample_id}")
    lo = cfg.jitter_steps
    hi = cfg.t_steps - 1 - cfg.max_lag - cfg.jitter_steps
    steps = []
    chans = []
    for k, group in enumerate(groups):
        if k != label and not cfg.decoys:
            continue
        for _ in range(cfg.n_volleys):
            anchor = int(rng.integers(lo, hi + 1))
            if k == label:
                # the class volley carries the fixed lag pattern
                offs = lags[k]
            elif cfg.max_lag + 1 >= len(group):
                # decoy volley: same density and same distinct-lag structure
                # as a real volley, but a fresh random pattern each sample
                offs = rng.choice(cfg.max_lag + 1, size=len(group), replace=False)
            else:
                offs = rng.integers(0, cfg.max_lag + 1, size=len(group))
            for j, ch in enumerate(group):
                jit = (
                    int(rng.integers(-cfg.jitter_steps, cfg.jitter_steps + 1))
                    if cfg.jitter_steps
                    else 0
                )
                steps.append(anchor + int(offs[j]) + jit)
                chans.append(int(ch))
    burst_steps = np.nonzero(rng.random(cfg.t_steps) < cfg.burst_prob)[0]
    for t in burst_steps:
        fire = np.nonzero(rng.random(cfg.channels) < cfg.burst_rate)[0]
        steps.extend([int(t)] * len(fire))
        chans.extend(int(c) for c in fire)
    steps = np.asarray(steps, dtype=np.int64)
    chans = np.asarray(chans, dtype=np.int64)
    order = np.argsort(steps, kind="stable")
    return EventStream(
        times_ms=steps[order] * cfg.dt_ms,
        channels=chans[order],
        label=label,
        duration_ms=cfg.t_steps * cfg.dt_ms,
        sample_id=sample_id,
    )


def synth_coincidence_task(cfg: SynthConfig, seed: int):
    """Generate (train_streams, eval_streams).

    Each class owns a disjoint channel group with fixed per-channel lags; a
    sample places one spike per signature channel at anchor + lag + jitter.
    With decoys on (default), every other group also fires one volley with
    per-sample random offsets, so spike counts and volley densities carry no
    class information and only the lag pattern separates the classes.
    Background bursts hit a burst_rate fraction of all channels at
    burst_prob of the steps. Sample ids are globally unique across splits.
    """
    groups = _signature_channels(cfg)
    lag_rng = rng_for(seed, "synth:lags")
    # distinct lags within a group: no channel pair co-fires by construction,
    # so pairwise synchrony alone cannot identify the class
    lags = [
        lag_rng.choice(cfg.max_lag + 1, size=len(groups[k]), replace=False)
        if cfg.max_lag + 1 >= len(groups[k])
        else lag_rng.integers(0, cfg.max_lag + 1, size=len(groups[k]))
        for k in range(cfg.n_classes)
    ]
    train = [
        _one_sample(cfg, groups, lags, i, i % cfg.n_classes, seed, "train")
        for i in range(cfg.n_train)
    ]
    evals = [
        _one_sample(cfg, groups, lags, cfg.n_train + i, i % cfg.n_classes, seed, "eval")
        for i in range(cfg.n_eval)
    ]
    return train, evals


def synth_datasets(cfg: SynthConfig, seed: int, clamp_binary: bool = True):
    """Binned (train, eval) SpikeDatasets for the synthetic task."""
    train, evals = synth_coincidence_task(cfg, seed)
    b = cfg.binning(clamp_binary)
    return bin_dataset(train, b), bin_dataset(evals, b)
