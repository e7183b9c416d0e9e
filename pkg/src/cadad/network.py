"""Layered spiking network with per-connection delay paths.

Each layer applies its delay engine to the incoming spike train, an optional
training-time dropout, a dense projection, and an LIF population. The final
layer is the readout: a non-spiking leaky integrator whose membrane is
reduced over time (mean or max), or a spiking population whose spike count
is the score, depending on the configured readout.

The backward pass is a handwritten reverse sweep over time. Spike gradients
use the fast-sigmoid surrogate; the reset path contributes through the
surrogate as well unless `detach_reset` is set. Delay gradients follow the
interpolation adjoint in `delay` and accumulate per channel into d_base.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .delay import (
    DelayHyper,
    DelayParams,
    DelayTrace,
    delay_backward,
    delay_forward,
)
from .errors import ConfigError, ContractError, NumericsError
from .neuron import NeuronConfig, lif_step, surrogate_derivative
from .seeding import rng_for

READOUTS = ("mean_membrane", "max_membrane", "spike_count")

CHECKPOINT_FORMAT = "cadad-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    n_in: int
    n_out: int
    delay_mode: str = "dynamic"
    dropout_rate: float = 0.0

    def __post_init__(self) -> None:
        if self.n_in < 1 or self.n_out < 1:
            raise ConfigError(f"layer dims must be positive, got {self.n_in}x{self.n_out}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.delay_mode not in ("none", "static", "dynamic"):
            raise ConfigError(f"unknown delay_mode {self.delay_mode!r}")


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple
    n_classes: int
    readout: str = "mean_membrane"

    def __post_init__(self) -> None:
        object.__setattr__(self, "layers", tuple(self.layers))
        if len(self.layers) < 1:
            raise ConfigError("need at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.n_out != b.n_in:
                raise ConfigError(f"layer chain mismatch: {a.n_out} -> {b.n_in}")
        if self.readout not in READOUTS:
            raise ConfigError(f"unknown readout {self.readout!r}, expected one of {READOUTS}")
        if self.layers[-1].n_out != self.n_classes:
            raise ConfigError(
                f"last layer width {self.layers[-1].n_out} must equal n_classes {self.n_classes}"
            )

    @property
    def n_inputs(self) -> int:
        return self.layers[0].n_in


@dataclass
class LayerCache:
    x_in: np.ndarray
    trace: Optional[DelayTrace]
    x_tilde: np.ndarray
    mask: Optional[np.ndarray]
    x_drop: np.ndarray
    v_pre: np.ndarray
    spikes: Optional[np.ndarray]
    spiking: bool


@dataclass
class NetworkCache:
    layers: list
    epoch: int
    relaxed: bool
    argmax_t: Optional[np.ndarray]  # max_membrane readout only


@dataclass
class Gradients:
    """Parameter gradients; d_base entries are None for mode-"none" layers."""

    weights: list
    d_base: list

    def global_norm(self) -> float:
        total = 0.0
        for g in self.weights:
            total += float(np.sum(g * g))
        for g in self.d_base:
            if g is not None:
                total += float(np.sum(g * g))
        return float(np.sqrt(total))

    def scale_(self, factor: float) -> None:
        for g in self.weights:
            g *= factor
        for g in self.d_base:
            if g is not None:
                g *= factor


class Network:
    """Parameter container plus forward/backward passes."""

    def __init__(
        self,
        spec: NetworkSpec,
        neuron: NeuronConfig,
        delays,
        weights,
        detach_reset: bool = False,
    ):
        if len(delays) != len(spec.layers) or len(weights) != len(spec.layers):
            raise ConfigError("need one delay block and one weight matrix per layer")
        for layer, dp, w in zip(spec.layers, delays, weights):
            if dp.n_channels != layer.n_in:
                raise ConfigError(
                    f"delay channels {dp.n_channels} do not match layer n_in {layer.n_in}"
                )
            if w.shape != (layer.n_out, layer.n_in):
                raise ConfigError(f"weight shape {w.shape} != ({layer.n_out}, {layer.n_in})")
            if dp.mode != layer.delay_mode:
                raise ConfigError("delay mode mismatch between spec and params")
        self.spec = spec
        self.neuron = neuron
        self.delays = list(delays)
        self.weights = [np.asarray(w, dtype=float) for w in weights]
        self.detach_reset = bool(detach_reset)

    # -- construction ---------------------------------------------------

    @classmethod
    def init(
        cls,
        spec: NetworkSpec,
        neuron: NeuronConfig,
        hyper: DelayHyper,
        seed: int,
        w_gain: float = 1.0,
        detach_reset: bool = False,
    ) -> "Network":
        """Random init: weights uniform +-w_gain/sqrt(n_in), d_base uniform [0, d_max/2]."""
        weights = []
        delays = []
        for i, layer in enumerate(spec.layers):
            wr = rng_for(seed, f"weights:l{i}")
            bound = w_gain / np.sqrt(layer.n_in)
            weights.append(wr.uniform(-bound, bound, size=(layer.n_out, layer.n_in)))
            dr = rng_for(seed, f"dbase:l{i}")
            d_base = dr.uniform(0.0, hyper.d_max / 2.0, size=layer.n_in)
            delays.append(hyper.instantiate(d_base, layer.delay_mode))
        return cls(spec, neuron, delays, weights, detach_reset=detach_reset)

    # -- bookkeeping ----------------------------------------------------

    def layer_is_spiking(self, index: int) -> bool:
        if index < len(self.spec.layers) - 1:
            return True
        return self.spec.readout == "spike_count"

    @property
    def n_weight_params(self) -> int:
        return sum(w.size for w in self.weights)

    @property
    def n_delay_params(self) -> int:
        return sum(dp.n_learnable for dp in self.delays)

    def copy_params(self):
        return (
            [w.copy() for w in self.weights],
            [dp.d_base.copy() for dp in self.delays],
        )

    def set_params(self, params) -> None:
        weights, d_bases = params
        for w, src in zip(self.weights, weights):
            w[...] = src
        for dp, src in zip(self.delays, d_bases):
            dp.d_base[...] = src

    # -- forward --------------------------------------------------------

    def forward(
        self,
        x,
        epoch: int,
        training: bool = False,
        rng: Optional[np.random.Generator] = None,
        relaxed: bool = False,
        discretize: bool = False,
    ):
        """Run the stack. x: [B, T, C_in]. Returns (scores [B, K], cache)."""
        x = np.asarray(x, dtype=float)
        if x.ndim != 3:
            raise ContractError(f"expected [B, T, C] input, got shape {x.shape}")
        if x.shape[-1] != self.spec.n_inputs:
            raise ContractError(
                f"input has C={x.shape[-1]} but network expects {self.spec.n_inputs}"
            )
        if training and discretize:
            raise ContractError("discretized delays are inference-only")
        caches = []
        for i, layer in enumerate(self.spec.layers):
            x_tilde, trace = delay_forward(x, self.delays[i], epoch, discretize=discretize)
            if training and layer.dropout_rate > 0.0:
                if rng is None:
                    raise ContractError("training with dropout requires an rng")
                keep = 1.0 - layer.dropout_rate
                mask = (rng.random(x_tilde.shape) < keep).astype(float) / keep
                x_drop = x_tilde * mask
            else:
                mask = None
                x_drop = x_tilde
            current = x_drop @ self.weights[i].T  # [B, T, n_out]
            spiking = self.layer_is_spiking(i)
            B, T, n_out = current.shape
            v_pre = np.empty((B, T, n_out), dtype=float)
            if spiking:
                spikes = np.empty((B, T, n_out), dtype=float)
                v = np.full((B, n_out), self.neuron.v_reset, dtype=float)
                for t in range(T):
                    v, s, vp = lif_step(v, current[:, t], self.neuron, relaxed=relaxed)
                    spikes[:, t] = s
                    v_pre[:, t] = vp
            else:
                spikes = None
                v = np.full((B, n_out), self.neuron.v_reset, dtype=float)
                for t in range(T):
                    v = self.neuron.leak * v + current[:, t]
                    v_pre[:, t] = v
            caches.append(
                LayerCache(
                    x_in=x,
                    trace=trace,
                    x_tilde=x_tilde,
                    mask=mask,
                    x_drop=x_drop,
                    v_pre=v_pre,
                    spikes=spikes,
                    spiking=spiking,
                )
            )
            if spiking:
                x = spikes
        last = caches[-1]
        argmax_t = None
        if self.spec.readout == "mean_membrane":
            scores = last.v_pre.mean(axis=1)
        elif self.spec.readout == "max_membrane":
            argmax_t = last.v_pre.argmax(axis=1)  # [B, K]
            scores = np.take_along_axis(last.v_pre, argmax_t[:, None, :], axis=1)[:, 0, :]
        else:  # spike_count
            scores = last.spikes.sum(axis=1)
        return scores, NetworkCache(layers=caches, epoch=epoch, relaxed=relaxed, argmax_t=argmax_t)

    # -- backward -------------------------------------------------------

    def _integrator_backward(self, cache: LayerCache, g_v: np.ndarray) -> np.ndarray:
        """Reverse sweep of v[t] = leak*v[t-1] + I[t]; returns dL/dI."""
        B, T, n = cache.v_pre.shape
        g_current = np.empty((B, T, n), dtype=float)
        carry = np.zeros((B, n), dtype=float)
        for t in reversed(range(T)):
            gt = g_v[:, t] + self.neuron.leak * carry
            g_current[:, t] = gt
            carry = gt
        return g_current

    def _spiking_backward(self, cache: LayerCache, g_spikes_ext: np.ndarray) -> np.ndarray:
        """Reverse sweep through threshold and hard reset; returns dL/dI.

        carry holds dL/dv[t] flowing backward through the recurrence. The
        reset contributes (v_reset - v_pre[t]) * dS/dv_pre via the surrogate
        unless detach_reset is set.
        """
        cfg = self.neuron
        B, T, n = cache.v_pre.shape
        g_current = np.empty((B, T, n), dtype=float)
        carry = np.zeros((B, n), dtype=float)
        for t in reversed(range(T)):
            vp = cache.v_pre[:, t]
            s = cache.spikes[:, t]
            g_s = g_spikes_ext[:, t]
            if not self.detach_reset:
                g_s = g_s + carry * (cfg.v_reset - vp)
            g_vp = carry * (1.0 - s) + g_s * surrogate_derivative(
                vp - cfg.v_threshold, cfg.surrogate_slope
            )
            g_current[:, t] = g_vp
            carry = cfg.leak * g_vp
        return g_current

    def backward(self, cache: NetworkCache, g_scores) -> Gradients:
        """Parameter gradients for dL/dscores. Uses the forward cache."""
        g_scores = np.asarray(g_scores, dtype=float)
        last = cache.layers[-1]
        B, T, _ = last.v_pre.shape
        if self.spec.readout == "mean_membrane":
            g_signal = np.broadcast_to(g_scores[:, None, :] / T, last.v_pre.shape).copy()
        elif self.spec.readout == "max_membrane":
            g_signal = np.zeros_like(last.v_pre)
            np.put_along_axis(g_signal, cache.argmax_t[:, None, :], g_scores[:, None, :], axis=1)
        else:  # spike_count
            g_signal = np.broadcast_to(g_scores[:, None, :], last.spikes.shape).copy()

        g_weights = [None] * len(self.weights)
        g_d_base = [None] * len(self.delays)
        for i in reversed(range(len(self.spec.layers))):
            lc = cache.layers[i]
            if lc.spiking:
                g_current = self._spiking_backward(lc, g_signal)
            else:
                g_current = self._integrator_backward(lc, g_signal)
            g_weights[i] = np.einsum("btn,btc->nc", g_current, lc.x_drop)
            g_x = g_current @ self.weights[i]
            if lc.mask is not None:
                g_x = g_x * lc.mask
            g_signal, g_db = delay_backward(g_x, lc.x_in, lc.trace, self.delays[i])
            g_d_base[i] = g_db
        return Gradients(weights=g_weights, d_base=g_d_base)

    # -- persistence ----------------------------------------------------

    def save(self, path, epoch: int, extra: Optional[dict] = None) -> None:
        """Self-describing archive: JSON metadata plus per-layer arrays."""
        meta = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "epoch": int(epoch),
            "spec": {
                "layers": [asdict(l) for l in self.spec.layers],
                "n_classes": self.spec.n_classes,
                "readout": self.spec.readout,
            },
            "neuron": asdict(self.neuron),
            "detach_reset": self.detach_reset,
            "delays": [
                {k: v for k, v in asdict(dp).items() if k != "d_base"} for dp in self.delays
            ],
            "extra": extra or {},
        }
        arrays = {"meta": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)}
        for i, w in enumerate(self.weights):
            arrays[f"w{i}"] = w
        for i, dp in enumerate(self.delays):
            arrays[f"d{i}"] = dp.d_base
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path):
        """Returns (network, epoch, extra)."""
        with np.load(path) as archive:
            meta = json.loads(bytes(archive["meta"]).decode())
            if meta.get("format") != CHECKPOINT_FORMAT:
                raise ConfigError(f"not a checkpoint file: {path}")
            if meta.get("version") != CHECKPOINT_VERSION:
                raise ConfigError(f"unsupported checkpoint version {meta.get('version')}")
            spec = NetworkSpec(
                layers=tuple(LayerSpec(**l) for l in meta["spec"]["layers"]),
                n_classes=meta["spec"]["n_classes"],
                readout=meta["spec"]["readout"],
            )
            neuron = NeuronConfig(**meta["neuron"])
            delays = [
                DelayParams(d_base=archive[f"d{i}"].copy(), **dmeta)
                for i, dmeta in enumerate(meta["delays"])
            ]
            weights = [archive[f"w{i}"].copy() for i in range(len(meta["delays"]))]
        net = cls(spec, neuron, delays, weights, detach_reset=meta["detach_reset"])
        return net, meta["epoch"], meta["extra"]
