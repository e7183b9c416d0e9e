"""Flat run configuration: `section.key = value` lines with `#` comments.

Every key is declared in SCHEMA with a type and default; unknown keys are
rejected by name, as are type violations. `--set section.key=value`
overrides land on top of the file and are echoed into the run manifest that
every command writes next to its outputs.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Optional

from .data import BinningConfig, SynthConfig
from .delay import MODES, NONLINEARITIES, DelayHyper
from .errors import ConfigError
from .network import READOUTS, LayerSpec, NetworkSpec, Network
from .neuron import NeuronConfig
from .trainer import TrainConfig


def _parse_bool(s: str) -> bool:
    low = s.lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_int_list(s: str):
    return tuple(int(p) for p in s.split(",") if p.strip())


@dataclass(frozen=True)
class Field:
    parse: object
    default: object
    choices: Optional[tuple] = None


SCHEMA = {
    "run.seed": Field(int, 0),
    "run.out_dir": Field(str, "runs/out"),
    "run.id": Field(str, "run"),
    "data.source": Field(str, "synth", choices=("synth", "file")),
    "data.train_path": Field(str, ""),
    "data.eval_path": Field(str, ""),
    "data.dt_ms": Field(float, 10.0),
    "data.t_steps": Field(int, 64),
    "data.channels": Field(int, 24),
    "data.n_classes": Field(int, 4),
    "data.clamp_binary": Field(_parse_bool, True),
    "synth.jitter_steps": Field(int, 2),
    "synth.burst_prob": Field(float, 0.2),
    "synth.burst_rate": Field(float, 0.6),
    "synth.max_lag": Field(int, 8),
    "synth.n_train": Field(int, 256),
    "synth.n_eval": Field(int, 128),
    "synth.decoys": Field(_parse_bool, True),
    "synth.n_volleys": Field(int, 1),
    "network.hidden": Field(_parse_int_list, (32,)),
    "network.readout": Field(str, "mean_membrane", choices=READOUTS),
    "network.dropout": Field(float, 0.0),
    "network.w_init_gain": Field(float, 2.0),
    "network.detach_reset": Field(_parse_bool, False),
    "neuron.leak": Field(float, float("nan")),
    "neuron.tau_ms": Field(float, 15.0),
    "neuron.v_threshold": Field(float, 1.0),
    "neuron.v_reset": Field(float, 0.0),
    "neuron.surrogate_slope": Field(float, 5.0),
    "delay.mode": Field(str, "dynamic", choices=MODES),
    "delay.d_max_ms": Field(float, 120.0),
    "delay.gamma": Field(float, 1.0),
    "delay.k_smooth": Field(int, 20),
    "delay.s_max": Field(float, 0.3),
    "delay.s_min": Field(float, 0.02),
    "delay.e_decay": Field(int, 30),
    "delay.nonlinearity": Field(str, "tanh", choices=NONLINEARITIES),
    "delay.congestion_grad": Field(_parse_bool, False),
    "train.epochs": Field(int, 30),
    "train.batch_size": Field(int, 32),
    "train.lr_w": Field(float, 1e-3),
    "train.lr_delay": Field(float, 1e-1),
    "train.weight_decay": Field(float, 1e-5),
    "train.eval_every": Field(int, 1),
    "train.grad_clip": Field(float, 10.0),
    "train.eval_discretize": Field(_parse_bool, False),
    "ablate.seeds": Field(int, 5),
    "ablate.modes": Field(str, "none,static,dynamic"),
}


def parse_assignments(lines, origin: str):
    """`key = value` pairs from config text; rejects malformed lines."""
    out = {}
    for ln, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{ln}: expected 'key = value', got {raw.rstrip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{origin}:{ln}: empty key")
        out[key] = value
    return out


def load_config_file(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_assignments(fh.read().split("\n"), str(path))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def parse_overrides(pairs) -> dict:
    out = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"override must look like section.key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key.strip()] = value.strip()
    return out


class RunConfig:
    """Typed view over the resolved flat keys."""

    def __init__(self, values: dict, overrides: Optional[dict] = None):
        self.values = values
        self.overrides = dict(overrides or {})

    def __getitem__(self, key):
        return self.values[key]

    @classmethod
    def resolve(cls, raw: dict, overrides: Optional[dict] = None) -> "RunConfig":
        merged = dict(raw)
        merged.update(overrides or {})
        values = {}
        for key, field in SCHEMA.items():
            if key in merged:
                text = merged.pop(key)
                try:
                    values[key] = field.parse(text)
                except (ValueError, TypeError) as exc:
                    raise ConfigError(f"bad value for {key}: {text!r} ({exc})") from exc
                if field.choices is not None and values[key] not in field.choices:
                    raise ConfigError(
                        f"bad value for {key}: {values[key]!r}, expected one of {field.choices}"
                    )
            else:
                values[key] = field.default
        if merged:
            raise ConfigError(f"unknown config key: {sorted(merged)[0]!r}")
        return cls(values, overrides)

    # -- derived objects ------------------------------------------------

    @property
    def seed(self) -> int:
        return self["run.seed"]

    def out_dir(self, cli_out: Optional[str] = None) -> str:
        env = os.environ.get("CADAD_OUT_DIR")
        if env:
            return env
        if cli_out:
            return cli_out
        return self["run.out_dir"]

    def binning(self) -> BinningConfig:
        return BinningConfig(
            dt_ms=self["data.dt_ms"],
            t_steps=self["data.t_steps"],
            channels=self["data.channels"],
            clamp_binary=self["data.clamp_binary"],
        )

    def synth(self) -> SynthConfig:
        return SynthConfig(
            n_classes=self["data.n_classes"],
            channels=self["data.channels"],
            t_steps=self["data.t_steps"],
            jitter_steps=self["synth.jitter_steps"],
            burst_prob=self["synth.burst_prob"],
            burst_rate=self["synth.burst_rate"],
            max_lag=self["synth.max_lag"],
            n_train=self["synth.n_train"],
            n_eval=self["synth.n_eval"],
            dt_ms=self["data.dt_ms"],
            decoys=self["synth.decoys"],
            n_volleys=self["synth.n_volleys"],
        )

    def neuron(self) -> NeuronConfig:
        leak = self["neuron.leak"]
        common = dict(
            v_threshold=self["neuron.v_threshold"],
            v_reset=self["neuron.v_reset"],
            surrogate_slope=self["neuron.surrogate_slope"],
        )
        if not math.isnan(leak):
            return NeuronConfig(leak=leak, **common)
        return NeuronConfig.from_tau(self["neuron.tau_ms"], self["data.dt_ms"], **common)

    @property
    def d_max_steps(self) -> float:
        return self["delay.d_max_ms"] / self["data.dt_ms"]

    def delay_hyper(self) -> DelayHyper:
        return DelayHyper(
            d_max=self.d_max_steps,
            gamma=self["delay.gamma"],
            k_smooth=self["delay.k_smooth"],
            s_max=self["delay.s_max"],
            s_min=self["delay.s_min"],
            e_decay=self["delay.e_decay"],
            nonlinearity=self["delay.nonlinearity"],
            congestion_grad=self["delay.congestion_grad"],
        )

    def network_spec(self, delay_mode: Optional[str] = None) -> NetworkSpec:
        mode = delay_mode if delay_mode is not None else self["delay.mode"]
        widths = (self["data.channels"],) + tuple(self["network.hidden"]) + (
            self["data.n_classes"],
        )
        layers = tuple(
            LayerSpec(
                n_in=widths[i],
                n_out=widths[i + 1],
                delay_mode=mode,
                dropout_rate=self["network.dropout"],
            )
            for i in range(len(widths) - 1)
        )
        return NetworkSpec(layers=layers, n_classes=self["data.n_classes"], readout=self["network.readout"])

    def build_network(self, delay_mode: Optional[str] = None, seed: Optional[int] = None) -> Network:
        return Network.init(
            self.network_spec(delay_mode),
            self.neuron(),
            self.delay_hyper(),
            seed=self.seed if seed is None else seed,
            w_gain=self["network.w_init_gain"],
            detach_reset=self["network.detach_reset"],
        )

    def train_config(self, seed: Optional[int] = None) -> TrainConfig:
        return TrainConfig(
            epochs=self["train.epochs"],
            batch_size=self["train.batch_size"],
            lr_w=self["train.lr_w"],
            lr_delay=self["train.lr_delay"],
            weight_decay=self["train.weight_decay"],
            seed=self.seed if seed is None else seed,
            eval_every=self["train.eval_every"],
            grad_clip=self["train.grad_clip"],
            eval_discretize=self["train.eval_discretize"],
        )

    # -- manifest -------------------------------------------------------

    def manifest_text(self) -> str:
        lines = ["# resolved configuration"]
        for key in sorted(self.values):
            v = self.values[key]
            if isinstance(v, tuple):
                v = ",".join(str(p) for p in v)
            lines.append(f"{key} = {v}")
        if self.overrides:
            lines.append("# overrides applied")
            for key in sorted(self.overrides):
                lines.append(f"# --set {key}={self.overrides[key]}")
        return "\n".join(lines) + "\n"

    def write_manifest(self, out_dir) -> str:
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, "manifest.cfg")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.manifest_text())
        return path
