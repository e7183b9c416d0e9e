"""Spiking networks with congestion-aware dynamic axonal delays."""

from .data import BinningConfig, EventStream, SpikeDataset, SynthConfig
from .delay import DelayHyper, DelayParams, DelayTrace
from .errors import CadadError, ConfigError, ContractError, EventFileError, NumericsError
from .network import LayerSpec, Network, NetworkSpec
from .neuron import NeuronConfig
from .trainer import TrainConfig

__version__ = "0.1.0"

__all__ = [
    "BinningConfig",
    "CadadError",
    "ConfigError",
    "ContractError",
    "DelayHyper",
    "DelayParams",
    "DelayTrace",
    "EventFileError",
    "EventStream",
    "LayerSpec",
    "Network",
    "NetworkSpec",
    "NeuronConfig",
    "NumericsError",
    "SpikeDataset",
    "SynthConfig",
    "TrainConfig",
    "__version__",
]
