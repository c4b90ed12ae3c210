"""Spiking Q-learning with binary and ternary LIF neurons.

The package splits into a numeric substrate (tensor), neuron dynamics and
surrogate kernels (neuron), rate coding (encoding), the windowed spiking
Q-network with hand-derived BPTT (network), the deep Q-learning loop (rl),
desk-scale pixel environments (env), and a numerical analysis toolkit for
entropy, membrane statistics, gradient bias, and dynamical isometry
(analysis). The `spikeq` command in cli wires them together.
"""

from .neuron import (
    NeuronModelKind,
    NeuronParams,
    SurrogateSpec,
    binary,
    ternary_asymmetric,
    ternary_symmetric,
)
from .network import (
    SpikingNetwork,
    build_network,
    forward,
    forward_batch,
    backward,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .rl import AgentConfig, ReplayBuffer, Transition, evaluate, train
from .tensor import Rng, Tensor

__all__ = [
    "AgentConfig",
    "NeuronModelKind",
    "NeuronParams",
    "ReplayBuffer",
    "Rng",
    "SpikingNetwork",
    "SurrogateSpec",
    "Tensor",
    "Transition",
    "backward",
    "binary",
    "build_network",
    "evaluate",
    "forward",
    "forward_batch",
    "init_params",
    "load_checkpoint",
    "save_checkpoint",
    "ternary_asymmetric",
    "ternary_symmetric",
    "train",
]

__version__ = "0.1.0"
