"""Hierarchical associative memory networks.

Layered recurrent networks whose per-layer Lagrangian functions define the
activations, with relaxation dynamics that descend a global energy. The
package covers architecture specification and validation, relaxation with
an energy-certified adaptive integrator, pattern storage and retrieval,
capacity experiments, and denoising training through the unrolled dynamics.
"""

from .dynamics import (
    IntegratorConfig,
    NetworkState,
    NonFiniteStateError,
    RelaxationTrace,
    equilibrate_top_layer,
    relax,
    step,
    velocity,
    zero_state,
)
from .energy import EnergyBreakdown, energy_rate, global_energy, reduced_energy_adiabatic
from .fully_connected import FullyConnectedNetwork
from .lagrangians import (
    ChannelLogSumExp,
    ElementwiseAdditive,
    Lagrangian,
    LogSumExp,
    Quadratic,
    additive,
)
from .memory import (
    CapacityTable,
    NoiseModel,
    PatternSet,
    RecallReport,
    build_assembly_demo,
    capacity_sweep,
    corrupt,
    random_sign_patterns,
    retrieve,
    store_single_hidden,
)
from .serialization import describe, load, save
from .topology import (
    AvgPool,
    Conv,
    Dense,
    LayerSpec,
    NetworkSpec,
    ShapeMismatchError,
    backward_message,
    feature_map_extent,
    forward_message,
)
from .trainer import TrainConfig, TrainingDiverged, gradient, train, unroll_loss

__all__ = [
    "AvgPool",
    "CapacityTable",
    "ChannelLogSumExp",
    "Conv",
    "Dense",
    "ElementwiseAdditive",
    "EnergyBreakdown",
    "FullyConnectedNetwork",
    "IntegratorConfig",
    "Lagrangian",
    "LayerSpec",
    "LogSumExp",
    "NetworkSpec",
    "NetworkState",
    "NoiseModel",
    "NonFiniteStateError",
    "PatternSet",
    "Quadratic",
    "RecallReport",
    "RelaxationTrace",
    "ShapeMismatchError",
    "TrainConfig",
    "TrainingDiverged",
    "additive",
    "backward_message",
    "build_assembly_demo",
    "capacity_sweep",
    "corrupt",
    "describe",
    "energy_rate",
    "equilibrate_top_layer",
    "feature_map_extent",
    "forward_message",
    "global_energy",
    "gradient",
    "load",
    "random_sign_patterns",
    "reduced_energy_adiabatic",
    "relax",
    "retrieve",
    "save",
    "step",
    "store_single_hidden",
    "train",
    "unroll_loss",
    "velocity",
    "zero_state",
]
