"""Simulated in-situ optimization of entangling gates on qubit simulators.

Pulses are optimized against the local fidelity estimator, a lower bound on
the gate fidelity that only needs certification of one- and two-qubit
subsystems.
"""

__version__ = "0.1.0"

from insitu.fidelity import (  # noqa: E402
    MeasurementModel,
    TargetGate,
    choi_fidelity,
    cnot_target,
    gate_fidelity_unitary,
    local_estimator,
    local_fidelities,
    quantize,
)
from insitu.optimizer import OptimizationOutcome, OptimizerConfig, optimize  # noqa: E402
from insitu.propagation import Dynamics, PulseGrid, propagate, random_initial_pulse  # noqa: E402
from insitu.system import SpinSystem, build_controls, build_drift  # noqa: E402

__all__ = [
    "Dynamics",
    "MeasurementModel",
    "OptimizationOutcome",
    "OptimizerConfig",
    "PulseGrid",
    "SpinSystem",
    "TargetGate",
    "build_controls",
    "build_drift",
    "choi_fidelity",
    "cnot_target",
    "gate_fidelity_unitary",
    "local_estimator",
    "local_fidelities",
    "optimize",
    "propagate",
    "quantize",
    "random_initial_pulse",
]
