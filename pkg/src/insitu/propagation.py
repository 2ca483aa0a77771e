"""Piecewise-constant evolution of a :class:`~insitu.system.SpinSystem`."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from insitu import kernels
from insitu.system import SpinSystem, build_controls, build_drift


@dataclass(frozen=True)
class PulseGrid:
    """Control amplitudes, one row per control Hamiltonian, one column per slot."""

    amplitudes: np.ndarray
    t_gate: float

    def __post_init__(self):
        a = np.array(self.amplitudes, dtype=np.float64)
        if a.ndim != 2 or a.shape[1] < 1:
            raise ValueError("amplitudes must be a 2-D (n_ctrl, n_ts) array")
        if not np.all(np.isfinite(a)):
            raise ValueError("pulse amplitudes must be finite")
        if not self.t_gate > 0:
            raise ValueError("t_gate must be positive")
        a.setflags(write=False)
        object.__setattr__(self, "amplitudes", a)
        object.__setattr__(self, "t_gate", float(self.t_gate))

    @property
    def n_ctrl(self) -> int:
        return self.amplitudes.shape[0]

    @property
    def n_ts(self) -> int:
        return self.amplitudes.shape[1]

    @property
    def dt(self) -> float:
        return self.t_gate / self.n_ts

    def with_amplitudes(self, amplitudes: np.ndarray) -> "PulseGrid":
        return PulseGrid(amplitudes, self.t_gate)


@dataclass(frozen=True)
class PropagationResult:
    total: np.ndarray
    slot_propagators: np.ndarray
    evals: np.ndarray
    evecs: np.ndarray
    forward: np.ndarray
    backward: np.ndarray


class Dynamics:
    """Drift and control matrices, built once and reused.

    Building the 2^n-dimensional operators dominates small runs, so the
    optimizer holds one of these rather than rebuilding them per evaluation.
    """

    def __init__(self, drift: np.ndarray, controls: np.ndarray):
        self.drift = np.ascontiguousarray(drift, dtype=np.complex128)
        self.controls = np.ascontiguousarray(controls, dtype=np.complex128)
        if self.controls.ndim != 3 or self.controls.shape[1:] != self.drift.shape:
            raise ValueError("controls must be a (n_ctrl, d, d) stack matching the drift")

    @classmethod
    def from_system(cls, sys: SpinSystem) -> "Dynamics":
        return cls(build_drift(sys), build_controls(sys))

    @property
    def dim(self) -> int:
        return self.drift.shape[0]

    @property
    def n_ctrl(self) -> int:
        return self.controls.shape[0]

    def check(self, pulse: PulseGrid) -> None:
        if pulse.n_ctrl != self.n_ctrl:
            raise ValueError(
                f"pulse has {pulse.n_ctrl} control rows, system has {self.n_ctrl} controls"
            )

    def propagate(self, pulse: PulseGrid) -> PropagationResult:
        self.check(pulse)
        evals, evecs, props = kernels.slot_eigensystems(
            self.drift, self.controls, pulse.amplitudes, pulse.dt
        )
        fwd, bwd = kernels.cumulative_products(props)
        return PropagationResult(fwd[-1], props, evals, evecs, fwd, bwd)

    def total_unitary(self, pulse: PulseGrid) -> np.ndarray:
        self.check(pulse)
        _, _, props = kernels.slot_eigensystems(
            self.drift, self.controls, pulse.amplitudes, pulse.dt
        )
        v = np.eye(self.dim, dtype=np.complex128)
        for u in props:
            v = u @ v
        return v


def propagate(sys: SpinSystem, pulse: PulseGrid) -> PropagationResult:
    """Slot propagators ``exp(-i H_k dt)`` and their ordered product
    ``V = U_{N-1} ... U_1 U_0`` (slot 0 acts first)."""
    return Dynamics.from_system(sys).propagate(pulse)


def random_initial_pulse(n_ctrl: int, n_ts: int, t_gate: float, seed) -> PulseGrid:
    """Amplitudes i.i.d. uniform on [-1, 1]."""
    rng = np.random.default_rng(seed)
    return PulseGrid(rng.uniform(-1.0, 1.0, size=(n_ctrl, n_ts)), t_gate)
