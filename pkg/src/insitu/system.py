"""Spin-register model: always-on couplings plus x/y drives on every qubit."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from insitu.quantum import pauli

TOPOLOGIES = ("chain", "ring", "star", "fully_connected")
COUPLINGS = ("ising", "heisenberg")

RANDOM_STRENGTH_RANGE = (0.5, 1.5)


def topology_edges(kind: str, n: int) -> list[tuple[int, int]]:
    if kind == "chain":
        return [(i, i + 1) for i in range(n - 1)]
    if kind == "ring":
        edges = [(i, i + 1) for i in range(n - 1)]
        # a 2-ring would duplicate its only edge
        if n > 2:
            edges.append((n - 1, 0))
        return edges
    if kind == "star":
        return [(0, i) for i in range(1, n)]
    if kind == "fully_connected":
        return list(itertools.combinations(range(n), 2))
    raise ValueError(f"unknown topology {kind!r}; expected one of {TOPOLOGIES}")


def coupling_term(kind: str, i: int, j: int, n: int) -> np.ndarray:
    if kind == "ising":
        return pauli("z", i, n) @ pauli("z", j, n)
    if kind == "heisenberg":
        return sum(pauli(a, i, n) @ pauli(a, j, n) for a in "xyz")
    raise ValueError(f"unknown coupling {kind!r}; expected one of {COUPLINGS}")


@dataclass(frozen=True)
class SpinSystem:
    n: int
    topology: str = "chain"
    coupling: str = "ising"
    strengths: Optional[tuple[float, ...]] = None
    strength_seed: Optional[int] = field(default=None, compare=True)

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("a spin system needs at least 2 qubits")
        if self.topology not in TOPOLOGIES:
            raise ValueError(f"unknown topology {self.topology!r}")
        if self.coupling not in COUPLINGS:
            raise ValueError(f"unknown coupling {self.coupling!r}")
        n_edges = len(self.edges)
        if self.strengths is None:
            if self.strength_seed is not None:
                rng = np.random.default_rng(self.strength_seed)
                s = rng.uniform(*RANDOM_STRENGTH_RANGE, size=n_edges)
            else:
                s = np.ones(n_edges)
        else:
            s = np.asarray(self.strengths, dtype=float)
            if s.shape != (n_edges,):
                raise ValueError(f"{n_edges} edge strengths expected, got {s.size}")
            if not np.all(np.isfinite(s)):
                raise ValueError("edge strengths must be finite")
        object.__setattr__(self, "strengths", tuple(float(x) for x in s))

    @property
    def edges(self) -> list[tuple[int, int]]:
        return topology_edges(self.topology, self.n)

    @property
    def dim(self) -> int:
        return 2**self.n

    @property
    def n_ctrl(self) -> int:
        return 2 * self.n


def randomize_strengths(sys: SpinSystem, seed: int) -> SpinSystem:
    """Copy of ``sys`` with edge strengths i.i.d. uniform on [0.5, 1.5]."""
    return replace(sys, strengths=None, strength_seed=seed)


def build_drift(sys: SpinSystem) -> np.ndarray:
    d = sys.dim
    h = np.zeros((d, d), dtype=np.complex128)
    for (i, j), s in zip(sys.edges, sys.strengths):
        h += s * coupling_term(sys.coupling, i, j, sys.n)
    return h


def build_controls(sys: SpinSystem) -> np.ndarray:
    """Stack ``[sx_0, sy_0, sx_1, sy_1, ...]`` of shape ``(2n, d, d)``."""
    return np.array([pauli(a, q, sys.n) for q in range(sys.n) for a in "xy"])
