"""Gate fidelities and the local (subsystem) lower bound on them.

For a unitary evolution ``V`` and a product target ``U = (x)_i U_i`` the
local estimator is ``F_LE = 1 - sum_i (1 - F(M_i, U_i))``, where ``M_i`` is
the map seen by group ``i`` when every other group starts maximally mixed.
``F(M_i, U_i)`` only needs the Choi state of ``V`` reduced onto group ``i``
(in both the system and copy blocks), never the full 4^n-dimensional one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from insitu.quantum import (
    CNOT,
    IDENTITY,
    SubsystemPartition,
    choi_state,
    embed_operator,
    is_unitary,
)

MEASUREMENT_MODES = ("exact", "quantized", "sampled")


@dataclass(frozen=True)
class TargetGate:
    partition: SubsystemPartition
    factors: tuple[np.ndarray, ...]

    def __post_init__(self):
        factors = tuple(np.asarray(f, dtype=np.complex128) for f in self.factors)
        if len(factors) != len(self.partition):
            raise ValueError("one factor per subsystem group is required")
        for g, f in zip(self.partition.groups, factors):
            if f.shape != (2 ** len(g), 2 ** len(g)):
                raise ValueError(f"factor of shape {f.shape} does not fit group {g}")
            if not is_unitary(f):
                raise ValueError(f"factor on group {g} is not unitary")
        object.__setattr__(self, "factors", factors)

    @property
    def n(self) -> int:
        return self.partition.n

    @property
    def dim(self) -> int:
        return 2**self.n

    def full(self) -> np.ndarray:
        u = np.eye(self.dim, dtype=np.complex128)
        for g, f in zip(self.partition.groups, self.factors):
            u = embed_operator(f, g, self.n) @ u
        return u


def cnot_target(n: int, control: int, target: int) -> TargetGate:
    """CNOT on ``(control, target)`` and identity on every other qubit."""
    if control == target:
        raise ValueError("control and target qubit must differ")
    groups = [(control, target)] + [(q,) for q in range(n) if q not in (control, target)]
    factors = [CNOT] + [IDENTITY] * (n - 2)
    return TargetGate(SubsystemPartition(tuple(groups), n), tuple(factors))


def gate_fidelity_unitary(v: np.ndarray, u: np.ndarray) -> float:
    """``|Tr(V^dag U) / d|^2``."""
    if v.shape != u.shape:
        raise ValueError(f"dimension mismatch {v.shape} vs {u.shape}")
    d = v.shape[0]
    return float(abs(np.vdot(v, u) / d) ** 2)


def choi_fidelity(v: np.ndarray, u: np.ndarray) -> float:
    """Overlap of the Choi states, ``|<choi(U)|choi(V)>|^2``."""
    if v.shape != u.shape:
        raise ValueError(f"dimension mismatch {v.shape} vs {u.shape}")
    return float(abs(np.vdot(choi_state(u), choi_state(v))) ** 2)


def _split(v: np.ndarray, group: Sequence[int], n: int) -> np.ndarray:
    """View ``V`` as a tensor ``T[a, r, b, s]``: (group, rest) out, (group, rest) in."""
    group = list(group)
    rest = [q for q in range(n) if q not in group]
    perm = group + rest + [n + q for q in group] + [n + q for q in rest]
    dg = 2 ** len(group)
    return v.reshape([2] * (2 * n)).transpose(perm).reshape(dg, -1, dg, 2 ** len(rest)), perm


def reduced_choi(v: np.ndarray, group: Sequence[int]) -> np.ndarray:
    """Choi state of ``V`` traced down to ``group`` in both blocks.

    Returned as a ``d_g^2 x d_g^2`` density operator in (system, copy) order.
    """
    n = int(np.log2(v.shape[0]))
    t, _ = _split(v, group, n)
    dg = t.shape[0]
    rho = np.einsum("arbs,crds->abcd", t, t.conj()) / v.shape[0]
    return rho.reshape(dg * dg, dg * dg)


def _check(v: np.ndarray, target: TargetGate) -> None:
    if v.shape != (target.dim, target.dim):
        raise ValueError(
            f"unitary of shape {v.shape} does not match a {target.n}-qubit target"
        )


def local_fidelities(v: np.ndarray, target: TargetGate) -> np.ndarray:
    """``F(M_i, U_i) = <psi_i| rho_i |psi_i>`` for every group of the target."""
    _check(v, target)
    out = []
    for g, f in zip(target.partition.groups, target.factors):
        psi = choi_state(f, check=False)
        out.append(np.real(np.vdot(psi, reduced_choi(v, g) @ psi)))
    return np.clip(np.array(out), 0.0, 1.0)


def local_estimator(v: np.ndarray, target: TargetGate) -> float:
    return combine_local(local_fidelities(v, target))


def combine_local(fids) -> float:
    fids = np.asarray(fids, dtype=float)
    return float(1.0 - np.sum(1.0 - fids))


def local_terms(v: np.ndarray, target: TargetGate, with_gradient: bool = True):
    """Local fidelities plus the matrix ``C`` with ``dF_LE = 2 Re Tr(C dV)``.

    Uses ``F_i = ||Tr_i[(U_i^dag (x) 1) V]||_F^2 / (d d_i)``, which is the
    reduced-Choi overlap written without forming ``rho_i``.
    """
    _check(v, target)
    n, d = target.n, target.dim
    fids = np.empty(len(target.partition))
    coeff = np.zeros((d, d), dtype=np.complex128) if with_gradient else None
    for i, (g, f) in enumerate(zip(target.partition.groups, target.factors)):
        t, perm = _split(v, g, n)
        di = t.shape[0]
        a = np.einsum("ab,arbs->rs", f.conj(), t)
        fids[i] = np.vdot(a, a).real / (d * di)
        if with_gradient:
            gp = np.einsum("rs,ab->arbs", a.conj(), f.conj()) / (d * di)
            inv = list(np.argsort(perm))
            coeff += gp.reshape([2] * (2 * n)).transpose(inv).reshape(d, d)
    if with_gradient:
        coeff = coeff.T
    return fids, coeff


def quantize(f: float, a_num: float) -> float:
    """Round ``f`` to the nearest multiple of ``a_num`` (ties to even)."""
    if a_num < 0:
        raise ValueError("a_num must be non-negative")
    if a_num == 0:
        return f
    q = np.round(np.asarray(f, dtype=float) / a_num) * a_num
    return float(q) if q.ndim == 0 else q


@dataclass(frozen=True)
class MeasurementModel:
    """How the optimizer sees a fidelity.

    ``exact`` returns the noiseless value, ``quantized`` rounds every local
    fidelity to a multiple of ``a_num``, ``sampled`` runs the parallel
    certification protocol with ``shots`` shots per measurement.
    """

    mode: str = "exact"
    a_num: float = 0.0
    shots: int = 0
    seed: Optional[int] = None

    def __post_init__(self):
        if self.mode not in MEASUREMENT_MODES:
            raise ValueError(f"unknown measurement mode {self.mode!r}")
        if self.a_num < 0:
            raise ValueError("a_num must be non-negative")
        if (self.a_num == 0) != (self.mode == "exact") and self.mode != "sampled":
            raise ValueError("a_num must be zero exactly in exact mode")
        if self.mode == "sampled" and self.shots < 1:
            raise ValueError("sampled mode needs shots >= 1")

    @classmethod
    def from_a_num(cls, a_num: float) -> "MeasurementModel":
        return cls("quantized", a_num) if a_num > 0 else cls()

    def measure(self, v, target, exact_fids=None, rng=None) -> float:
        """Measured local estimator of ``v`` under this model."""
        if self.mode == "sampled":
            from insitu.certification import certify_parallel_unitary

            fids = certify_parallel_unitary(v, target, self.shots, rng)
            return combine_local(fids)
        if exact_fids is None:
            exact_fids, _ = local_terms(v, target, with_gradient=False)
        if self.mode == "quantized":
            exact_fids = quantize(np.asarray(exact_fids), self.a_num)
        return combine_local(exact_fids)
