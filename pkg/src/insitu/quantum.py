"""Dense operator primitives.

Operators are plain ``numpy`` complex arrays. Qubit 0 is the leftmost
(most significant) tensor factor everywhere in the package, and hbar = 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg

HERMITIAN_ATOL = 1e-12
UNITARY_ATOL = 1e-10

IDENTITY = np.eye(2, dtype=np.complex128)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=np.complex128)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=np.complex128)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=np.complex128)
PAULIS = {"i": IDENTITY, "x": SIGMA_X, "y": SIGMA_Y, "z": SIGMA_Z}

CNOT = np.array(
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=np.complex128
)


def is_hermitian(a: np.ndarray, atol: float = HERMITIAN_ATOL) -> bool:
    return bool(np.max(np.abs(a - a.conj().T), initial=0.0) <= atol)


def is_unitary(a: np.ndarray, atol: float = UNITARY_ATOL) -> bool:
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        return False
    err = a.conj().T @ a - np.eye(a.shape[0])
    return bool(np.max(np.abs(err)) <= atol)


def n_qubits_of(dim: int) -> int:
    n = int(dim).bit_length() - 1
    if dim < 1 or 2**n != dim:
        raise ValueError(f"dimension {dim} is not a power of two")
    return n


def kron(*ops: np.ndarray) -> np.ndarray:
    """Tensor product of any number of operators (or state vectors)."""
    if not ops:
        return np.ones((1, 1), dtype=np.complex128)
    return reduce(np.kron, ops)


def pauli(axis: str, qubit: int, n: int) -> np.ndarray:
    """``sigma_axis`` on ``qubit`` embedded in an ``n``-qubit register."""
    axis = axis.lower()
    if axis not in ("x", "y", "z"):
        raise ValueError(f"unknown Pauli axis {axis!r}")
    if not 0 <= qubit < n:
        raise IndexError(f"qubit {qubit} out of range for {n} qubits")
    return kron(*(PAULIS[axis] if q == qubit else IDENTITY for q in range(n)))


def pauli_string(label: str) -> np.ndarray:
    """Dense matrix of a Pauli word such as ``"xiz"`` (qubit 0 first)."""
    return kron(*(PAULIS[c] for c in label.lower()))


def matrix_exponential(h: np.ndarray, scale: complex = 1.0) -> np.ndarray:
    """``exp(scale * h)``.

    Hermitian ``h`` goes through ``eigh`` so ``exp(-1j * t * h)`` is unitary to
    rounding; anything else falls back to scipy's scaling-and-squaring Pade.
    """
    h = np.asarray(h, dtype=np.complex128)
    if not np.all(np.isfinite(h)) or not np.isfinite(scale):
        raise ValueError("matrix_exponential: non-finite input")
    if is_hermitian(h):
        w, v = np.linalg.eigh(h)
        return (v * np.exp(scale * w)) @ v.conj().T
    return scipy.linalg.expm(scale * h)


def _as_groups(keep: Iterable[int], n: int) -> list[int]:
    keep = [int(q) for q in keep]
    if len(set(keep)) != len(keep):
        raise ValueError(f"repeated qubit in keep set {keep}")
    for q in keep:
        if not 0 <= q < n:
            raise ValueError(f"keep qubit {q} not in a {n}-qubit layout")
    return keep


def partial_trace(rho: np.ndarray, keep: Sequence[int], n: int | None = None) -> np.ndarray:
    """Reduced operator on the qubits in ``keep``, in the order given.

    ``rho`` is either a ``2^n x 2^n`` operator or a length-``2^n`` pure state
    (treated as the projector onto it). Tracing out nothing returns ``rho``
    with its qubits reordered to ``keep``.
    """
    rho = np.asarray(rho)
    dim = rho.shape[0]
    if n is None:
        n = n_qubits_of(dim)
    elif dim != 2**n:
        raise ValueError(f"operator of dimension {dim} does not match {n} qubits")
    keep = _as_groups(keep, n)
    rest = [q for q in range(n) if q not in keep]
    dk, dr = 2 ** len(keep), 2 ** len(rest)

    if rho.ndim == 1:
        psi = rho.reshape([2] * n).transpose(keep + rest).reshape(dk, dr)
        return psi @ psi.conj().T

    t = rho.reshape([2] * (2 * n))
    perm = keep + rest + [n + q for q in keep] + [n + q for q in rest]
    t = t.transpose(perm).reshape(dk, dr, dk, dr)
    return np.einsum("arbr->ab", t)


def embed_operator(op: np.ndarray, qubits: Sequence[int], n: int) -> np.ndarray:
    """Lift ``op`` acting on ``qubits`` (in that tensor order) to ``n`` qubits."""
    qubits = _as_groups(qubits, n)
    k = len(qubits)
    if op.shape != (2**k, 2**k):
        raise ValueError(f"operator of shape {op.shape} cannot act on {k} qubits")
    rest = [q for q in range(n) if q not in qubits]
    full = np.kron(op, np.eye(2 ** len(rest), dtype=np.complex128))
    order = qubits + rest
    inv = list(np.argsort(order))
    t = full.reshape([2] * (2 * n)).transpose(inv + [n + q for q in inv])
    return t.reshape(2**n, 2**n)


def maximally_entangled(d: int) -> np.ndarray:
    """Normalised ``sum_k |k>|k> / sqrt(d)`` in (system, copy) block order."""
    return np.eye(d, dtype=np.complex128).reshape(-1) / np.sqrt(d)


def choi_state(u: np.ndarray, check: bool = True) -> np.ndarray:
    """Normalised Choi vector ``(U (x) 1)|Omega>`` of a unitary.

    Layout is (system block, copy block), so entry ``(s, c)`` equals
    ``U[s, c] / sqrt(d)``.
    """
    u = np.asarray(u, dtype=np.complex128)
    if check and not is_unitary(u):
        raise ValueError("choi_state expects a unitary")
    return u.reshape(-1) / np.sqrt(u.shape[0])


def random_unitary(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random unitary via QR with the phase fix."""
    z = (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    diag = np.diag(r)
    return q * (diag / np.abs(diag))


def random_hamiltonian(n: int, norm: float, seed: int | np.random.Generator) -> np.ndarray:
    """Hermitised complex Gaussian matrix rescaled to spectral norm ``norm``."""
    if norm <= 0:
        raise ValueError("norm must be positive")
    rng = np.random.default_rng(seed)
    d = 2**n
    m = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    h = 0.5 * (m + m.conj().T)
    return h * (norm / np.linalg.norm(h, 2))


@dataclass(frozen=True)
class SubsystemPartition:
    """Disjoint qubit groups covering ``0..n-1``.

    The order inside a group is the tensor order of the factor acting on it,
    so ``(3, 1)`` with a CNOT factor means control 3, target 1.
    """

    groups: tuple[tuple[int, ...], ...]
    n: int

    def __post_init__(self):
        groups = tuple(tuple(int(q) for q in g) for g in self.groups)
        object.__setattr__(self, "groups", groups)
        seen = [q for g in groups for q in g]
        if any(len(g) == 0 for g in groups):
            raise ValueError("empty subsystem group")
        if len(seen) != len(set(seen)):
            raise ValueError(f"subsystem groups overlap: {groups}")
        if sorted(seen) != list(range(self.n)):
            raise ValueError(f"groups {groups} do not cover qubits 0..{self.n - 1}")

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(2 ** len(g) for g in self.groups)

    def __len__(self) -> int:
        return len(self.groups)
