"""Shot-based estimation of the local fidelities.

Every estimate uses the identity

    F(M, U) = E_{P, s}[ lambda_s * o ]

where ``P`` is a uniformly random Pauli word on the probed group, ``s`` a
uniformly random eigenstate of ``P`` with eigenvalue ``lambda_s``, and ``o``
the +-1 outcome of measuring ``U P U^dag`` after the evolution. Each shot
contributes one +-1 sample, so the standard error is ``sqrt((1 - F^2)/shots)``.

Sequential protocol: one group at a time, the rest of the register in
uniformly random computational basis states (a maximally mixed ensemble);
``sum_i d_i^2`` Pauli settings. Parallel protocol: all groups probed in the
same shot, setting ``j`` assigns word ``j mod d_i^2`` to group ``i``, so only
``max_i d_i^2`` settings are needed; every other group is still maximally
mixed on average because the eigenstate index is drawn uniformly.
"""

from __future__ import annotations

import numpy as np

from insitu.fidelity import TargetGate
from insitu.propagation import Dynamics, PulseGrid
from insitu.quantum import PAULIS, embed_operator, kron
from insitu.system import SpinSystem

_AXES = "ixyz"


def _eigensystem_1q(axis: str) -> tuple[np.ndarray, np.ndarray]:
    """Columns = eigenvectors, +1 eigenvector first; eigenvalues alongside."""
    if axis == "i":
        return np.eye(2, dtype=np.complex128), np.array([1.0, 1.0])
    w, v = np.linalg.eigh(PAULIS[axis])
    return v[:, ::-1].copy(), w[::-1].copy()


_EIG = {a: _eigensystem_1q(a) for a in _AXES}


def pauli_word(index: int, k: int) -> str:
    """Base-4 digits of ``index`` as a ``k``-letter word over ``ixyz``."""
    letters = []
    for _ in range(k):
        letters.append(_AXES[index % 4])
        index //= 4
    return "".join(reversed(letters))


def settings_count(target: TargetGate, protocol: str) -> int:
    dims = target.partition.dims
    if protocol == "sequential":
        return int(sum(d * d for d in dims))
    if protocol == "parallel":
        return int(max(d * d for d in dims))
    raise ValueError(f"unknown protocol {protocol!r}")


def binomial_stderr(f, shots: int):
    """Standard error of the mean of ``shots`` +-1 samples with mean ``f``."""
    f = np.clip(np.asarray(f, dtype=float), -1.0, 1.0)
    return np.sqrt((1.0 - f * f) / shots)


class _Probe:
    """Preparation / measurement data of one Pauli word on one group."""

    def __init__(self, word: str, factor: np.ndarray):
        self.word = word
        vecs, vals = zip(*(_EIG[a] for a in word))
        self.prep = np.stack(vecs)  # (k, 2, 2): qubit, component, eigen-index
        self.vals = np.stack(vals)  # (k, 2)
        # eigenbasis of U P U^dag; column b <-> eigenvalue prod_q vals[q, b_q]
        self.meas_basis = factor @ kron(*vecs)
        k = len(word)
        bits = (np.arange(2**k)[:, None] >> np.arange(k - 1, -1, -1)[None, :]) & 1
        self.outcome_sign = np.prod(self.vals[np.arange(k)[None, :], bits], axis=1)


def _product_states(qubit_states: np.ndarray) -> np.ndarray:
    """``(m, n, 2)`` single-qubit vectors -> ``(m, 2^n)`` product states."""
    m, n, _ = qubit_states.shape
    psi = np.ones((m, 1), dtype=np.complex128)
    for q in range(n):
        psi = (psi[:, :, None] * qubit_states[:, q, None, :]).reshape(m, -1)
    return psi


def _bits_of(index: np.ndarray, qubits, n: int) -> np.ndarray:
    """Bits of basis ``index`` at ``qubits`` (in that order), as ``(m, k)``."""
    shifts = np.array([n - 1 - q for q in qubits])
    return (index[:, None] >> shifts[None, :]) & 1


def _sample_basis(psi: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    probs = np.abs(psi) ** 2
    cdf = np.cumsum(probs, axis=1)
    cdf /= cdf[:, -1:]
    u = rng.random((psi.shape[0], 1))
    return np.minimum((cdf < u).sum(axis=1), psi.shape[1] - 1)


def _run_setting(v, target, words, probe_groups, n_shots, rng, mixed_rest):
    """Run ``n_shots`` shots of one setting.

    ``words[i]`` is the Pauli word of group ``i`` (``None`` for a group that
    is only prepared at random and not measured). Returns ``(m, n_groups)``
    arrays of ``lambda_s * o`` samples for the measured groups.
    """
    n = target.n
    groups = target.partition.groups
    states = np.empty((n_shots, n, 2), dtype=np.complex128)
    lam = {}
    rotation = np.eye(2**n, dtype=np.complex128)
    probes = {}
    for i, g in enumerate(groups):
        k = len(g)
        if words[i] is None:
            if mixed_rest:
                bits = rng.integers(0, 2, size=(n_shots, k))
                states[:, list(g), :] = np.eye(2)[bits]
            continue
        probe = _Probe(words[i], target.factors[i])
        probes[i] = probe
        bits = rng.integers(0, 2, size=(n_shots, k))
        for j, q in enumerate(g):
            states[:, q, :] = probe.prep[j].T[bits[:, j]]
        lam[i] = np.prod(probe.vals[np.arange(k)[None, :], bits], axis=1)
        if i in probe_groups:
            rotation = embed_operator(probe.meas_basis.conj().T, g, n) @ rotation
    psi_in = _product_states(states)
    psi_out = (rotation @ v @ psi_in.T).T
    outcome = _sample_basis(psi_out, rng)
    samples = {}
    for i in probe_groups:
        g = groups[i]
        b = _bits_of(outcome, g, n)
        idx = b @ (1 << np.arange(len(g) - 1, -1, -1))
        samples[i] = lam[i] * probes[i].outcome_sign[idx]
    return samples


def certify_sequential_unitary(v, target: TargetGate, shots: int, rng=None) -> np.ndarray:
    if shots < 1:
        raise ValueError("shots must be >= 1")
    rng = np.random.default_rng(rng)
    groups = target.partition.groups
    out = np.empty(len(groups))
    for i, g in enumerate(groups):
        n_words = 4 ** len(g)
        counts = np.bincount(rng.integers(0, n_words, size=shots), minlength=n_words)
        total = 0.0
        for w_idx, m in enumerate(counts):
            if m == 0:
                continue
            words = [None] * len(groups)
            words[i] = pauli_word(w_idx, len(g))
            s = _run_setting(v, target, words, {i}, int(m), rng, mixed_rest=True)
            total += s[i].sum()
        out[i] = total / shots
    return out


def certify_parallel_unitary(v, target: TargetGate, shots: int, rng=None) -> np.ndarray:
    if shots < 1:
        raise ValueError("shots must be >= 1")
    rng = np.random.default_rng(rng)
    groups = target.partition.groups
    n_settings = settings_count(target, "parallel")
    counts = np.bincount(rng.integers(0, n_settings, size=shots), minlength=n_settings)
    totals = np.zeros(len(groups))
    everyone = set(range(len(groups)))
    for j, m in enumerate(counts):
        if m == 0:
            continue
        words = [pauli_word(j % 4 ** len(g), len(g)) for g in groups]
        s = _run_setting(v, target, words, everyone, int(m), rng, mixed_rest=False)
        for i in everyone:
            totals[i] += s[i].sum()
    return totals / shots


def certify_sequential(sys: SpinSystem, pulse: PulseGrid, target: TargetGate, shots: int, seed=None):
    """Sequential local-fidelity certification of ``pulse`` on ``sys``."""
    v = Dynamics.from_system(sys).total_unitary(pulse)
    return certify_sequential_unitary(v, target, shots, seed)


def certify_parallel(sys: SpinSystem, pulse: PulseGrid, target: TargetGate, shots: int, seed=None):
    """Parallel (constant-settings) local-fidelity certification."""
    v = Dynamics.from_system(sys).total_unitary(pulse)
    return certify_parallel_unitary(v, target, shots, seed)
