"""Hot loops of the GRAPE inner iteration.

Each kernel exists twice: a numba version that loops over time slots and a
numpy version that batches over slots. :data:`insitu._accel.USE_NUMBA`
selects which one the public names dispatch to. Both must agree to rounding;
``tests/test_kernels.py`` checks this and ``benchmarks/bench_kernels.py``
times them against each other.

Conventions: ``amps`` has shape ``(n_ctrl, n_ts)``; slot ``k`` evolves under
``H_k = H_drift + sum_c amps[c, k] H_c`` for time ``dt``; slot 0 acts first.
"""

import numpy as np

from insitu import _accel
from insitu._accel import njit


# ---------------------------------------------------------------- numpy path


def slot_eigensystems_numpy(h_drift, h_ctrls, amps, dt):
    hs = h_drift[None, :, :] + np.tensordot(amps.T, h_ctrls, axes=1)
    evals, evecs = np.linalg.eigh(hs)
    phases = np.exp(-1j * dt * evals)
    props = (evecs * phases[:, None, :]) @ evecs.conj().transpose(0, 2, 1)
    return evals, evecs, props


def cumulative_products_numpy(props):
    n_ts, d, _ = props.shape
    fwd = np.empty((n_ts + 1, d, d), dtype=np.complex128)
    bwd = np.empty((n_ts, d, d), dtype=np.complex128)
    fwd[0] = np.eye(d)
    for k in range(n_ts):
        fwd[k + 1] = props[k] @ fwd[k]
    bwd[n_ts - 1] = np.eye(d)
    for k in range(n_ts - 2, -1, -1):
        bwd[k] = bwd[k + 1] @ props[k + 1]
    return fwd, bwd


def divided_differences_numpy(evals, dt):
    """Divided differences of ``exp(-i dt x)`` at each pair of eigenvalues.

    Written as ``exp(-i dt (a+b)/2) * sinc(dt (a-b) / 2)`` so degenerate
    pairs need no special casing.
    """
    mean = 0.5 * (evals[..., :, None] + evals[..., None, :])
    half = 0.5 * dt * (evals[..., :, None] - evals[..., None, :])
    return np.exp(-1j * dt * mean) * np.sinc(half / np.pi)


def grape_gradient_numpy(evals, evecs, fwd, bwd, coeff, h_ctrls, dt):
    # lam_k = fwd_k @ coeff @ bwd_k, so d(objective) = 2 Re Tr(lam_k dU_k)
    lam = fwd[:-1] @ coeff[None, :, :] @ bwd
    evecs_h = evecs.conj().transpose(0, 2, 1)
    m = evecs_h @ lam @ evecs
    kern = m.transpose(0, 2, 1) * divided_differences_numpy(evals, dt)
    p = evecs.conj() @ kern @ evecs.transpose(0, 2, 1)
    g = np.einsum("cpq,kpq->ck", h_ctrls, p)
    return 2.0 * np.real(-1j * dt * g)


# ---------------------------------------------------------------- numba path


@njit
def _sinc(x):
    if abs(x) < 1e-8:
        return 1.0 - x * x / 6.0
    return np.sin(x) / x


@njit
def slot_eigensystems_numba(h_drift, h_ctrls, amps, dt):
    n_ctrl, n_ts = amps.shape
    d = h_drift.shape[0]
    evals = np.empty((n_ts, d))
    evecs = np.empty((n_ts, d, d), dtype=np.complex128)
    props = np.empty((n_ts, d, d), dtype=np.complex128)
    for k in range(n_ts):
        h = h_drift.copy()
        for c in range(n_ctrl):
            h += amps[c, k] * h_ctrls[c]
        w, v = np.linalg.eigh(h)
        evals[k] = w
        evecs[k] = v
        vp = np.empty((d, d), dtype=np.complex128)
        for j in range(d):
            ph = np.exp(-1j * dt * w[j])
            for i in range(d):
                vp[i, j] = v[i, j] * ph
        props[k] = vp @ np.ascontiguousarray(v.conj().T)
    return evals, evecs, props


@njit
def cumulative_products_numba(props):
    n_ts, d, _ = props.shape
    fwd = np.empty((n_ts + 1, d, d), dtype=np.complex128)
    bwd = np.empty((n_ts, d, d), dtype=np.complex128)
    fwd[0] = np.eye(d, dtype=np.complex128)
    for k in range(n_ts):
        fwd[k + 1] = props[k] @ fwd[k]
    bwd[n_ts - 1] = np.eye(d, dtype=np.complex128)
    for k in range(n_ts - 2, -1, -1):
        bwd[k] = bwd[k + 1] @ props[k + 1]
    return fwd, bwd


@njit
def divided_differences_numba(evals, dt):
    d = evals.shape[0]
    out = np.empty((d, d), dtype=np.complex128)
    for m in range(d):
        for n in range(d):
            half = 0.5 * dt * (evals[m] - evals[n])
            out[m, n] = np.exp(-0.5j * dt * (evals[m] + evals[n])) * _sinc(half)
    return out


@njit
def grape_gradient_numba(evals, evecs, fwd, bwd, coeff, h_ctrls, dt):
    n_ctrl = h_ctrls.shape[0]
    n_ts, d, _ = evecs.shape
    grad = np.zeros((n_ctrl, n_ts))
    for k in range(n_ts):
        v = evecs[k]
        vh = np.ascontiguousarray(v.conj().T)
        lam = fwd[k] @ coeff @ bwd[k]
        m = vh @ lam @ v
        phi = divided_differences_numba(evals[k], dt)
        kern = np.empty((d, d), dtype=np.complex128)
        for i in range(d):
            for j in range(d):
                kern[i, j] = m[j, i] * phi[i, j]
        p = np.ascontiguousarray(v.conj()) @ kern @ np.ascontiguousarray(v.T)
        for c in range(n_ctrl):
            acc = 0.0j
            hc = h_ctrls[c]
            for i in range(d):
                for j in range(d):
                    acc += hc[i, j] * p[i, j]
            grad[c, k] = 2.0 * (-1j * dt * acc).real
    return grad


# ---------------------------------------------------------------- dispatch


def _pick(numba_fn, numpy_fn):
    return numba_fn if _accel.USE_NUMBA else numpy_fn


def slot_eigensystems(h_drift, h_ctrls, amps, dt):
    """Eigensystems and propagators ``exp(-i H_k dt)`` of every slot."""
    fn = _pick(slot_eigensystems_numba, slot_eigensystems_numpy)
    return fn(
        np.ascontiguousarray(h_drift, dtype=np.complex128),
        np.ascontiguousarray(h_ctrls, dtype=np.complex128),
        np.ascontiguousarray(amps, dtype=np.float64),
        float(dt),
    )


def cumulative_products(props):
    """Forward products ``fwd[k] = U_{k-1}...U_0`` (``fwd[n_ts]`` is the total)
    and backward products ``bwd[k] = U_{n_ts-1}...U_{k+1}``."""
    fn = _pick(cumulative_products_numba, cumulative_products_numpy)
    return fn(np.ascontiguousarray(props))


def grape_gradient(evals, evecs, fwd, bwd, coeff, h_ctrls, dt):
    """Exact gradient of ``2 Re Tr(coeff @ V)`` w.r.t. every slot amplitude.

    ``coeff`` is the matrix such that the objective's differential is
    ``2 Re Tr(coeff dV)``. Uses the eigenbasis form of the propagator
    derivative, so no finite-difference or first-order-in-dt approximation
    enters.
    """
    fn = _pick(grape_gradient_numba, grape_gradient_numpy)
    return fn(
        np.ascontiguousarray(evals),
        np.ascontiguousarray(evecs),
        np.ascontiguousarray(fwd),
        np.ascontiguousarray(bwd),
        np.ascontiguousarray(coeff, dtype=np.complex128),
        np.ascontiguousarray(h_ctrls, dtype=np.complex128),
        float(dt),
    )
