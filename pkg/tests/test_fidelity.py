import numpy as np
import pytest

from insitu.fidelity import (
    MeasurementModel,
    TargetGate,
    choi_fidelity,
    cnot_target,
    combine_local,
    gate_fidelity_unitary,
    local_estimator,
    local_fidelities,
    local_terms,
    quantize,
    reduced_choi,
)
from insitu.quantum import CNOT, IDENTITY, SubsystemPartition, partial_trace, random_hamiltonian, random_unitary
from oracles import expm_hermitian, haar_unitary, operational_local_fidelities


def product_target(rng, groups, n):
    return TargetGate(SubsystemPartition(groups, n), tuple(haar_unitary(2 ** len(g), rng) for g in groups))


def test_cnot_target_layout():
    t = cnot_target(4, 2, 0)
    assert t.partition.groups[0] == (2, 0)
    assert t.partition.dims == (4, 2, 2)
    full = t.full()
    # control 2 set, target 0 flips
    e = np.zeros(16)
    e[0b0010] = 1
    assert np.argmax(np.abs(full @ e)) == 0b1010


def test_cnot_target_rejects_same_qubit():
    with pytest.raises(ValueError):
        cnot_target(3, 1, 1)


def test_target_factor_shape_checked():
    with pytest.raises(ValueError):
        TargetGate(SubsystemPartition(((0, 1),), 2), (IDENTITY,))


def test_gate_fidelity_identity_and_global_phase(rng):
    u = random_unitary(8, rng)
    assert gate_fidelity_unitary(u, u) == pytest.approx(1.0)
    assert gate_fidelity_unitary(np.exp(0.7j) * u, u) == pytest.approx(1.0)


def test_gate_fidelity_orthogonal_paulis():
    x = np.array([[0, 1], [1, 0]])
    assert gate_fidelity_unitary(x, np.eye(2)) == pytest.approx(0.0)


def test_choi_fidelity_equals_trace_formula(rng):
    for d in (2, 4, 8):
        u, v = random_unitary(d, rng), random_unitary(d, rng)
        assert choi_fidelity(v, u) == pytest.approx(gate_fidelity_unitary(v, u), abs=1e-12)


def test_reduced_choi_matches_brute_force_partial_trace(rng):
    from insitu.quantum import choi_state

    v = random_unitary(8, rng)
    full = np.outer(choi_state(v), choi_state(v).conj())
    # choi ordering: system qubits 0..2 then copy qubits 3..5
    brute = partial_trace(full, [0, 2, 3, 5], 6)
    np.testing.assert_allclose(reduced_choi(v, (0, 2)), brute, atol=1e-12)


def test_local_fidelities_match_operational_oracle(rng):
    t = product_target(rng, ((2, 0), (1,)), 3)
    v = haar_unitary(8, rng)
    np.testing.assert_allclose(
        local_fidelities(v, t), operational_local_fidelities(v, t.partition.groups, t.factors, 3), atol=1e-10
    )


def test_local_terms_match_local_fidelities(rng):
    t = product_target(rng, ((1,), (0, 3), (2,)), 4)
    v = random_unitary(16, rng)
    fids, _ = local_terms(v, t, with_gradient=False)
    np.testing.assert_allclose(fids, local_fidelities(v, t), atol=1e-12)


def test_local_terms_gradient_coefficient(rng):
    t = cnot_target(3, 0, 1)
    v = random_unitary(8, rng)
    _, coeff = local_terms(v, t)
    dv = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
    h = 1e-6
    fd = (local_estimator(v + h * dv, t) - local_estimator(v - h * dv, t)) / (2 * h)
    assert 2 * np.real(np.trace(coeff @ dv)) == pytest.approx(fd, rel=1e-6, abs=1e-9)


def test_estimator_is_one_at_target_and_bounded_below(rng):
    t = cnot_target(4, 1, 3)
    assert local_estimator(t.full(), t) == pytest.approx(1.0)
    for _ in range(20):
        v = random_unitary(16, rng)
        f_le = local_estimator(v, t)
        assert f_le >= 1 - len(t.partition) - 1e-12
        assert f_le <= gate_fidelity_unitary(v, t.full()) + 1e-10


def test_single_group_estimator_equals_gate_fidelity(rng):
    t = TargetGate(SubsystemPartition(((0, 1),), 2), (CNOT,))
    v = random_unitary(4, rng)
    assert local_estimator(v, t) == pytest.approx(gate_fidelity_unitary(v, CNOT), abs=1e-12)


def test_gap_shrinks_toward_the_target():
    t = cnot_target(4, 0, 1)
    h = random_hamiltonian(4, 1.0, seed=2)
    inf, inf_le = [], []
    for eps in (0.2, 0.1, 0.05):
        v = expm_hermitian(h, eps) @ t.full()
        inf.append(1 - gate_fidelity_unitary(v, t.full()))
        inf_le.append(1 - local_estimator(v, t))
    assert inf[0] > inf[1] > inf[2] and inf_le[0] > inf_le[1] > inf_le[2]
    ratios = np.array(inf_le) / np.array(inf)
    assert np.all(ratios >= 1) and np.all(ratios < 10)


def test_dimension_mismatch():
    with pytest.raises(ValueError, match="does not match"):
        local_fidelities(np.eye(4), cnot_target(3, 0, 1))


def test_combine_local():
    assert combine_local([1.0, 0.99, 0.98]) == pytest.approx(0.97)


@pytest.mark.parametrize(
    "f,a,expected",
    [(0.99876, 0.001, 0.999), (0.123, 0.0, 0.123), (0.25, 0.5, 0.0), (0.75, 0.5, 1.0), (0.994, 0.01, 0.99)],
)
def test_quantize(f, a, expected):
    assert quantize(f, a) == pytest.approx(expected, abs=1e-15)


def test_quantize_rejects_negative():
    with pytest.raises(ValueError):
        quantize(0.5, -0.1)


def test_measurement_models(rng):
    t = cnot_target(3, 0, 1)
    v = expm_hermitian(random_hamiltonian(3, 0.2, seed=0), 1.0) @ t.full()
    exact = local_estimator(v, t)
    assert MeasurementModel().measure(v, t) == pytest.approx(exact)
    q = MeasurementModel.from_a_num(0.01).measure(v, t)
    fids = quantize(local_fidelities(v, t), 0.01)
    assert q == pytest.approx(combine_local(fids))
    s = MeasurementModel("sampled", shots=20000).measure(v, t, rng=rng)
    assert abs(s - exact) < 0.05


def test_measurement_model_validation():
    assert MeasurementModel.from_a_num(0.0).mode == "exact"
    with pytest.raises(ValueError):
        MeasurementModel("quantized", 0.0)
    with pytest.raises(ValueError):
        MeasurementModel("exact", 0.1)
    with pytest.raises(ValueError):
        MeasurementModel("sampled")
    with pytest.raises(ValueError):
        MeasurementModel("tomography")
