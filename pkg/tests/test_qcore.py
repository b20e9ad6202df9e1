import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qfhe import qcore
from qfhe.qcore import Channel, DensityMatrix, Gate, ProcessMatrix, PureState, QuantumError

angles = st.floats(0, 2 * np.pi, allow_nan=False)


def state_from(theta, phi):
    return PureState.bloch(theta, phi)


def test_hadamard_on_zero():
    out = qcore.apply_gate(PureState.basis("0"), Gate.named("H", 0))
    assert np.allclose(out.amplitudes, [1 / np.sqrt(2), 1 / np.sqrt(2)])


def test_t_on_one_picks_up_eighth_turn():
    out = qcore.apply_gate(PureState.basis("1"), Gate.named("T", 0))
    assert np.allclose(out.amplitudes, [0, np.exp(1j * np.pi / 4)])


def test_cnot_first_qubit_controls():
    out = qcore.apply_gate(PureState.basis("10"), Gate.named("CNOT", 0, 1))
    assert out.equals_up_to_phase(PureState.basis("11"))


def test_bad_norm_and_non_unitary_rejected():
    with pytest.raises(QuantumError):
        PureState(np.array([1.0, 1.0]))
    with pytest.raises(QuantumError):
        Gate("custom", np.array([[1, 1], [0, 1]]), (0,))
    with pytest.raises(QuantumError):
        qcore.apply_gate(PureState.basis("0"), Gate.named("CNOT", 0, 1))


def test_density_invariants_enforced():
    with pytest.raises(QuantumError):
        DensityMatrix(np.array([[1, 0.5], [0, 0]]))
    with pytest.raises(QuantumError):
        DensityMatrix(np.diag([1.2, -0.2]))


@given(angles, angles, st.sampled_from(["H", "P", "T", "X", "Y", "Z"]))
def test_gates_preserve_norm_and_trace(theta, phi, name):
    psi = state_from(theta, phi)
    g = Gate.named(name, 0)
    assert abs(np.linalg.norm(qcore.apply_gate(psi, g).amplitudes) - 1) < 1e-12
    rho = qcore.apply_gate(psi.to_density(), g).matrix
    assert abs(np.trace(rho) - 1) < 1e-12
    assert np.allclose(rho, rho.conj().T, atol=1e-12)


def test_measure_basis_and_equatorial(rng):
    bit, _, p = qcore.measure_computational(PureState.basis("0"), 0, rng)
    assert (bit, p) == (0, 1.0)
    eq = PureState(np.array([1, np.exp(1j * np.pi / 4)]) / np.sqrt(2))
    _, collapsed, p = qcore.measure_computational(eq, 0, rng)
    assert abs(p - 0.5) < 1e-12
    assert abs(abs(collapsed.amplitudes).max() - 1) < 1e-12


def test_zero_probability_branch_is_an_error():
    with pytest.raises(QuantumError):
        qcore.project(PureState.basis("0"), 0, 1)


def test_born_frequencies_within_five_sigma():
    rng = np.random.default_rng(7)
    psi = PureState.bloch(1.1, 0.4)
    p1 = qcore.born_probabilities(psi, 0)[1]
    n = 20_000
    ones = sum(qcore.measure_computational(psi, 0, rng)[0] for _ in range(n))
    assert abs(ones - n * p1) < 5 * np.sqrt(n * p1 * (1 - p1))


def test_partial_trace_of_product():
    a, b = PureState.bloch(0.3, 0.2), PureState.bloch(2.0, 1.0)
    joint = qcore.tensor(a, b)
    assert np.allclose(qcore.partial_trace(joint, [1]).matrix, b.to_density().matrix)
    assert np.allclose(qcore.partial_trace(joint, [0]).matrix, a.to_density().matrix)


# Pauli conjugation: every answer is checked against direct matrix products.


def _check_conjugation(gate, word):
    new, residual, phase = qcore.conjugate_pauli(gate, word)
    lhs = gate.matrix @ qcore.pauli_word_matrix(word)
    rhs = phase * qcore.pauli_word_matrix(new) @ residual.matrix @ gate.matrix
    assert np.allclose(lhs, rhs, atol=1e-12)
    return new, residual


@pytest.mark.parametrize("name", ["I", "X", "Y", "Z", "H", "P"])
def test_single_qubit_cliffords_exhaustive(name):
    for a, b in itertools.product((0, 1), repeat=2):
        _, residual = _check_conjugation(Gate.named(name, 0), [(a, b)])
        assert np.allclose(residual.matrix, np.eye(2))


@pytest.mark.parametrize("name", ["CNOT", "CZ"])
def test_two_qubit_cliffords_exhaustive(name):
    for bits in itertools.product((0, 1), repeat=4):
        word = [(bits[0], bits[1]), (bits[2], bits[3])]
        _, residual = _check_conjugation(Gate.named(name, 0, 1), word)
        assert np.allclose(residual.matrix, np.eye(4))


def test_hadamard_swaps_keys():
    new, _ = _check_conjugation(Gate.named("H", 0), [(1, 0)])
    assert new == ((0, 1),)


@pytest.mark.parametrize("a,b,residual", [(0, 0, "I"), (1, 0, "I"), (0, 1, "P"), (1, 1, "P")])
def test_t_needs_phase_fix_exactly_when_x_key_set(a, b, residual):
    new, res = _check_conjugation(Gate.named("T", 0), [(a, b)])
    assert res.name == residual
    assert new == ((a ^ b, b),)


def test_t_trivial_case_has_unit_phase():
    assert qcore.conjugate_pauli(Gate.named("T", 0), [(0, 0)])[2] == 1


def test_non_clifford_rejected():
    g = Gate("custom", np.diag([1, np.exp(0.3j)]), (0,))
    with pytest.raises(qcore.UnsupportedGateError):
        qcore.conjugate_pauli(g, [(0, 1)])


# Process matrices


def test_chi_examples():
    assert np.allclose(qcore.channel_chi(Channel.unitary(np.eye(2))).chi, np.diag([1, 0, 0, 0]))
    assert np.allclose(qcore.channel_chi(Channel.depolarizing()).chi, np.eye(4) / 4)
    assert np.allclose(qcore.channel_chi(Channel.unitary(qcore.Z)).chi, np.diag([0, 0, 0, 1]))


@given(st.floats(0, 1), angles, angles)
def test_chi_round_trip_reproduces_channel(weight, theta, phi):
    rot = np.array([[np.cos(theta / 2), -np.exp(-1j * phi) * np.sin(theta / 2)],
                    [np.exp(1j * phi) * np.sin(theta / 2), np.cos(theta / 2)]])
    chan = Channel((np.sqrt(weight) * rot, np.sqrt(1 - weight) * qcore.X))
    chi = qcore.channel_chi(chan)
    back = chi.to_channel()
    for psi in qcore.pauli_eigenstates().values():
        assert np.allclose(chan(psi.to_density()).matrix, back(psi.to_density()).matrix, atol=1e-10)
    assert abs(chi.trace - 1) < 1e-12
    assert np.allclose(ProcessMatrix.from_choi(chi.choi()).chi, chi.chi, atol=1e-12)
    assert np.allclose(ProcessMatrix.from_pauli_transfer(chi.pauli_transfer()).chi, chi.chi, atol=1e-12)
