import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qfhe import qcore, qotp
from qfhe.qcore import Gate, PureState
from qfhe.qotp import KeyExpr, PadKey

bits = st.integers(0, 1)


def test_pad_examples():
    plus = PureState.bloch(np.pi / 2, 0)
    assert qotp.encrypt(PureState.basis("0"), PadKey(0, 1)).equals_up_to_phase(PureState.basis("1"))
    minus = qotp.decrypt(qotp.encrypt(plus, PadKey(0, 0)), PadKey(1, 0))
    assert abs(np.vdot(minus.amplitudes, plus.amplitudes)) < 1e-12


def test_pad_bits_validated():
    with pytest.raises(ValueError):
        PadKey(2, 0)


@given(st.floats(0, np.pi), st.floats(0, 2 * np.pi), bits, bits)
def test_decrypt_inverts_encrypt(theta, phi, a, b):
    psi = PureState.bloch(theta, phi)
    back = qotp.decrypt(qotp.encrypt(psi, PadKey(a, b)), PadKey(a, b))
    assert np.allclose(back.amplitudes, psi.amplitudes)


def test_twirl_is_maximally_mixed_for_haar_states():
    rng = np.random.default_rng(3)
    for _ in range(20):
        rho = qotp.pad_twirl_check(qcore.haar_random_state(rng)).matrix
        assert np.allclose(rho, np.eye(2) / 2, atol=1e-12)


@pytest.mark.parametrize("name", sorted(qotp.KEY_RULES))
def test_key_rules_agree_with_pauli_conjugation(name):
    arity = len(qotp.KEY_RULES[name]) // 2
    wires = tuple(range(arity))
    gate = Gate.named(name, *wires)
    for flat in itertools.product((0, 1), repeat=2 * arity):
        keys = [(flat[2 * i], flat[2 * i + 1]) for i in range(arity)]
        expected, _, _ = qcore.conjugate_pauli(gate, keys)
        assert tuple(qotp.key_update(gate, keys)) == tuple(expected)


def test_key_update_refuses_t():
    with pytest.raises(qcore.UnsupportedGateError):
        qotp.key_update("T", [(0, 1)])


def test_key_update_on_symbols():
    a, b = KeyExpr.var("a"), KeyExpr.var("b")
    ((na, nb),) = qotp.key_update("P", [(a, b)])
    assert na == a ^ b and nb == b


symbols = st.frozensets(st.sampled_from("abcdef"), max_size=6)
exprs = st.builds(KeyExpr, bits, symbols)


@given(exprs, exprs, exprs)
def test_xor_is_an_abelian_group(x, y, z):
    assert (x ^ y) ^ z == x ^ (y ^ z)
    assert x ^ y == y ^ x
    assert x ^ x == KeyExpr()
    assert x ^ KeyExpr() == x


@given(exprs, exprs, st.fixed_dictionaries({c: bits for c in "abcdef"}))
def test_evaluate_is_a_homomorphism(x, y, values):
    assert (x ^ y).evaluate(values) == x.evaluate(values) ^ y.evaluate(values)
    assert x.substitute(values).evaluate({}) == x.evaluate(values)


def test_scale_and_str():
    x = KeyExpr.var("q") ^ 1
    assert x.scale(0) == KeyExpr() and x.scale(1) == x
    assert str(x) == "q ^ 1"
    assert str(KeyExpr()) == "0"


@pytest.mark.parametrize("phase,mask", list(itertools.product((0, 1), repeat=2)))
def test_equatorial_state(phase, mask):
    expected = np.array([1, (1j) ** phase * (-1) ** mask]) / np.sqrt(2)
    assert np.allclose(qotp.equatorial_state(phase, mask).amplitudes, expected)
