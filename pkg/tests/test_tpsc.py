import itertools
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qfhe import qcore, tpsc
from qfhe.qcore import DensityMatrix, PureState
from qfhe.tpsc import ProtocolConfig, ProtocolError

ZERO, ONE = PureState.basis("0"), PureState.basis("1")
PLUS = PureState.bloch(np.pi / 2, 0)
MIXED = DensityMatrix.maximally_mixed(1)


def brute_force_p11(alpha, beta):
    """CNOT then H on qubit 0, written out gate by gate on the 4-vector."""
    psi = np.kron(alpha.amplitudes, beta.amplitudes)
    cnot = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]])
    h0 = np.array([[1, 0, 1, 0], [0, 1, 0, 1], [1, 0, -1, 0], [0, 1, 0, -1]]) / np.sqrt(2)
    return abs((h0 @ cnot @ psi)[3]) ** 2


@pytest.mark.parametrize("alpha,beta,expected", [(PLUS, PLUS, 0.0), (ZERO, ONE, 0.5), (ZERO, PLUS, 0.25)])
def test_comparator_examples(alpha, beta, expected):
    assert tpsc.comparator_probabilities(alpha, beta)[1, 1] == pytest.approx(expected, abs=1e-12)


def test_anti_coincidence_formula_on_a_grid():
    grid = [PureState.bloch(t, p) for t in np.linspace(0, np.pi, 4) for p in np.linspace(0, 2 * np.pi, 3, endpoint=False)]
    grid = grid[:10]
    for alpha, beta in itertools.product(grid, grid):
        d2 = abs(np.vdot(alpha.amplitudes, beta.amplitudes)) ** 2
        assert abs(brute_force_p11(alpha, beta) - (1 - d2) / 2) < 1e-10
        assert abs(tpsc.comparator_probabilities(alpha, beta)[1, 1] - (1 - d2) / 2) < 1e-10


def test_comparator_sampling_matches_probabilities():
    rng = np.random.default_rng(0)
    n = 20_000
    ones = sum(tpsc.comparator(ZERO, PLUS, rng) == (1, 1) for _ in range(n))
    assert abs(ones / n - 0.25) < 5 * np.sqrt(0.25 * 0.75 / n)


@pytest.mark.parametrize("theta_a,theta_b", [(0.0, 0.0), (0.4, 2.1), (1.3, 0.7), (np.pi, 0.2)])
def test_pad_pairing_recovers_the_plaintext_outcome(theta_a, theta_b):
    """Padded outcomes XOR (a, b) are distributed exactly as unpadded ones,
    checked for every pad and every outcome pair."""
    alpha, beta = PureState.bloch(theta_a, 0.9), PureState.bloch(theta_b, -0.4)
    plain = tpsc.comparator_probabilities(alpha, beta)
    for a, b in itertools.product((0, 1), repeat=2):
        padded = PureState.from_vector(qcore.pauli_word_matrix([(a, b)]) @ alpha.amplitudes)
        probs = tpsc.comparator_probabilities(padded, beta)
        for k1, k2 in itertools.product((0, 1), repeat=2):
            assert probs[k1, k2] == pytest.approx(plain[k1 ^ a, k2 ^ b], abs=1e-12)


def test_true_overlap_examples():
    assert tpsc.true_overlap(PLUS, PLUS) == pytest.approx(1)
    assert tpsc.true_overlap(ZERO, PLUS) == pytest.approx(0.5)
    assert tpsc.true_overlap(ZERO, MIXED) == pytest.approx(0.5)
    with pytest.raises(qcore.QuantumError):
        tpsc.true_overlap(np.diag([1.5, -0.5]), ZERO)


@given(st.floats(0, np.pi), st.floats(0, 2 * np.pi), st.floats(0, np.pi), st.floats(0, 2 * np.pi))
def test_mixed_overlap_reduces_to_pure(t1, p1, t2, p2):
    a, b = PureState.bloch(t1, p1), PureState.bloch(t2, p2)
    assert tpsc.true_overlap(a.to_density(), b.to_density()) == pytest.approx(
        abs(np.vdot(a.amplitudes, b.amplitudes)) ** 2, abs=1e-9)


@pytest.mark.parametrize("alice,bob,expected,tol", [
    (ZERO, ZERO, 0.0, 0.01), (ZERO, ONE, 1.0, 0.03), (PLUS, MIXED, 0.5, 0.03),
])
def test_protocol_examples(alice, bob, expected, tol):
    run = tpsc.run_protocol(alice, bob, ProtocolConfig(n=10_000))
    assert abs(run.overlap_estimate - expected) <= tol


def test_decrypted_products_match_bobs_plaintext_indicator():
    cfg = ProtocolConfig(n=300, shuffle=True)
    alice = tpsc.Alice(PLUS, cfg)
    bob = tpsc.Bob(PureState.bloch(1.0, 0.5), cfg)
    bob.process(alice.encrypt_copies())
    returned, view = bob.finish()
    products = alice.decrypt_products(returned)
    assert sorted(view.permutation) == list(range(cfg.n))
    for slot, copy in enumerate(view.permutation):
        a, b = alice._pads[copy]
        k1, k2 = view.outcomes[copy]
        assert products[slot] == (k1 ^ a) & (k2 ^ b)


def test_shuffle_leaves_the_sum_unchanged():
    base = dict(n=500, alice_seed=4, bob_seed=5)
    on = tpsc.run_protocol(ZERO, PLUS, ProtocolConfig(shuffle=True, **base))
    off = tpsc.run_protocol(ZERO, PLUS, ProtocolConfig(shuffle=False, **base))
    assert on.estimate == off.estimate
    assert sorted(on.products) == sorted(off.products)
    assert on.bob_view.permutation != off.bob_view.permutation


def test_config_validated():
    with pytest.raises(ProtocolError):
        ProtocolConfig(n=0)
    with pytest.raises(ProtocolError):
        ProtocolConfig(backend="ion-trap")


def test_optics_backend_retries_failed_copies():
    run = tpsc.run_protocol(ZERO, ONE, ProtocolConfig(n=200, backend="optics"))
    assert run.discarded > 0
    assert len(run.products) == 200
    kinds = [type(m).__name__ for m in run.messages]
    assert kinds[0] == "EncryptedCopies" and kinds[-1] == "ReturnedKeys" and "Failures" in kinds
    assert abs(run.overlap_estimate - 1) < 0.15


def test_transcript_withholds_the_permutation():
    run = tpsc.run_protocol(ZERO, PLUS, ProtocolConfig(n=20))
    doc = json.loads(run.transcript_json())
    assert [m["type"] for m in doc["messages"]] == ["copies", "keys"]
    assert "permutation" not in run.transcript_json()
    assert len(doc["messages"][1]["pairs"]) == 20


def test_wrong_key_gives_a_flat_half():
    run = tpsc.run_protocol(ZERO, ZERO, ProtocolConfig(n=4000, wrong_key=True))
    assert abs(run.overlap_estimate - 0.5) < 0.06


def test_sweep_csv_columns():
    rows = tpsc.run_sweep(tpsc.default_sweep(3), ProtocolConfig(n=50))
    text = tpsc.sweep_csv(rows)
    assert text.splitlines()[0].split(",") == tpsc.SWEEP_COLUMNS
    assert len(text.splitlines()) == 4
    assert [r["true_d2"] for r in rows] == pytest.approx([1, 0.5, 0], abs=1e-12)


def test_single_probe_is_unaffected_by_shuffle():
    eig = qcore.pauli_eigenstates()
    probes = [eig["+x"]] * 400
    on = tpsc.run_protocol(probes[0], ZERO, ProtocolConfig(n=400, shuffle=True), probes=probes)
    off = tpsc.run_protocol(probes[0], ZERO, ProtocolConfig(n=400, shuffle=False), probes=probes)
    assert on.estimate == off.estimate


def test_leakage_probe_without_shuffle_reveals_bobs_state():
    report = tpsc.leakage_probe(ZERO, shuffle=False)
    assert report.bloch_true == pytest.approx((0, 0, 1))
    assert report.bloch_error < 0.1


def test_leakage_probe_with_shuffle_is_flat():
    report = tpsc.leakage_probe(ZERO, shuffle=True)
    assert report.chi2_pvalue > 0.01
    pooled = np.mean(report.probe_overlaps)
    sigma = 2 * np.sqrt(0.25 * 0.75 / 2000)
    assert all(abs(d - pooled) < 3 * sigma for d in report.probe_overlaps)


@pytest.mark.slow
def test_estimator_is_unbiased_on_a_grid():
    thetas = np.linspace(0, np.pi, 5)
    for i, (ta, tb) in enumerate(itertools.product(thetas, thetas)):
        alice, bob = PureState.bloch(ta, 0.3), PureState.bloch(tb, 1.7)
        run = tpsc.run_protocol(alice, bob, ProtocolConfig(n=10_000, alice_seed=100 + 2 * i, bob_seed=101 + 2 * i))
        p = (1 - run.true_overlap) / 2
        sigma = 2 * np.sqrt(max(p * (1 - p), 1e-12) / 10_000)
        assert abs(run.overlap_estimate - (1 - run.true_overlap)) <= max(4 * sigma, 1e-12)
