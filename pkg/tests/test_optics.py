import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qfhe import evaluator, optics, qcore, tomo
from qfhe.optics import FockState, NoiseParams, OpticalElement, OpticsError

SPATIAL = ("a", "b", "c")
MODES = [(s, p, 0) for s in SPATIAL for p in optics.POLS]


def random_element(rng):
    kind = rng.choice(["BS", "PBS", "PPBS", "HWP", "QWP", "phase"])
    if kind in ("BS", "PBS", "PPBS"):
        pair = tuple(rng.choice(SPATIAL, 2, replace=False))
        params = {"BS": (("T", rng.uniform()),), "PBS": (), "PPBS": (("T_H", rng.uniform()), ("T_V", rng.uniform()))}
        return OpticalElement(kind, pair, params[kind])
    mode = (str(rng.choice(SPATIAL)),)
    if kind == "phase":
        return OpticalElement(kind, mode, (("phi", rng.uniform(0, 2 * np.pi)),), pol=str(rng.choice(optics.POLS)))
    return OpticalElement(kind, mode, (("angle_deg", rng.uniform(0, 180)),))


def test_pbs_routes_by_polarization():
    pbs = OpticalElement("PBS", ("a", "b"))
    h = optics.apply_element(FockState.from_photons([("a", "H", 0)]), pbs)
    v = optics.apply_element(FockState.from_photons([("a", "V", 0)]), pbs)
    assert h.probability([("a", "H", 0)]) == pytest.approx(1)
    assert v.probability([("b", "V", 0)]) == pytest.approx(1)


def test_hong_ou_mandel_dip():
    state = FockState.from_photons([("a", "H", 0), ("b", "H", 0)])
    out = optics.apply_element(state, OpticalElement("BS", ("a", "b"), (("T", 0.5),)))
    assert abs(out.amplitudes.get((("a", "H", 0), ("b", "H", 0)), 0)) < 1e-15
    assert out.probability([("a", "H", 0), ("a", "H", 0)]) == pytest.approx(0.5)


def test_photon_limit_enforced():
    with pytest.raises(OpticsError):
        FockState.from_photons([("a", "H", 0)] * 5)


def test_unknown_element_and_bad_modes_rejected():
    with pytest.raises(OpticsError):
        OpticalElement("mirror", ("a",))
    with pytest.raises(OpticsError):
        OpticalElement("BS", ("a",))


def test_elements_are_unitary_on_extended_modes():
    rng = np.random.default_rng(0)
    modes = MODES + [(f"loss:{s}", p, 0) for s in SPATIAL for p in optics.POLS]
    for _ in range(30):
        U = optics.transfer_matrix([random_element(rng)], modes)
        assert np.allclose(U.conj().T @ U, np.eye(len(modes)), atol=1e-12)
    for el in optics.ppbs_cz_elements():
        U = optics.transfer_matrix([el], modes)
        assert np.allclose(U.conj().T @ U, np.eye(len(modes)), atol=1e-12)


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1))
def test_norm_preserved_before_post_selection(seed):
    rng = np.random.default_rng(seed)
    photons = [MODES[i] for i in rng.integers(0, len(MODES), size=rng.integers(1, 5))]
    state = optics.run_circuit(FockState.from_photons(photons), [random_element(rng) for _ in range(4)])
    assert abs(state.norm() - 1) < 1e-12


def test_fock_amplitudes_match_permanents():
    rng = np.random.default_rng(1)
    for _ in range(50):
        elements = [random_element(rng) for _ in range(3)]
        U = optics.transfer_matrix(elements, MODES)
        inputs = sorted(rng.choice(len(MODES), 2, replace=True).tolist())
        out = optics.run_circuit(FockState.from_photons([MODES[i] for i in inputs]), elements)
        for outputs in itertools.combinations_with_replacement(range(len(MODES)), 2):
            key = tuple(sorted(MODES[i] for i in outputs))
            expected = optics.permanent_amplitude(U, inputs, list(outputs))
            assert abs(out.amplitudes.get(key, 0) - expected) < 1e-12


def test_ppbs_cz_is_a_scaled_cz():
    cmap = optics.ppbs_cz(1.0)
    (k,) = cmap.operators()
    assert np.allclose(k, qcore.CZ / 3, atol=1e-12)
    assert k[3, 3] == pytest.approx(-1 / 3)  # |VV>
    assert k[0, 0] == pytest.approx(1 / 3)  # |HH>
    rng = np.random.default_rng(2)
    for idx in range(4):
        rho = np.zeros((4, 4))
        rho[idx, idx] = 1
        assert cmap.success_probability(rho) == pytest.approx(1 / 9, abs=1e-12)
    psi = qcore.haar_random_state(rng, 2).amplitudes
    out, p = cmap.outcome_weight(np.outer(psi, psi.conj()))
    target = qcore.CZ @ psi
    assert np.real(target.conj() @ out @ target) / p == pytest.approx(1, abs=1e-10)


def test_ppbs_cz_degrades_with_distinguishability():
    rho = np.full((4, 4), 0.25)
    target = qcore.CZ @ np.full(4, 0.5)
    fid = []
    for v in (1.0, 0.9, 0.5):
        out, p = optics.ppbs_cz(v).outcome_weight(rho)
        fid.append(np.real(target.conj() @ out @ target) / p)
    assert fid[0] > fid[1] > fid[2]


def test_phase_add_examples():
    v_click = {o.k1: o for o in optics.pbs_phase_add(0, 0)}[optics.HERALD_BIT["V"]]
    plus = qcore.PureState.bloch(np.pi / 2, 0)
    assert v_click.state.fidelity_to_pure(plus) == pytest.approx(1, abs=1e-12)
    for o in optics.pbs_phase_add(np.pi / 2, np.pi / 2):
        minus_or_plus = qcore.PureState.bloch(np.pi / 2, np.pi * (1 + o.k1))
        assert o.state.fidelity_to_pure(minus_or_plus) == pytest.approx(1, abs=1e-12)


def _phase_of(rho):
    return np.angle(rho.matrix[1, 0])


def test_phase_add_on_random_pairs():
    rng = np.random.default_rng(3)
    for alpha, beta in rng.uniform(0, 2 * np.pi, size=(100, 2)):
        outcomes = optics.pbs_phase_add(alpha, beta)
        assert [o.probability for o in outcomes] == pytest.approx([0.25, 0.25], abs=1e-12)
        for o in outcomes:
            # residual Z on the H herald; phase defined mod pi
            diff = (_phase_of(o.state) - (alpha + beta)) % np.pi
            assert min(diff, np.pi - diff) < 1e-10
            expected = qcore.PureState.bloch(np.pi / 2, alpha + beta + np.pi * o.k1)
            assert o.state.fidelity_to_pure(expected) == pytest.approx(1, abs=1e-10)


def test_hom_coincidence_interpolates():
    assert optics.hom_coincidence(1.0) == pytest.approx(0, abs=1e-15)
    assert optics.hom_coincidence(0.0) == pytest.approx(0.5)
    assert optics.hom_coincidence(0.97) == pytest.approx(0.015, abs=1e-12)
    assert optics.hom_contrast(0.9) == pytest.approx(0.9)


@given(st.floats(0, 1))
def test_hom_is_linear_in_visibility(v):
    assert optics.hom_coincidence(v) == pytest.approx((1 - v) / 2, abs=1e-12)


def test_noise_params_validated():
    with pytest.raises(OpticsError):
        NoiseParams(visibility_intra=1.2)
    with pytest.raises(OpticsError):
        NoiseParams(accidental_rate=-0.1)
    cal = NoiseParams.calibrated()
    assert (cal.visibility_intra, cal.visibility_inter) == (0.97, 0.9)
    assert cal.double_pair_rate >= 0 and cal.accidental_rate >= 0


def test_background_examples():
    counts = np.array([[40.0, 10.0, 30.0, 20.0]])
    assert not optics.background_model(counts, NoiseParams()).any()
    acc = optics.background_model(counts, NoiseParams(accidental_rate=0.1))
    assert np.allclose(acc, acc[0, 0]) and acc[0, 0] > 0
    profile = optics.BackgroundProfile(1 / 18, 1)
    one = optics.background_model(counts, NoiseParams(double_pair_rate=0.1), profile, True)["double_pair"]
    two = optics.background_model(counts, NoiseParams(double_pair_rate=0.2), profile, True)["double_pair"]
    assert np.allclose(two, 2 * one)


def test_background_subtract():
    raw = np.array([5.0, 3.0, 0.0])
    assert np.array_equal(optics.background_subtract(raw, 0), raw)
    assert not optics.background_subtract(raw, raw).any()
    assert (optics.background_subtract(raw, [9, 9, 9]) >= 0).all()
    with pytest.raises(OpticsError):
        optics.background_subtract([-1.0], 0)


@pytest.mark.parametrize("name,builder", [("ppbs_cz", optics.ppbs_cz_elements), ("phase_add", optics.phase_add_elements)])
def test_packaged_circuits_match_code(name, builder, tmp_path):
    assert optics.packaged_circuit(name) == builder()
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"name": name, "elements": [e.to_dict() for e in builder()]}))
    assert optics.load_circuit(path) == builder()


def _channel_fidelity(name, noise):
    circuit = evaluator.CANONICAL_CIRCUITS[name]
    plan = tomo.TomoPlan()
    outputs = {p: evaluator.exact_output(s, circuit, "optics", noise)[0] for p, s in qcore.pauli_eigenstates().items()}
    counts = tomo.TomoCounts(plan, {
        (p, b): np.array([q, 1 - q]) for p, b in plan.settings for q in [tomo.plus_probability(outputs[p], b)]
    })
    return tomo.average_fidelity(tomo.reconstruct(counts), circuit.unitary())


def test_cascaded_circuit_suffers_more_from_inter_pair_visibility():
    noise = NoiseParams(optics.VISIBILITY_INTRA, optics.VISIBILITY_INTER)
    assert _channel_fidelity("thp", noise) < _channel_fidelity("th", noise)
    assert _channel_fidelity("thp", NoiseParams()) == pytest.approx(1, abs=1e-10)
