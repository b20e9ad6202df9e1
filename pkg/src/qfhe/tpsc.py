"""Two-party secure overlap estimation on top of the padded evaluator.

Alice holds many copies of ``rho_a`` and Bob holds copies of ``rho_b``.  Alice
pads every copy and sends the copies together with encrypted pad bits.  Bob
runs a comparator circuit against his own copy, folds his two outcome bits
into the encrypted keys with homomorphic XOR and returns the pairs in a
random order.  Alice decrypts and averages the products, which estimates
``P(1, 1) = (1 - D2) / 2`` with ``D2 = Tr(rho_b^(1/2) rho_a rho_b^(1/2))``.

Comparator: CNOT (Alice's qubit controls), then H on Alice's qubit, then
both qubits are measured.  Under the pad ``Z^a X^b`` on Alice's qubit the
first outcome is flipped by ``a`` and the second by ``b``, so the true joint
(1, 1) indicator is ``(k1 ^ a) * (k2 ^ b)``.

The parties are separate objects that only exchange frozen message objects.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import fhe, optics, qcore
from .fhe import FheParams
from .optics import NoiseParams
from .qcore import DensityMatrix, PureState, QuantumError

_CNOT_THEN_H = np.kron(qcore.H, qcore.I2) @ qcore.CNOT


class ProtocolError(QuantumError):
    pass


def _density(state) -> np.ndarray:
    if isinstance(state, PureState):
        return state.to_density().matrix
    if isinstance(state, DensityMatrix):
        return state.matrix
    return DensityMatrix.from_matrix(state).matrix


def comparator_probabilities(alpha, beta) -> np.ndarray:
    """2x2 array of ``P(k1, k2)`` for the comparator on ``alpha (x) beta``."""
    rho = _CNOT_THEN_H @ np.kron(_density(alpha), _density(beta)) @ _CNOT_THEN_H.conj().T
    return np.clip(np.real(np.diag(rho)), 0.0, None).reshape(2, 2)


def comparator(alpha, beta, rng: np.random.Generator) -> tuple:
    probs = comparator_probabilities(alpha, beta).ravel()
    idx = int(rng.choice(4, p=probs / probs.sum()))
    return idx >> 1, idx & 1


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(mat)
    if np.min(w) < -1e-9:
        raise ProtocolError(f"matrix is not positive semidefinite (eigenvalue {np.min(w):.3g})")
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.conj().T


def true_overlap(rho_a, rho_b) -> float:
    """``Tr(rho_b^(1/2) rho_a rho_b^(1/2))``; ``|<a|b>|^2`` for pure states."""
    a = (_density(rho_a) + _density(rho_a).conj().T) / 2
    b = (_density(rho_b) + _density(rho_b).conj().T) / 2
    _psd_sqrt(a)
    root = _psd_sqrt(b)
    return float(np.trace(root @ a @ root).real)


def sample_pure(rho, rng: np.random.Generator) -> PureState:
    """One member of the eigen-ensemble of ``rho``, drawn with its weight."""
    if isinstance(rho, PureState):
        return rho
    w, v = np.linalg.eigh(_density(rho))
    w = np.clip(w, 0, None)
    return PureState.from_vector(v[:, rng.choice(len(w), p=w / w.sum())])


# --------------------------------------------------------------------------
# Messages


@dataclass(frozen=True)
class ProtocolConfig:
    n: int = 960
    shuffle: bool = True
    backend: str = "qubit"
    alice_seed: int = 0
    bob_seed: int = 1
    wrong_key: bool = False
    fhe_params: FheParams = field(default_factory=FheParams.mock)
    noise: NoiseParams = field(default_factory=NoiseParams.ideal)

    def __post_init__(self):
        if self.n < 1:
            raise ProtocolError("n must be at least 1")
        if self.backend not in ("qubit", "optics"):
            raise ProtocolError(f"unknown backend {self.backend!r}")


@dataclass(frozen=True, eq=False)
class EncryptedCopies:
    """Alice -> Bob: padded copies with their encrypted pad bits."""

    indices: tuple
    ciphertexts: tuple
    enc_a: tuple
    enc_b: tuple


@dataclass(frozen=True, eq=False)
class Failures:
    """Bob -> Alice: copies whose post-selection failed and need a fresh pad."""

    indices: tuple


@dataclass(frozen=True, eq=False)
class ReturnedKeys:
    """Bob -> Alice: updated key pairs in Bob's chosen order."""

    pairs: tuple


@dataclass(frozen=True)
class RoundResult:
    outcomes: tuple  # (k1, k2) per copy, Bob's view
    permutation: tuple  # returned slot j holds copy permutation[j]


# --------------------------------------------------------------------------
# Parties


class Alice:
    def __init__(self, state, config: ProtocolConfig, probes: list | None = None):
        """``probes`` optionally fixes the state of each copy (leakage probe)."""
        self.state = state
        self.config = config
        self.rng = np.random.default_rng(config.alice_seed)
        self.keys = fhe.keygen(config.fhe_params, self.rng)
        self.probes = probes
        self._pads: dict = {}

    def _copy_state(self, i: int):
        if self.probes is not None:
            return self.probes[i]
        return sample_pure(self.state, self.rng)

    def encrypt_copies(self, indices=None) -> EncryptedCopies:
        indices = tuple(range(self.config.n)) if indices is None else tuple(indices)
        cts, ea, eb = [], [], []
        for i in indices:
            a, b = (int(x) for x in self.rng.integers(0, 2, size=2))
            self._pads[i] = (a, b)
            psi = self._copy_state(i)
            cts.append(PureState.from_vector(qcore.pauli_word_matrix([(a, b)]) @ psi.amplitudes))
            ea.append(fhe.enc(a, self.keys, self.rng))
            eb.append(fhe.enc(b, self.keys, self.rng))
        return EncryptedCopies(indices, tuple(cts), tuple(ea), tuple(eb))

    def decrypt_products(self, msg: ReturnedKeys) -> np.ndarray:
        keys = fhe.keygen(self.config.fhe_params, self.rng) if self.config.wrong_key else self.keys
        return np.array([fhe.dec(x, keys) * fhe.dec(y, keys) for x, y in msg.pairs], dtype=int)

    def estimate(self, msg: ReturnedKeys) -> float:
        """Estimate of ``P(1, 1)``: integer sum of mod-2 products over n."""
        return float(self.decrypt_products(msg).sum() / len(msg.pairs))


class Bob:
    def __init__(self, state, config: ProtocolConfig):
        self.state = state
        self.config = config
        self.rng = np.random.default_rng(config.bob_seed)
        self._results: dict = {}
        self.outcomes: dict = {}
        self.discarded = 0

    def _measure(self, ct: PureState):
        own = sample_pure(self.state, self.rng)
        if self.config.backend == "qubit":
            return comparator(ct, own, self.rng)
        # CNOT as H_t . post-selected CZ . H_t, then H on the control
        rho = np.kron(_density(ct), _density(own))
        hh = np.kron(qcore.I2, qcore.H)
        rho = hh @ rho @ hh
        out, p = optics.ppbs_cz(self.config.noise.visibility_intra).outcome_weight(rho)
        if self.rng.random() >= p:
            return None
        rho = out / p
        u = np.kron(qcore.H, qcore.H)
        rho = u @ rho @ u.conj().T
        probs = np.clip(np.real(np.diag(rho)), 0, None)
        idx = int(self.rng.choice(4, p=probs / probs.sum()))
        return idx >> 1, idx & 1

    def process(self, msg: EncryptedCopies) -> Failures:
        failed = []
        for i, ct, ea, eb in zip(msg.indices, msg.ciphertexts, msg.enc_a, msg.enc_b):
            k = self._measure(ct)
            if k is None:
                failed.append(i)
                self.discarded += 1
                continue
            self.outcomes[i] = k
            self._results[i] = (fhe.hxor_const(ea, k[0]), fhe.hxor_const(eb, k[1]))
        return Failures(tuple(failed))

    def finish(self) -> tuple:
        order = np.arange(len(self._results))
        if self.config.shuffle:
            order = self.rng.permutation(order)
        perm = tuple(int(i) for i in order)
        pairs = tuple(self._results[i] for i in perm)
        result = RoundResult(tuple(self.outcomes[i] for i in range(len(self._results))), perm)
        return ReturnedKeys(pairs), result


@dataclass(frozen=True, eq=False)
class ProtocolRun:
    estimate: float  # Alice's estimate of P(1, 1)
    products: tuple  # Alice's decrypted product per returned slot
    alice_view: ReturnedKeys
    bob_view: RoundResult
    messages: tuple
    discarded: int
    true_overlap: float

    @property
    def overlap_estimate(self) -> float:
        """``2 * P(1, 1)``, which tracks ``1 - D2``."""
        return 2 * self.estimate

    def transcript_json(self) -> str:
        """Messages in order as Alice could log them; the permutation is withheld."""
        doc = {"version": 1, "messages": []}
        for m in self.messages:
            if isinstance(m, EncryptedCopies):
                doc["messages"].append({"from": "alice", "type": "copies", "indices": list(m.indices),
                                        "enc_a": [c.hex() for c in m.enc_a],
                                        "enc_b": [c.hex() for c in m.enc_b]})
            elif isinstance(m, Failures):
                doc["messages"].append({"from": "bob", "type": "failures", "indices": list(m.indices)})
            else:
                doc["messages"].append({"from": "bob", "type": "keys",
                                        "pairs": [[x.hex(), y.hex()] for x, y in m.pairs]})
        return json.dumps(doc, indent=2)


def run_protocol(alice_state, bob_state, config: ProtocolConfig, probes: list | None = None,
                 max_rounds: int = 1000) -> ProtocolRun:
    alice = Alice(alice_state, config, probes)
    bob = Bob(bob_state, config)
    messages = []
    msg = alice.encrypt_copies()
    for _ in range(max_rounds):
        messages.append(msg)
        failures = bob.process(msg)
        if not failures.indices:
            break
        messages.append(failures)
        msg = alice.encrypt_copies(failures.indices)
    else:
        raise ProtocolError(f"copies still failing after {max_rounds} rounds")
    returned, bob_view = bob.finish()
    messages.append(returned)
    ref_a = alice_state if probes is None else probes[0]
    products = alice.decrypt_products(returned)
    return ProtocolRun(float(products.mean()), tuple(int(x) for x in products), returned, bob_view,
                       tuple(messages), bob.discarded, true_overlap(ref_a, bob_state))


# --------------------------------------------------------------------------
# Sweeps and the shuffle probe


SWEEP_COLUMNS = ["true_d2", "one_minus_d2", "estimate", "n", "backend", "wrong_key"]


def default_sweep(points: int = 20) -> list:
    """Alice at |0>, Bob's state swept from |0> to |1> through the x-z plane."""
    return [(PureState.basis("0"), PureState.bloch(theta, 0.0)) for theta in np.linspace(0, np.pi, points)]


def run_sweep(pairs, config: ProtocolConfig) -> list:
    rows = []
    for j, (alpha, beta) in enumerate(pairs):
        cfg = ProtocolConfig(config.n, config.shuffle, config.backend, config.alice_seed + 2 * j,
                             config.bob_seed + 2 * j, config.wrong_key, config.fhe_params, config.noise)
        run = run_protocol(alpha, beta, cfg)
        rows.append({"true_d2": run.true_overlap, "one_minus_d2": 1 - run.true_overlap,
                     "estimate": run.overlap_estimate, "n": cfg.n, "backend": cfg.backend,
                     "wrong_key": cfg.wrong_key})
    return rows


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, SWEEP_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


@dataclass(frozen=True)
class LeakageReport:
    shuffle: bool
    probe_labels: tuple
    probe_overlaps: tuple  # per-probe D2 estimates
    bloch_estimate: tuple
    bloch_true: tuple
    chi2_pvalue: float

    @property
    def bloch_error(self) -> float:
        return float(np.linalg.norm(np.subtract(self.bloch_estimate, self.bloch_true)))


def leakage_probe(bob_state, shuffle: bool, copies_per_probe: int = 2000, seed: int = 0) -> LeakageReport:
    """Alice sends blocks of the six Pauli eigenstates and tries to read off
    Bob's Bloch vector from the per-block averages.

    With ``D2 = (1 + r_probe . r_bob) / 2`` opposite probes give
    ``r_bob[k] = D2(+k) - D2(-k)``.
    """
    eig = qcore.pauli_eigenstates()
    labels = ("+x", "-x", "+y", "-y", "+z", "-z")
    probes = [eig[lbl] for lbl in labels for _ in range(copies_per_probe)]
    config = ProtocolConfig(n=len(probes), shuffle=shuffle, alice_seed=seed, bob_seed=seed + 1)
    run = run_protocol(probes[0], bob_state, config, probes=probes)
    # Alice groups returned slots by the copy she put there; after a shuffle
    # that grouping no longer follows the probes.
    blocks = np.asarray(run.products).reshape(len(labels), copies_per_probe)
    d2 = 1 - 2 * blocks.mean(axis=1)
    bloch = tuple(float(d2[2 * k] - d2[2 * k + 1]) for k in range(3))
    table = np.stack([blocks.sum(axis=1), copies_per_probe - blocks.sum(axis=1)], axis=1)
    pvalue = float(stats.chi2_contingency(table)[1]) if table.min(axis=0).max() > 0 else 1.0
    rho_b = DensityMatrix.from_matrix(_density(bob_state))
    return LeakageReport(shuffle, labels, tuple(float(x) for x in d2), bloch,
                         tuple(float(x) for x in rho_b.bloch_vector()), pvalue)
