"""Homomorphic evaluation of T-depth-one circuits on padded qubits.

Alice's side is :func:`prepare` and :func:`decrypt_output`; Bob's side is
:func:`evaluate`, which only ever sees the ciphertext state, the evaluation
key (ancilla states plus encrypted bits) and the circuit.

T-gadget convention
-------------------
After ``T`` the data wire holds ``Z^(a^b) X^b P^b T|phi>``.  The correction
``P^b`` is applied by phase kickback from an ancilla ``Z^m P^y |+>`` with
``y = b``: CNOT (data control, ancilla target), then a Z measurement of the
ancilla with outcome ``k``.  This maps the data wire by
``Z^(m ^ k*y) P^y``, so the keys become ``a <- a ^ b ^ m ^ k*b`` and ``b``
is unchanged.  Bob picks the ancilla from the symbolic form of ``b``:

* ``b == a_w (+c)``: use ``xi_a = Z^q P^a |+>``, mask ``q``;
* ``b == b_w (+c)``: use ``xi_b = Z^r P^b |+>``, mask ``r``;
* ``b == a_w ^ b_w (+c)``: phase-add ``xi_a`` and ``xi_b`` first.  The phases
  add as integers, ``P^(a+b) = Z^(a*b) P^(a^b)``, so the mask picks up the
  carry ``a*b``.  Alice encrypts the carry bit ``c_w = a_w * b_w`` in the
  evaluation key so that every key update stays an XOR.

A known constant ``c = 1`` is handled by Bob applying ``P`` to the ancilla,
which adds the ancilla's phase symbols to its mask.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import fhe, optics, qcore, qotp
from .fhe import CipherBit, FheKeyPair, FheParams
from .optics import NoiseParams, PostSelectionFailure
from .qcore import DensityMatrix, Gate, PureState, QuantumError
from .qotp import KeyExpr, PadKey

TRANSCRIPT_VERSION = 1


class UnsupportedCircuit(QuantumError):
    pass


class AncillaExhausted(QuantumError):
    pass


# --------------------------------------------------------------------------
# Circuits


@dataclass(frozen=True)
class Op:
    name: str
    wires: tuple = (0,)


@dataclass(frozen=True)
class CircuitDescription:
    """Gates in application order over ``num_wires`` data wires."""

    ops: tuple
    num_wires: int = 1
    wire_names: tuple = ()

    def __post_init__(self):
        ops = tuple(o if isinstance(o, Op) else Op(o[0], tuple(o[1])) for o in self.ops)
        object.__setattr__(self, "ops", ops)
        for o in ops:
            if o.name not in qcore.GATE_MATRICES:
                raise UnsupportedCircuit(f"unsupported gate {o.name!r}")
            if len(o.wires) != (2 if o.name in ("CNOT", "CZ") else 1):
                raise UnsupportedCircuit(f"{o.name} on wires {o.wires}")
            if any(not 0 <= w < self.num_wires for w in o.wires):
                raise UnsupportedCircuit(f"{o.name} on wires {o.wires} outside {self.num_wires} wires")
        if not self.wire_names:
            object.__setattr__(self, "wire_names", tuple(f"q{i}" for i in range(self.num_wires)))

    @classmethod
    def single(cls, names: Sequence[str]) -> "CircuitDescription":
        return cls(tuple(Op(n, (0,)) for n in names), 1)

    @property
    def t_count(self) -> int:
        return sum(o.name == "T" for o in self.ops)

    @property
    def t_depth(self) -> int:
        depth = [0] * self.num_wires
        for o in self.ops:
            level = max(depth[w] for w in o.wires) + (o.name == "T")
            for w in o.wires:
                depth[w] = level
        return max(depth, default=0)

    def unitary(self) -> np.ndarray:
        psi_dim = 2**self.num_wires
        U = np.eye(psi_dim, dtype=complex)
        for o in self.ops:
            g = Gate.named(o.name, *o.wires)
            cols = [qcore._apply_matrix(U[:, j], g.matrix, g.targets, self.num_wires) for j in range(psi_dim)]
            U = np.stack(cols, axis=1)
        return U


CANONICAL_CIRCUITS = {
    "t": CircuitDescription.single(["T"]),
    "th": CircuitDescription.single(["H", "T"]),
    "thp": CircuitDescription.single(["P", "H", "T"]),
}


# --------------------------------------------------------------------------
# Keys


def sym(kind: str, wire: int) -> str:
    return f"{kind}{wire}"


@dataclass(frozen=True, eq=False)
class AncillaPair:
    xi_a: PureState
    xi_b: PureState


@dataclass(frozen=True, eq=False)
class EvaluationKey:
    """Everything Bob receives besides the ciphertext.

    ``encrypted_bits`` maps ``a<w>, b<w>, q<w>, r<w>`` and the carry
    ``c<w> = a<w> * b<w>`` to ciphertexts.
    """

    ancillas: tuple
    encrypted_bits: dict

    def to_bytes(self) -> bytes:
        parts = []
        for pair in self.ancillas:
            parts.append(pair.xi_a.amplitudes.tobytes())
            parts.append(pair.xi_b.amplitudes.tobytes())
        for name in sorted(self.encrypted_bits):
            parts.append(name.encode() + self.encrypted_bits[name].to_bytes())
        return b"".join(parts)


@dataclass(frozen=True, eq=False)
class Secret:
    pads: tuple
    masks: tuple  # (q, r) per wire
    fhe_keys: FheKeyPair

    def assignment(self) -> dict:
        out = {}
        for w, (pad, (q, r)) in enumerate(zip(self.pads, self.masks)):
            out.update({sym("a", w): pad.a, sym("b", w): pad.b, sym("q", w): q,
                        sym("r", w): r, sym("c", w): pad.a & pad.b})
        return out

    def with_fhe_keys(self, keys: FheKeyPair) -> "Secret":
        return replace(self, fhe_keys=keys)


def prepare(plaintext: PureState, rng: np.random.Generator, *, fhe_params: FheParams | None = None,
            fhe_keys: FheKeyPair | None = None, hidden_bits: Sequence[tuple] | None = None):
    """Alice's encryption.  Returns ``(ciphertext, evaluation_key, secret)``.

    ``hidden_bits`` optionally fixes ``(a, b, q, r)`` per wire.
    """
    n = plaintext.num_qubits
    if fhe_keys is None:
        fhe_keys = fhe.keygen(fhe_params or FheParams.mock(), rng)
    pads, masks, ancillas, bits = [], [], [], {}
    for w in range(n):
        if hidden_bits is None:
            a, b, q, r = (int(x) for x in rng.integers(0, 2, size=4))
        else:
            a, b, q, r = hidden_bits[w]
        pads.append(PadKey(a, b))
        masks.append((q, r))
        ancillas.append(AncillaPair(qotp.equatorial_state(a, q), qotp.equatorial_state(b, r)))
        for kind, value in zip("abqrc", (a, b, q, r, a & b)):
            bits[sym(kind, w)] = fhe.enc(value, fhe_keys, rng)
    ciphertext = PureState.from_vector(qotp.pad_register(pads) @ plaintext.amplitudes)
    return ciphertext, EvaluationKey(tuple(ancillas), bits), Secret(tuple(pads), tuple(masks), fhe_keys)


# --------------------------------------------------------------------------
# Branch choices
#
# Every random event in an evaluation (measurement outcomes, heralds and
# post-selection) goes through ``choose(stage, probs)``.  ``probs`` lists the
# accepted branches; whatever is left over is post-selection failure.


class _ZeroBranch(Exception):
    pass


class RandomBranches:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def choose(self, stage: str, probs: Sequence[float]) -> int:
        u = self.rng.random()
        acc = 0.0
        for i, p in enumerate(probs):
            acc += p
            if u < acc:
                return i
        if abs(acc - 1.0) < 1e-9:
            return len(probs) - 1
        raise PostSelectionFailure(stage, acc)


class ScriptedBranches:
    """Follows a fixed list of choices, defaulting to 0 past its end, and
    accumulates the probability of the path taken."""

    def __init__(self, script: Sequence[int] = ()):
        self.script = tuple(script)
        self.path: list = []
        self.widths: list = []
        self.weight = 1.0

    def choose(self, stage: str, probs: Sequence[float]) -> int:
        pos = len(self.path)
        i = self.script[pos] if pos < len(self.script) else 0
        self.path.append(i)
        self.widths.append(len(probs))
        self.weight *= probs[i]
        if probs[i] <= 1e-15:
            raise _ZeroBranch
        return i


def enumerate_branches(run):
    """Depth-first over every accepted path of ``run(chooser)``.

    Yields ``(weight, result)``; weights of all accepted paths sum to the
    overall success probability.
    """
    pending = [()]
    while pending:
        script = pending.pop()
        chooser = ScriptedBranches(script)
        try:
            result = run(chooser)
        except _ZeroBranch:
            result = None
        for pos in range(len(script), len(chooser.path)):
            for alt in range(1, chooser.widths[pos]):
                pending.append(tuple(chooser.path[:pos]) + (alt,))
        if result is not None:
            yield chooser.weight, result


def as_chooser(rng):
    return rng if hasattr(rng, "choose") else RandomBranches(rng)


# --------------------------------------------------------------------------
# Backends


def _measure_z(state, qubit: int, chooser, stage: str):
    probs = qcore.born_probabilities(state, qubit)
    bit = chooser.choose(stage, list(probs))
    return bit, qcore.remove_qubit(qcore.project(state, qubit, bit), qubit)


class QubitBackend:
    name = "qubit"
    herald_is_additive = False

    def __init__(self):
        self.stages: list = []

    def load(self, state):
        return state

    def gate(self, state, name: str, wires: Sequence[int], chooser=None, stage: str = ""):
        return qcore.apply_gate(state, Gate.named(name, *wires))

    def measure(self, state, qubit: int, chooser, stage: str = "measure"):
        return _measure_z(state, qubit, chooser, stage)

    def phase_add(self, anc_a, anc_b, chooser):
        """CNOT xi_a -> xi_b and measure xi_b: phase becomes theta_a + (-1)^s theta_b."""
        joint = qcore.apply_gate(qcore.tensor(anc_a, anc_b), Gate.named("CNOT", 0, 1))
        return self.measure(joint, 1, chooser, "phase_add")


class OpticsBackend:
    """Post-selected photonic gates with partial distinguishability.

    Stage visibilities: the gadget CNOT of the a/b cases, the phase-add gate
    and data-data gates interfere photons from one down-conversion event
    (``visibility_intra``); the gadget CNOT that follows a phase-add
    interferes photons from different events (``visibility_inter``).
    """

    name = "optics"
    herald_is_additive = True

    def __init__(self, noise: NoiseParams | None = None):
        self.noise = noise or NoiseParams.ideal()
        self.stages: list = []

    def load(self, state):
        return state.to_density() if isinstance(state, PureState) else state

    def _visibility(self, stage: str) -> float:
        return self.noise.visibility_inter if stage.endswith("inter") else self.noise.visibility_intra

    def gate(self, state, name: str, wires: Sequence[int], chooser=None, stage: str = "ppbs_intra"):
        if name not in ("CNOT", "CZ"):
            return qcore.apply_gate(state, Gate.named(name, *wires))
        c, t = wires
        cz = optics.ppbs_cz(self._visibility(stage))
        if name == "CNOT":
            state = qcore.apply_gate(state, Gate.named("H", t))
        n = state.num_qubits
        out = sum(qcore.apply_operator(state.matrix, k, [c, t], n) for k in cz.operators())
        p = float(np.trace(out).real)
        self.stages.append(stage)
        chooser.choose(stage, [p])
        state = DensityMatrix.from_matrix(out)
        if name == "CNOT":
            state = qcore.apply_gate(state, Gate.named("H", t))
        return state

    def measure(self, state, qubit: int, chooser, stage: str = "measure"):
        return _measure_z(state, qubit, chooser, stage)

    def phase_add(self, anc_a, anc_b, chooser):
        rho = qcore.tensor(anc_a, anc_b).matrix
        cmap = optics.pbs_phase_add_map(self.noise.visibility_intra)
        self.stages.append("phase_add")
        branches = [cmap.outcome_weight(rho, h) for h in ("V", "H")]
        i = chooser.choose("phase_add", [p for _, p in branches])
        return optics.HERALD_BIT[("V", "H")[i]], DensityMatrix.from_matrix(branches[i][0])


def make_backend(backend, noise: NoiseParams | None = None):
    if isinstance(backend, (QubitBackend, OpticsBackend)):
        return backend
    if backend == "qubit":
        return QubitBackend()
    if backend == "optics":
        return OpticsBackend(noise)
    raise ValueError(f"unknown backend {backend!r}")


# --------------------------------------------------------------------------
# Transcript


@dataclass(frozen=True, eq=False)
class EvalTranscript:
    circuit: CircuitDescription
    backend: str
    measurement_bits: tuple  # (label, bit)
    final_encrypted_keys: tuple  # (CipherBit a, CipherBit b) per wire
    final_key_exprs: tuple  # (KeyExpr a, KeyExpr b) per wire, Bob's symbolic view
    output_state: object
    stages: tuple = ()
    seed: int | None = None

    def to_json(self) -> str:
        doc = {
            "version": TRANSCRIPT_VERSION,
            "backend": self.backend,
            "seed": self.seed,
            "gates": [[o.name, list(o.wires)] for o in self.circuit.ops],
            "num_wires": self.circuit.num_wires,
            "measurement_bits": [[label, bit] for label, bit in self.measurement_bits],
            "final_encrypted_keys": [[a.hex(), b.hex()] for a, b in self.final_encrypted_keys],
            "final_key_exprs": [[str(a), str(b)] for a, b in self.final_key_exprs],
            "stages": list(self.stages),
        }
        return json.dumps(doc, indent=2)

    @staticmethod
    def keys_from_json(text: str) -> list:
        doc = json.loads(text)
        if doc.get("version") != TRANSCRIPT_VERSION:
            raise ValueError(f"unsupported transcript version {doc.get('version')}")
        return [(CipherBit.fromhex(a), CipherBit.fromhex(b)) for a, b in doc["final_encrypted_keys"]]


# --------------------------------------------------------------------------
# Bob


class _KeyTracker:
    """Bob's per-wire pad keys, symbolic and encrypted, updated in lockstep."""

    def __init__(self, evk: EvaluationKey, n: int):
        self.bits = evk.encrypted_bits
        self.exprs = [[KeyExpr.var(sym("a", w)), KeyExpr.var(sym("b", w))] for w in range(n)]
        self.ciphers = [[self.bits[sym("a", w)], self.bits[sym("b", w)]] for w in range(n)]
        self.known: dict = {}

    def clifford(self, name: str, wires: Sequence[int]) -> None:
        pairs = [tuple(self.exprs[w]) for w in wires]
        new = qotp.key_update(name, pairs)
        cipher_pairs = [tuple(self.ciphers[w]) for w in wires]
        new_c = qotp.key_update(name, cipher_pairs, xor=fhe.hxor)
        for w, e, c in zip(wires, new, new_c):
            self.exprs[w] = list(e)
            self.ciphers[w] = list(c)

    def xor_into(self, wire: int, slot: int, expr: KeyExpr) -> None:
        """key[wire][slot] ^= expr, with expr over evaluation-key symbols and
        measurement symbols."""
        self.exprs[wire][slot] = self.exprs[wire][slot] ^ expr
        cipher = self.ciphers[wire][slot]
        const = expr.constant
        for s in sorted(expr.symbols):
            if s in self.known:
                const ^= self.known[s]
            else:
                cipher = fhe.hxor(cipher, self.bits[s])
        self.ciphers[wire][slot] = fhe.hxor_const(cipher, const)

    def xor_key(self, wire: int, slot: int, src_slot: int) -> None:
        """key[wire][slot] ^= key[wire][src_slot] (running keys)."""
        self.exprs[wire][slot] = self.exprs[wire][slot] ^ self.exprs[wire][src_slot]
        self.ciphers[wire][slot] = fhe.hxor(self.ciphers[wire][slot], self.ciphers[wire][src_slot])


def t_case(x_key: KeyExpr, wire: int) -> tuple:
    """Classify the X key before a T gate: ``("a"|"b"|"a^b", constant)``."""
    a, b = sym("a", wire), sym("b", wire)
    cases = {frozenset({a}): "a", frozenset({b}): "b", frozenset({a, b}): "a^b"}
    case = cases.get(x_key.symbols)
    if case is None:
        raise UnsupportedCircuit(
            f"T on wire {wire} needs correction key {x_key}, outside that wire's ancilla pair"
        )
    return case, x_key.constant


def plan_t_cases(circuit: CircuitDescription) -> list:
    """Static (circuit-only) view of which ancilla case each T gate uses."""
    exprs = [[KeyExpr.var(sym("a", w)), KeyExpr.var(sym("b", w))] for w in range(circuit.num_wires)]
    cases = []
    for o in circuit.ops:
        if o.name == "T":
            w = o.wires[0]
            case, _ = t_case(exprs[w][1], w)
            cases.append((w, case))
            exprs[w][0] = exprs[w][0] ^ exprs[w][1]
        else:
            new = qotp.key_update(o.name, [tuple(exprs[w]) for w in o.wires])
            for w, e in zip(o.wires, new):
                exprs[w] = list(e)
    return cases


def t_gadget(state, wire: int, case: str, ancillas: AncillaPair, rng, *, backend=None,
             constant: int = 0, label: str = "t0"):
    """Apply T on ``wire`` and kick back the ``P`` correction from the ancillas.

    Returns ``(state, measurement_bits, a_key_delta)`` where
    ``measurement_bits`` is a list of ``(label, bit)`` and the delta is the
    expression XORed into the wire's Z key on top of the T rule ``a ^= b``,
    excluding the ``k * b`` term (see :func:`evaluate`).  The mask part is
    over evaluation-key symbols; the herald of an optical phase-add enters as
    the symbol ``m:<label>.phase_add``.
    """
    backend = make_backend(backend or "qubit")
    chooser = as_chooser(rng)
    bits = []
    state = backend.gate(state, "T", (wire,))
    a, b, q, r, c = (sym(k, wire) for k in "abqrc")
    if case == "a":
        anc, mask, phase = ancillas.xi_a, KeyExpr.var(q), KeyExpr.var(a)
        stage = "ppbs_intra"
    elif case == "b":
        anc, mask, phase = ancillas.xi_b, KeyExpr.var(r), KeyExpr.var(b)
        stage = "ppbs_intra"
    elif case == "a^b":
        s, anc = backend.phase_add(backend.load(ancillas.xi_a), backend.load(ancillas.xi_b), chooser)
        bits.append((f"{label}.phase_add", s))
        mask = KeyExpr.var(q) ^ KeyExpr.var(r) ^ KeyExpr.var(c)
        if backend.herald_is_additive:
            mask = mask ^ KeyExpr.var(f"m:{label}.phase_add")
        else:
            mask = mask ^ KeyExpr.var(b).scale(s)
        phase = KeyExpr.var(a) ^ KeyExpr.var(b)
        stage = "ppbs_inter"
    else:
        raise UnsupportedCircuit(f"unknown T case {case!r}")
    if constant:
        anc = backend.gate(backend.load(anc), "P", (0,))
        mask = mask ^ phase
    n = state.num_qubits
    joint = qcore.tensor(state, backend.load(anc))
    joint = backend.gate(joint, "CNOT", (wire, n), chooser, stage=stage)
    k, state = backend.measure(joint, n, chooser, f"{label}.gadget")
    bits.append((f"{label}.gadget", k))
    return state, bits, mask


def evaluate(ciphertext: PureState, evk: EvaluationKey, circuit: CircuitDescription,
             backend="qubit", rng: np.random.Generator | None = None,
             noise: NoiseParams | None = None, seed: int | None = None) -> EvalTranscript:
    """Bob's homomorphic evaluation.

    Raises :class:`PostSelectionFailure` when an optical stage fails; the
    caller decides whether to retry with fresh pads.
    """
    if rng is None:
        rng = np.random.default_rng(seed)
    if circuit.t_depth > 1:
        raise UnsupportedCircuit(f"T-depth {circuit.t_depth} > 1 is not supported")
    n = circuit.num_wires
    if ciphertext.num_qubits != n:
        raise QuantumError(f"circuit has {n} wires, ciphertext {ciphertext.num_qubits} qubits")
    be = make_backend(backend, noise)
    be.stages = []
    chooser = as_chooser(rng)
    keys = _KeyTracker(evk, n)
    used = set()
    measurements = []
    state = be.load(ciphertext)
    t_index = 0
    for op in circuit.ops:
        if op.name != "T":
            state = be.gate(state, op.name, op.wires, chooser)
            keys.clifford(op.name, op.wires)
            continue
        w = op.wires[0]
        if w in used or w >= len(evk.ancillas):
            raise AncillaExhausted(f"no unused ancilla pair for T on wire {w}")
        used.add(w)
        x_key = keys.exprs[w][1].substitute(keys.known)
        case, constant = t_case(x_key, w)
        label = f"t{t_index}"
        t_index += 1
        state, bits, mask = t_gadget(state, w, case, evk.ancillas[w], chooser, backend=be,
                                     constant=constant, label=label)
        for lbl, bit in bits:
            measurements.append((lbl, bit))
            keys.known[f"m:{lbl}"] = bit
        keys.xor_key(w, 0, 1)  # T: a ^= b
        keys.xor_into(w, 0, mask)
        if dict(bits)[f"{label}.gadget"]:
            keys.xor_key(w, 0, 1)
    return EvalTranscript(
        circuit=circuit,
        backend=be.name,
        measurement_bits=tuple(measurements),
        final_encrypted_keys=tuple((c[0], c[1]) for c in keys.ciphers),
        final_key_exprs=tuple((e[0], e[1]) for e in keys.exprs),
        output_state=state,
        stages=tuple(be.stages),
        seed=seed,
    )


# --------------------------------------------------------------------------
# Alice again


def decrypt_output(transcript: EvalTranscript, secret: Secret, fhe_keys: FheKeyPair | None = None):
    """Decrypt Bob's returned keys and undo the final pad.

    Passing a different ``fhe_keys`` simulates decryption with the wrong key.
    """
    keys = fhe_keys or secret.fhe_keys
    pads = [PadKey(fhe.dec(ca, keys), fhe.dec(cb, keys)) for ca, cb in transcript.final_encrypted_keys]
    inverse = qotp.pad_register(pads).conj().T
    state = transcript.output_state
    if isinstance(state, PureState):
        return PureState.from_vector(inverse @ state.amplitudes)
    return DensityMatrix.from_matrix(inverse @ state.matrix @ inverse.conj().T)


# --------------------------------------------------------------------------
# Full pipeline


@dataclass
class QfhePipeline:
    """prepare -> evaluate -> decrypt, retrying failed post-selections with
    fresh pads.  ``discarded`` counts abandoned attempts."""

    circuit: CircuitDescription
    backend: str = "qubit"
    noise: NoiseParams | None = None
    fhe_params: FheParams = field(default_factory=FheParams.mock)
    wrong_key: bool = False
    max_attempts: int = 100_000
    discarded: int = 0
    successes: int = 0

    def __call__(self, plaintext: PureState, rng: np.random.Generator):
        for _ in range(self.max_attempts):
            ct, evk, secret = prepare(plaintext, rng, fhe_params=self.fhe_params)
            try:
                tr = evaluate(ct, evk, self.circuit, self.backend, rng, self.noise)
            except PostSelectionFailure:
                self.discarded += 1
                continue
            self.successes += 1
            keys = fhe.keygen(self.fhe_params, rng) if self.wrong_key else None
            return decrypt_output(tr, secret, keys)
        raise RuntimeError(f"no successful post-selection in {self.max_attempts} attempts")

    def stage_profile(self) -> optics.BackgroundProfile:
        return circuit_profile(self.circuit)


def circuit_profile(circuit: CircuitDescription) -> optics.BackgroundProfile:
    """Optical stages used by a circuit, for the background model."""
    p, inter = 1.0, 0
    for o in circuit.ops:
        if o.name in ("CNOT", "CZ"):
            p /= 9
    for _, case in plan_t_cases(circuit):
        if case == "a^b":
            p *= 0.5 / 9
            inter += 1
        else:
            p /= 9
    return optics.BackgroundProfile(p, inter)


def exact_output(plaintext: PureState, circuit: CircuitDescription, backend="qubit",
                 noise: NoiseParams | None = None, fhe_params: FheParams | None = None,
                 seed: int = 0, wrong_key: bool = False):
    """Post-selected output of the full pipeline averaged over every hidden
    bit assignment and every accepted measurement branch.

    Returns ``(DensityMatrix, success_probability)``.  Failed post-selections
    are retried with fresh pads, so each pad assignment is weighted by its own
    success probability.  With ``wrong_key`` the returned keys are decrypted
    under an unrelated key pair.
    """
    n = circuit.num_wires
    rng = np.random.default_rng(seed)
    keys = fhe.keygen(fhe_params or FheParams.mock(), rng)
    other = fhe.keygen(fhe_params or FheParams.mock(), rng) if wrong_key else None
    dim = 2**n
    total = np.zeros((dim, dim), dtype=complex)
    success = 0.0
    assignments = list(itertools.product(itertools.product((0, 1), repeat=4), repeat=n))
    for hidden in assignments:
        ct, evk, secret = prepare(plaintext, rng, fhe_keys=keys, hidden_bits=hidden)

        def run(chooser):
            return evaluate(ct, evk, circuit, make_backend(backend, noise), chooser)

        for weight, tr in enumerate_branches(run):
            out = decrypt_output(tr, secret, other)
            mat = out.to_density().matrix if isinstance(out, PureState) else out.matrix
            total += weight * mat
            success += weight
    if success <= 0:
        raise PostSelectionFailure("pipeline", 0.0)
    return DensityMatrix.from_matrix(total / success), success / len(assignments)
