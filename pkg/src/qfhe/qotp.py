"""Quantum one-time pad and the classical key algebra tracked during evaluation."""

from __future__ import annotations

import operator
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from . import qcore
from .qcore import DensityMatrix, PureState, QuantumError, UnsupportedGateError


@dataclass(frozen=True)
class PadKey:
    """Pauli pad ``Z^a X^b`` for one qubit."""

    a: int
    b: int

    def __post_init__(self):
        if self.a not in (0, 1) or self.b not in (0, 1):
            raise ValueError(f"pad bits must be 0/1, got ({self.a}, {self.b})")

    @classmethod
    def random(cls, rng: np.random.Generator) -> "PadKey":
        a, b = rng.integers(0, 2, size=2)
        return cls(int(a), int(b))

    def operator(self) -> np.ndarray:
        return qcore.pauli_word_matrix([(self.a, self.b)])


@dataclass(frozen=True)
class KeyExpr:
    """Affine expression over GF(2): ``constant ^ XOR(symbols)``."""

    constant: int = 0
    symbols: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "constant", int(self.constant) & 1)
        object.__setattr__(self, "symbols", frozenset(self.symbols))

    @classmethod
    def var(cls, name: str) -> "KeyExpr":
        return cls(0, frozenset({name}))

    @classmethod
    def const(cls, bit: int) -> "KeyExpr":
        return cls(bit)

    @property
    def coefficients(self) -> dict:
        return {s: 1 for s in self.symbols}

    def __xor__(self, other) -> "KeyExpr":
        if isinstance(other, int):
            return KeyExpr(self.constant ^ other, self.symbols)
        return KeyExpr(self.constant ^ other.constant, self.symbols ^ other.symbols)

    __rxor__ = __xor__

    def scale(self, bit: int) -> "KeyExpr":
        """Multiply by a known bit."""
        return self if bit else KeyExpr()

    def evaluate(self, assignment: Mapping[str, int]) -> int:
        value = self.constant
        for s in self.symbols:
            value ^= int(assignment[s])
        return value

    def substitute(self, known: Mapping[str, int]) -> "KeyExpr":
        """Fold the symbols whose values are known into the constant."""
        const = self.constant
        rest = set()
        for s in self.symbols:
            if s in known:
                const ^= int(known[s])
            else:
                rest.add(s)
        return KeyExpr(const, frozenset(rest))

    def __str__(self) -> str:
        terms = sorted(self.symbols)
        if self.constant or not terms:
            terms.append(str(self.constant))
        return " ^ ".join(terms)


def equatorial_state(phase_bit: int, mask_bit: int) -> PureState:
    """``Z^mask P^phase |+>``."""
    phi = np.pi * (phase_bit / 2 + mask_bit)
    return PureState(np.array([1, np.exp(1j * phi)]) / np.sqrt(2))


def _check_single(state: PureState) -> None:
    if state.num_qubits != 1:
        raise QuantumError(f"expected a single-qubit state, got {state.num_qubits} qubits")


def encrypt(plaintext: PureState, key: PadKey) -> PureState:
    """``Z^a X^b |phi>``."""
    _check_single(plaintext)
    return PureState.from_vector(key.operator() @ plaintext.amplitudes)


def decrypt(ciphertext: PureState, key: PadKey) -> PureState:
    """Invert the pad: ``X^b Z^a |psi>``."""
    _check_single(ciphertext)
    return PureState.from_vector(key.operator().conj().T @ ciphertext.amplitudes)


def pad_register(keys: Sequence[PadKey]) -> np.ndarray:
    return qcore.pauli_word_matrix([(k.a, k.b) for k in keys])


def all_keys():
    return [PadKey(a, b) for a in (0, 1) for b in (0, 1)]


def pad_twirl_check(plaintext: PureState) -> DensityMatrix:
    """Average of the padded projectors over the four keys."""
    _check_single(plaintext)
    rho = sum(encrypt(plaintext, k).to_density().matrix for k in all_keys()) / 4
    return DensityMatrix(rho)


# Key-slot rules: output slot -> input slots XORed together.  Slots are
# ordered (a_0, b_0, a_1, b_1) over the gate's targets.  Each entry is
# checked exhaustively against qcore.conjugate_pauli in the tests.
KEY_RULES = {
    "I": ((0,), (1,)),
    "X": ((0,), (1,)),
    "Y": ((0,), (1,)),
    "Z": ((0,), (1,)),
    "H": ((1,), (0,)),
    "P": ((0, 1), (1,)),
    "CNOT": ((0, 2), (1,), (2,), (3, 1)),
    "CZ": ((0, 3), (1,), (2, 1), (3,)),
}


def key_update(gate, keys: Sequence[tuple], xor: Callable = operator.xor) -> list:
    """Update pad keys for a Clifford gate.

    ``keys`` holds one ``(a, b)`` pair per gate target; entries may be
    KeyExprs, ints, or anything ``xor`` combines (encrypted bits).
    """
    name = gate if isinstance(gate, str) else gate.name
    if name not in KEY_RULES:
        raise UnsupportedGateError(f"no key update for non-Clifford gate {name!r}")
    rule = KEY_RULES[name]
    if len(rule) != 2 * len(keys):
        raise QuantumError(f"{name} acts on {len(rule) // 2} qubits, got {len(keys)} key pairs")
    flat = [k for pair in keys for k in pair]
    out = []
    for sources in rule:
        value = flat[sources[0]]
        for s in sources[1:]:
            value = xor(value, flat[s])
        out.append(value)
    return [(out[i], out[i + 1]) for i in range(0, len(out), 2)]
