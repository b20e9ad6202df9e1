"""Exact small-register state engine.

Qubit ordering: qubit 0 is the leftmost tensor factor, so the basis index of
``|q0 q1 ... q_{n-1}>`` is ``q0 * 2**(n-1) + ... + q_{n-1}``.  Every module in
the package relies on this convention.

States are immutable dataclasses wrapping numpy arrays.  Randomness always
comes from an explicit ``numpy.random.Generator``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence, Union

import numpy as np

MAX_QUBITS = 4
NORM_TOL = 1e-12
STATE_TOL = 1e-10

RandomStream = np.random.Generator


class QuantumError(ValueError):
    """Structured error for invalid states, gates and registers."""


class UnsupportedGateError(QuantumError):
    pass


# --------------------------------------------------------------------------
# Fixed matrices

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
P = np.array([[1, 0], [0, 1j]], dtype=complex)
T = np.array([[1, 0], [0, np.exp(1j * np.pi / 4)]], dtype=complex)
CNOT = np.array(
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
)
CZ = np.diag([1, 1, 1, -1]).astype(complex)

PAULIS = (I2, X, Y, Z)

GATE_MATRICES = {
    "I": I2,
    "X": X,
    "Y": Y,
    "Z": Z,
    "H": H,
    "P": P,
    "T": T,
    "CNOT": CNOT,
    "CZ": CZ,
}
CLIFFORD_NAMES = frozenset({"I", "X", "Y", "Z", "H", "P", "CNOT", "CZ"})


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=complex)
    arr.setflags(write=False)
    return arr


def _num_qubits(dim: int) -> int:
    n = int(dim).bit_length() - 1
    if dim < 2 or 2**n != dim:
        raise QuantumError(f"dimension {dim} is not a power of two")
    if n > MAX_QUBITS:
        raise QuantumError(f"{n} qubits exceeds the {MAX_QUBITS}-qubit register limit")
    return n


# --------------------------------------------------------------------------
# Domain types


@dataclass(frozen=True, eq=False)
class PureState:
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = _freeze(np.ravel(self.amplitudes))
        _num_qubits(amps.size)
        norm = np.linalg.norm(amps)
        if abs(norm - 1.0) > NORM_TOL:
            raise QuantumError(f"state norm {norm!r} differs from 1")
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def from_vector(cls, vec, normalize: bool = True) -> "PureState":
        vec = np.asarray(vec, dtype=complex).ravel()
        if normalize:
            norm = np.linalg.norm(vec)
            if norm == 0:
                raise QuantumError("cannot normalize the zero vector")
            vec = vec / norm
        return cls(vec)

    @classmethod
    def basis(cls, bits: str) -> "PureState":
        vec = np.zeros(2 ** len(bits), dtype=complex)
        vec[int(bits, 2)] = 1.0
        return cls(vec)

    @classmethod
    def bloch(cls, theta: float, phi: float) -> "PureState":
        return cls(np.array([np.cos(theta / 2), np.exp(1j * phi) * np.sin(theta / 2)]))

    @property
    def num_qubits(self) -> int:
        return _num_qubits(self.amplitudes.size)

    def to_density(self) -> "DensityMatrix":
        return DensityMatrix(np.outer(self.amplitudes, self.amplitudes.conj()))

    def overlap(self, other: "PureState") -> complex:
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def equals_up_to_phase(self, other: "PureState", tol: float = STATE_TOL) -> bool:
        if self.amplitudes.size != other.amplitudes.size:
            return False
        return abs(abs(self.overlap(other)) - 1.0) < tol


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    matrix: np.ndarray

    def __post_init__(self):
        mat = _freeze(self.matrix)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise QuantumError(f"density matrix must be square, got {mat.shape}")
        _num_qubits(mat.shape[0])
        if np.max(np.abs(mat - mat.conj().T)) > NORM_TOL:
            raise QuantumError("density matrix is not Hermitian")
        tr = np.trace(mat).real
        if abs(tr - 1.0) > NORM_TOL:
            raise QuantumError(f"density matrix trace {tr!r} differs from 1")
        if np.linalg.eigvalsh(mat)[0] < -1e-10:
            raise QuantumError("density matrix has a negative eigenvalue")
        object.__setattr__(self, "matrix", mat)

    @classmethod
    def from_matrix(cls, mat, normalize: bool = True) -> "DensityMatrix":
        mat = np.asarray(mat, dtype=complex)
        mat = (mat + mat.conj().T) / 2
        if normalize:
            mat = mat / np.trace(mat).real
        return cls(mat)

    @classmethod
    def maximally_mixed(cls, num_qubits: int = 1) -> "DensityMatrix":
        d = 2**num_qubits
        return cls(np.eye(d, dtype=complex) / d)

    @property
    def num_qubits(self) -> int:
        return _num_qubits(self.matrix.shape[0])

    def fidelity_to_pure(self, psi: PureState) -> float:
        return float(np.real(np.vdot(psi.amplitudes, self.matrix @ psi.amplitudes)))

    def bloch_vector(self) -> np.ndarray:
        if self.num_qubits != 1:
            raise QuantumError("Bloch vector is defined for one qubit only")
        return np.array([np.trace(self.matrix @ s).real for s in (X, Y, Z)])


State = Union[PureState, DensityMatrix]


@dataclass(frozen=True, eq=False)
class Gate:
    name: str
    matrix: np.ndarray
    targets: tuple

    def __post_init__(self):
        mat = _freeze(self.matrix)
        targets = tuple(int(t) for t in self.targets)
        if mat.shape != (2 ** len(targets),) * 2:
            raise QuantumError(
                f"gate {self.name} matrix {mat.shape} does not fit targets {targets}"
            )
        if len(set(targets)) != len(targets):
            raise QuantumError(f"repeated target in {targets}")
        if np.max(np.abs(mat.conj().T @ mat - np.eye(mat.shape[0]))) > NORM_TOL:
            raise QuantumError(f"gate {self.name} is not unitary")
        object.__setattr__(self, "matrix", mat)
        object.__setattr__(self, "targets", targets)

    @classmethod
    def named(cls, name: str, *targets: int) -> "Gate":
        if name not in GATE_MATRICES:
            raise UnsupportedGateError(f"unknown gate {name!r}")
        return _named_gate(name, tuple(int(t) for t in targets))

    def on(self, *targets: int) -> "Gate":
        return Gate(self.name, self.matrix, targets)

    @property
    def is_clifford(self) -> bool:
        return self.name in CLIFFORD_NAMES


@lru_cache(maxsize=256)
def _named_gate(name: str, targets: tuple) -> Gate:
    return Gate(name, GATE_MATRICES[name], targets)


@dataclass(frozen=True, eq=False)
class Channel:
    """Kraus operators; ``trace_preserving`` is False for post-selected maps."""

    kraus_ops: tuple
    trace_preserving: bool = True

    def __post_init__(self):
        ops = tuple(_freeze(k) for k in self.kraus_ops)
        if not ops:
            raise QuantumError("channel needs at least one Kraus operator")
        dim_in = ops[0].shape[1]
        if any(k.shape[1] != dim_in for k in ops):
            raise QuantumError("Kraus operators disagree on input dimension")
        total = sum(k.conj().T @ k for k in ops)
        excess = np.linalg.eigvalsh(total - np.eye(dim_in))
        if self.trace_preserving and np.max(np.abs(excess)) > 1e-10:
            raise QuantumError("channel is not trace preserving")
        if excess[-1] > 1e-10:
            raise QuantumError("Kraus operators sum above the identity")
        object.__setattr__(self, "kraus_ops", ops)

    @classmethod
    def unitary(cls, u) -> "Channel":
        return cls((np.asarray(u, dtype=complex),))

    @classmethod
    def depolarizing(cls, p: float = 1.0) -> "Channel":
        """``rho -> (1-p) rho + p I/2``."""
        ops = [np.sqrt(1 - 3 * p / 4) * I2] + [np.sqrt(p / 4) * s for s in (X, Y, Z)]
        return cls(tuple(ops))

    def __call__(self, rho: DensityMatrix) -> DensityMatrix:
        out = sum(k @ rho.matrix @ k.conj().T for k in self.kraus_ops)
        return DensityMatrix.from_matrix(out, normalize=not self.trace_preserving)


@dataclass(frozen=True, eq=False)
class ProcessMatrix:
    """Single-qubit chi matrix in the Pauli basis (I, X, Y, Z).

    ``E(rho) = sum_mn chi[m, n] sigma_m rho sigma_n``.
    """

    chi: np.ndarray

    def __post_init__(self):
        chi = _freeze(self.chi)
        if chi.shape != (4, 4):
            raise QuantumError(f"chi must be 4x4, got {chi.shape}")
        object.__setattr__(self, "chi", chi)

    @property
    def trace(self) -> float:
        return float(np.trace(self.chi).real)

    def kraus_coefficients(self) -> np.ndarray:
        """Rows ``M[j]`` with ``K_j = sum_k M[j, k] sigma_k``."""
        evals, evecs = np.linalg.eigh((self.chi + self.chi.conj().T) / 2)
        keep = evals > 1e-14
        return (evecs[:, keep] * np.sqrt(evals[keep])).T

    def to_channel(self) -> Channel:
        ops = tuple(
            sum(c * s for c, s in zip(row, PAULIS)) for row in self.kraus_coefficients()
        )
        return Channel(ops, trace_preserving=abs(self.trace - 1) < 1e-10)

    def apply(self, rho: np.ndarray) -> np.ndarray:
        return sum(
            self.chi[m, n] * PAULIS[m] @ rho @ PAULIS[n]
            for m in range(4)
            for n in range(4)
        )

    def pauli_transfer(self) -> np.ndarray:
        """Real 4x4 ``R[i, j] = Tr(sigma_i E(sigma_j)) / 2``."""
        R = np.empty((4, 4))
        for j, sj in enumerate(PAULIS):
            out = self.apply(sj)
            for i, si in enumerate(PAULIS):
                R[i, j] = np.trace(si @ out).real / 2
        return R

    def choi(self) -> np.ndarray:
        vecs = _choi_basis()
        return vecs @ self.chi @ vecs.conj().T

    @classmethod
    def from_choi(cls, choi: np.ndarray) -> "ProcessMatrix":
        vecs = _choi_basis()
        return cls(vecs.conj().T @ choi @ vecs / 4)

    @classmethod
    def from_pauli_transfer(cls, R: np.ndarray) -> "ProcessMatrix":
        # Choi = sum_ab |a><b| (x) E(|a><b|) with E read off the transfer matrix
        choi = np.zeros((4, 4), dtype=complex)
        for a in range(2):
            for b in range(2):
                e = np.zeros((2, 2), dtype=complex)
                e[a, b] = 1
                coeffs = np.array([np.trace(s @ e) / 2 for s in PAULIS])
                out_coeffs = R @ coeffs
                out = sum(c * s for c, s in zip(out_coeffs, PAULIS))
                choi += np.kron(e, out)
        return cls.from_choi(choi)

    @classmethod
    def from_unitary(cls, u) -> "ProcessMatrix":
        return channel_chi(Channel.unitary(u))


def _choi_basis() -> np.ndarray:
    # columns (I (x) sigma_m) |Omega>, |Omega> = |00> + |11>
    omega = np.array([1, 0, 0, 1], dtype=complex)
    return np.stack([np.kron(I2, s) @ omega for s in PAULIS], axis=1)


# --------------------------------------------------------------------------
# Register helpers


def _apply_matrix(vec: np.ndarray, mat: np.ndarray, targets: Sequence[int], n: int) -> np.ndarray:
    k = len(targets)
    psi = vec.reshape((2,) * n)
    psi = np.moveaxis(psi, targets, range(k))
    shape = psi.shape
    psi = (mat @ psi.reshape(2**k, -1)).reshape(shape)
    return np.moveaxis(psi, range(k), targets).reshape(-1)


def apply_operator(rho: np.ndarray, op: np.ndarray, targets: Sequence[int], n: int) -> np.ndarray:
    """``op rho op^dagger`` with ``op`` acting on ``targets`` (raw arrays)."""
    k = len(targets)
    t = rho.reshape((2,) * (2 * n))
    rows = list(targets)
    cols = [n + q for q in targets]
    t = np.moveaxis(t, rows, range(k))
    shape = t.shape
    t = (op @ t.reshape(2**k, -1)).reshape(shape)
    t = np.moveaxis(t, range(k), rows)
    t = np.moveaxis(t, cols, range(k))
    shape = t.shape
    t = (op.conj() @ t.reshape(2**k, -1)).reshape(shape)
    t = np.moveaxis(t, range(k), cols)
    return t.reshape(2**n, 2**n)


def _check_targets(targets: Sequence[int], n: int) -> None:
    for t in targets:
        if not 0 <= t < n:
            raise QuantumError(f"target qubit {t} outside a {n}-qubit register")


def apply_gate(state: State, gate: Gate) -> State:
    """Return ``U|psi>`` or ``U rho U^dagger``."""
    n = state.num_qubits
    _check_targets(gate.targets, n)
    if isinstance(state, PureState):
        out = _apply_matrix(state.amplitudes, gate.matrix, gate.targets, n)
        return PureState.from_vector(out)
    out = apply_operator(state.matrix, gate.matrix, gate.targets, n)
    return DensityMatrix.from_matrix(out)


def apply_channel(state: State, channel: Channel, targets: Sequence[int]) -> DensityMatrix:
    """Apply a same-dimension channel on ``targets``; post-selected maps are renormalized."""
    if isinstance(state, PureState):
        state = state.to_density()
    n = state.num_qubits
    _check_targets(targets, n)
    out = sum(apply_operator(state.matrix, k, targets, n) for k in channel.kraus_ops)
    tr = np.trace(out).real
    if tr <= 0:
        raise QuantumError("channel annihilated the state")
    return DensityMatrix.from_matrix(out)


def tensor(*states: State) -> State:
    if all(isinstance(s, PureState) for s in states):
        vec = states[0].amplitudes
        for s in states[1:]:
            vec = np.kron(vec, s.amplitudes)
        return PureState.from_vector(vec)
    mats = [s.to_density().matrix if isinstance(s, PureState) else s.matrix for s in states]
    out = mats[0]
    for m in mats[1:]:
        out = np.kron(out, m)
    return DensityMatrix.from_matrix(out)


def partial_trace(state: State, keep: Sequence[int]) -> DensityMatrix:
    rho = state.to_density() if isinstance(state, PureState) else state
    n = rho.num_qubits
    keep = list(keep)
    drop = [q for q in range(n) if q not in keep]
    t = rho.matrix.reshape((2,) * (2 * n))
    t = np.transpose(t, keep + drop + [n + q for q in keep] + [n + q for q in drop])
    k = len(keep)
    t = t.reshape(2**k, 2 ** (n - k), 2**k, 2 ** (n - k))
    return DensityMatrix.from_matrix(np.einsum("ajbj->ab", t))


def remove_qubit(state: State, qubit: int) -> State:
    """Drop a qubit that is in a computational basis state (e.g. just measured)."""
    n = state.num_qubits
    _check_targets([qubit], n)
    if n == 1:
        raise QuantumError("cannot remove the only qubit")
    if isinstance(state, PureState):
        t = np.moveaxis(state.amplitudes.reshape((2,) * n), qubit, 0).reshape(2, -1)
        weights = np.linalg.norm(t, axis=1)
        if min(weights) > STATE_TOL:
            raise QuantumError(f"qubit {qubit} is not in a basis state")
        return PureState.from_vector(t[int(np.argmax(weights))])
    keep = [q for q in range(n) if q != qubit]
    return partial_trace(state, keep)


def born_probabilities(state: State, qubit: int) -> np.ndarray:
    n = state.num_qubits
    _check_targets([qubit], n)
    if isinstance(state, PureState):
        t = np.moveaxis(state.amplitudes.reshape((2,) * n), qubit, 0).reshape(2, -1)
        probs = np.sum(np.abs(t) ** 2, axis=1)
    else:
        diag = np.real(np.diag(state.matrix)).reshape((2,) * n)
        probs = np.moveaxis(diag, qubit, 0).reshape(2, -1).sum(axis=1)
    probs = np.clip(probs, 0.0, None)
    return probs / probs.sum()


def project(state: State, qubit: int, outcome: int) -> State:
    """Collapse onto ``outcome`` and renormalize; a zero-norm branch is an error."""
    n = state.num_qubits
    if isinstance(state, PureState):
        t = np.moveaxis(state.amplitudes.reshape((2,) * n), qubit, 0).copy()
        t[1 - outcome] = 0
        vec = np.moveaxis(t, 0, qubit).reshape(-1)
        norm = np.linalg.norm(vec)
        if norm < 1e-12:
            raise QuantumError(f"outcome {outcome} on qubit {qubit} has zero probability")
        return PureState(vec / norm)
    proj = np.diag([1.0 - outcome, float(outcome)]).astype(complex)
    out = apply_operator(state.matrix, proj, [qubit], n)
    tr = np.trace(out).real
    if tr < 1e-12:
        raise QuantumError(f"outcome {outcome} on qubit {qubit} has zero probability")
    return DensityMatrix.from_matrix(out)


def measure_computational(state: State, qubit: int, rng: RandomStream):
    """Sample a Z-basis measurement. Returns ``(outcome, collapsed, probability)``."""
    probs = born_probabilities(state, qubit)
    outcome = int(rng.random() >= probs[0])
    return outcome, project(state, qubit, outcome), float(probs[outcome])


# --------------------------------------------------------------------------
# Pauli conjugation


def pauli_word_matrix(word: Sequence[tuple]) -> np.ndarray:
    """``(Z^a X^b)`` on each qubit, tensored in qubit order."""
    out = np.ones((1, 1), dtype=complex)
    for a, b in word:
        out = np.kron(out, np.linalg.matrix_power(Z, a) @ np.linalg.matrix_power(X, b))
    return out


def _proportional_phase(m: np.ndarray, tol: float = 1e-10):
    """Return c if ``m == c * I`` with ``|c| = 1``, else None."""
    c = m[0, 0]
    if abs(abs(c) - 1) > tol:
        return None
    if np.max(np.abs(m - c * np.eye(m.shape[0]))) > tol:
        return None
    return complex(c)


def conjugate_pauli(gate: Gate, pauli_word: Sequence[tuple]):
    """Push a Pauli pad through a gate.

    Finds ``(word', residual, phase)`` with
    ``G Z^a X^b = phase * Z^a' X^b' * residual * G``.  The residual is the
    identity for Cliffords; for T it is P exactly when the X key is set.
    """
    word = tuple((int(a), int(b)) for a, b in pauli_word)
    k = len(gate.targets)
    if len(word) != k:
        raise QuantumError(f"pad word has {len(word)} entries for a {k}-qubit gate")
    if gate.name == "T" or (gate.name == "custom" and k == 1 and _is_t_like(gate.matrix)):
        residuals = [("I", I2), ("P", P)]
    elif gate.is_clifford:
        residuals = [("I", np.eye(2**k))]
    else:
        raise UnsupportedGateError(f"gate {gate.name!r} is neither Clifford nor T")
    g = gate.matrix
    conj = g @ pauli_word_matrix(word) @ g.conj().T
    for rname, r in residuals:
        r_inv = r.conj().T
        for cand in itertools.product((0, 1), repeat=2 * k):
            out = tuple(zip(cand[0::2], cand[1::2]))
            w = pauli_word_matrix(out)
            phase = _proportional_phase(w.conj().T @ conj @ r_inv)
            if phase is not None:
                residual = Gate(rname, r, gate.targets) if k == 1 else Gate("I", r, gate.targets)
                return out, residual, phase
    raise UnsupportedGateError(f"no Pauli-frame rule for gate {gate.name!r}")


def _is_t_like(m: np.ndarray) -> bool:
    return np.allclose(m, T, atol=1e-12)


# --------------------------------------------------------------------------
# Process matrices


def channel_chi(channel: Channel) -> ProcessMatrix:
    """chi[m, n] = sum_k c_km c_kn^* with ``K_k = sum_m c_km sigma_m``."""
    if channel.kraus_ops[0].shape != (2, 2):
        raise UnsupportedGateError("chi matrices are implemented for single-qubit channels")
    coeffs = np.array(
        [[np.trace(s.conj().T @ k) / 2 for s in PAULIS] for k in channel.kraus_ops]
    )
    return ProcessMatrix(coeffs.T @ coeffs.conj())


def pauli_eigenstates() -> dict:
    """The six single-qubit Pauli eigenstates keyed by label."""
    s = 1 / np.sqrt(2)
    return {
        "+z": PureState(np.array([1, 0])),
        "-z": PureState(np.array([0, 1])),
        "+x": PureState(np.array([s, s])),
        "-x": PureState(np.array([s, -s])),
        "+y": PureState(np.array([s, 1j * s])),
        "-y": PureState(np.array([s, -1j * s])),
    }


def haar_random_state(rng: RandomStream, num_qubits: int = 1) -> PureState:
    d = 2**num_qubits
    vec = rng.normal(size=d) + 1j * rng.normal(size=d)
    return PureState.from_vector(vec)
