"""Single-qubit process tomography: simulated counts, reconstruction, fidelities.

Settings are (input eigenstate, measured Pauli).  Outcome 0 is the +1
eigenvalue.  Each setting draws from its own RNG stream seeded by
``(seed, prep_index, basis_index)``, so counts do not depend on the order or
the number of worker processes.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import sqrtm

from . import qcore
from .qcore import DensityMatrix, ProcessMatrix, PureState, QuantumError

PREPARATIONS = ("+z", "-z", "+x", "-x", "+y", "-y")
BASES = ("x", "y", "z")
_PAULI = {"x": qcore.X, "y": qcore.Y, "z": qcore.Z}
_BLOCH = {"+z": (0, 0, 1), "-z": (0, 0, -1), "+x": (1, 0, 0), "-x": (-1, 0, 0),
          "+y": (0, 1, 0), "-y": (0, -1, 0)}


class TomographyError(QuantumError):
    pass


@dataclass(frozen=True)
class TomoPlan:
    preparations: tuple = PREPARATIONS
    bases: tuple = BASES
    shots: int = 1000  # per setting
    seed: int = 0

    def __post_init__(self):
        bad = [p for p in self.preparations if p not in _BLOCH] + [b for b in self.bases if b not in _PAULI]
        if bad:
            raise TomographyError(f"unknown settings {bad}")
        if self.shots < 1:
            raise TomographyError("shots must be positive")

    @property
    def settings(self) -> list:
        return [(p, b) for p in self.preparations for b in self.bases]

    @classmethod
    def with_total_shots(cls, total: int, seed: int = 0) -> "TomoPlan":
        per = -(-total // (len(PREPARATIONS) * len(BASES)))
        return cls(shots=per, seed=seed)

    def stream(self, prep: str, basis: str) -> np.random.Generator:
        return np.random.default_rng([self.seed, PREPARATIONS.index(prep), BASES.index(basis)])


@dataclass
class TomoCounts:
    """Outcome counts ``[n_plus, n_minus]`` per setting."""

    plan: TomoPlan
    counts: dict = field(default_factory=dict)
    discarded: int = 0

    def to_json(self) -> str:
        doc = {
            "plan": {"preparations": list(self.plan.preparations), "bases": list(self.plan.bases),
                     "shots": self.plan.shots, "seed": self.plan.seed},
            "counts": [{"prep": p, "basis": b, "counts": [float(x) for x in c]}
                       for (p, b), c in self.counts.items()],
            "discarded": self.discarded,
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "TomoCounts":
        doc = json.loads(text)
        plan = TomoPlan(tuple(doc["plan"]["preparations"]), tuple(doc["plan"]["bases"]),
                        doc["plan"]["shots"], doc["plan"]["seed"])
        counts = {(e["prep"], e["basis"]): np.array(e["counts"], dtype=float) for e in doc["counts"]}
        return cls(plan, counts, doc.get("discarded", 0))

    def map(self, fn) -> "TomoCounts":
        return TomoCounts(self.plan, {k: fn(k, v) for k, v in self.counts.items()}, self.discarded)


def plus_probability(state, basis: str) -> float:
    rho = state.to_density().matrix if isinstance(state, PureState) else state.matrix
    return float(np.clip((1 + np.trace(rho @ _PAULI[basis]).real) / 2, 0.0, 1.0))


def _run_settings(source, plan: TomoPlan, settings):
    states = qcore.pauli_eigenstates()
    out = {}
    for prep, basis in settings:
        rng = plan.stream(prep, basis)
        plus = 0
        for _ in range(plan.shots):
            try:
                state = source(states[prep], rng)
            except Exception as exc:
                raise TomographyError(f"pipeline failed at setting ({prep}, {basis}): {exc}") from exc
            plus += rng.random() < plus_probability(state, basis)
        out[(prep, basis)] = np.array([plus, plan.shots - plus], dtype=float)
    return out, getattr(source, "discarded", 0)


def run_tomography(source, plan: TomoPlan, threads: int = 1) -> TomoCounts:
    """Run ``source(plaintext, rng) -> output state`` once per shot.

    ``source`` may count abandoned attempts in a ``discarded`` attribute;
    the totals are summed across workers.  Any error is re-raised with the
    failing setting attached.
    """
    settings = plan.settings
    if threads <= 1:
        counts, discarded = _run_settings(source, plan, settings)
        return TomoCounts(plan, counts, discarded)
    chunks = [settings[i::threads] for i in range(threads)]
    counts, discarded = {}, 0
    with ProcessPoolExecutor(max_workers=threads) as pool:
        for c, d in pool.map(_run_settings, [source] * threads, [plan] * threads, chunks):
            counts.update(c)
            discarded += d
    return TomoCounts(plan, {s: counts[s] for s in settings}, discarded)


def counts_from_outputs(outputs: dict, plan: TomoPlan) -> TomoCounts:
    """Binomial counts from known output states ``{prep: DensityMatrix}``."""
    counts = {}
    for prep, basis in plan.settings:
        rng = plan.stream(prep, basis)
        plus = int(rng.binomial(plan.shots, plus_probability(outputs[prep], basis)))
        counts[(prep, basis)] = np.array([plus, plan.shots - plus], dtype=float)
    return TomoCounts(plan, counts)


# --------------------------------------------------------------------------
# Reconstruction


def _design(counts: TomoCounts):
    """Per basis: rows ``[1, r_in]`` and observed expectations."""
    rows = {b: ([], []) for b in BASES}
    for (prep, basis), c in counts.counts.items():
        total = c.sum()
        if total <= 0:
            continue
        rows[basis][0].append([1.0, *_BLOCH[prep]])
        rows[basis][1].append((c[0] - c[1]) / total)
    return rows


def _missing_settings(counts: TomoCounts) -> list:
    have = {k for k, c in counts.counts.items() if c.sum() > 0}
    return [s for s in TomoPlan().settings if s not in have]


def linear_transfer_matrix(counts: TomoCounts) -> np.ndarray:
    """Least-squares Pauli transfer matrix, trace preservation assumed."""
    R = np.zeros((4, 4))
    R[0, 0] = 1.0
    for i, basis in enumerate(BASES, start=1):
        A, y = (np.array(v, dtype=float) for v in _design(counts)[basis])
        if len(A) == 0 or np.linalg.matrix_rank(A) < 4:
            raise TomographyError(
                f"settings do not determine the process; missing {_missing_settings(counts)}"
            )
        R[i] = np.linalg.lstsq(A, y, rcond=None)[0]
    return R


def _project_simplex(v: np.ndarray, total: float = 1.0) -> np.ndarray:
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - total
    k = np.nonzero(u - css / np.arange(1, len(u) + 1) > 0)[0][-1]
    return np.maximum(v - css[k] / (k + 1), 0.0)


def project_physical(chi: np.ndarray) -> np.ndarray:
    """Nearest (Frobenius) positive semidefinite chi with unit trace."""
    herm = (chi + chi.conj().T) / 2
    evals, evecs = np.linalg.eigh(herm)
    evals = _project_simplex(evals)
    return (evecs * evals) @ evecs.conj().T


def _partial_trace_out(choi: np.ndarray) -> np.ndarray:
    return np.einsum("iaja->ij", choi.reshape(2, 2, 2, 2))


def mle_choi(counts: TomoCounts, start: np.ndarray | None = None, iterations: int = 500,
             tol: float = 1e-10) -> np.ndarray:
    """Trace-preserving iterative maximum likelihood on the Choi matrix."""
    states = qcore.pauli_eigenstates()
    ops, freqs = [], []
    for (prep, basis), c in counts.counts.items():
        rin = states[prep].to_density().matrix.T
        for sign, n in zip((1, -1), c):
            proj = (qcore.I2 + sign * _PAULI[basis]) / 2
            ops.append(np.kron(rin, proj))
            freqs.append(n)
    ops = np.array(ops)
    freqs = np.array(freqs, dtype=float)
    J = np.eye(4, dtype=complex) / 2 if start is None else start
    for _ in range(iterations):
        probs = np.einsum("kij,ji->k", ops, J).real
        Rm = np.einsum("k,kij->ij", freqs / np.maximum(probs, 1e-15), ops)
        L = _partial_trace_out(Rm @ J @ Rm)
        w, v = np.linalg.eigh(L)
        Linv = (v / np.sqrt(np.maximum(w, 1e-15))) @ v.conj().T
        K = np.kron(Linv, qcore.I2)
        new = K @ Rm @ J @ Rm @ K
        new = (new + new.conj().T) / 2
        if np.linalg.norm(new - J) < tol:
            J = new
            break
        J = new
    return J


def reconstruct(counts: TomoCounts, method: str = "linear") -> ProcessMatrix:
    """chi matrix from counts.  ``linear``: least squares then projection onto
    physical chi matrices.  ``mle``: iterative maximum likelihood started from
    the linear estimate."""
    chi = project_physical(ProcessMatrix.from_pauli_transfer(linear_transfer_matrix(counts)).chi)
    if method == "linear":
        return ProcessMatrix(chi)
    if method == "mle":
        start = ProcessMatrix(0.98 * chi + 0.02 * np.eye(4) / 4).choi()
        return ProcessMatrix(ProcessMatrix.from_choi(mle_choi(counts, start)).chi)
    raise TomographyError(f"unknown reconstruction method {method!r}")


# --------------------------------------------------------------------------
# Fidelities


DEPOLARIZING_CHI = np.eye(4, dtype=complex) / 4


def _target_chi(target) -> np.ndarray:
    if isinstance(target, ProcessMatrix):
        return target.chi
    if isinstance(target, qcore.Gate):
        target = target.matrix
    t = np.asarray(target, dtype=complex)
    return ProcessMatrix.from_unitary(t).chi if t.shape == (2, 2) else t


def _check_normalized(chi: ProcessMatrix) -> None:
    if abs(chi.trace - 1) > 1e-6:
        raise TomographyError(f"chi must have unit trace, got {chi.trace:.6g}")


def entanglement_fidelity(chi: ProcessMatrix, target) -> float:
    """``Tr(chi_target chi)``; equals ``u^dagger chi u`` for a unitary target."""
    _check_normalized(chi)
    return float(np.trace(_target_chi(target) @ chi.chi).real)


def average_fidelity(chi: ProcessMatrix, target) -> float:
    """Average gate fidelity ``(2 F_e + 1) / 3`` against a unitary target."""
    return (2 * entanglement_fidelity(chi, target) + 1) / 3


def process_fidelity(chi: ProcessMatrix, target) -> float:
    """Uhlmann fidelity between unit-trace chi matrices (any target channel)."""
    _check_normalized(chi)
    t = _target_chi(target)
    t = t / np.trace(t).real
    root = sqrtm(t)
    inner = sqrtm(root @ chi.chi @ root)
    return float(np.clip(np.trace(inner).real ** 2, 0.0, 1.0))


def fidelity_vs_depolarizing(chi: ProcessMatrix) -> float:
    """``(2 F + 1) / 3`` with ``F`` the Uhlmann fidelity to the fully
    depolarizing chi.  The trace-overlap form is 1/2 for every channel here,
    so it cannot tell a depolarizer from anything else."""
    return (2 * process_fidelity(chi, DEPOLARIZING_CHI) + 1) / 3


# --------------------------------------------------------------------------
# Exports


BLOCH_COLUMNS = ["theta", "phi", "in_x", "in_y", "in_z", "out_x", "out_y", "out_z", "color_id"]


def bloch_export(chi: ProcessMatrix, points: int = 12) -> str:
    """CSV of input and output Bloch vectors over a latitude/longitude grid.

    ``color_id`` is the latitude ring, so rings can be told apart after the map.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(BLOCH_COLUMNS)
    for ring, theta in enumerate(np.linspace(0, np.pi, points)):
        for phi in np.linspace(0, 2 * np.pi, points, endpoint=False):
            psi = PureState.bloch(theta, phi)
            out = DensityMatrix.from_matrix(chi.apply(psi.to_density().matrix))
            writer.writerow([f"{theta:.6f}", f"{phi:.6f}",
                             *(f"{x:.6f}" for x in psi.to_density().bloch_vector()),
                             *(f"{x:.6f}" for x in out.bloch_vector()), ring])
    return buf.getvalue()
