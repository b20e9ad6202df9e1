"""Linear-optical Fock-space backend.

Modes are ``(spatial, polarization, label)`` triples.  Polarization H encodes
``|0>`` and V encodes ``|1>``.  The label is a two-level internal degree of
freedom standing in for spectral/temporal mode: photons with different labels
do not interfere.

Beamsplitter convention (used by BS, PBS and PPBS): with intensity
transmission ``T`` and reflection ``R = 1 - T`` on a pair of spatial modes
``(m1, m2)``::

    m1^dag -> sqrt(T) m1^dag + sqrt(R) m2^dag
    m2^dag -> -sqrt(R) m1^dag + sqrt(T) m2^dag

i.e. a real orthogonal mixing with the reflection sign on the second mode.

Amplitudes are stored over the normalized Fock basis, keyed by the sorted
tuple of occupied modes (one entry per photon).
"""

from __future__ import annotations

import itertools
import json
import math
from collections import defaultdict
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Iterable, Sequence

import numpy as np

from .qcore import DensityMatrix, QuantumError

MAX_PHOTONS = 4
POLS = ("H", "V")
LABELS = (0, 1)


class OpticsError(QuantumError):
    pass


class PostSelectionFailure(RuntimeError):
    """A post-selected optical stage did not herald success.  Retriable."""

    def __init__(self, stage: str, probability: float):
        super().__init__(f"post-selection failed at {stage} (success probability {probability:.4f})")
        self.stage = stage
        self.probability = probability


# --------------------------------------------------------------------------
# Fock states


def _multiplicity_factor(modes: tuple) -> float:
    out = 1.0
    for _, group in itertools.groupby(modes):
        out *= math.factorial(len(list(group)))
    return out


@dataclass(frozen=True, eq=False)
class FockState:
    amplitudes: dict

    def __post_init__(self):
        amps = {}
        for modes, amp in self.amplitudes.items():
            key = tuple(sorted(modes))
            if len(key) > MAX_PHOTONS:
                raise OpticsError(f"{len(key)} photons exceeds the {MAX_PHOTONS}-photon limit")
            if abs(amp) > 1e-15:
                amps[key] = amps.get(key, 0) + complex(amp)
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def from_photons(cls, modes: Sequence[tuple]) -> "FockState":
        """Normalized Fock state with one photon per listed mode entry."""
        key = tuple(sorted(tuple(m) for m in modes))
        return cls({key: 1.0})

    @classmethod
    def polarization_qubits(cls, spatial: Sequence[str], qubits: np.ndarray) -> "FockState":
        """Encode an n-qubit polarization state, one photon per spatial mode."""
        amps = {}
        n = len(spatial)
        vec = np.asarray(qubits, dtype=complex).ravel()
        for idx, amp in enumerate(vec):
            if amp == 0:
                continue
            bits = format(idx, f"0{n}b")
            key = tuple(sorted((s, POLS[int(b)], 0) for s, b in zip(spatial, bits)))
            amps[key] = amp
        return cls(amps)

    def norm(self) -> float:
        return math.sqrt(sum(abs(a) ** 2 for a in self.amplitudes.values()))

    def photon_number(self) -> int:
        return max((len(k) for k in self.amplitudes), default=0)

    def probability(self, modes: Sequence[tuple]) -> float:
        return abs(self.amplitudes.get(tuple(sorted(modes)), 0)) ** 2


def transform(state: FockState, images) -> FockState:
    """Apply a linear map on creation operators.

    ``images(mode)`` returns ``[(mode', coeff), ...]`` for ``a_mode^dag``.
    """
    out = defaultdict(complex)
    cache = {}
    for modes, amp in state.amplitudes.items():
        poly = amp / math.sqrt(_multiplicity_factor(modes))
        parts = []
        for m in modes:
            if m not in cache:
                cache[m] = images(m)
            parts.append(cache[m])
        for combo in itertools.product(*parts):
            coeff = poly
            for _, c in combo:
                coeff *= c
            if coeff == 0:
                continue
            key = tuple(sorted(m for m, _ in combo))
            out[key] += coeff
    return FockState(
        {k: v * math.sqrt(_multiplicity_factor(k)) for k, v in out.items()}
    )


# --------------------------------------------------------------------------
# Optical elements

ELEMENT_KINDS = ("BS", "PBS", "PPBS", "HWP", "QWP", "phase", "attenuator", "label_mix")


@dataclass(frozen=True)
class OpticalElement:
    """One optical component.

    ``params`` per kind: BS ``{"T"}``; PPBS ``{"T_H", "T_V"}``; HWP/QWP
    ``{"angle_deg"}``; phase ``{"phi"}``; attenuator ``{"t"}`` (intensity
    transmission); label_mix ``{"visibility"}``.  ``pol`` restricts phase and
    attenuator elements to one polarization.
    """

    kind: str
    modes: tuple
    params: tuple = ()
    pol: str | None = None

    def __post_init__(self):
        if self.kind not in ELEMENT_KINDS:
            raise OpticsError(f"unknown optical element {self.kind!r}")
        object.__setattr__(self, "modes", tuple(self.modes))
        params = dict(self.params)
        object.__setattr__(self, "params", tuple(sorted(params.items())))
        need = 2 if self.kind in ("BS", "PBS", "PPBS") else 1
        if len(self.modes) != need:
            raise OpticsError(f"{self.kind} acts on {need} spatial mode(s), got {self.modes}")

    def param(self, name: str, default=None):
        return dict(self.params).get(name, default)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "modes": list(self.modes)}
        d.update(dict(self.params))
        if self.pol is not None:
            d["pol"] = self.pol
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "OpticalElement":
        d = dict(d)
        kind = d.pop("kind")
        modes = tuple(d.pop("modes"))
        pol = d.pop("pol", None)
        return cls(kind, modes, tuple(d.items()), pol)

    def images(self, mode: tuple) -> list:
        spatial, pol, label = mode
        if self.kind == "attenuator" and spatial == f"loss:{self.modes[0]}":
            if self.pol is not None and self.pol != pol:
                return [(mode, 1.0)]
            t = self.param("t", 1.0)
            return [((self.modes[0], pol, label), -math.sqrt(1 - t)), (mode, math.sqrt(t))]
        if spatial not in self.modes:
            return [(mode, 1.0)]
        kind = self.kind
        if kind in ("BS", "PBS", "PPBS"):
            if kind == "BS":
                t = self.param("T", 0.5)
            elif kind == "PBS":
                t = 1.0 if pol == "H" else 0.0
            else:
                t = self.param("T_H", 1.0) if pol == "H" else self.param("T_V", 1 / 3)
            r = 1.0 - t
            m1, m2 = self.modes
            if spatial == m1:
                return [((m1, pol, label), math.sqrt(t)), ((m2, pol, label), math.sqrt(r))]
            return [((m1, pol, label), -math.sqrt(r)), ((m2, pol, label), math.sqrt(t))]
        if kind in ("HWP", "QWP"):
            jones = _jones(kind, math.radians(self.param("angle_deg", 0.0)))
            col = POLS.index(pol)
            return [((spatial, p, label), jones[i, col]) for i, p in enumerate(POLS)]
        if kind == "phase":
            if self.pol is None or self.pol == pol:
                return [(mode, np.exp(1j * self.param("phi", 0.0)))]
            return [(mode, 1.0)]
        if kind == "attenuator":
            if self.pol is not None and self.pol != pol:
                return [(mode, 1.0)]
            t = self.param("t", 1.0)
            loss = (f"loss:{spatial}", pol, label)
            return [(mode, math.sqrt(t)), (loss, math.sqrt(1 - t))]
        # label_mix: rotate the internal label
        v = self.param("visibility", 1.0)
        c, s = math.sqrt(v), math.sqrt(1 - v)
        if label == 0:
            return [((spatial, pol, 0), c), ((spatial, pol, 1), s)]
        return [((spatial, pol, 0), -s), ((spatial, pol, 1), c)]


def _jones(kind: str, theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    if kind == "HWP":
        return np.array([[c * c - s * s, 2 * s * c], [2 * s * c, s * s - c * c]], dtype=complex)
    return np.array(
        [[c * c + 1j * s * s, (1 - 1j) * s * c], [(1 - 1j) * s * c, s * s + 1j * c * c]],
        dtype=complex,
    )


def apply_element(state: FockState, element: OpticalElement) -> FockState:
    return transform(state, element.images)


def run_circuit(state: FockState, elements: Iterable[OpticalElement]) -> FockState:
    for el in elements:
        state = apply_element(state, el)
    return state


def distinguishability_mix(state: FockState, visibility: float, spatial: str) -> FockState:
    """Give the photon(s) in ``spatial`` overlap ``sqrt(visibility)`` with label 0."""
    if not 0.0 <= visibility <= 1.0:
        raise OpticsError(f"visibility {visibility} outside [0, 1]")
    return apply_element(state, OpticalElement("label_mix", (spatial,), (("visibility", visibility),)))


def load_circuit(path) -> list:
    """Read a declarative optical circuit: a JSON list of element dicts."""
    with open(path) as fh:
        data = json.load(fh)
    return [OpticalElement.from_dict(d) for d in data["elements"]]


def packaged_circuit(name: str) -> list:
    ref = resources.files("qfhe") / "configs" / f"{name}.json"
    with resources.as_file(ref) as p:
        return load_circuit(p)


# --------------------------------------------------------------------------
# Transfer matrices and permanents (independent check of the Fock engine)


def transfer_matrix(elements: Sequence[OpticalElement], modes: Sequence[tuple]) -> np.ndarray:
    """Single-photon matrix ``U[out, in]`` over ``modes`` (must be closed)."""
    index = {m: i for i, m in enumerate(modes)}
    U = np.eye(len(modes), dtype=complex)
    for el in elements:
        step = np.zeros_like(U)
        for m, j in index.items():
            for img, c in el.images(m):
                if img not in index:
                    raise OpticsError(f"mode {img} missing from the transfer basis")
                step[index[img], j] += c
        U = step @ U
    return U


def permanent(m: np.ndarray) -> complex:
    n = m.shape[0]
    return sum(
        np.prod([m[i, p[i]] for i in range(n)]) for p in itertools.permutations(range(n))
    )


def permanent_amplitude(U: np.ndarray, inputs: Sequence[int], outputs: Sequence[int]) -> complex:
    sub = U[np.ix_(list(outputs), list(inputs))]
    norm = math.sqrt(_multiplicity_factor(tuple(sorted(inputs))) * _multiplicity_factor(tuple(sorted(outputs))))
    return permanent(sub) / norm


# --------------------------------------------------------------------------
# Post-selection


@dataclass(frozen=True)
class PostSelectionRule:
    """Exactly one photon in each listed spatial mode; ``herald`` is read out
    in polarization and dropped from the output qubits."""

    spatial: tuple
    herald: str | None = None

    def accepts(self, modes: tuple) -> bool:
        counts = defaultdict(int)
        for s, _, _ in modes:
            counts[s] += 1
        return all(counts[s] == 1 for s in self.spatial) and sum(
            counts[s] for s in self.spatial
        ) == len(modes)


@dataclass(frozen=True, eq=False)
class ConditionalMap:
    """Post-selected operation on polarization qubits.

    ``kraus`` maps an outcome key ``(herald_pol or None, labels)`` to a matrix
    from input qubits to output qubits.
    """

    kraus: dict
    num_inputs: int
    num_outputs: int

    def operators(self, herald: str | None = None) -> list:
        return [k for (h, _), k in self.kraus.items() if herald is None or h == herald]

    def heralds(self) -> list:
        return sorted({h for h, _ in self.kraus})

    def outcome_weight(self, rho: np.ndarray, herald: str | None = None) -> tuple:
        """Unnormalized output and its probability for one herald outcome."""
        out = sum(k @ rho @ k.conj().T for k in self.operators(herald))
        return out, float(np.trace(out).real)

    def success_probability(self, rho: np.ndarray) -> float:
        return self.outcome_weight(rho)[1]


def extract_conditional_map(
    elements: Sequence[OpticalElement],
    in_modes: Sequence[str],
    rule: PostSelectionRule,
    visibility: float = 1.0,
) -> ConditionalMap:
    """Fock-enumerate ``elements`` on every polarization basis input.

    The photon entering ``in_modes[1]`` gets its label mixed according to
    ``visibility`` before the network; the one in ``in_modes[0]`` keeps label 0.
    Output qubits are the rule's spatial modes minus the herald, in order.
    """
    n_in = len(in_modes)
    out_spatial = [s for s in rule.spatial if s != rule.herald]
    n_out = len(out_spatial)
    kraus = defaultdict(lambda: np.zeros((2**n_out, 2**n_in), dtype=complex))
    for col, pols in enumerate(itertools.product(POLS, repeat=n_in)):
        state = FockState.from_photons([(m, p, 0) for m, p in zip(in_modes, pols)])
        if n_in > 1:
            state = distinguishability_mix(state, visibility, in_modes[1])
        state = run_circuit(state, elements)
        for modes, amp in state.amplitudes.items():
            if not rule.accepts(modes):
                continue
            by_spatial = {s: (p, l) for s, p, l in modes}
            herald = by_spatial[rule.herald][0] if rule.herald else None
            labels = tuple(by_spatial[s][1] for s in rule.spatial)
            row = int("".join(str(POLS.index(by_spatial[s][0])) for s in out_spatial), 2)
            kraus[(herald, labels)][row, col] += amp
    return ConditionalMap(dict(kraus), n_in, n_out)


def ppbs_cz_elements(t_v: float = 1 / 3) -> list:
    """PPBS between modes a and b with H balancing attenuators on both inputs."""
    return [
        OpticalElement("attenuator", ("a",), (("t", t_v),), pol="H"),
        OpticalElement("attenuator", ("b",), (("t", t_v),), pol="H"),
        OpticalElement("PPBS", ("a", "b"), (("T_H", 1.0), ("T_V", t_v))),
    ]


def phase_add_elements() -> list:
    """PBS followed by a half-wave plate at 22.5 degrees on output b."""
    return [
        OpticalElement("PBS", ("a", "b")),
        OpticalElement("HWP", ("b",), (("angle_deg", 22.5),)),
    ]


@lru_cache(maxsize=64)
def ppbs_cz(visibility: float = 1.0) -> ConditionalMap:
    """Coincidence-post-selected controlled-Z.  Qubit 0 enters mode a."""
    return extract_conditional_map(ppbs_cz_elements(), ("a", "b"), PostSelectionRule(("a", "b")), visibility)


@lru_cache(maxsize=64)
def pbs_phase_add_map(visibility: float = 1.0) -> ConditionalMap:
    """Two equatorial qubits in, one qubit (mode a) out, herald on mode b."""
    return extract_conditional_map(
        phase_add_elements(), ("a", "b"), PostSelectionRule(("a", "b"), herald="b"), visibility
    )


# Herald convention: a V click on mode b reports k1 = 0, an H click k1 = 1.
HERALD_BIT = {"V": 0, "H": 1}


@dataclass(frozen=True)
class PhaseAddOutcome:
    k1: int
    probability: float
    state: DensityMatrix


def pbs_phase_add(alpha: float, beta: float, visibility: float = 1.0) -> list:
    """Phase-add two equatorial qubits; one entry per herald outcome.

    Total success probability is the sum of the outcome probabilities.
    """
    qa = np.array([1, np.exp(1j * alpha)]) / math.sqrt(2)
    qb = np.array([1, np.exp(1j * beta)]) / math.sqrt(2)
    psi = np.kron(qa, qb)
    rho = np.outer(psi, psi.conj())
    cmap = pbs_phase_add_map(visibility)
    out = []
    for h in ("V", "H"):
        mat, p = cmap.outcome_weight(rho, h)
        out.append(PhaseAddOutcome(HERALD_BIT[h], p, DensityMatrix.from_matrix(mat)))
    return out


def hom_coincidence(visibility: float, transmission: float = 0.5, pol: str = "H") -> float:
    """Coincidence probability of two photons at a beamsplitter."""
    state = FockState.from_photons([("a", pol, 0), ("b", pol, 0)])
    state = distinguishability_mix(state, visibility, "b")
    state = apply_element(state, OpticalElement("BS", ("a", "b"), (("T", transmission),)))
    rule = PostSelectionRule(("a", "b"))
    return sum(abs(a) ** 2 for m, a in state.amplitudes.items() if rule.accepts(m))


def hom_contrast(visibility: float, transmission: float = 0.5) -> float:
    """Dip contrast ``1 - P_c(v) / P_c(distinguishable)``."""
    return 1.0 - hom_coincidence(visibility, transmission) / hom_coincidence(0.0, transmission)


# --------------------------------------------------------------------------
# Noise model


@dataclass(frozen=True)
class NoiseParams:
    visibility_intra: float = 1.0
    visibility_inter: float = 1.0
    double_pair_rate: float = 0.0
    accidental_rate: float = 0.0

    def __post_init__(self):
        for name in ("visibility_intra", "visibility_inter"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise OpticsError(f"{name}={v} outside [0, 1]")
        if self.double_pair_rate < 0 or self.accidental_rate < 0:
            raise OpticsError("background rates must be non-negative")

    @classmethod
    def ideal(cls) -> "NoiseParams":
        return cls()

    @classmethod
    def calibrated(cls) -> "NoiseParams":
        """Measured HOM visibilities plus the calibrated background rates."""
        cal = load_calibration()
        return cls(
            VISIBILITY_INTRA,
            VISIBILITY_INTER,
            cal["double_pair_rate"],
            cal["accidental_rate"],
        )

    @property
    def has_background(self) -> bool:
        return self.double_pair_rate > 0 or self.accidental_rate > 0


VISIBILITY_INTRA = 0.970
VISIBILITY_INTER = 0.900
CALIBRATION_FILE = "calibration.json"


def load_calibration() -> dict:
    ref = resources.files("qfhe") / "data" / CALIBRATION_FILE
    try:
        return json.loads(ref.read_text())
    except FileNotFoundError:
        raise OpticsError(
            "no background calibration found; run scripts/calibrate_background.py"
        ) from None


@dataclass(frozen=True)
class BackgroundProfile:
    """How an evaluated circuit exposes itself to spurious coincidences.

    ``success_prob`` is the product of the post-selection probabilities of
    its optical stages; ``inter_pair_stages`` counts two-photon stages fed by
    photons from different down-conversion events.
    """

    success_prob: float = 1 / 9
    inter_pair_stages: int = 0


REFERENCE_SUCCESS = 1 / 9


def background_model(signal_counts, noise: NoiseParams, profile: BackgroundProfile = BackgroundProfile(),
                     return_components: bool = False):
    """Expected spurious counts per outcome.

    Both components are spread uniformly over the outcomes of a setting and
    scale with the setting's total signal.  Accidentals scale with
    ``1 / success_prob``; double-pair emission additionally requires an
    inter-pair interference stage.
    """
    if noise.double_pair_rate < 0 or noise.accidental_rate < 0:
        raise OpticsError("background rates must be non-negative")
    counts = np.asarray(signal_counts, dtype=float)
    per_outcome = counts.sum(axis=-1, keepdims=True) / counts.shape[-1]
    scale = REFERENCE_SUCCESS / profile.success_prob
    accidental = np.broadcast_to(noise.accidental_rate * scale * per_outcome, counts.shape)
    double_pair = np.broadcast_to(
        noise.double_pair_rate * profile.inter_pair_stages * scale * per_outcome, counts.shape
    )
    if return_components:
        return {"accidental": np.array(accidental), "double_pair": np.array(double_pair)}
    return np.array(accidental + double_pair)


def background_subtract(raw_counts, expected_background) -> np.ndarray:
    raw = np.asarray(raw_counts, dtype=float)
    if np.any(raw < 0):
        raise OpticsError("raw counts must be non-negative")
    return np.maximum(raw - np.asarray(expected_background, dtype=float), 0.0)
