"""Command line driver: ``qfhe {case,tpsc,hom,fhe-selftest}``.

Exit codes: 0 success, 1 domain error (bad physics or protocol state),
2 usage error.  Every file is validated against a JSON schema shipped in
``qfhe/schemas`` before it is written.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import evaluator, fhe, optics, qcore, tomo, tpsc
from .evaluator import CANONICAL_CIRCUITS
from .fhe import FheParams
from .optics import NoiseParams
from .qcore import QuantumError

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2
DEFAULT_CASE_SHOTS = 10_000
DEFAULT_COPIES = 960


@dataclass(frozen=True)
class RunConfig:
    command: str
    backend: str = "qubit"
    noise: str = "none"
    shots: int | None = None
    seed: int = 0
    out: str = "results"
    wrong_key: bool = False
    background_subtract: bool = False
    threads: int = 1
    sampling: str = "auto"
    fhe: str = "mock"
    reconstruction: str = "linear"

    def noise_params(self) -> NoiseParams:
        if self.noise == "none":
            return NoiseParams.ideal()
        return NoiseParams.calibrated()

    def fhe_params(self) -> FheParams:
        return FheParams.mock() if self.fhe == "mock" else FheParams.lwe()


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# schemas and writers


def load_schema(name: str) -> dict:
    return json.loads((resources.files("qfhe") / "schemas" / f"{name}.schema.json").read_text())


def validate(doc, schema: str) -> None:
    jsonschema.validate(doc, load_schema(schema))


def _csv_text(columns, rows) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, columns, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def _rows_from_csv(text: str) -> list:
    return list(csv.DictReader(io.StringIO(text)))


def write_json(path: Path, doc, schema: str) -> None:
    validate(doc, schema)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_csv(path: Path, text: str, schema: str) -> None:
    validate(_rows_from_csv(text), schema)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


# --------------------------------------------------------------------------
# case


@dataclass(frozen=True)
class CaseResult:
    case: str
    chi: qcore.ProcessMatrix
    fidelity: float
    fidelity_vs_depolarizing: float
    fidelity_subtracted: float | None
    counts: tomo.TomoCounts
    sampling: str
    shots_per_setting: int
    success_probability: float | None

    def to_dict(self, cfg: RunConfig) -> dict:
        return {
            "case": self.case,
            "backend": cfg.backend,
            "noise": cfg.noise,
            "seed": cfg.seed,
            "sampling": self.sampling,
            "shots_per_setting": self.shots_per_setting,
            "wrong_key": cfg.wrong_key,
            "background_subtract": cfg.background_subtract,
            "fidelity": {
                "average": self.fidelity,
                "vs_depolarizing": self.fidelity_vs_depolarizing,
                "average_subtracted": self.fidelity_subtracted,
            },
            "chi": {"real": self.chi.chi.real.tolist(), "imag": self.chi.chi.imag.tolist()},
            "counts": json.loads(self.counts.to_json())["counts"],
            "discarded": self.counts.discarded,
            "success_probability": self.success_probability,
        }


def _resolve_sampling(cfg: RunConfig) -> str:
    if cfg.sampling != "auto":
        return cfg.sampling
    return "shots" if cfg.backend == "qubit" else "channel"


def run_case(case: str, cfg: RunConfig) -> CaseResult:
    """Tomography of the full prepare -> evaluate -> decrypt pipeline.

    ``shots`` sampling runs the pipeline once per shot.  ``channel`` sampling
    computes the exact post-selected output of the pipeline for each
    preparation (every pad and branch enumerated) and draws binomial counts
    from it, which is equivalent in distribution and much faster for the
    optical model.  Background counts are added on top of the signal counts
    for the optics backend.
    """
    if case not in CANONICAL_CIRCUITS:
        raise UsageError(f"unknown case {case!r}; choose from {sorted(CANONICAL_CIRCUITS)}")
    if cfg.backend == "qubit" and cfg.noise != "none":
        raise UsageError("noise models apply to the optics backend only")
    circuit = CANONICAL_CIRCUITS[case]
    noise = cfg.noise_params()
    signal_noise = NoiseParams(noise.visibility_intra, noise.visibility_inter)
    plan = tomo.TomoPlan.with_total_shots(cfg.shots or DEFAULT_CASE_SHOTS, seed=cfg.seed)
    sampling = _resolve_sampling(cfg)
    success = None
    if sampling == "shots":
        pipeline = evaluator.QfhePipeline(circuit, cfg.backend, signal_noise, cfg.fhe_params(),
                                          wrong_key=cfg.wrong_key)
        counts = tomo.run_tomography(pipeline, plan, threads=cfg.threads)
    elif sampling == "channel":
        outputs, probs = {}, []
        for label, psi in qcore.pauli_eigenstates().items():
            outputs[label], p = evaluator.exact_output(psi, circuit, cfg.backend, signal_noise,
                                                       cfg.fhe_params(), seed=cfg.seed,
                                                       wrong_key=cfg.wrong_key)
            probs.append(p)
        counts = tomo.counts_from_outputs(outputs, plan)
        success = float(np.mean(probs))
    else:
        raise UsageError(f"unknown sampling {sampling!r}")

    subtracted = None
    if cfg.backend == "optics" and noise.has_background:
        profile = evaluator.circuit_profile(circuit)
        expected = {k: optics.background_model(c, noise, profile) for k, c in counts.counts.items()}

        def add_background(key, c):
            rng = np.random.default_rng([cfg.seed, *map(_setting_index, key), 1])
            return c + rng.poisson(expected[key])

        raw = counts.map(add_background)
        if cfg.background_subtract:
            corrected = raw.map(lambda k, c: optics.background_subtract(c, expected[k]))
            subtracted = tomo.average_fidelity(tomo.reconstruct(corrected, cfg.reconstruction),
                                               circuit.unitary())
        counts = raw

    chi = tomo.reconstruct(counts, cfg.reconstruction)
    U = circuit.unitary()
    return CaseResult(case, chi, tomo.average_fidelity(chi, U), tomo.fidelity_vs_depolarizing(chi),
                      subtracted, counts, sampling, plan.shots, success)


def _setting_index(label: str) -> int:
    return (tomo.PREPARATIONS + tomo.BASES).index(label)


def cmd_case(args, cfg: RunConfig) -> dict:
    result = run_case(args.case, cfg)
    out = Path(cfg.out)
    doc = result.to_dict(cfg)
    write_json(out / f"case_{args.case}.json", doc, "case")
    write_csv(out / f"case_{args.case}_bloch.csv", tomo.bloch_export(result.chi), "bloch")
    return {"case": args.case, **doc["fidelity"], "discarded": doc["discarded"]}


# --------------------------------------------------------------------------
# tpsc


def cmd_tpsc(args, cfg: RunConfig) -> dict:
    noise = cfg.noise_params()
    pconf = tpsc.ProtocolConfig(n=cfg.shots or DEFAULT_COPIES, shuffle=not args.no_shuffle,
                                backend=cfg.backend, alice_seed=cfg.seed, bob_seed=cfg.seed + 1,
                                wrong_key=cfg.wrong_key, fhe_params=cfg.fhe_params(), noise=noise)
    rows = tpsc.run_sweep(tpsc.default_sweep(args.points), pconf)
    text = tpsc.sweep_csv(rows)
    out = Path(cfg.out)
    write_csv(out / "tpsc_sweep.csv", text, "tpsc_sweep")
    target = [0.5 if cfg.wrong_key else r["one_minus_d2"] for r in rows]
    dev = max(abs(r["estimate"] - t) for r, t in zip(rows, target))
    return {"points": len(rows), "n": pconf.n, "wrong_key": cfg.wrong_key, "max_deviation": dev}


# --------------------------------------------------------------------------
# hom


HOM_COLUMNS = ["visibility", "hom_coincidence", "hom_contrast", "ppbs_contrast", "cz_success",
               "cz_fidelity", "phase_add_success", "phase_add_fidelity"]


def cz_conditional_fidelity(visibility: float) -> float:
    """Process fidelity of the post-selected map to CZ, normalized by success."""
    cz = np.diag([1, 1, 1, -1]).astype(complex)
    ops = optics.ppbs_cz(visibility).operators()
    overlap = sum(abs(np.trace(cz.conj().T @ k)) ** 2 for k in ops)
    norm = sum(np.trace(k.conj().T @ k).real for k in ops)
    return float(overlap / (4 * norm))


def phase_add_conditional_fidelity(visibility: float, grid: int = 8) -> float:
    """Herald-weighted fidelity of the phase-add output to the equatorial
    state with phase ``alpha + beta`` (plus pi on an H herald), averaged over
    a grid of input phases."""
    total = 0.0
    phases = np.linspace(0, 2 * np.pi, grid, endpoint=False)
    for alpha in phases:
        for beta in phases:
            outs = optics.pbs_phase_add(alpha, beta, visibility)
            success = sum(o.probability for o in outs)
            for o in outs:
                phi = alpha + beta + math.pi * o.k1
                target = qcore.PureState(np.array([1, np.exp(1j * phi)]) / math.sqrt(2))
                total += o.probability / success * o.state.fidelity_to_pure(target)
    return total / grid**2


def hom_rows(visibilities) -> list:
    rows = []
    for v in visibilities:
        v = float(v)
        rows.append({
            "visibility": f"{v:.3f}",
            "hom_coincidence": f"{optics.hom_coincidence(v):.6f}",
            "hom_contrast": f"{optics.hom_contrast(v):.6f}",
            "ppbs_contrast": f"{optics.hom_contrast(v, 1 / 3):.6f}",
            "cz_success": f"{optics.ppbs_cz(v).success_probability(np.eye(4) / 4):.6f}",
            "cz_fidelity": f"{cz_conditional_fidelity(v):.6f}",
            "phase_add_success": f"{sum(o.probability for o in optics.pbs_phase_add(0.3, 1.1, v)):.6f}",
            "phase_add_fidelity": f"{phase_add_conditional_fidelity(v):.6f}",
        })
    return rows


def cmd_hom(args, cfg: RunConfig) -> dict:
    vis = np.round(np.arange(0, 1 + 1e-9, args.step), 10)
    rows = hom_rows(vis)
    write_csv(Path(cfg.out) / "hom.csv", _csv_text(HOM_COLUMNS, rows), "hom")
    return {"rows": len(rows), "cz_success_v1": float(rows[-1]["cz_success"]),
            "phase_add_success_v1": float(rows[-1]["phase_add_success"])}


# --------------------------------------------------------------------------
# fhe self test


def fhe_selftest(seed: int = 0, samples: int = 1000) -> dict:
    rng = np.random.default_rng(seed)
    report = {}
    for params in (FheParams.mock(), FheParams.lwe()):
        keys = fhe.keygen(params, rng)
        other = fhe.keygen(params, rng)
        xor_ok = all(
            fhe.dec(fhe.hxor(fhe.enc(x, keys, rng), fhe.enc(y, keys, rng)), keys) == x ^ y
            and fhe.dec(fhe.hxor_const(fhe.enc(x, keys, rng), y), keys) == x ^ y
            for x in (0, 1) for y in (0, 1)
        )
        c = fhe.enc(1, keys, rng)
        roundtrip = fhe.CipherBit.from_bytes(c.to_bytes()) == c
        ones = sum(fhe.dec(fhe.enc(int(b), keys, rng), other) for b in rng.integers(0, 2, samples))
        z = (ones - samples / 2) / math.sqrt(samples / 4)
        p = math.erfc(abs(z) / math.sqrt(2))
        report[params.scheme] = {"xor_exhaustive": xor_ok, "serialization": roundtrip,
                                 "wrong_key_ones": int(ones), "wrong_key_pvalue": p,
                                 "xor_budget": params.xor_budget,
                                 "passed": bool(xor_ok and roundtrip and p > 0.01)}
    return report


def cmd_fhe_selftest(args, cfg: RunConfig) -> dict:
    report = fhe_selftest(cfg.seed)
    write_json(Path(cfg.out) / "fhe_selftest.json", report, "fhe_selftest")
    if not all(r["passed"] for r in report.values()):
        raise QuantumError(f"FHE self-test failed: {report}")
    return report


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--backend", choices=["qubit", "optics"], default="qubit")
    common.add_argument("--noise", choices=["none", "calibrated", "paper-defaults"], default="none",
                        help="'calibrated' (alias 'paper-defaults'): measured visibilities plus fitted background")
    common.add_argument("--shots", type=int, default=None,
                        help="case: total tomography shots (default 10000); tpsc: copies per point (default 960)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default="results")
    common.add_argument("--wrong-key", action="store_true")
    common.add_argument("--background-subtract", action="store_true")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--fhe", choices=["mock", "lwe"], default="mock")

    parser = argparse.ArgumentParser(prog="qfhe", description="Encrypted-qubit evaluation experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("case", parents=[common], help="process tomography of t, th or thp")
    p.add_argument("case", choices=sorted(CANONICAL_CIRCUITS))
    p.add_argument("--sampling", choices=["auto", "shots", "channel"], default="auto")
    p.add_argument("--reconstruction", choices=["linear", "mle"], default="linear")
    p = sub.add_parser("tpsc", parents=[common], help="overlap-estimation sweep")
    p.add_argument("--points", type=int, default=20)
    p.add_argument("--no-shuffle", action="store_true")
    p = sub.add_parser("hom", parents=[common], help="HOM dip and gate success versus visibility")
    p.add_argument("--step", type=float, default=0.1)
    sub.add_parser("fhe-selftest", parents=[common], help="classical layer checks")
    return parser


COMMANDS = {"case": cmd_case, "tpsc": cmd_tpsc, "hom": cmd_hom, "fhe-selftest": cmd_fhe_selftest}


def _config(args) -> RunConfig:
    if args.shots is not None and args.shots < 1:
        raise UsageError("--shots must be positive")
    if args.threads < 1:
        raise UsageError("--threads must be positive")
    noise = "calibrated" if args.noise == "paper-defaults" else args.noise
    return RunConfig(args.command, args.backend, noise, args.shots, args.seed, args.out, args.wrong_key,
                     args.background_subtract, args.threads, getattr(args, "sampling", "auto"), args.fhe,
                     getattr(args, "reconstruction", "linear"))


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        cfg = _config(args)
        summary = COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (QuantumError, fhe.FheError, optics.PostSelectionFailure, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    print(json.dumps({"config": asdict(cfg), "summary": summary}, indent=2, sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
