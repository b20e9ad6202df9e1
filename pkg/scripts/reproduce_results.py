"""Regenerate every data file the command line tool can produce.

Writes, under --out (default ./results):

* ideal/, noisy/, wrong_key/   case_<c>.json and case_<c>_bloch.csv for t, th, thp
* tpsc/, tpsc_wrong_key/, tpsc_optics/   tpsc_sweep.csv
* hom/hom.csv
* fhe/fhe_selftest.json

Usage: python scripts/reproduce_results.py [--out DIR] [--seed N] [--threads N]
"""

from __future__ import annotations

import argparse
from pathlib import Path

from qfhe import cli

CASES = ("t", "th", "thp")


def runs(out: Path, seed: int, threads: int):
    common = ["--seed", str(seed), "--threads", str(threads)]
    for case in CASES:
        yield ["case", case, "--out", str(out / "ideal"), *common]
        yield ["case", case, "--backend", "optics", "--noise", "calibrated", "--background-subtract",
               "--out", str(out / "noisy"), *common]
        yield ["case", case, "--wrong-key", "--out", str(out / "wrong_key"), *common]
    yield ["tpsc", "--out", str(out / "tpsc"), *common]
    yield ["tpsc", "--wrong-key", "--out", str(out / "tpsc_wrong_key"), *common]
    yield ["tpsc", "--backend", "optics", "--noise", "calibrated", "--out", str(out / "tpsc_optics"), *common]
    yield ["hom", "--out", str(out / "hom"), *common]
    yield ["fhe-selftest", "--out", str(out / "fhe"), *common]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, default=Path("results"))
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=1)
    args = parser.parse_args(argv)
    failed = 0
    for argv_ in runs(args.out, args.seed, args.threads):
        print("qfhe", " ".join(argv_), flush=True)
        code = cli.main(argv_)
        failed += code != 0
    return 1 if failed else 0


if __name__ == "__main__":
    raise SystemExit(main())
