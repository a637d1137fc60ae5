"""Synthesize the 7-language corpus (noise bursts on) and train all four pooling heads.

    python3 scripts/run_pool_compare.py --out runs/pool_compare [--seed 0] [--n-per-class 200]
"""

import argparse
from pathlib import Path

from vladpool import cli


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/pool_compare")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n-per-class", type=int, default=200)
    ap.add_argument("--noise", type=float, default=0.2)
    args = ap.parse_args()
    out = Path(args.out)
    common = ["--seed", str(args.seed), "--force", "--set", f"synth.noise_burst_probability={args.noise}"]
    code = cli.main(["synth-data", "--out", str(out / "corpus"), "--n-per-class", str(args.n_per_class), *common])
    if code == 0:
        code = cli.main(["pool-compare", "--manifest", str(out / "corpus" / "manifest.tsv"),
                         "--out", str(out / "pool_compare"), *common])
    raise SystemExit(code)


if __name__ == "__main__":
    main()
