"""Train one model per training crop length and print the F1 table.

    python3 scripts/run_duration_sweep.py --out runs/sweep [--frames 200,300,400,500]
"""

import argparse
from pathlib import Path

from vladpool import cli


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/sweep")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n-per-class", type=int, default=100)
    ap.add_argument("--frames", default="200,300,400,500")
    args = ap.parse_args()
    out = Path(args.out)
    common = ["--seed", str(args.seed), "--force"]
    code = cli.main(["synth-data", "--out", str(out / "corpus"), "--n-per-class", str(args.n_per_class), *common])
    if code == 0:
        code = cli.main(["sweep-duration", "--manifest", str(out / "corpus" / "manifest.tsv"),
                         "--frames", args.frames, "--out", str(out / "duration_sweep"), *common])
    raise SystemExit(code)


if __name__ == "__main__":
    main()
