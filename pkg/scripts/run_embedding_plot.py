"""Export embeddings of a trained checkpoint and scatter-plot the 2-D PCA projection.

    python3 scripts/run_embedding_plot.py CHECKPOINT MANIFEST --out runs/embed

Plotting needs matplotlib, which the package itself does not depend on.
"""

import argparse
from pathlib import Path

from vladpool import data, model
from vladpool.evaluate import export_embeddings


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("checkpoint")
    ap.add_argument("manifest")
    ap.add_argument("--out", default="runs/embed")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    export = export_embeddings(model.load(args.checkpoint), data.load_manifest(args.manifest), out)
    print(f"separation ratio {export.fisher_ratio():.3f}")

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 6))
    xy = export.projection.coords
    for lab in sorted(set(export.labels)):
        idx = [i for i, l in enumerate(export.labels) if l == lab]
        ax.scatter(xy[idx, 0], xy[idx, 1], s=8, label=lab)
    ax.legend(markerscale=2, fontsize=8)
    ax.set_xlabel("PC 1")
    ax.set_ylabel("PC 2")
    fig.savefig(out / "projection.png", dpi=120, bbox_inches="tight")
    print(f"wrote {out / 'projection.png'}")


if __name__ == "__main__":
    main()
