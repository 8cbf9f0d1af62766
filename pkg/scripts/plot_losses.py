#!/usr/bin/env python3
"""Plot stage-1/stage-2 loss curves from a run directory's CSV logs.

Reads rain_loss.csv and/or seg_loss.csv under --run and writes one PNG per
curve family next to them (or under --out).
"""
import argparse
import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def read_csv(path: Path) -> dict[str, list[float]]:
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    cols: dict[str, list[float]] = {}
    for name in rows[0]:
        try:
            cols[name] = [float(r[name]) for r in rows]
        except ValueError:
            continue  # non-numeric column (e.g. phase)
    return cols


def plot(cols: dict[str, list[float]], x_key: str, title: str, out: Path,
         log_scale: bool):
    fig, ax = plt.subplots(figsize=(8, 5))
    x = cols[x_key]
    for name, ys in cols.items():
        if name == x_key:
            continue
        ax.plot(x, ys, label=name, linewidth=1)
    if log_scale:
        ax.set_yscale("log")
    ax.set_xlabel(x_key)
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    print(f"wrote {out}")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--run", type=Path, required=True,
                    help="run directory containing rain_loss.csv / seg_loss.csv")
    ap.add_argument("--out", type=Path, default=None)
    ap.add_argument("--linear", action="store_true",
                    help="linear y-axis (default: log)")
    args = ap.parse_args(argv)
    out_dir = args.out or args.run
    out_dir.mkdir(parents=True, exist_ok=True)

    found = False
    for name, title in (("rain_loss.csv", "stage 1: stylizer pretraining"),
                        ("seg_loss.csv", "stage 2: segmenter training"),
                        ("ascent_trajectory.csv", "stage 2: style-code ascent")):
        path = args.run / name
        if not path.is_file():
            continue
        found = True
        cols = read_csv(path)
        plot(cols, "iteration", title, out_dir / (path.stem + ".png"),
             log_scale=not args.linear)
    if not found:
        raise SystemExit(f"no loss CSVs found under {args.run}")


if __name__ == "__main__":
    main()
