#!/usr/bin/env python3
"""Plot the diagnostics CSVs that `cadad diagnose` (or `train`) writes.

Produces, per input directory:
  - <run_id>_congestion.png: a_raw/a_smooth and the dynamic shift per layer
  - <run_id>_membrane.png: pre-reset membrane traces with overflow shading

Usage:
    python3 scripts/plot_dynamics.py RUN_DIR [--run-id diag] [--out DIR]
"""
import argparse
import csv
import glob
import os
import sys


def _read_csv(path):
    with open(path, encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    header, body = rows[0], rows[1:]
    return header, [[float(v) if v else 0.0 for v in row] for row in body]


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("run_dir")
    parser.add_argument("--run-id", default="diag")
    parser.add_argument("--out", default=None, help="defaults to RUN_DIR")
    args = parser.parse_args()
    out_dir = args.out or args.run_dir
    os.makedirs(out_dir, exist_ok=True)

    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("matplotlib is required for plotting: pip install matplotlib", file=sys.stderr)
        return 2

    congestion = sorted(glob.glob(os.path.join(args.run_dir, f"{args.run_id}_layer*_congestion.csv")))
    if congestion:
        fig, axes = plt.subplots(len(congestion), 2, figsize=(10, 3 * len(congestion)), squeeze=False)
        for ax_row, path in zip(axes, congestion):
            layer = path.rsplit("_layer", 1)[1].split("_")[0]
            _, rows = _read_csv(path)
            t = [r[0] for r in rows]
            ax_row[0].plot(t, [r[1] for r in rows], lw=0.8, label="a_raw")
            ax_row[0].plot(t, [r[2] for r in rows], lw=1.5, label="a_smooth")
            ax_row[0].set_title(f"layer {layer} congestion")
            ax_row[0].set_ylim(-0.05, 1.05)
            ax_row[0].legend(loc="upper right", fontsize=8)
            ax_row[1].plot(t, [r[3] for r in rows], lw=1.5, color="tab:green")
            ax_row[1].set_title(f"layer {layer} dynamic shift (steps)")
        for ax in axes[-1]:
            ax.set_xlabel("time step")
        fig.tight_layout()
        target = os.path.join(out_dir, f"{args.run_id}_congestion.png")
        fig.savefig(target, dpi=150)
        print(f"wrote {target}")
    else:
        print("no congestion CSVs found (static or delay-free run?)")

    membranes = sorted(glob.glob(os.path.join(args.run_dir, f"{args.run_id}_layer*_membrane.csv")))
    if membranes:
        fig, axes = plt.subplots(len(membranes), 1, figsize=(10, 3 * len(membranes)), squeeze=False)
        for ax, path in zip(axes[:, 0], membranes):
            layer = path.rsplit("_layer", 1)[1].split("_")[0]
            _, rows = _read_csv(path)
            # recover the threshold from any overflowing row (v_pre - overflow)
            th = next((r[2] - r[4] for r in rows if r[4] > 0.0), 1.0)
            neurons = sorted({int(r[1]) for r in rows})
            for nid in neurons:
                series = [(r[0], r[2]) for r in rows if int(r[1]) == nid]
                t = [p[0] for p in series]
                v = [p[1] for p in series]
                (line,) = ax.plot(t, v, lw=1.0, label=f"neuron {nid}")
                ax.fill_between(
                    t, th, v, where=[x > th for x in v], color=line.get_color(), alpha=0.25
                )
            ax.axhline(th, color="red", lw=0.8, ls="--")
            ax.set_title(f"layer {layer} pre-reset membrane (shaded: overflow)")
            ax.legend(loc="upper right", fontsize=8)
        axes[-1, 0].set_xlabel("time step")
        fig.tight_layout()
        target = os.path.join(out_dir, f"{args.run_id}_membrane.png")
        fig.savefig(target, dpi=150)
        print(f"wrote {target}")
    else:
        print("no membrane CSVs found")
    return 0


if __name__ == "__main__":
    sys.exit(main())
