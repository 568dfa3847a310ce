#!/usr/bin/env python3
"""Sweep the replacement ratio on one cloud pair and record how the mask
size and the two target weights move with lambda.

Produces a CSV (lambda, popcount, point_pct, w1, w2) and, with --plot, a
PNG grid of the mixed clouds at each ratio (first-source patches in blue,
second-source patches in red).
"""

import argparse
import csv
from pathlib import Path

import numpy as np

from patchmix.assignment import patch_assignment_centers, patch_assignment_full
from patchmix.core import load_cloud
from patchmix.mixing import MixParams, mix_patch
from patchmix.patching import partition
from patchmix.scoring import read_score_cache, uniform_scores


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--cloud-a", required=True)
    ap.add_argument("--cloud-b", required=True)
    ap.add_argument("--scores", help="score cache; omit for uniform scores")
    ap.add_argument("--output", required=True, help="CSV path")
    ap.add_argument("--patch-size", type=int, default=32)
    ap.add_argument("--lambdas", default="0.125,0.25,0.375,0.5,0.625,0.75,0.875",
                    help="comma-separated ratios")
    ap.add_argument("--assign", choices=("centers", "full"), default="centers")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--plot", help="optional PNG path with one panel per ratio")
    args = ap.parse_args()

    a = load_cloud(args.cloud_a)
    b = load_cloud(args.cloud_b)
    pa = partition(a, patch_size=args.patch_size, seed=args.seed)
    pb = partition(b, patch_size=args.patch_size, seed=args.seed)
    if args.scores:
        cache = read_score_cache(args.scores)
        sa, sb = cache[a.id], cache[b.id]
        mode = "score"
    else:
        sa = sb = uniform_scores(pa.num_patches)
        mode = "linear"
    y1 = a.one_hot_target() if a.label is not None else None
    if y1 is None:
        raise SystemExit("inputs must carry labels")
    y2 = b.one_hot_target()
    assign = (patch_assignment_full(pa, pb) if args.assign == "full"
              else patch_assignment_centers(pa, pb))
    params = MixParams(target_mode=mode)

    lambdas = [float(v) for v in args.lambdas.split(",")]
    results = []
    for lam in lambdas:
        rng = np.random.default_rng(args.seed)
        results.append((lam, mix_patch(pa, y1, sa, pb, y2, sb, assign, params, rng, lam=lam)))

    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lambda", "popcount", "point_pct", "w1", "w2"])
        for lam, res in results:
            writer.writerow([lam, res.mask.popcount, res.mask.popcount / len(res.mask),
                             f"{res.w1:.6g}", f"{res.w2:.6g}"])
    print(f"wrote {out}")

    if args.plot:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, axes = plt.subplots(1, len(results), figsize=(3 * len(results), 3.2))
        if len(results) == 1:
            axes = [axes]
        s = pa.patch_size
        for ax, (lam, res) in zip(axes, results):
            pts = res.mixed.points
            colors = np.repeat(np.where(res.mask.bits.astype(bool), "tab:blue", "tab:red"), s)
            ax.scatter(pts[:, 0], pts[:, 2], s=2, c=colors)
            ax.set_title(f"lam={lam:g}  w1={res.w1:.2f}/w2={res.w2:.2f}", fontsize=8)
            ax.set_aspect("equal")
            ax.axis("off")
        fig.tight_layout()
        fig.savefig(args.plot, dpi=150)
        print(f"wrote {args.plot}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
