#!/usr/bin/env python3
"""Generate a labelled synthetic cloud dataset plus teacher-style attention
exports, so the full partition -> score -> mix pipeline can run end to end
without any external data.

Classes are simple parametric shapes (sphere, box, cylinder, dumbbell).
Attention exports are kind-0 ppma files whose tokens encode per-patch
geometry (center, spread), pushed through seeded random projection weights;
the resulting significance scores are content-dependent without needing a
real pre-trained network.
"""

import argparse
from pathlib import Path

import numpy as np

from patchmix.core import LabelSpace, PointCloud, save_cloud
from patchmix.patching import partition
from patchmix.scoring import AttentionInputs, write_attention_inputs

SHAPES = ("sphere", "box", "cylinder", "dumbbell")


def sample_shape(kind: str, n: int, rng: np.random.Generator) -> np.ndarray:
    if kind == "sphere":
        v = rng.normal(size=(n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
    elif kind == "box":
        v = rng.uniform(-1, 1, size=(n, 3))
        face = rng.integers(0, 3, size=n)
        sign = rng.choice([-1.0, 1.0], size=n)
        v[np.arange(n), face] = sign
    elif kind == "cylinder":
        theta = rng.uniform(0, 2 * np.pi, size=n)
        v = np.stack([np.cos(theta), np.sin(theta), rng.uniform(-1, 1, size=n)], axis=1)
    else:  # dumbbell: two lobes joined by a thin bar
        lobe = rng.normal(scale=0.35, size=(n, 3))
        side = rng.choice([-0.9, 0.9], size=n)
        lobe[:, 0] += side
        bar = rng.uniform(-0.9, 0.9, size=(n // 4, 1))
        lobe[: n // 4] = np.hstack([bar, rng.normal(scale=0.05, size=(n // 4, 2))])
        v = lobe
    v += rng.normal(scale=0.01, size=v.shape)
    return v.astype(np.float32)


def patch_tokens(pset, d: int, rng: np.random.Generator) -> np.ndarray:
    """(P+1, d) token features: per-patch geometry stats tiled up to width d."""
    pts = pset.patch_points.astype(np.float64)
    centers = pts.mean(axis=1)
    spread = pts.std(axis=1)
    radius = np.linalg.norm(pts - centers[:, None, :], axis=2).max(axis=1, keepdims=True)
    feats = np.hstack([centers, spread, radius])  # (P, 7)
    cls = np.hstack([pts.reshape(-1, 3).mean(axis=0), pts.reshape(-1, 3).std(axis=0), [1.0]])
    table = np.vstack([cls, feats])
    reps = int(np.ceil(d / table.shape[1]))
    wide = np.tile(table, (1, reps))[:, :d]
    return (wide + rng.normal(scale=1e-3, size=wide.shape)).astype(np.float32)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--output", required=True, help="dataset directory")
    ap.add_argument("--samples", type=int, default=16)
    ap.add_argument("--points", type=int, default=1024)
    ap.add_argument("--patch-size", type=int, default=32)
    ap.add_argument("--heads", type=int, default=2)
    ap.add_argument("--head-dim", type=int, default=8)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--no-attention", action="store_true",
                    help="skip the .ppma exports (clouds only)")
    args = ap.parse_args()

    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    space = LabelSpace(len(SHAPES), SHAPES)
    d = args.heads * args.head_dim
    weight_rng = np.random.default_rng(args.seed + 7777)
    w_q = weight_rng.normal(scale=0.5, size=(args.heads, d, args.head_dim)).astype(np.float32)
    w_k = weight_rng.normal(scale=0.5, size=(args.heads, d, args.head_dim)).astype(np.float32)
    w_v = weight_rng.normal(scale=0.5, size=(args.heads, d, args.head_dim)).astype(np.float32)

    for i in range(args.samples):
        rng = np.random.default_rng([args.seed, i])
        label = i % len(SHAPES)
        cloud = PointCloud(sample_shape(SHAPES[label], args.points, rng),
                           label=label, id=f"s{i:04d}", label_space=space)
        save_cloud(cloud, out / f"{cloud.id}.ppmx")
        if not args.no_attention:
            pset = partition(cloud, patch_size=args.patch_size)
            tokens = patch_tokens(pset, d, rng)
            write_attention_inputs(AttentionInputs(tokens, w_q, w_k, w_v),
                                   out / f"{cloud.id}.ppma")
    print(f"wrote {args.samples} clouds ({args.points} pts, {len(SHAPES)} classes) -> {out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
