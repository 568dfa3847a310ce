"""Partition a cloud into P patches of exactly s points each.

Centers come from farthest point sampling; membership from a greedy
capacity-bounded nearest-center pass, which guarantees a disjoint exact
cover (every point in exactly one patch, all patches the same size).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .core import PointCloud, readonly_view
from .errors import ParameterError, ValidationError

DEFAULT_PATCH_SIZE = 32

_START_MODES = ("centroid", "random")


@dataclass(frozen=True, eq=False)
class PatchSet:
    """A cloud viewed as P patches of s points, in absolute coordinates.

    ``center_indices[i]`` is the index of the source point FPS picked as the
    i-th center; ``membership[i]`` lists the s point indices of patch i.
    Non-overlapping sets are disjoint exact covers (P*s == N); overlapping
    sets come from :func:`knn_patches` and only exist to mirror external
    teacher tokenizations, never as mixing input.
    """

    source: PointCloud
    center_indices: np.ndarray
    membership: np.ndarray
    overlapping: bool = False

    def __post_init__(self):
        centers = np.asarray(self.center_indices, dtype=np.int64)
        members = np.asarray(self.membership, dtype=np.int64)
        n = self.source.n_points
        if centers.ndim != 1 or centers.shape[0] < 1:
            raise ValidationError(f"center_indices must be a (P,) vector, got {centers.shape}")
        if members.ndim != 2 or members.shape[0] != centers.shape[0] or members.shape[1] < 1:
            raise ValidationError(
                f"membership must be (P, s) with P={centers.shape[0]}, got {members.shape}"
            )
        if centers.min() < 0 or centers.max() >= n:
            raise ValidationError("center index outside the source cloud")
        if members.min() < 0 or members.max() >= n:
            raise ValidationError("membership index outside the source cloud")
        if not self.overlapping:
            p, s = members.shape
            if p * s != n:
                raise ValidationError(f"P*s = {p * s} does not cover N = {n}")
            flat = np.sort(members.ravel())
            if not np.array_equal(flat, np.arange(n)):
                raise ValidationError("membership is not a disjoint exact cover of the cloud")
        object.__setattr__(self, "center_indices", readonly_view(centers))
        object.__setattr__(self, "membership", readonly_view(members))

    @property
    def num_patches(self) -> int:
        return int(self.membership.shape[0])

    @property
    def patch_size(self) -> int:
        return int(self.membership.shape[1])

    @property
    def centers(self) -> np.ndarray:
        """(P, 3) float32 center coordinates (actual source points)."""
        return self.source.points[self.center_indices]

    @property
    def patch_points(self) -> np.ndarray:
        """(P, s, 3) float32 patch coordinates, absolute."""
        return self.source.points[self.membership]


def fps_centers(cloud: PointCloud, num_patches: int, seed: int = 0,
                start: str = "centroid") -> np.ndarray:
    """Pick P center indices by farthest point sampling.

    ``start="centroid"`` begins at the point nearest the centroid and is
    independent of the seed (the mode partition() uses, so patches survive a
    permutation of the input points); ``start="random"`` begins at a seeded
    uniform draw. Each following center maximizes the minimum distance to
    the chosen set; ties break to the lowest index.
    """
    n = cloud.n_points
    if not 1 <= num_patches <= n:
        raise ParameterError(f"cannot pick {num_patches} centers from {n} points")
    if start not in _START_MODES:
        raise ParameterError(f"unknown start mode {start!r}, expected one of {_START_MODES}")
    pts = cloud.points.astype(np.float64)
    if start == "centroid":
        first = int(np.argmin(np.linalg.norm(pts - pts.mean(axis=0), axis=1)))
    else:
        first = int(np.random.default_rng(seed).integers(n))
    chosen = np.empty(num_patches, dtype=np.int64)
    chosen[0] = first
    min_dist = np.linalg.norm(pts - pts[first], axis=1)
    min_dist[first] = -1.0  # never re-pick a chosen point, even among duplicates
    for i in range(1, num_patches):
        nxt = int(np.argmax(min_dist))
        chosen[i] = nxt
        np.minimum(min_dist, np.linalg.norm(pts - pts[nxt], axis=1), out=min_dist)
        min_dist[nxt] = -1.0
    return chosen


def partition(cloud: PointCloud, num_patches: int | None = None,
              patch_size: int = DEFAULT_PATCH_SIZE, seed: int = 0,
              start: str = "centroid") -> PatchSet:
    """Split a cloud into a disjoint exact cover of P patches of s points.

    Requires N == P*s. Membership comes from a greedy balanced pass: all
    (point, center) pairs sorted by ascending distance (ties: lower point
    index, then lower center index), each point going to its nearest center
    that still has capacity. Deterministic given (cloud, P, s, seed).
    """
    n = cloud.n_points
    if num_patches is None:
        if n % patch_size:
            raise ParameterError(
                f"N={n} is not divisible by patch size s={patch_size}; pass num_patches explicitly"
            )
        num_patches = n // patch_size
    if num_patches < 1 or patch_size < 1 or num_patches * patch_size != n:
        raise ParameterError(
            f"partition needs N = P*s, got N={n}, P={num_patches}, s={patch_size}"
        )
    centers = fps_centers(cloud, num_patches, seed=seed, start=start)
    pts = cloud.points.astype(np.float64)
    dists = cdist(pts, pts[centers])
    # stable argsort of the flat (point-major) matrix realizes the tie rule
    order = np.argsort(dists.ravel(), kind="stable")
    assigned = np.full(n, -1, dtype=np.int64)
    counts = np.zeros(num_patches, dtype=np.int64)
    remaining = n
    for flat in order:
        point = flat // num_patches
        center = flat - point * num_patches
        if assigned[point] >= 0 or counts[center] >= patch_size:
            continue
        assigned[point] = center
        counts[center] += 1
        remaining -= 1
        if remaining == 0:
            break
    membership = np.empty((num_patches, patch_size), dtype=np.int64)
    for c in range(num_patches):
        membership[c] = np.flatnonzero(assigned == c)
    return PatchSet(cloud, centers, membership)


def knn_patches(cloud: PointCloud, num_patches: int,
                patch_size: int = DEFAULT_PATCH_SIZE, seed: int = 0,
                start: str = "centroid") -> PatchSet:
    """Overlapping tokenization: each FPS center takes its s nearest points.

    Patches may share points and need not cover the cloud. This mirrors how
    transformer tokenizers group points and is accepted by the scoring side
    only; mixing rejects overlapping patch sets.
    """
    n = cloud.n_points
    if patch_size > n:
        raise ParameterError(f"patch size {patch_size} exceeds cloud size {n}")
    centers = fps_centers(cloud, num_patches, seed=seed, start=start)
    pts = cloud.points.astype(np.float64)
    dists = cdist(pts[centers], pts)
    membership = np.argsort(dists, axis=1, kind="stable")[:, :patch_size]
    return PatchSet(cloud, centers, np.sort(membership, axis=1), overlapping=True)
