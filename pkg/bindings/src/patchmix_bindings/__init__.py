"""In-process array bindings to the patchmix core.

Four pipeline-critical operations (partition, patch assignment, scoring,
patch mixing) exposed over plain numpy arrays for training loops that hold
tensors in memory and want none of the file I/O. Every argument is
shape- and dtype-checked *before* any core call; coordinate buffers must be
32-bit floats and are never copied when already contiguous, and no call
mutates a caller buffer. Outputs are numerically identical to the
corresponding core operations (bit-exact for identical seeds).

Heavy lifting happens inside numpy/scipy kernels, which drop the
interpreter lock on their own; the core's reentrancy guarantees carry over
unchanged.
"""

from __future__ import annotations

import numpy as np

import patchmix
from patchmix.assignment import coords_assignment
from patchmix.core import PointCloud, TargetDist
from patchmix.mixing import mix_patch_arrays, sample_lambda, sample_mask
from patchmix.patching import partition
from patchmix.scoring import AttentionInputs, significance_scores

__version__ = patchmix.__version__

__all__ = ["bind_partition", "bind_patch_assignment", "bind_scores", "bind_mix",
           "__version__"]


def _require(arr, name: str, shape: tuple, dtype=None) -> np.ndarray:
    """Validate an incoming buffer without copying or touching its flags.

    ``shape`` entries of -1 match any extent; a trailing Ellipsis is not
    supported (all ranks are fixed in this API).
    """
    if not isinstance(arr, np.ndarray):
        raise TypeError(f"{name} must be a numpy.ndarray, got {type(arr).__name__}")
    if dtype is not None and arr.dtype != np.dtype(dtype):
        raise TypeError(f"{name} must have dtype {np.dtype(dtype).name}, got {arr.dtype.name}")
    if arr.ndim != len(shape):
        raise ValueError(f"{name} must have {len(shape)} dimensions, got {arr.ndim}")
    for axis, want in enumerate(shape):
        if want != -1 and arr.shape[axis] != want:
            raise ValueError(f"{name} must have shape {shape} (-1 = any), got {arr.shape}")
    if not arr.flags.c_contiguous:
        raise ValueError(f"{name} must be C-contiguous")
    return arr


def bind_partition(points: np.ndarray, num_patches: int, patch_size: int,
                   seed: int = 0):
    """Partition an (N, 3) float32 buffer into patches.

    Returns ``(centers, membership)``: (P, 3) float32 center coordinates and
    (P, s) int64 point indices (a disjoint exact cover).
    """
    _require(points, "points", (-1, 3), np.float32)
    pset = partition(PointCloud(points), num_patches=num_patches,
                     patch_size=patch_size, seed=seed)
    return pset.centers, np.asarray(pset.membership)


def bind_patch_assignment(centers_a: np.ndarray, centers_b: np.ndarray):
    """Optimal matching between two (P, 3) float32 center buffers.

    Returns ``(perm, cost)``: the int64 bijection and its total displacement.
    """
    _require(centers_a, "centers_a", (-1, 3), np.float32)
    _require(centers_b, "centers_b", (-1, 3), np.float32)
    if centers_a.shape != centers_b.shape:
        raise ValueError(f"center buffers must share a shape, got "
                         f"{centers_a.shape} vs {centers_b.shape}")
    result = coords_assignment(centers_a, centers_b)
    return np.asarray(result.perm), result.cost


def bind_scores(tokens: np.ndarray, w_q: np.ndarray, w_k: np.ndarray,
                w_v: np.ndarray) -> np.ndarray:
    """Patch significance scores from raw (P+1, d) float32 tokens and
    (H, d, d_h) float32 projection stacks. Returns (P,) float64 scores."""
    _require(tokens, "tokens", (-1, -1), np.float32)
    d = tokens.shape[1]
    for name, w in (("w_q", w_q), ("w_k", w_k), ("w_v", w_v)):
        _require(w, name, (-1, d, -1), np.float32)
        if w.shape != w_q.shape:
            raise ValueError(f"{name} must match w_q shape {w_q.shape}, got {w.shape}")
    if tokens.shape[0] < 2:
        raise ValueError(f"tokens must hold at least 2 rows (cls + 1 patch), got {tokens.shape[0]}")
    h, _, d_h = w_q.shape
    if h * d_h != d:
        raise ValueError(f"head layout inconsistent: d={d}, H={h}, d_h={d_h}")
    return np.asarray(significance_scores(AttentionInputs(tokens, w_q, w_k, w_v)).scores)


def bind_mix(patches_a: np.ndarray, target_a: np.ndarray, scores_a: np.ndarray,
             patches_b: np.ndarray, target_b: np.ndarray, scores_b: np.ndarray,
             perm: np.ndarray, beta: float = 1.5, seed: int = 0,
             target_mode: str = "score", lam: float | None = None):
    """Patch-level mix of two (P, s, 3) float32 patch buffers.

    ``target_*`` are (C,) float64 one-hot (or soft) label vectors summing to
    1; ``scores_*`` are (P,) float64 significance scores; ``perm`` is the
    (P,) patch bijection from :func:`bind_patch_assignment`. Lambda comes
    from Beta(beta, beta) under ``seed`` unless ``lam`` forces it.

    Returns ``(mixed_points, target, lam, mask)``: (P*s, 3) float32, (C,)
    float64, float, and (P,) uint8.
    """
    _require(patches_a, "patches_a", (-1, -1, 3), np.float32)
    p, s = patches_a.shape[:2]
    _require(patches_b, "patches_b", (p, s, 3), np.float32)
    _require(scores_a, "scores_a", (p,), np.float64)
    _require(scores_b, "scores_b", (p,), np.float64)
    _require(target_a, "target_a", (-1,), np.float64)
    _require(target_b, "target_b", (target_a.shape[0],), np.float64)
    if not isinstance(perm, np.ndarray):
        raise TypeError(f"perm must be a numpy.ndarray, got {type(perm).__name__}")
    if not np.issubdtype(perm.dtype, np.integer):
        raise TypeError(f"perm must be an integer array, got {perm.dtype.name}")
    if perm.shape != (p,):
        raise ValueError(f"perm must have shape ({p},), got {perm.shape}")
    if not np.array_equal(np.sort(perm), np.arange(p)):
        raise ValueError("perm is not a bijection over the patch indices")
    y1, y2 = TargetDist(target_a), TargetDist(target_b)
    rng = np.random.default_rng(seed)
    lam = sample_lambda(beta, rng) if lam is None else float(lam)
    mask = sample_mask(p, lam, rng)
    points, target, _, _, _ = mix_patch_arrays(
        patches_a, scores_a, patches_b, scores_b,
        np.asarray(perm, dtype=np.int64), np.asarray(mask.bits),
        y1, y2, target_mode)
    return points, np.asarray(target.weights), lam, np.asarray(mask.bits)
