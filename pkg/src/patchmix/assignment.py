"""Exact one-to-one correspondences minimizing total L2 displacement.

The matching objective between two equal-cardinality point sets is the
minimum total displacement over bijections; with unit mass per point this
earth-mover objective reduces exactly to a linear sum assignment, so the
solver is exact (scipy's shortest-augmenting-path implementation) and a
brute-force oracle cross-checks it in the tests.

Patch-level correspondence comes in two flavours: ``patch_assignment_full``
scores every patch pair by its own optimal point matching and solves the
outer patch bijection exactly; ``patch_assignment_centers`` matches the P
center points only, which is the cheap approximation used by default in the
mixing pipeline.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .core import PointCloud, readonly_view
from .errors import ParameterError, ValidationError
from .patching import PatchSet

BRUTE_FORCE_LIMIT = 9
FULL_MODE_MAX_PATCHES = 64
FULL_MODE_MAX_PATCH_SIZE = 32


@dataclass(frozen=True, eq=False)
class Assignment:
    """A bijection between two index sets plus its total matched cost."""

    perm: np.ndarray
    cost: float

    def __post_init__(self):
        p = np.asarray(self.perm, dtype=np.int64)
        if p.ndim != 1 or p.shape[0] < 1:
            raise ValidationError(f"perm must be a non-empty vector, got shape {p.shape}")
        if not np.array_equal(np.sort(p), np.arange(p.shape[0])):
            raise ValidationError("perm is not a bijection")
        object.__setattr__(self, "perm", readonly_view(p))
        object.__setattr__(self, "cost", float(self.cost))

    def __len__(self) -> int:
        return int(self.perm.shape[0])

    def inverse(self) -> "Assignment":
        inv = np.empty_like(self.perm)
        inv[self.perm] = np.arange(len(self))
        return Assignment(inv, self.cost)

    def to_line(self) -> str:
        """Cache-file form: "cost perm_0 perm_1 ... perm_{P-1}"."""
        return " ".join([f"{self.cost:.17g}"] + [str(int(i)) for i in self.perm])

    @classmethod
    def from_line(cls, line: str) -> "Assignment":
        parts = line.split()
        if len(parts) < 2:
            raise ValidationError(f"assignment line needs a cost and at least one index: {line!r}")
        try:
            cost = float(parts[0])
            perm = np.array([int(p) for p in parts[1:]], dtype=np.int64)
        except ValueError:
            raise ValidationError(f"unparsable assignment line: {line!r}") from None
        return cls(perm, cost)


def _check_costs(costs) -> np.ndarray:
    c = np.asarray(costs, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] < 1:
        raise ParameterError(f"cost matrix must be square, got shape {c.shape}")
    if not np.isfinite(c).all():
        raise ParameterError("cost matrix contains non-finite entries")
    return c


def assignment_from_costs(costs) -> Assignment:
    """Exact minimum-cost bijection for a square cost matrix."""
    c = _check_costs(costs)
    rows, cols = linear_sum_assignment(c)
    return Assignment(cols.astype(np.int64), float(c[rows, cols].sum()))


def coords_assignment(a_xyz, b_xyz, squared: bool = False) -> Assignment:
    """Optimal matching between two equal-length coordinate arrays.

    Costs are plain (non-squared) L2 distances unless ``squared`` is set;
    squared mode is faster to build but changes the optimum and is never the
    default anywhere in the pipeline.
    """
    a = np.asarray(a_xyz, dtype=np.float64)
    b = np.asarray(b_xyz, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ParameterError(f"coordinate arrays must share shape, got {a.shape} vs {b.shape}")
    metric = "sqeuclidean" if squared else "euclidean"
    return assignment_from_costs(cdist(a, b, metric=metric))


def point_assignment(a: PointCloud, b: PointCloud, squared: bool = False) -> Assignment:
    """Optimal point-level bijection between two clouds of equal size."""
    if a.n_points != b.n_points:
        raise ParameterError(f"clouds differ in size: {a.n_points} vs {b.n_points}")
    return coords_assignment(a.points, b.points, squared=squared)


def _check_patch_shapes(a: PatchSet, b: PatchSet, need_size: bool) -> None:
    if a.num_patches != b.num_patches:
        raise ParameterError(
            f"patch sets differ in patch count: {a.num_patches} vs {b.num_patches}"
        )
    if need_size and a.patch_size != b.patch_size:
        raise ParameterError(
            f"patch sets differ in patch size: {a.patch_size} vs {b.patch_size}"
        )


def patch_assignment_centers(a: PatchSet, b: PatchSet, squared: bool = False) -> Assignment:
    """Patch bijection computed from center coordinates only (cheap mode).

    The returned cost is the center-level cost, not the full-point cost the
    permutation induces; see :func:`induced_full_cost` for the latter.
    """
    _check_patch_shapes(a, b, need_size=False)
    return coords_assignment(a.centers, b.centers, squared=squared)


def _inner_cost_matrix(a: PatchSet, b: PatchSet) -> np.ndarray:
    pa = a.patch_points.astype(np.float64)
    pb = b.patch_points.astype(np.float64)
    p = a.num_patches
    inner = np.empty((p, p), dtype=np.float64)
    for i in range(p):
        d = cdist(pa[i], pb.reshape(-1, 3)).reshape(a.patch_size, p, b.patch_size)
        for j in range(p):
            rows, cols = linear_sum_assignment(d[:, j, :])
            inner[i, j] = d[:, j, :][rows, cols].sum()
    return inner


def patch_assignment_full(a: PatchSet, b: PatchSet, *, max_patches: int = FULL_MODE_MAX_PATCHES,
                          max_patch_size: int = FULL_MODE_MAX_PATCH_SIZE) -> Assignment:
    """Patch bijection using all points: entry (p, q) of the outer cost is
    the optimal point-matching cost between patch p of ``a`` and patch q of
    ``b``, and the outer problem is solved exactly over patch bijections.

    O(P^2 * s^3); gated to P <= max_patches, s <= max_patch_size (raise the
    kwargs to override).
    """
    _check_patch_shapes(a, b, need_size=True)
    if a.num_patches > max_patches or a.patch_size > max_patch_size:
        raise ParameterError(
            f"full-mode assignment gated to P<={max_patches}, s<={max_patch_size} "
            f"(got P={a.num_patches}, s={a.patch_size}); raise max_patches/max_patch_size to override"
        )
    return assignment_from_costs(_inner_cost_matrix(a, b))


def induced_full_cost(a: PatchSet, b: PatchSet, perm) -> float:
    """Full-point cost a given patch permutation induces (optimal inner
    matchings per matched pair). Upper-bounds the full-mode optimum."""
    _check_patch_shapes(a, b, need_size=True)
    perm = np.asarray(perm, dtype=np.int64)
    if perm.shape != (a.num_patches,):
        raise ParameterError(f"perm must have shape ({a.num_patches},), got {perm.shape}")
    pa = a.patch_points.astype(np.float64)
    pb = b.patch_points.astype(np.float64)
    total = 0.0
    for i in range(a.num_patches):
        d = cdist(pa[i], pb[perm[i]])
        rows, cols = linear_sum_assignment(d)
        total += float(d[rows, cols].sum())
    return total


def brute_force_assignment(costs) -> Assignment:
    """Exhaustive assignment oracle: the exact minimum over all P! bijections.

    Returns the lexicographically smallest optimal permutation (first hit in
    lexicographic enumeration). Refuses P > 9.
    """
    c = _check_costs(costs)
    p = c.shape[0]
    if p > BRUTE_FORCE_LIMIT:
        raise ParameterError(f"brute force refused for P={p} > {BRUTE_FORCE_LIMIT}")
    perms = np.array(list(itertools.permutations(range(p))), dtype=np.int64)
    totals = c[np.arange(p), perms].sum(axis=1)
    best = int(np.argmin(totals))
    return Assignment(perms[best], float(totals[best]))
