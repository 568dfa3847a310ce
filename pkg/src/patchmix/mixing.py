"""Mixed-sample generation with content-based soft targets.

Patch level: draw lambda ~ Beta(beta, beta), mask floor(lambda * P) patch
slots of the first cloud, fill the unmasked slots with the assigned patches
of the second cloud, and weight the two one-hot labels by the summed
significance scores of the patches each side contributed (or by the patch
ratio in linear mode). Block level masks a seed point plus nearest
neighbours; point level masks uniformly random points; both use the
ratio-based target.

Targets are renormalized to sum to 1; the unnormalized two-hot combination
is kept alongside on every result (``raw_target``).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .assignment import Assignment, patch_assignment_centers, patch_assignment_full, point_assignment
from .core import Mask, PointCloud, TargetDist, readonly_view
from .errors import MixError, ParameterError, ValidationError
from .patching import PatchSet, partition
from .scoring import ScoreVector, uniform_scores

TARGET_MODES = ("score", "linear")
MIX_LEVELS = ("patch", "block", "point")
PAIR_STRATEGIES = ("shuffle", "all-pairs-sample")
ASSIGN_MODES = ("centers", "full")


@dataclass(frozen=True)
class MixParams:
    """Knobs of one mixing run; beta is the Beta-distribution shape."""

    beta: float = 1.5
    target_mode: str = "score"
    level: str = "patch"
    seed: int = 0

    def __post_init__(self):
        if not (np.isfinite(self.beta) and self.beta > 0):
            raise ParameterError(f"beta must be positive and finite, got {self.beta}")
        if self.target_mode not in TARGET_MODES:
            raise ParameterError(f"target_mode must be one of {TARGET_MODES}, got {self.target_mode!r}")
        if self.level not in MIX_LEVELS:
            raise ParameterError(f"level must be one of {MIX_LEVELS}, got {self.level!r}")


@dataclass(frozen=True, eq=False)
class MixResult:
    """One mixed sample: cloud, mask, realized lambda, target, provenance."""

    mixed: PointCloud
    mask: Mask
    lam: float
    target: TargetDist
    raw_target: np.ndarray
    w1: float
    w2: float
    source_ids: tuple[str, str]
    assignment: Assignment
    level: str

    def __post_init__(self):
        object.__setattr__(self, "raw_target", readonly_view(np.asarray(self.raw_target, dtype=np.float64)))


def sample_lambda(beta: float, rng: np.random.Generator) -> float:
    """One draw from Beta(beta, beta)."""
    if not (np.isfinite(beta) and beta > 0):
        raise ParameterError(f"beta must be positive and finite, got {beta}")
    return float(rng.beta(beta, beta))


def sample_mask(num_slots: int, lam: float, rng: np.random.Generator) -> Mask:
    """Exactly floor(lam * num_slots) ones, placed uniformly without replacement."""
    if num_slots < 1:
        raise ParameterError(f"need at least one slot, got {num_slots}")
    if not (np.isfinite(lam) and 0.0 <= lam <= 1.0):
        raise ParameterError(f"lambda must lie in [0, 1], got {lam}")
    k = int(np.floor(lam * num_slots))
    bits = np.zeros(num_slots, dtype=np.uint8)
    if k > 0:
        bits[rng.choice(num_slots, size=k, replace=False)] = 1
    return Mask(bits)


def _combine_targets(y1: TargetDist, y2: TargetDist, w1: float, w2: float):
    """Weighted label combination, renormalized to a distribution.

    Dividing by (w1 + w2) keeps boundary and same-class cases exact:
    x/x == 1.0, so lam = 1 returns y1 bit-for-bit and identical labels stay
    a one-hot.
    """
    if y1.num_classes != y2.num_classes:
        raise ParameterError(f"targets disagree on C: {y1.num_classes} vs {y2.num_classes}")
    total = w1 + w2
    if not (np.isfinite(total) and total > 0.0):
        raise MixError(f"degenerate target weights w1={w1}, w2={w2}")
    raw = w1 * y1.weights + w2 * y2.weights
    return TargetDist(raw / total), raw


def _resolve_lambda(params: MixParams, rng: np.random.Generator, lam: float | None) -> float:
    if lam is None:
        return sample_lambda(params.beta, rng)
    if not (np.isfinite(lam) and 0.0 <= lam <= 1.0):
        raise ParameterError(f"forced lambda must lie in [0, 1], got {lam}")
    return float(lam)


def mix_patch_arrays(patches_a: np.ndarray, scores_a: np.ndarray,
                     patches_b: np.ndarray, scores_b: np.ndarray,
                     perm: np.ndarray, mask_bits: np.ndarray,
                     target_a: TargetDist, target_b: TargetDist,
                     target_mode: str = "score"):
    """Array-level patch mix shared by the typed API and the bindings.

    Slot i of the output takes patch i of ``a`` where the mask is set, else
    patch perm(i) of ``b``; points are copied verbatim (absolute
    coordinates). Returns (points (N, 3), target, raw_target, w1, w2).
    """
    sel = mask_bits.astype(bool)
    num_patches = patches_a.shape[0]
    out = np.empty_like(patches_a)
    out[sel] = patches_a[sel]
    out[~sel] = patches_b[perm[~sel]]
    if target_mode == "score":
        w1 = float(scores_a[sel].sum())
        w2 = float(scores_b[perm[~sel]].sum())
    else:
        w1 = int(sel.sum()) / num_patches
        w2 = (num_patches - int(sel.sum())) / num_patches
    target, raw = _combine_targets(target_a, target_b, w1, w2)
    return out.reshape(-1, 3), target, raw, w1, w2


def _source_id(cloud: PointCloud, fallback: str) -> str:
    return cloud.id if cloud.id is not None else fallback


def mix_patch(a: PatchSet, target_a: TargetDist, scores_a: ScoreVector,
              b: PatchSet, target_b: TargetDist, scores_b: ScoreVector,
              assignment: Assignment, params: MixParams, rng: np.random.Generator,
              lam: float | None = None) -> MixResult:
    """Patch-level mix of two tokenized clouds.

    The mask is drawn over the first set's patch indices; the second set is
    reached through the assignment permutation, so replaced patches land in
    spatially corresponding slots. ``lam`` forces the ratio instead of
    sampling (used by sweeps and boundary tests).
    """
    if a.overlapping or b.overlapping:
        raise ParameterError("overlapping patch sets cannot be mixed (not an exact cover)")
    if a.num_patches != b.num_patches or a.patch_size != b.patch_size:
        raise ParameterError(
            f"patch sets disagree on shape: P={a.num_patches},s={a.patch_size} "
            f"vs P={b.num_patches},s={b.patch_size}"
        )
    p = a.num_patches
    if len(scores_a) != p or len(scores_b) != p:
        raise ParameterError(f"score vectors must have length P={p}")
    if len(assignment) != p:
        raise ParameterError(f"assignment must map {p} patches, got {len(assignment)}")
    lam = _resolve_lambda(params, rng, lam)
    mask = sample_mask(p, lam, rng)
    points, target, raw, w1, w2 = mix_patch_arrays(
        a.patch_points, scores_a.scores, b.patch_points, scores_b.scores,
        assignment.perm, mask.bits, target_a, target_b, params.target_mode,
    )
    mixed = PointCloud(points, label_space=a.source.label_space or b.source.label_space)
    return MixResult(mixed, mask, lam, target, raw, w1, w2,
                     (_source_id(a.source, "a"), _source_id(b.source, "b")),
                     assignment, "patch")


def _ratio_weights(k: int, n: int) -> tuple[float, float]:
    return k / n, (n - k) / n


def _mix_points_by_mask(a: PointCloud, b: PointCloud, perm: np.ndarray,
                        sel: np.ndarray) -> np.ndarray:
    out = np.empty_like(a.points)
    out[sel] = a.points[sel]
    out[~sel] = b.points[perm[~sel]]
    return out


def _finish_point_level(a, target_a, b, target_b, assignment, lam, bits, level):
    n = a.n_points
    k = int(bits.sum())
    w1, w2 = _ratio_weights(k, n)
    target, raw = _combine_targets(target_a, target_b, w1, w2)
    points = _mix_points_by_mask(a, b, assignment.perm, bits.astype(bool))
    mixed = PointCloud(points, label_space=a.label_space or b.label_space)
    return MixResult(mixed, Mask(bits), lam, target, raw, w1, w2,
                     (_source_id(a, "a"), _source_id(b, "b")), assignment, level)


def _check_point_mix_inputs(a: PointCloud, b: PointCloud, assignment: Assignment) -> None:
    if a.n_points != b.n_points:
        raise ParameterError(f"clouds differ in size: {a.n_points} vs {b.n_points}")
    if len(assignment) != a.n_points:
        raise ParameterError(
            f"assignment must map {a.n_points} points, got {len(assignment)}"
        )


def mix_block(a: PointCloud, target_a: TargetDist, b: PointCloud, target_b: TargetDist,
              assignment: Assignment, params: MixParams, rng: np.random.Generator,
              lam: float | None = None) -> MixResult:
    """Block-level baseline: keep a random seed point of ``a`` plus its
    floor(lam*N)-1 nearest neighbours, take the rest from ``b`` via the
    point assignment. Target weights are the kept/replaced point ratio."""
    _check_point_mix_inputs(a, b, assignment)
    n = a.n_points
    lam = _resolve_lambda(params, rng, lam)
    k = int(np.floor(lam * n))
    bits = np.zeros(n, dtype=np.uint8)
    if k > 0:
        seed_point = int(rng.integers(n))
        dists = np.linalg.norm(a.points.astype(np.float64) - a.points[seed_point].astype(np.float64), axis=1)
        order = np.argsort(dists, kind="stable")  # ties: lower index first
        bits[order[:k]] = 1
    return _finish_point_level(a, target_a, b, target_b, assignment, lam, bits, "block")


def mix_point(a: PointCloud, target_a: TargetDist, b: PointCloud, target_b: TargetDist,
              assignment: Assignment, params: MixParams, rng: np.random.Generator,
              lam: float | None = None) -> MixResult:
    """Point-level baseline: floor(lam*N) positions drawn uniformly keep
    ``a``'s points, the rest come from ``b`` via the point assignment."""
    _check_point_mix_inputs(a, b, assignment)
    lam = _resolve_lambda(params, rng, lam)
    mask = sample_mask(a.n_points, lam, rng)
    return _finish_point_level(a, target_a, b, target_b, assignment, lam,
                               np.asarray(mask.bits), "point")


# ---------------------------------------------------------------------------
# dataset-scale generation

@dataclass
class BatchFailure:
    """One skipped pair in a batch run."""

    index: int
    src1: str
    src2: str
    reason: str


def _pick_pair(strategy: str, j: int, n: int, rng: np.random.Generator) -> tuple[int, int]:
    if strategy == "shuffle":
        i1 = j % n
        if n == 1:
            return i1, i1
        i2 = int(rng.integers(n - 1))
        if i2 >= i1:
            i2 += 1
        return i1, i2
    # all-pairs-sample: uniform over ordered pairs, self-pairs allowed
    return int(rng.integers(n)), int(rng.integers(n))


def _prepare_cloud(cloud: PointCloud, idx: int, scores: Mapping[str, ScoreVector] | None,
                   params: MixParams, patch_size: int, num_patches: int | None):
    """Partition + scores for one sample; raises on missing prerequisites."""
    sid = _source_id(cloud, f"sample{idx}")
    pset = partition(cloud, num_patches=num_patches, patch_size=patch_size)
    if params.target_mode == "score":
        if scores is None or sid not in scores:
            raise ParameterError(f"no score cache entry for {sid!r}")
        sv = scores[sid]
        if len(sv) != pset.num_patches:
            raise ParameterError(
                f"score vector for {sid!r} has {len(sv)} entries, expected {pset.num_patches}"
            )
    else:
        sv = uniform_scores(pset.num_patches)
    return sid, pset, sv


def _mix_pair(dataset: Sequence[PointCloud], j: int, seedseq: np.random.SeedSequence,
              scores, params: MixParams, strategy: str, patch_size: int,
              num_patches: int | None, assign_mode: str):
    rng = np.random.default_rng(seedseq)
    i1, i2 = _pick_pair(strategy, j, len(dataset), rng)
    a, b = dataset[i1], dataset[i2]
    id1, id2 = _source_id(a, f"sample{i1}"), _source_id(b, f"sample{i2}")
    try:
        y1, y2 = a.one_hot_target(), b.one_hot_target()
        if params.level == "patch":
            _, pa, sa = _prepare_cloud(a, i1, scores, params, patch_size, num_patches)
            _, pb, sb = _prepare_cloud(b, i2, scores, params, patch_size, num_patches)
            if assign_mode == "full":
                assign = patch_assignment_full(pa, pb)
            else:
                assign = patch_assignment_centers(pa, pb)
            return mix_patch(pa, y1, sa, pb, y2, sb, assign, params, rng)
        assign = point_assignment(a, b)
        mixer = mix_block if params.level == "block" else mix_point
        return mixer(a, y1, b, y2, assign, params, rng)
    except (ParameterError, ValidationError, MixError) as exc:
        return BatchFailure(j, id1, id2, str(exc))


def batch_mix(dataset: Sequence[PointCloud], scores: Mapping[str, ScoreVector] | None,
              params: MixParams, pair_strategy: str = "shuffle", count: int = 0,
              seed: int | None = None, *, patch_size: int = 32,
              num_patches: int | None = None, assign_mode: str = "centers",
              workers: int = 1, failures: list[BatchFailure] | None = None,
              ) -> Iterator[MixResult]:
    """Generate ``count`` mixed samples from a dataset of labelled clouds.

    Every result's randomness comes from a stream spawned from (seed,
    result-index), so parallel (``workers`` > 1) and serial runs emit
    byte-identical outputs in the same order. Per-pair problems (missing
    score entries, shape mismatches) are appended to ``failures`` instead of
    aborting the batch.
    """
    if pair_strategy not in PAIR_STRATEGIES:
        raise ParameterError(f"pair strategy must be one of {PAIR_STRATEGIES}, got {pair_strategy!r}")
    if assign_mode not in ASSIGN_MODES:
        raise ParameterError(f"assign mode must be one of {ASSIGN_MODES}, got {assign_mode!r}")
    if count < 0:
        raise ParameterError(f"count must be >= 0, got {count}")
    if not dataset and count > 0:
        raise ParameterError("cannot mix an empty dataset")
    if count > 0:
        sizes = {c.n_points for c in dataset}
        if len(sizes) > 1:
            raise ParameterError(f"all clouds must share N, got sizes {sorted(sizes)}")
    seeds = np.random.SeedSequence(params.seed if seed is None else seed).spawn(max(count, 1))

    def run(j: int):
        return _mix_pair(dataset, j, seeds[j], scores, params, pair_strategy,
                         patch_size, num_patches, assign_mode)

    def emit(outcomes) -> Iterator[MixResult]:
        for outcome in outcomes:
            if isinstance(outcome, BatchFailure):
                if failures is not None:
                    failures.append(outcome)
            else:
                yield outcome

    if count == 0:
        return iter(())
    if workers > 1:
        def parallel():
            with ThreadPoolExecutor(max_workers=workers) as pool:
                yield from pool.map(run, range(count))
        return emit(parallel())
    return emit(map(run, range(count)))


# ---------------------------------------------------------------------------
# manifest

@dataclass
class ManifestRow:
    """One mixed sample as recorded in a batch manifest."""

    out_id: str
    src1: str
    src2: str
    lam: float
    popcount: int
    w1: float
    w2: float
    target: np.ndarray


def manifest_row(out_id: str, result: MixResult) -> ManifestRow:
    return ManifestRow(out_id, result.source_ids[0], result.source_ids[1],
                       result.lam, result.mask.popcount, result.w1, result.w2,
                       np.asarray(result.target.weights))


def format_manifest_line(row: ManifestRow) -> str:
    target = " ".join(f"{v:.17g}" for v in row.target)
    return (f"{row.out_id}\t{row.src1}\t{row.src2}\t{row.lam:.17g}\t"
            f"{row.popcount}\t{row.w1:.17g}\t{row.w2:.17g}\t{target}")


def write_manifest(rows: Sequence[ManifestRow], path, *, level: str,
                   slots: int, num_classes: int) -> None:
    """Write a mix manifest; the comment header records mask width (slots)
    and class count so stats can recover ratios."""
    lines = [f"# patchmix-manifest 1 level={level} slots={slots} classes={num_classes}"]
    lines.extend(format_manifest_line(r) for r in rows)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path):
    """Parse a manifest into (meta, rows, problems).

    ``meta`` holds header fields when present; ``problems`` collects
    (line-number, message) pairs for malformed lines instead of raising.
    """
    path = Path(path)
    meta: dict[str, str] = {}
    rows: list[ManifestRow] = []
    problems: list[tuple[int, str]] = []
    text = path.read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if line.startswith("#"):
            fields = line[1:].split()
            for f in fields:
                if "=" in f:
                    key, _, val = f.partition("=")
                    meta[key] = val
            continue
        parts = line.split("\t")
        if len(parts) != 8:
            problems.append((lineno, f"expected 8 tab-separated fields, got {len(parts)}"))
            continue
        try:
            target = np.array([float(v) for v in parts[7].split()], dtype=np.float64)
            rows.append(ManifestRow(parts[0], parts[1], parts[2], float(parts[3]),
                                    int(parts[4]), float(parts[5]), float(parts[6]), target))
        except ValueError:
            problems.append((lineno, "unparsable numeric field"))
    return meta, rows, problems
