"""Patch-level point cloud mixing with attention-derived soft targets."""

from .assignment import (Assignment, assignment_from_costs, brute_force_assignment,
                         coords_assignment, induced_full_cost, patch_assignment_centers,
                         patch_assignment_full, point_assignment)
from .core import (LabelSpace, Mask, PointCloud, TargetDist, load_cloud, normalize_cloud,
                   save_cloud)
from .errors import (CacheError, FormatError, MixError, NumericError, ParameterError,
                     PatchMixError, ScoreError, ValidationError)
from .mixing import (BatchFailure, MixParams, MixResult, batch_mix, mix_block, mix_patch,
                     mix_patch_arrays, mix_point, read_manifest, sample_lambda, sample_mask,
                     write_manifest)
from .patching import PatchSet, fps_centers, knn_patches, partition
from .scoring import (AttentionInputs, AttentionRows, AttentionState, ScoreVector,
                      attention_forward, head_scores, read_score_cache,
                      scores_from_attention_file, scores_from_row, significance_scores,
                      uniform_scores, write_score_cache)

__version__ = "0.1.0"

__all__ = [
    "Assignment", "AttentionInputs", "AttentionRows", "AttentionState", "BatchFailure",
    "CacheError", "FormatError", "LabelSpace", "Mask", "MixError", "MixParams", "MixResult",
    "NumericError", "ParameterError", "PatchMixError", "PatchSet", "PointCloud", "ScoreError",
    "ScoreVector", "TargetDist", "ValidationError", "assignment_from_costs", "attention_forward",
    "batch_mix", "brute_force_assignment", "coords_assignment", "fps_centers", "head_scores",
    "induced_full_cost", "knn_patches", "load_cloud", "mix_block", "mix_patch",
    "mix_patch_arrays", "mix_point", "normalize_cloud", "partition",
    "patch_assignment_centers", "patch_assignment_full", "point_assignment", "read_manifest",
    "read_score_cache", "sample_lambda", "sample_mask", "save_cloud",
    "scores_from_attention_file", "scores_from_row", "significance_scores", "uniform_scores",
    "write_manifest", "write_score_cache",
]
