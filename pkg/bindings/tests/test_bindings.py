import numpy as np
import pytest

import patchmix
import patchmix_bindings as pb
from patchmix.assignment import (brute_force_assignment, coords_assignment,
                                 patch_assignment_centers)
from patchmix.core import LabelSpace, PointCloud
from patchmix.mixing import MixParams, mix_patch
from patchmix.patching import partition
from patchmix.scoring import AttentionInputs, ScoreVector, significance_scores
from scipy.spatial.distance import cdist

SPACE = LabelSpace(4)


def cloud_points(n, seed):
    return np.random.default_rng(seed).uniform(-1, 1, size=(n, 3)).astype(np.float32)


def patch_fixture(p=4, s=8, seed=0):
    rng = np.random.default_rng(seed)
    pts_a = cloud_points(p * s, seed)
    pts_b = cloud_points(p * s, seed + 500)
    pa = partition(PointCloud(pts_a), num_patches=p, patch_size=s)
    pb_ = partition(PointCloud(pts_b), num_patches=p, patch_size=s)
    raw_a = rng.uniform(0.01, 1, size=p)
    raw_b = rng.uniform(0.01, 1, size=p)
    return pa, pb_, raw_a / raw_a.sum(), raw_b / raw_b.sum()


class TestVersion:
    def test_mirrors_core(self):
        assert pb.__version__ == patchmix.__version__


class TestBindPartition:
    def test_matches_primary(self):
        pts = cloud_points(64, 3)
        centers, membership = pb.bind_partition(pts, 8, 8, seed=1)
        pset = partition(PointCloud(pts), num_patches=8, patch_size=8, seed=1)
        assert centers.tobytes() == pset.centers.tobytes()
        assert membership.tobytes() == np.asarray(pset.membership).tobytes()

    def test_rejects_wrong_shape_before_core(self, monkeypatch):
        calls = []
        monkeypatch.setattr("patchmix_bindings.partition",
                            lambda *a, **k: calls.append(1))
        with pytest.raises(ValueError):
            pb.bind_partition(np.zeros((4, 2), dtype=np.float32), 2, 2)
        with pytest.raises(TypeError):
            pb.bind_partition(np.zeros((4, 3), dtype=np.float64), 2, 2)
        with pytest.raises(TypeError):
            pb.bind_partition([[0, 0, 0]] * 4, 2, 2)
        assert not calls, "core was invoked despite invalid arguments"

    def test_does_not_mutate_caller_buffer(self):
        pts = cloud_points(32, 4)
        copy = pts.copy()
        pb.bind_partition(pts, 4, 8)
        assert pts.tobytes() == copy.tobytes()
        assert pts.flags.writeable


class TestBindPatchAssignment:
    def test_six_center_oracle_fixture(self):
        # same fixture family as the primary oracle tests: solver == exhaustion
        a = cloud_points(6, 10)
        b = cloud_points(6, 60)
        perm, cost = pb.bind_patch_assignment(a, b)
        oracle = brute_force_assignment(cdist(a.astype(np.float64), b.astype(np.float64)))
        assert cost == pytest.approx(oracle.cost, rel=1e-9)
        primary = coords_assignment(a, b)
        assert cost == primary.cost
        assert perm.tobytes() == np.asarray(primary.perm).tobytes()

    def test_matches_patchset_centers_path(self):
        pa, pb_, _, _ = patch_fixture(seed=11)
        perm, cost = pb.bind_patch_assignment(np.ascontiguousarray(pa.centers),
                                              np.ascontiguousarray(pb_.centers))
        primary = patch_assignment_centers(pa, pb_)
        assert cost == primary.cost
        assert perm.tobytes() == np.asarray(primary.perm).tobytes()

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            pb.bind_patch_assignment(cloud_points(4, 0), cloud_points(5, 1))

    def test_wrong_width_rejected(self):
        with pytest.raises(ValueError):
            pb.bind_patch_assignment(np.zeros((4, 2), dtype=np.float32),
                                     np.zeros((4, 2), dtype=np.float32))


class TestBindScores:
    def golden_inputs(self):
        # score-formula golden: single head, tokens (0, 1, 2), identity weights
        tokens = np.array([[0.0], [1.0], [2.0]], dtype=np.float32)
        w = np.ones((1, 1, 1), dtype=np.float32)
        return tokens, w

    def test_golden_fixture(self):
        tokens, w = self.golden_inputs()
        got = pb.bind_scores(tokens, w, w, w)
        np.testing.assert_allclose(got, [1 / 3, 2 / 3], rtol=1e-12)
        primary = significance_scores(AttentionInputs(tokens, w, w, w))
        assert got.tobytes() == np.asarray(primary.scores).tobytes()

    def test_random_inputs_bit_identical(self):
        rng = np.random.default_rng(21)
        tokens = rng.normal(size=(9, 6)).astype(np.float32)
        w_q = rng.normal(size=(2, 6, 3)).astype(np.float32)
        w_k = rng.normal(size=(2, 6, 3)).astype(np.float32)
        w_v = rng.normal(size=(2, 6, 3)).astype(np.float32)
        got = pb.bind_scores(tokens, w_q, w_k, w_v)
        primary = significance_scores(AttentionInputs(tokens, w_q, w_k, w_v))
        assert got.tobytes() == np.asarray(primary.scores).tobytes()

    def test_head_layout_rejected_before_core(self, monkeypatch):
        calls = []
        monkeypatch.setattr("patchmix_bindings.significance_scores",
                            lambda *a, **k: calls.append(1))
        tokens = np.zeros((3, 5), dtype=np.float32)
        w = np.zeros((2, 5, 2), dtype=np.float32)
        with pytest.raises(ValueError):
            pb.bind_scores(tokens, w, w, w)
        assert not calls


class TestBindMix:
    def primary_result(self, pa, pb_, sa, sb, seed, lam=None, mode="score"):
        assign = patch_assignment_centers(pa, pb_)
        return mix_patch(pa, SPACE.one_hot(0), ScoreVector(sa),
                         pb_, SPACE.one_hot(1), ScoreVector(sb),
                         assign, MixParams(target_mode=mode),
                         np.random.default_rng(seed), lam=lam), assign

    def test_boundary_lambda_returns_first_input(self):
        pa, pb_, sa, sb = patch_fixture(seed=31)
        patches_a = np.ascontiguousarray(pa.patch_points)
        patches_b = np.ascontiguousarray(pb_.patch_points)
        perm, _ = pb.bind_patch_assignment(np.ascontiguousarray(pa.centers),
                                           np.ascontiguousarray(pb_.centers))
        mixed, target, lam, mask = pb.bind_mix(
            patches_a, SPACE.one_hot(0).weights.copy(), sa,
            patches_b, SPACE.one_hot(1).weights.copy(), sb,
            perm, seed=5, lam=1.0)
        assert lam == 1.0
        assert mask.sum() == pa.num_patches
        assert mixed.tobytes() == patches_a.reshape(-1, 3).tobytes()
        np.testing.assert_array_equal(target, SPACE.one_hot(0).weights)

    @pytest.mark.parametrize("seed", [0, 7, 99])
    def test_bit_identical_to_primary(self, seed):
        pa, pb_, sa, sb = patch_fixture(seed=40 + seed)
        want, assign = self.primary_result(pa, pb_, sa, sb, seed)
        mixed, target, lam, mask = pb.bind_mix(
            np.ascontiguousarray(pa.patch_points), SPACE.one_hot(0).weights.copy(), sa,
            np.ascontiguousarray(pb_.patch_points), SPACE.one_hot(1).weights.copy(), sb,
            np.asarray(assign.perm), seed=seed)
        assert lam == want.lam
        assert mask.tobytes() == want.mask.bits.tobytes()
        assert mixed.tobytes() == want.mixed.points.tobytes()
        assert target.tobytes() == want.target.weights.tobytes()

    def test_linear_mode_matches_primary(self):
        pa, pb_, sa, sb = patch_fixture(seed=77)
        want, assign = self.primary_result(pa, pb_, sa, sb, 3, mode="linear")
        _, target, _, _ = pb.bind_mix(
            np.ascontiguousarray(pa.patch_points), SPACE.one_hot(0).weights.copy(), sa,
            np.ascontiguousarray(pb_.patch_points), SPACE.one_hot(1).weights.copy(), sb,
            np.asarray(assign.perm), seed=3, target_mode="linear")
        assert target.tobytes() == want.target.weights.tobytes()

    def test_wrong_shapes_rejected_before_core(self, monkeypatch):
        calls = []
        monkeypatch.setattr("patchmix_bindings.mix_patch_arrays",
                            lambda *a, **k: calls.append(1))
        pa, pb_, sa, sb = patch_fixture(seed=50)
        patches = np.ascontiguousarray(pa.patch_points)
        y = SPACE.one_hot(0).weights.copy()
        perm = np.arange(pa.num_patches)
        bad_patches = np.zeros((4, 8, 2), dtype=np.float32)
        with pytest.raises(ValueError):
            pb.bind_mix(bad_patches, y, sa, bad_patches, y, sb, perm)
        with pytest.raises(TypeError):
            pb.bind_mix(patches.astype(np.float64), y, sa, patches, y, sb, perm)
        with pytest.raises(ValueError):
            pb.bind_mix(patches, y, sa, patches, y, sb, np.zeros(4, dtype=np.int64))
        with pytest.raises(TypeError):
            pb.bind_mix(patches, y, sa, patches, y, sb, perm.astype(np.float64))
        assert not calls

    def test_no_caller_buffer_mutated(self):
        pa, pb_, sa, sb = patch_fixture(seed=60)
        patches_a = np.ascontiguousarray(pa.patch_points)
        patches_b = np.ascontiguousarray(pb_.patch_points)
        snapshots = [arr.copy() for arr in (patches_a, patches_b, sa, sb)]
        perm = np.asarray(patch_assignment_centers(pa, pb_).perm)
        pb.bind_mix(patches_a, SPACE.one_hot(0).weights.copy(), sa,
                    patches_b, SPACE.one_hot(1).weights.copy(), sb, perm, seed=1)
        for arr, snap in zip((patches_a, patches_b, sa, sb), snapshots):
            assert arr.tobytes() == snap.tobytes()
            assert arr.flags.writeable
