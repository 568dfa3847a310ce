import numpy as np
import pytest

from patchmix.core import PointCloud, normalize_cloud
from patchmix.errors import ParameterError
from patchmix.perturb import drop_points, jitter, random_rotation, rotate, scale


def sphere_cloud(n=256, seed=0):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return PointCloud(v.astype(np.float32))


class TestScale:
    def test_doubles_unit_sphere_radius(self):
        out = scale(sphere_cloud(), 2.0)
        assert abs(np.linalg.norm(out.points.astype(np.float64), axis=1).max() - 2.0) < 1e-6

    def test_small_factor(self):
        out = scale(sphere_cloud(seed=1), 0.6)
        assert abs(np.linalg.norm(out.points.astype(np.float64), axis=1).max() - 0.6) < 1e-6

    def test_rejects_non_positive(self):
        with pytest.raises(ParameterError):
            scale(sphere_cloud(), 0.0)


class TestDropPoints:
    def test_keeps_ceil_of_remaining(self):
        cloud = sphere_cloud(1024, seed=2)
        out = drop_points(cloud, 0.2, np.random.default_rng(0))
        assert out.n_points == 820  # ceil(0.8 * 1024)

    def test_survivors_keep_order(self):
        cloud = sphere_cloud(64, seed=3)
        out = drop_points(cloud, 0.5, np.random.default_rng(1))
        pts = {tuple(p) for p in cloud.points.tolist()}
        assert all(tuple(p) in pts for p in out.points.tolist())
        # order preserved: every consecutive output pair appears in input order
        idx = [cloud.points.tolist().index(p) for p in out.points.tolist()]
        assert idx == sorted(idx)

    def test_rejects_full_drop(self):
        with pytest.raises(ParameterError):
            drop_points(sphere_cloud(), 1.0, np.random.default_rng(0))


class TestJitter:
    def test_reproducible(self):
        cloud = sphere_cloud(128, seed=4)
        a = jitter(cloud, 0.01, np.random.default_rng(9))
        b = jitter(cloud, 0.01, np.random.default_rng(9))
        assert a.points.tobytes() == b.points.tobytes()

    def test_noise_magnitude(self):
        cloud = sphere_cloud(4096, seed=5)
        out = jitter(cloud, 0.03, np.random.default_rng(2))
        resid = out.points.astype(np.float64) - cloud.points.astype(np.float64)
        assert abs(resid.std() - 0.03) < 0.003

    def test_zero_sigma_identity(self):
        cloud = sphere_cloud(32, seed=6)
        out = jitter(cloud, 0.0, np.random.default_rng(3))
        assert out.points.tobytes() == cloud.points.tobytes()


class TestRotation:
    def test_preserves_norms(self):
        cloud = sphere_cloud(128, seed=7)
        out = rotate(cloud, "y", 17.0)
        np.testing.assert_allclose(np.linalg.norm(out.points.astype(np.float64), axis=1),
                                   np.linalg.norm(cloud.points.astype(np.float64), axis=1),
                                   atol=1e-6)

    def test_z_rotation_keeps_z(self):
        cloud = sphere_cloud(64, seed=8)
        out = rotate(cloud, "z", 30.0)
        np.testing.assert_allclose(out.points[:, 2], cloud.points[:, 2], atol=1e-6)

    def test_random_rotation_bounded(self):
        cloud = PointCloud([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        for seed in range(20):
            out = random_rotation(cloud, "z", np.random.default_rng(seed), 30.0)
            angle = np.degrees(np.arctan2(out.points[0, 1], out.points[0, 0]))
            assert -30.0 - 1e-4 <= angle <= 30.0 + 1e-4

    def test_bad_axis(self):
        with pytest.raises(ParameterError):
            rotate(sphere_cloud(), "w", 10.0)

    def test_label_preserved(self):
        cloud = normalize_cloud(sphere_cloud(32, seed=9))
        out = rotate(cloud, "x", 5.0)
        assert out.label == cloud.label and out.id == cloud.id
