import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from patchmix.core import (LabelSpace, Mask, PointCloud, TargetDist, load_cloud,
                           normalize_cloud, save_cloud)
from patchmix.errors import FormatError, ParameterError, ValidationError


def cloud_arrays(min_points=1, max_points=64, tidy=False):
    """Finite float32 (N, 3) arrays; tidy mode avoids subnormals so text
    round-trips keep 6 significant digits."""
    if tidy:
        elems = st.floats(min_value=-1e6, max_value=1e6, width=32)
    else:
        elems = st.floats(allow_nan=False, allow_infinity=False, width=32)
    return hnp.arrays(np.float32, st.tuples(st.integers(min_points, max_points), st.just(3)),
                      elements=elems)


class TestPointCloud:
    def test_basic_construction(self):
        c = PointCloud([[0, 0, 0], [1, 0, 0]], label=1, label_space=LabelSpace(3))
        assert c.n_points == 2
        assert c.points.dtype == np.float32
        assert not c.points.flags.writeable

    def test_rejects_empty(self):
        with pytest.raises(ValidationError):
            PointCloud(np.zeros((0, 3), dtype=np.float32))

    def test_rejects_nan(self):
        with pytest.raises(ValidationError):
            PointCloud([[0, 0, float("nan")]])

    def test_rejects_bad_shape(self):
        with pytest.raises(ValidationError):
            PointCloud([[0, 0], [1, 1]])

    def test_label_outside_space(self):
        with pytest.raises(ValidationError):
            PointCloud([[0, 0, 0]], label=5, label_space=LabelSpace(3))

    def test_no_copy_for_float32_input(self):
        pts = np.zeros((4, 3), dtype=np.float32)
        c = PointCloud(pts)
        assert np.shares_memory(c.points, pts)
        assert pts.flags.writeable  # caller's flag untouched


class TestLabelSpace:
    def test_needs_two_classes(self):
        with pytest.raises(ValidationError):
            LabelSpace(1)

    def test_names_must_be_unique(self):
        with pytest.raises(ValidationError):
            LabelSpace(2, ("a", "a"))

    def test_one_hot(self):
        t = LabelSpace(4).one_hot(2)
        assert np.array_equal(t.weights, [0, 0, 1, 0])


class TestTargetDist:
    def test_must_sum_to_one(self):
        with pytest.raises(ValidationError):
            TargetDist([0.5, 0.6])

    def test_rejects_negative(self):
        with pytest.raises(ValidationError):
            TargetDist([1.5, -0.5])

    def test_accepts_near_one(self):
        TargetDist([1 / 3, 1 / 3, 1 / 3])


class TestMask:
    def test_rejects_non_binary(self):
        with pytest.raises(ValidationError):
            Mask([0, 2, 1])

    def test_popcount(self):
        assert Mask([1, 0, 1, 1]).popcount == 3


class TestXyzFormat:
    def test_three_point_file(self, tmp_path):
        p = tmp_path / "tri.xyz"
        p.write_text("0 0 0\n1 0 0\n0 1 0\n")
        c = load_cloud(p)
        assert c.n_points == 3
        assert np.array_equal(c.points, [[0, 0, 0], [1, 0, 0], [0, 1, 0]])
        assert c.id == "tri"

    def test_comments_and_blanks_skipped(self, tmp_path):
        p = tmp_path / "c.xyz"
        p.write_text("# a comment\n1 2 3\n\n4 5 6\n# trailing\n")
        assert load_cloud(p).n_points == 2

    def test_nan_reported_with_line(self, tmp_path):
        p = tmp_path / "bad.xyz"
        p.write_text("0 0 nan\n")
        with pytest.raises(FormatError, match="line 1"):
            load_cloud(p)

    def test_wrong_field_count_reported(self, tmp_path):
        p = tmp_path / "bad.xyz"
        p.write_text("1 2 3\n4 5\n")
        with pytest.raises(FormatError, match="line 2"):
            load_cloud(p)

    def test_empty_file_rejected(self, tmp_path):
        p = tmp_path / "empty.xyz"
        p.write_text("# nothing\n")
        with pytest.raises(FormatError):
            load_cloud(p)

    @settings(max_examples=40)
    @given(cloud_arrays(tidy=True))
    def test_round_trip_six_significant_digits(self, tmp_path_factory, pts):
        pts = np.where(np.abs(pts) < 1e-6, 0.0, pts).astype(np.float32)
        path = tmp_path_factory.mktemp("xyz") / "c.xyz"
        save_cloud(PointCloud(pts), path)
        back = load_cloud(path)
        np.testing.assert_allclose(back.points, pts, rtol=1e-5, atol=1e-12)


class TestPpmxFormat:
    def test_round_trip_bitwise(self, tmp_path):
        rng = np.random.default_rng(7)
        pts = rng.normal(size=(50, 3)).astype(np.float32)
        c = PointCloud(pts, label=3, label_space=LabelSpace(10), id="x")
        path = tmp_path / "x.ppmx"
        save_cloud(c, path)
        back = load_cloud(path)
        assert back.points.tobytes() == pts.tobytes()
        assert back.label == 3
        assert back.label_space.num_classes == 10

    def test_single_point_round_trip(self, tmp_path):
        path = tmp_path / "o.ppmx"
        save_cloud(PointCloud([[0, 0, 0]]), path)
        back = load_cloud(path)
        assert back.n_points == 1
        assert np.array_equal(back.points, [[0, 0, 0]])

    def test_file_size_matches_format(self, tmp_path):
        # header fields: magic 4 + version 2 + flags 2 + N 4 + C 4 (+ label 4)
        pts = np.random.default_rng(0).normal(size=(1024, 3)).astype(np.float32)
        unlabelled = tmp_path / "u.ppmx"
        save_cloud(PointCloud(pts), unlabelled)
        assert unlabelled.stat().st_size == 16 + 1024 * 3 * 4
        labelled = tmp_path / "l.ppmx"
        save_cloud(PointCloud(pts, label=1, label_space=LabelSpace(5)), labelled)
        assert labelled.stat().st_size == 20 + 1024 * 3 * 4

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.ppmx"
        p.write_bytes(b"NOPE" + b"\x00" * 28)
        with pytest.raises(FormatError, match="byte 0"):
            load_cloud(p)

    def test_truncated_points(self, tmp_path):
        p = tmp_path / "short.ppmx"
        p.write_bytes(struct.pack("<4sHHII", b"PPMX", 1, 0, 2, 0) + b"\x00" * 12)
        with pytest.raises(FormatError, match="expected"):
            load_cloud(p)

    def test_non_finite_coordinate_offset(self, tmp_path):
        pts = np.zeros((2, 3), dtype="<f4")
        payload = bytearray(struct.pack("<4sHHII", b"PPMX", 1, 0, 2, 0) + pts.tobytes())
        payload[16 + 3 * 4:16 + 4 * 4] = struct.pack("<f", float("inf"))
        p = tmp_path / "inf.ppmx"
        p.write_bytes(bytes(payload))
        with pytest.raises(FormatError, match=f"byte {16 + 12}"):
            load_cloud(p)

    def test_labelled_save_needs_space(self, tmp_path):
        c = PointCloud([[0, 0, 0]], label=1)
        with pytest.raises(ParameterError):
            save_cloud(c, tmp_path / "x.ppmx")

    def test_zero_points_header_rejected(self, tmp_path):
        p = tmp_path / "zero.ppmx"
        p.write_bytes(struct.pack("<4sHHII", b"PPMX", 1, 0, 0, 0))
        with pytest.raises(FormatError):
            load_cloud(p)

    @settings(max_examples=40)
    @given(cloud_arrays())
    def test_round_trip_any_finite_cloud(self, tmp_path_factory, pts):
        path = tmp_path_factory.mktemp("ppmx") / "c.ppmx"
        save_cloud(PointCloud(pts), path)
        assert load_cloud(path).points.tobytes() == pts.tobytes()


class TestNormalize:
    def test_two_point_example(self):
        # centroid (3,0,0), max radius 1 -> (-1,0,0), (1,0,0)
        c = normalize_cloud(PointCloud([[2, 0, 0], [4, 0, 0]]))
        np.testing.assert_allclose(c.points, [[-1, 0, 0], [1, 0, 0]], atol=1e-6)

    def test_single_point_collapses_to_origin(self):
        c = normalize_cloud(PointCloud([[5, 5, 5]]))
        assert np.array_equal(c.points, [[0, 0, 0]])

    def test_postconditions_and_idempotence(self):
        rng = np.random.default_rng(3)
        c = PointCloud((rng.normal(size=(100, 3)) * 40 + 7).astype(np.float32))
        n1 = normalize_cloud(c)
        assert np.linalg.norm(n1.points.astype(np.float64).mean(axis=0)) < 1e-6
        assert abs(np.linalg.norm(n1.points.astype(np.float64), axis=1).max() - 1) < 1e-6
        n2 = normalize_cloud(n1)
        np.testing.assert_allclose(n2.points, n1.points, atol=1e-6)

    @settings(max_examples=30)
    @given(cloud_arrays(tidy=True))
    def test_idempotent_property(self, pts):
        n1 = normalize_cloud(PointCloud(pts))
        n2 = normalize_cloud(n1)
        np.testing.assert_allclose(n2.points, n1.points, atol=1e-6)

    def test_keeps_label(self):
        c = PointCloud([[1, 2, 3], [4, 5, 6]], label=1, label_space=LabelSpace(2))
        n = normalize_cloud(c)
        assert n.label == 1 and n.label_space.num_classes == 2
