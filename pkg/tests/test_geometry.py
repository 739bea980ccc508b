"""Rotation, projection, and weight-matrix behavior.

Oracles here are built independently of the library code: rotations are
re-composed from elementary matrices, weights are recomputed with plain
loops, and projections are checked against dense matrix arithmetic.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tomopr.containers import VoxelVolume
from tomopr.errors import ResourceLimitError
from tomopr.geometry import (
    CameraModel,
    DEFAULT_RIG_ANGLES_DEG,
    build_weight_matrix,
    forward_project,
    make_rig,
    project_point,
    rotation_from_euler,
)


def elementary_z(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def elementary_x(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


class TestRotation:
    def test_zero_angles_identity(self):
        np.testing.assert_allclose(rotation_from_euler(0, 0, 0), np.eye(3), atol=1e-15)

    def test_alpha_only_rotates_about_z(self):
        """(alpha, 0, 0) must be a plain z rotation with row 3 = (0, 0, 1)."""
        a = 0.8
        r = rotation_from_euler(a, 0, 0)
        np.testing.assert_allclose(r, elementary_z(a), atol=1e-15)
        np.testing.assert_allclose(r[2], [0, 0, 1], atol=1e-15)

    def test_matches_composed_elementary_rotations(self):
        """Closed form equals Rz(alpha) @ Rx(beta) @ Rz(gamma) numerically."""
        a, b, g = 0.3, 0.7, 1.1
        expected = elementary_z(a) @ elementary_x(b) @ elementary_z(g)
        np.testing.assert_allclose(rotation_from_euler(a, b, g), expected, atol=1e-12)

    def test_orthonormal_at_sample_angles(self):
        r = rotation_from_euler(0.3, 0.7, 1.1)
        np.testing.assert_allclose(r.T @ r, np.eye(3), atol=1e-12)
        assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-12)

    @given(
        st.floats(-10, 10),
        st.floats(-10, 10),
        st.floats(-10, 10),
    )
    @settings(max_examples=200, deadline=None)
    def test_orthonormal_everywhere(self, a, b, g):
        r = rotation_from_euler(a, b, g)
        assert np.abs(r.T @ r - np.eye(3)).max() < 1e-12
        assert abs(np.linalg.det(r) - 1.0) < 1e-12

    def test_row3_depends_only_on_beta_gamma(self):
        """Alpha rolls the image plane; it cannot move the line of sight."""
        r1 = rotation_from_euler(0.0, 0.5, 1.2)
        r2 = rotation_from_euler(2.1, 0.5, 1.2)
        np.testing.assert_allclose(r1[2], r2[2], atol=1e-15)


class TestProjectPoint:
    def test_identity_camera_drops_z(self):
        cam = CameraModel(euler=(0, 0, 0), scale=1.0, origin_offset=(0, 0), image_dims=(8, 8))
        np.testing.assert_allclose(project_point(cam, [3.0, 5.0, 9.0]), [3.0, 5.0])

    def test_matches_dense_arithmetic(self):
        cam = CameraModel(
            euler=(0.2, 0.6, -0.4), scale=1.7, origin_offset=(4.5, -2.0), image_dims=(8, 8)
        )
        rng = np.random.default_rng(42)
        pts = rng.normal(size=(20, 3))
        expected = 1.7 * pts @ rotation_from_euler(0.2, 0.6, -0.4)[:2].T + [4.5, -2.0]
        np.testing.assert_allclose(project_point(cam, pts), expected, atol=1e-12)

    def test_translation_along_line_of_sight_is_invisible(self):
        cam = CameraModel(euler=(0.3, 0.9, 0.5), scale=2.0, origin_offset=(1, 1), image_dims=(8, 8))
        rng = np.random.default_rng(7)
        pts = rng.normal(size=(10, 3))
        shifted = pts + 3.25 * cam.line_of_sight
        np.testing.assert_allclose(project_point(cam, shifted), project_point(cam, pts), atol=1e-12)

    def test_rejects_non_finite(self):
        cam = CameraModel(euler=(0, 0, 0), image_dims=(4, 4))
        with pytest.raises(ValueError):
            project_point(cam, [np.nan, 0.0, 0.0])


def brute_force_weights(camera, volume_dims, radius=1.5):
    """Per-voxel weights recomputed with plain loops over candidate pixels."""
    w, h = camera.image_dims
    rows = {}
    for ix in range(volume_dims[0]):
        for iy in range(volume_dims[1]):
            for iz in range(volume_dims[2]):
                px, py = project_point(camera, [ix, iy, iz])
                entries = {}
                for u in range(math.floor(px - radius), math.ceil(px + radius) + 1):
                    for v in range(math.floor(py - radius), math.ceil(py + radius) + 1):
                        if not (0 <= u <= w - 1 and 0 <= v <= h - 1):
                            continue
                        d = math.hypot(u - px, v - py)
                        wt = 1.0 - d / radius
                        if wt > 0:
                            entries[u * h + v] = wt
                total = sum(entries.values())
                if total > 0:
                    entries = {k: v / total for k, v in entries.items()}
                rows[ix, iy, iz] = entries
    return rows


class TestWeightMatrix:
    def test_single_voxel_row_sums_to_one(self):
        cam = make_rig((1, 1, 1), angles_deg=((0, 0, 0),), image_dims=(5, 5))[0]
        wm = build_weight_matrix(cam, (1, 1, 1))
        assert wm.matrix.shape == (1, 25)
        assert wm.matrix.sum() == pytest.approx(1.0, abs=1e-12)

    def test_off_raster_voxel_has_empty_row(self):
        cam = CameraModel(euler=(0, 0, 0), origin_offset=(-50.0, -50.0), image_dims=(4, 4))
        wm = build_weight_matrix(cam, (1, 1, 1))
        assert wm.matrix.nnz == 0

    def test_rows_sum_to_one_4x4x4(self):
        for angles in DEFAULT_RIG_ANGLES_DEG:
            cam = make_rig((4, 4, 4), angles_deg=(angles,))[0]
            wm = build_weight_matrix(cam, (4, 4, 4))
            sums = np.asarray(wm.matrix.sum(axis=1)).ravel()
            np.testing.assert_allclose(sums, 1.0, atol=1e-12)

    def test_matches_brute_force(self):
        cam = make_rig((5, 4, 3), angles_deg=((0.0, 25.0, 40.0),))[0]
        wm = build_weight_matrix(cam, (5, 4, 3))
        expected = brute_force_weights(cam, (5, 4, 3))
        m = wm.matrix.tocoo()
        got = {}
        nz = (5, 4, 3)
        for r, c, v in zip(m.row, m.col, m.data):
            got.setdefault(tuple(np.unravel_index(r, nz)), {})[c] = v
        for key, entries in expected.items():
            entries = {k: v for k, v in entries.items() if v > 0}
            got_row = got.get(key, {})
            assert set(got_row) == set(entries), key
            for c, v in entries.items():
                assert got_row[c] == pytest.approx(v, abs=1e-12)

    def test_entry_count_bound(self):
        cam = make_rig((6, 6, 6), angles_deg=((0.0, 30.0, 0.0),))[0]
        wm = build_weight_matrix(cam, (6, 6, 6))
        per_row = np.diff(wm.matrix.indptr)
        assert per_row.max() <= 16

    def test_memory_budget_error_reports_estimate(self):
        cam = make_rig((64, 64, 64), angles_deg=((0, 0, 0),))[0]
        with pytest.raises(ResourceLimitError, match="bytes"):
            build_weight_matrix(cam, (64, 64, 64), memory_budget_bytes=1000)

    def test_deterministic_construction(self):
        cam = make_rig((8, 8, 4), angles_deg=((0.0, -30.0, 90.0),))[0]
        a = build_weight_matrix(cam, (8, 8, 4))
        b = build_weight_matrix(cam, (8, 8, 4))
        assert np.array_equal(a.matrix.data, b.matrix.data)
        assert np.array_equal(a.matrix.indices, b.matrix.indices)


class TestForwardProject:
    def test_zero_volume_zero_image(self):
        cam = make_rig((4, 4, 4), angles_deg=((0, 30, 0),))[0]
        wm = build_weight_matrix(cam, (4, 4, 4))
        img = forward_project(VoxelVolume(np.zeros((4, 4, 4))), wm)
        assert img.values.shape == cam.image_dims
        assert np.all(img.values == 0)

    def test_matches_dense_oracle(self):
        cam = make_rig((5, 5, 4), angles_deg=((0.0, 30.0, 90.0),))[0]
        wm = build_weight_matrix(cam, (5, 5, 4))
        rng = np.random.default_rng(3)
        vol = rng.random((5, 5, 4))
        img = forward_project(VoxelVolume(vol), wm)

        dense = np.zeros(cam.image_dims).ravel()
        rows = brute_force_weights(cam, (5, 5, 4))
        for (ix, iy, iz), entries in rows.items():
            for c, v in entries.items():
                dense[c] += vol[ix, iy, iz] * v
        np.testing.assert_allclose(img.values.ravel(), dense, atol=1e-10)

    def test_linear_in_volume(self):
        cam = make_rig((4, 4, 2), angles_deg=((0, -30, 0),))[0]
        wm = build_weight_matrix(cam, (4, 4, 2))
        rng = np.random.default_rng(11)
        a, b = rng.random((4, 4, 2)), rng.random((4, 4, 2))
        lhs = forward_project(VoxelVolume(2.0 * a + 3.0 * b), wm).values
        rhs = (
            2.0 * forward_project(VoxelVolume(a), wm).values
            + 3.0 * forward_project(VoxelVolume(b), wm).values
        )
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_total_intensity_preserved_with_covering_raster(self):
        rig = make_rig((8, 8, 6))
        rng = np.random.default_rng(5)
        vol = VoxelVolume(rng.random((8, 8, 6)))
        for cam in rig:
            wm = build_weight_matrix(cam, (8, 8, 6))
            img = forward_project(vol, wm)
            assert img.values.sum() == pytest.approx(vol.values.sum(), rel=1e-8)

    def test_dims_mismatch_rejected(self):
        cam = make_rig((4, 4, 4), angles_deg=((0, 0, 0),))[0]
        wm = build_weight_matrix(cam, (4, 4, 4))
        with pytest.raises(ValueError):
            forward_project(VoxelVolume(np.zeros((3, 4, 4))), wm)


class TestMakeRig:
    def test_default_rig_has_four_distinct_lines_of_sight(self):
        rig = make_rig((16, 16, 8))
        sights = np.array([cam.line_of_sight for cam in rig])
        for i in range(len(rig)):
            for j in range(i + 1, len(rig)):
                assert np.abs(sights[i] - sights[j]).max() > 0.1

    def test_volume_center_maps_to_image_center(self):
        rig = make_rig((16, 12, 8))
        center = [(16 - 1) / 2, (12 - 1) / 2, (8 - 1) / 2]
        for cam in rig:
            w, h = cam.image_dims
            np.testing.assert_allclose(
                project_point(cam, center), [(w - 1) / 2, (h - 1) / 2], atol=1e-12
            )

    def test_all_voxels_fully_on_raster(self):
        dims = (12, 10, 6)
        rig = make_rig(dims)
        for cam in rig:
            wm = build_weight_matrix(cam, dims)
            sums = np.asarray(wm.matrix.sum(axis=1)).ravel()
            np.testing.assert_allclose(sums, 1.0, atol=1e-12)
