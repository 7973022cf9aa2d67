import numpy as np
import pytest

from blendpipe.core import LandmarkFrame
from blendpipe.errors import CollinearAnchors, DegenerateAnchors
from blendpipe.geometry import (
    AffineBasis,
    AffineTransform,
    apply_transform,
    normalize_frame,
    solve_transform,
)

BASIS = AffineBasis(anchor_nose=0, anchor_eye_left=1, anchor_eye_right=2)


def canonical_frame(n_extra=7, seed=0):
    """Anchors already in the canonical pose: nose at origin, eyes on a line
    parallel to +x in the z=0 plane, interocular = 1."""
    rng = np.random.default_rng(seed)
    pts = [(0.0, 0.0, 0.0), (0.5, 0.3, 0.0), (-0.5, 0.3, 0.0)]
    pts += [tuple(rng.uniform(-1, 1, 3)) for _ in range(n_extra)]
    return LandmarkFrame(timestamp_ms=0, points=np.array(pts))


def rotation_z(angle):
    c, s = np.cos(angle), np.sin(angle)
    m = np.eye(4)
    m[0, 0], m[0, 1], m[1, 0], m[1, 1] = c, -s, s, c
    return m


class TestSolveTransform:
    def test_canonical_pose_gives_identity(self):
        t = solve_transform(canonical_frame(), BASIS)
        np.testing.assert_allclose(t.matrix, np.eye(4), atol=1e-9)

    def test_rotated_translated_frame_recovers_canonical_anchors(self):
        frame = canonical_frame()
        m = rotation_z(np.pi / 2)
        m[:3, 3] = (0.3, 0.1, 0.0)
        moved = apply_transform(frame, AffineTransform(m))
        t = solve_transform(moved, BASIS)
        restored = apply_transform(moved, t)
        np.testing.assert_allclose(restored.points[:3], frame.points[:3], atol=1e-9)

    def test_degenerate_anchors(self):
        pts = np.zeros((5, 3))
        with pytest.raises(DegenerateAnchors):
            solve_transform(LandmarkFrame(timestamp_ms=0, points=pts), BASIS)

    def test_collinear_anchors(self):
        pts = np.array([(0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (2.0, 0.0, 0.0), (0.0, 1.0, 0.0)])
        with pytest.raises(CollinearAnchors):
            solve_transform(LandmarkFrame(timestamp_ms=0, points=pts), BASIS)

    def test_interocular_rescaled_to_target(self):
        frame = canonical_frame()
        big = LandmarkFrame(timestamp_ms=0, points=frame.points * 7.0)
        out = normalize_frame(big, BASIS)
        eye_dist = np.linalg.norm(out.points[1] - out.points[2])
        assert abs(eye_dist - 1.0) < 1e-9


class TestApplyTransform:
    def test_identity(self):
        frame = canonical_frame()
        out = apply_transform(frame, AffineTransform.identity())
        np.testing.assert_array_equal(out.points, frame.points)
        assert out.timestamp_ms == frame.timestamp_ms

    def test_pure_translation(self):
        frame = canonical_frame()
        m = np.eye(4)
        m[0, 3] = 1.0
        out = apply_transform(frame, AffineTransform(m))
        np.testing.assert_allclose(out.points[:, 0], frame.points[:, 0] + 1.0)
        np.testing.assert_array_equal(out.points[:, 1:], frame.points[:, 1:])

    def test_random_transform_then_inverse(self, rng):
        frame = canonical_frame(n_extra=20)
        for _ in range(10):
            m = np.eye(4)
            m[:3, :3] = rng.normal(size=(3, 3)) + np.eye(3) * 2.0
            m[:3, 3] = rng.normal(size=3)
            t = AffineTransform(m)
            back = apply_transform(apply_transform(frame, t), t.inverse())
            np.testing.assert_allclose(back.points, frame.points, atol=1e-9)


class TestAffineInvariants:
    def test_centroid_mapping(self, rng):
        frame = canonical_frame(n_extra=30)
        m = np.eye(4)
        m[:3, :3] = rng.normal(size=(3, 3)) + np.eye(3)
        m[:3, 3] = rng.normal(size=3)
        t = AffineTransform(m)
        mapped = apply_transform(frame, t)
        centroid_then_map = t.apply_points(frame.points.mean(axis=0)[None, :])[0]
        np.testing.assert_allclose(mapped.points.mean(axis=0), centroid_then_map, atol=1e-9)

    def test_parallel_segment_ratio_preserved(self, rng):
        a = rng.normal(size=3)
        d = rng.normal(size=3)
        # two parallel segments, lengths 1 and 3.5
        pts = np.array([a, a + d, a + 2 * d, a + 2 * d + 3.5 * d])
        m = np.eye(4)
        m[:3, :3] = rng.normal(size=(3, 3)) + np.eye(3)
        mapped = AffineTransform(m).apply_points(pts)
        len1 = np.linalg.norm(mapped[1] - mapped[0])
        len2 = np.linalg.norm(mapped[3] - mapped[2])
        assert abs(len2 / len1 - 3.5) < 1e-9

    def test_rigid_motion_and_scale_invariance(self, rng):
        frame = canonical_frame(n_extra=40, seed=5)
        reference = normalize_frame(frame, BASIS)
        for _ in range(8):
            angle = rng.uniform(0, 2 * np.pi)
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            k = np.array(
                [
                    [0, -axis[2], axis[1]],
                    [axis[2], 0, -axis[0]],
                    [-axis[1], axis[0], 0],
                ]
            )
            rot = np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)
            scale = rng.uniform(0.2, 5.0)
            m = np.eye(4)
            m[:3, :3] = scale * rot
            m[:3, 3] = rng.normal(size=3)
            moved = apply_transform(frame, AffineTransform(m))
            out = normalize_frame(moved, BASIS)
            np.testing.assert_allclose(out.points, reference.points, atol=1e-6)


class TestAffineTransformType:
    def test_rejects_bad_last_row(self):
        m = np.eye(4)
        m[3, 0] = 0.1
        with pytest.raises(ValueError):
            AffineTransform(m)

    def test_rejects_singular(self):
        m = np.eye(4)
        m[0, 0] = 0.0
        with pytest.raises(ValueError):
            AffineTransform(m)
