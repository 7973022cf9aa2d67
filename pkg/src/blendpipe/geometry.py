"""Affine normalization of landmark frames into the regression basis.

Every frame is mapped into a face-local frame: nose anchor at the origin,
eye-to-eye direction along +x, the eye-midpoint/nose plane normal along +z,
and the interocular distance rescaled to a canonical length. The map
composes three homogeneous matrices (translation, rotation, uniform scale)
and keeps all affine invariants: collinearity, parallelism, length ratios
along parallel directions, and centroids.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import LandmarkFrame
from .errors import CollinearAnchors, DegenerateAnchors

EPS_GEO = 1e-6

# Default anchors for the 478-point layout: nose tip and the two outer eye
# corners. Overridable per detector through the model file.
DEFAULT_NOSE = 1
DEFAULT_EYE_LEFT = 263
DEFAULT_EYE_RIGHT = 33
DEFAULT_INTEROCULAR = 1.0


@dataclass(frozen=True)
class AffineBasis:
    """Anchor landmark indices plus the canonical eye-to-eye distance."""

    anchor_nose: int = DEFAULT_NOSE
    anchor_eye_left: int = DEFAULT_EYE_LEFT
    anchor_eye_right: int = DEFAULT_EYE_RIGHT
    target_interocular: float = DEFAULT_INTEROCULAR

    def __post_init__(self):
        anchors = (self.anchor_nose, self.anchor_eye_left, self.anchor_eye_right)
        if len(set(anchors)) != 3:
            raise ValueError("anchor indices must be distinct")
        if any(a < 0 for a in anchors):
            raise ValueError("anchor indices must be non-negative")
        if self.target_interocular <= 0:
            raise ValueError("target_interocular must be positive")


@dataclass(frozen=True)
class AffineTransform:
    """Composed 4x4 homogeneous matrix; last row [0,0,0,1], invertible."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (4, 4):
            raise ValueError("matrix must be 4x4")
        r3 = m[3]
        if abs(r3[0]) > 1e-12 or abs(r3[1]) > 1e-12 or abs(r3[2]) > 1e-12 or abs(r3[3] - 1.0) > 1e-12:
            raise ValueError("last row must be [0,0,0,1]")
        # last row is affine, so det(M) equals the det of the linear block
        a, b, c = m[0, :3], m[1, :3], m[2, :3]
        det3 = (
            a[0] * (b[1] * c[2] - b[2] * c[1])
            - a[1] * (b[0] * c[2] - b[2] * c[0])
            + a[2] * (b[0] * c[1] - b[1] * c[0])
        )
        if abs(det3) < 1e-30:
            raise ValueError("matrix must be invertible")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls(np.eye(4))

    def inverse(self) -> "AffineTransform":
        return AffineTransform(np.linalg.inv(self.matrix))

    def apply_points(self, points: np.ndarray) -> np.ndarray:
        """Map an (N, 3) point array through the homogeneous matrix."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.matrix[:3, :3].T + self.matrix[:3, 3]


def solve_transform(frame: LandmarkFrame, basis: AffineBasis) -> AffineTransform:
    """Solve the per-frame normalization for the given anchor basis.

    Composition: translate the nose anchor to the origin, rotate the
    orthonormal face frame (built by Gram-Schmidt from the eye-eye vector
    and the eye-midpoint-to-nose vector) onto the world axes, then scale
    uniformly so the interocular distance equals the canonical length.
    """
    pts = frame.points
    n_pts = pts.shape[0]
    for a in (basis.anchor_nose, basis.anchor_eye_left, basis.anchor_eye_right):
        if a >= n_pts:
            raise ValueError(f"anchor index {a} out of range for {n_pts} points")
    # scalar vector math throughout: this runs once per frame and tiny-array
    # numpy calls would dominate the latency budget
    nx, ny, nz = pts[basis.anchor_nose]
    lx, ly, lz = pts[basis.anchor_eye_left]
    rx, ry, rz = pts[basis.anchor_eye_right]

    eex, eey, eez = lx - rx, ly - ry, lz - rz
    nlx, nly, nlz = lx - nx, ly - ny, lz - nz
    nrx, nry, nrz = rx - nx, ry - ny, rz - nz
    d_ee = math.sqrt(eex * eex + eey * eey + eez * eez)
    d_nl = math.sqrt(nlx * nlx + nly * nly + nlz * nlz)
    d_nr = math.sqrt(nrx * nrx + nry * nry + nrz * nrz)
    if min(d_ee, d_nl, d_nr) <= EPS_GEO:
        raise DegenerateAnchors(
            f"anchor pair closer than {EPS_GEO}: ee={d_ee:.3g} nl={d_nl:.3g} nr={d_nr:.3g}"
        )
    cx = nly * nrz - nlz * nry
    cy = nlz * nrx - nlx * nrz
    cz = nlx * nry - nly * nrx
    area = 0.5 * math.sqrt(cx * cx + cy * cy + cz * cz)
    if area <= EPS_GEO**2:
        raise CollinearAnchors(f"anchor triangle area {area:.3g} below {EPS_GEO**2}")

    # face frame: x along eye-eye, y toward the eye midpoint, z the plane normal
    xx, xy, xz = eex / d_ee, eey / d_ee, eez / d_ee
    vmx = 0.5 * (lx + rx) - nx
    vmy = 0.5 * (ly + ry) - ny
    vmz = 0.5 * (lz + rz) - nz
    proj = vmx * xx + vmy * xy + vmz * xz
    yrx, yry, yrz = vmx - proj * xx, vmy - proj * xy, vmz - proj * xz
    ynorm = math.sqrt(yrx * yrx + yry * yry + yrz * yrz)
    yx, yy, yz = yrx / ynorm, yry / ynorm, yrz / ynorm
    zx = xy * yz - xz * yy
    zy = xz * yx - xx * yz
    zz = xx * yy - xy * yx

    # compose scale * rotation * translation directly
    s = basis.target_interocular / d_ee
    m = np.array(
        [
            [s * xx, s * xy, s * xz, -s * (xx * nx + xy * ny + xz * nz)],
            [s * yx, s * yy, s * yz, -s * (yx * nx + yy * ny + yz * nz)],
            [s * zx, s * zy, s * zz, -s * (zx * nx + zy * ny + zz * nz)],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )
    return AffineTransform(m)


def apply_transform(frame: LandmarkFrame, t: AffineTransform) -> LandmarkFrame:
    """Map every point of the frame; the timestamp is preserved."""
    return LandmarkFrame(timestamp_ms=frame.timestamp_ms, points=t.apply_points(frame.points))


def normalize_frame(frame: LandmarkFrame, basis: AffineBasis) -> LandmarkFrame:
    """solve_transform followed by apply_transform."""
    return apply_transform(frame, solve_transform(frame, basis))
