"""Two-view motion estimates as 4x4 homogeneous transforms.

The rotation block is built entry by entry from the three angles using a
fixed layout; :func:`rotation_matrix` and :func:`angles_from_rotation` are
exact inverses of each other for ``|Ry| < pi/2``.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from ._validation import as_vector, check_finite, wrap_angle


class VisionDelta(NamedTuple):
    rot: np.ndarray  # (Rx, Ry, Rz) radians
    trans: np.ndarray  # (tx, ty, tz) meters
    t: float = 0.0

    @classmethod
    def make(cls, rot, trans, t=0.0):
        rot = wrap_angle(as_vector(rot, 3, "rot"))
        return cls(rot, as_vector(trans, 3, "trans"), check_finite(t, "t"))


def rotation_matrix(rx: float, ry: float, rz: float):
    cx, sx = math.cos(rx), math.sin(rx)
    cy, sy = math.cos(ry), math.sin(ry)
    cz, sz = math.cos(rz), math.sin(rz)
    return np.array(
        [
            [cy * cz, -cy * sz, sy],
            [sx * sy * cz + cx * sz, -sx * sy * sz + cx * cz, -sx * cy],
            [-cx * sy * cz + sx * sz, cx * sy * sz + sx * cz, cx * cy],
        ]
    )


def angles_from_rotation(rot):
    """Recover ``(Rx, Ry, Rz)`` from a rotation block laid out as above."""
    rot = np.asarray(rot, dtype=float)
    ry = math.asin(max(-1.0, min(1.0, rot[0, 2])))
    rx = math.atan2(-rot[1, 2], rot[2, 2])
    rz = math.atan2(-rot[0, 1], rot[0, 0])
    return np.array([rx, ry, rz])


def build_transform(delta: VisionDelta):
    """Homogeneous transform for a rotation/translation estimate.

    Parameters
    ----------
    delta : VisionDelta
        Rotation angles in radians and translation in meters.

    Returns
    -------
    ndarray, shape (4, 4)
        Rotation block in the upper left, translation in the last column and
        ``(0, 0, 0, 1)`` as the bottom row.
    """
    rx, ry, rz = (check_finite(v, "rot") for v in delta[0])
    trans = as_vector(delta[1], 3, "trans")
    m = np.eye(4)
    m[:3, :3] = rotation_matrix(rx, ry, rz)
    m[:3, 3] = trans
    return m


def apply_transform(tr, p):
    """Apply a 4x4 transform to a 3-vector through the homogeneous lift."""
    tr = np.asarray(tr, dtype=float)
    if tr.shape != (4, 4):
        raise ValueError(f"transform must be 4x4, got {tr.shape}")
    p = as_vector(p, 3, "p")
    return tr[:3, :3] @ p + tr[:3, 3]


def is_rigid(tr, atol=1e-9) -> bool:
    tr = np.asarray(tr, dtype=float)
    if tr.shape != (4, 4) or not np.allclose(tr[3], [0.0, 0.0, 0.0, 1.0], atol=0, rtol=0):
        return False
    rot = tr[:3, :3]
    return bool(np.allclose(rot.T @ rot, np.eye(3), atol=atol) and abs(np.linalg.det(rot) - 1.0) <= atol)


def compose(first, second):
    """Transform equivalent to applying ``first`` and then ``second``."""
    return np.asarray(second) @ np.asarray(first)


def transform_about(rot_world, translation, anchor):
    """Rigid transform that rotates about ``anchor`` and then translates.

    Applied to ``anchor`` itself it returns ``anchor + translation``; this is
    how camera-frame motion is lifted into the local navigation frame before
    being applied to a GPS position.
    """
    anchor = as_vector(anchor, 3, "anchor")
    angles = angles_from_rotation(rot_world)
    rot = rotation_matrix(*angles)
    return build_transform(VisionDelta(angles, anchor + as_vector(translation, 3, "translation") - rot @ anchor))
