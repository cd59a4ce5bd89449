"""Local-to-global registration of per-BS detections."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .angles import Detection
from .array_geometry import angle_to_unit_vector
from .scene import rotation_from_ypr


class InvalidPoseError(ValueError):
    pass


@dataclass(frozen=True)
class BsPose:
    rotation: np.ndarray
    translation: np.ndarray
    bs_id: int = 0

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float).reshape(-1)
        if r.shape != (3, 3) or t.shape != (3,):
            raise InvalidPoseError("rotation must be 3x3 and translation a 3-vector")
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9, rtol=0):
            raise InvalidPoseError("rotation is not orthonormal")
        if np.linalg.det(r) <= 0:
            raise InvalidPoseError("rotation has det != +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def from_ypr(cls, yaw_deg: float, pitch_deg: float, roll_deg: float, translation, bs_id: int = 0) -> "BsPose":
        return cls(rotation_from_ypr(yaw_deg, pitch_deg, roll_deg), np.asarray(translation, float), bs_id)

    @classmethod
    def identity(cls, bs_id: int = 0) -> "BsPose":
        return cls(np.eye(3), np.zeros(3), bs_id)

    def to_global(self, p_loc: np.ndarray) -> np.ndarray:
        """Works on a single 3-vector or an (N, 3) array."""
        return np.asarray(p_loc, float) @ self.rotation.T + self.translation

    def to_local(self, p_glo: np.ndarray) -> np.ndarray:
        return (np.asarray(p_glo, float) - self.translation) @ self.rotation


@dataclass(frozen=True)
class PointCloud4D:
    positions: np.ndarray  # (N, 3) global metres
    velocity: np.ndarray  # (N,) radial, as seen by the source BS
    power: np.ndarray  # (N,)
    bs_id: np.ndarray  # (N,) int

    def __len__(self) -> int:
        return len(self.positions)

    @classmethod
    def empty(cls) -> "PointCloud4D":
        return cls(np.zeros((0, 3)), np.zeros(0), np.zeros(0), np.zeros(0, dtype=int))

    @classmethod
    def concat(cls, clouds: Sequence["PointCloud4D"]) -> "PointCloud4D":
        if not clouds:
            return cls.empty()
        return cls(
            np.vstack([c.positions for c in clouds]),
            np.concatenate([c.velocity for c in clouds]),
            np.concatenate([c.power for c in clouds]),
            np.concatenate([c.bs_id for c in clouds]).astype(int),
        )


def detection_to_local_point(det: Detection) -> np.ndarray:
    return det.peak.range_m * angle_to_unit_vector(det.angle)


def to_global(p_loc: np.ndarray, pose: BsPose) -> np.ndarray:
    return pose.to_global(p_loc)


def local_cloud(detections: Sequence[Detection], bs_id: int = 0) -> PointCloud4D:
    """Detections as points in the BS-local frame."""
    if not detections:
        return PointCloud4D.empty()
    return PointCloud4D(
        positions=np.array([detection_to_local_point(d) for d in detections]),
        velocity=np.array([d.peak.velocity_mps for d in detections]),
        power=np.array([d.power for d in detections]),
        bs_id=np.full(len(detections), bs_id, dtype=int),
    )


def fuse(clouds: Iterable[tuple[BsPose, Sequence[Detection]]]) -> PointCloud4D:
    """Union of all BS clouds in the global frame, without deduplication."""
    parts = []
    for pose, dets in clouds:
        loc = local_cloud(dets, pose.bs_id)
        parts.append(PointCloud4D(pose.to_global(loc.positions), loc.velocity, loc.power, loc.bs_id))
    return PointCloud4D.concat(parts)
