"""Small shared geometry helpers: poses, angles, unit vectors."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class Pose:
    """Position in meters (world frame) plus heading about +z."""

    position: np.ndarray
    yaw: float = 0.0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64)

    def heading(self) -> np.ndarray:
        return np.array([math.cos(self.yaw), math.sin(self.yaw), 0.0])

    def copy(self) -> "Pose":
        return Pose(self.position.copy(), self.yaw)


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi


def unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise ValueError("zero vector has no direction")
    return v / n


def angle_between(a, b) -> float:
    """Unsigned angle in radians between two nonzero vectors."""
    ua, ub = unit(a), unit(b)
    return float(math.acos(min(1.0, max(-1.0, float(np.dot(ua, ub))))))
