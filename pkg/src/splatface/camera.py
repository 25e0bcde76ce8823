"""Pinhole camera with a fixed world-to-camera rigid transform."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Camera:
    rotation: np.ndarray      # 3x3 world-to-camera
    translation: np.ndarray   # 3
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if err > 1e-9:
            raise ValueError(f"camera rotation not orthonormal (err={err:.2e})")

    @property
    def center(self):
        """Camera position in world coordinates."""
        return -self.rotation.T @ self.translation

    def world_to_cam(self, pts):
        return pts @ self.rotation.T + self.translation


def default_camera(width, height, distance=3.0, focal_factor=1.1):
    """Camera on the +z axis looking at the origin down -z."""
    # camera frame: x right, y down, z forward (into the scene)
    rot = np.array([[1.0, 0.0, 0.0],
                    [0.0, -1.0, 0.0],
                    [0.0, 0.0, -1.0]])
    trans = np.array([0.0, 0.0, distance])
    f = focal_factor * width
    return Camera(rot, trans, fx=f, fy=f, cx=width / 2.0, cy=height / 2.0,
                  width=width, height=height)
