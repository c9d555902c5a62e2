"""Pinhole cameras and camera-ring construction.

Camera space follows the computer-vision convention: x right, y down,
z forward.  ``world_to_camera`` is a rigid 4x4 transform; pixel centers
sit at integer coordinates plus 0.5.
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class Camera:
    camera_id: str
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    world_to_camera: np.ndarray  # (4, 4)

    def __post_init__(self):
        self.world_to_camera = np.asarray(self.world_to_camera, dtype=np.float64)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")
        r = self.rotation
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-6):
            raise ValueError("world_to_camera rotation block is not orthonormal")

    @property
    def rotation(self) -> np.ndarray:
        return self.world_to_camera[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.world_to_camera[:3, 3]

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        """World points (N, 3) -> camera space (N, 3)."""
        return points @ self.rotation.T + self.translation

    def scaled(self, width: int, height: int) -> "Camera":
        """Same view at a different resolution; intrinsics scale along."""
        sx = width / self.width
        sy = height / self.height
        return Camera(
            camera_id=self.camera_id,
            width=width,
            height=height,
            fx=self.fx * sx,
            fy=self.fy * sy,
            cx=self.cx * sx,
            cy=self.cy * sy,
            world_to_camera=self.world_to_camera.copy(),
        )


def look_at(
    camera_id: str,
    eye,
    target,
    width: int,
    height: int,
    fov_y_deg: float = 45.0,
    up=(0.0, 1.0, 0.0),
) -> Camera:
    """Camera at ``eye`` looking at ``target`` with world ``up`` mapped to image up."""
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    up = np.asarray(up, dtype=np.float64)

    z = target - eye
    z = z / np.linalg.norm(z)
    x = np.cross(z, up)
    nx = np.linalg.norm(x)
    if nx < 1e-9:  # looking straight along up; pick another hint
        x = np.cross(z, np.array([1.0, 0.0, 0.0]))
        nx = np.linalg.norm(x)
    x = x / nx
    y = np.cross(z, x)

    rot = np.stack([x, y, z], axis=0)
    w2c = np.eye(4)
    w2c[:3, :3] = rot
    w2c[:3, 3] = -rot @ eye

    fy = (height / 2.0) / np.tan(np.deg2rad(fov_y_deg) / 2.0)
    return Camera(
        camera_id=camera_id,
        width=width,
        height=height,
        fx=fy,
        fy=fy,
        cx=width / 2.0,
        cy=height / 2.0,
        world_to_camera=w2c,
    )


def camera_ring(
    n: int,
    radius: float,
    width: int,
    height: int,
    azimuth_range_deg: tuple[float, float] = (-90.0, 90.0),
    elevation_deg: float = 0.0,
    fov_y_deg: float = 45.0,
    target=(0.0, 0.0, 0.0),
    prefix: str = "ring",
) -> list[Camera]:
    """Cameras at evenly spaced azimuths, all aimed at ``target``.

    Azimuth 0 looks down the world +z axis; positive azimuths swing
    toward +x.  Elevation raises the eye toward +y.
    """
    lo, hi = azimuth_range_deg
    azimuths = np.linspace(lo, hi, n) if n > 1 else np.array([(lo + hi) / 2.0])
    cams = []
    el = np.deg2rad(elevation_deg)
    for i, az_deg in enumerate(azimuths):
        az = np.deg2rad(az_deg)
        eye = np.array(
            [
                radius * np.cos(el) * np.sin(az),
                radius * np.sin(el),
                radius * np.cos(el) * np.cos(az),
            ]
        ) + np.asarray(target, dtype=np.float64)
        cams.append(
            look_at(
                f"{prefix}{i:02d}",
                eye,
                target,
                width,
                height,
                fov_y_deg=fov_y_deg,
            )
        )
    return cams
