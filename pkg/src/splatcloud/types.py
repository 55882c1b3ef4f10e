"""Core domain types shared by the loaders, renderer and samplers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError


@dataclass
class RawGaussianRecord:
    """One Gaussian exactly as stored on disk, before any activation.

    ``rotation`` is the raw (w, x, y, z) quaternion and may be unnormalised;
    ``log_scale`` holds the log of the per-axis standard deviation.
    ``sh_rest`` keeps any higher-order SH coefficients so that round trips
    are lossless, but nothing downstream reads them.
    """

    position: np.ndarray
    log_scale: np.ndarray
    rotation: np.ndarray
    logit_opacity: float
    sh_dc: np.ndarray
    sh_rest: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.float64))

    def is_valid(self) -> bool:
        return bool(
            np.all(np.isfinite(self.log_scale))
            and float(np.linalg.norm(self.rotation)) > 0.0
        )


@dataclass(frozen=True)
class CameraPose:
    """Pinhole intrinsics plus a world-to-camera rigid transform.

    Follows the COLMAP convention: the camera looks down +Z, x points right
    and y points down in camera space.
    """

    image_id: int
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    world_to_camera: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.world_to_camera, dtype=np.float64)
        if m.shape != (4, 4):
            raise DomainError(f"world_to_camera must be 4x4, got {m.shape}")
        object.__setattr__(self, "world_to_camera", m)
        if not (self.fx > 0 and self.fy > 0):
            raise DomainError(f"focal lengths must be positive (fx={self.fx}, fy={self.fy})")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise DomainError(
                f"principal point ({self.cx}, {self.cy}) outside image {self.width}x{self.height}"
            )
        r = m[:3, :3]
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-5):
            raise DomainError(f"rotation block of pose {self.image_id} is not orthonormal")

    @property
    def rotation(self) -> np.ndarray:
        return self.world_to_camera[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.world_to_camera[:3, 3]

    @property
    def camera_centre(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.rotation.T @ self.translation

    def scaled(self, scale: float) -> "CameraPose":
        """Return a copy rendered at ``scale`` times the original resolution."""
        if scale == 1.0:
            return self
        return CameraPose(
            image_id=self.image_id,
            width=max(1, int(round(self.width * scale))),
            height=max(1, int(round(self.height * scale))),
            fx=self.fx * scale,
            fy=self.fy * scale,
            cx=self.cx * scale,
            cy=self.cy * scale,
            world_to_camera=self.world_to_camera,
        )


@dataclass
class PointCloud:
    """Positions with 8-bit colours and optional unit normals."""

    points: np.ndarray
    colours: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float32).reshape(-1, 3)
        self.colours = np.ascontiguousarray(self.colours, dtype=np.uint8).reshape(-1, 3)
        if len(self.points) != len(self.colours):
            raise DomainError(
                f"points/colours length mismatch: {len(self.points)} vs {len(self.colours)}"
            )
        if self.normals is not None:
            self.normals = np.ascontiguousarray(self.normals, dtype=np.float32).reshape(-1, 3)
            if len(self.normals) != len(self.points):
                raise DomainError(
                    f"points/normals length mismatch: {len(self.points)} vs {len(self.normals)}"
                )
            norms = np.linalg.norm(self.normals.astype(np.float64), axis=1)
            if len(norms) and not np.all(np.abs(norms - 1.0) <= 1e-4):
                worst = float(np.abs(norms - 1.0).max())
                raise DomainError(f"normals must be unit length (worst deviation {worst:.2e})")

    def __len__(self) -> int:
        return len(self.points)

    def take(self, selector) -> "PointCloud":
        """Subset by boolean mask or index array, preserving order."""
        return PointCloud(
            points=self.points[selector],
            colours=self.colours[selector],
            normals=None if self.normals is None else self.normals[selector],
        )
