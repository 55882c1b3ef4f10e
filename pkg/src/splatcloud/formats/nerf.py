"""NeRF-style ``transforms.json`` camera loading.

Frames store camera-to-world matrices in the OpenGL convention (camera
looks down -Z, y up); they are converted to COLMAP-style world-to-camera
transforms by flipping the y and z camera axes and inverting.
"""

from __future__ import annotations

import json
import logging
import math
from pathlib import Path

import numpy as np

from ..errors import FileFormatError
from ..types import CameraPose

log = logging.getLogger(__name__)

DEFAULT_RESOLUTION = 800


def _frame_intrinsics(frame: dict, contents: dict, path: Path):
    """Resolve fx, fy, cx, cy, width, height with per-frame values winning."""
    def pick(key, default=None):
        if key in frame:
            return frame[key]
        return contents.get(key, default)

    width = pick("w")
    height = pick("h")
    if width is None:
        width = DEFAULT_RESOLUTION
    if height is None:
        height = DEFAULT_RESOLUTION
    width, height = int(width), int(height)

    fl_x = pick("fl_x")
    fl_y = pick("fl_y")
    if fl_x is None and fl_y is None:
        angle = pick("camera_angle_x")
        if angle is None:
            raise FileFormatError(
                f"{path}: frame has neither camera_angle_x nor fl_x intrinsics"
            )
        fl_x = fl_y = 0.5 * width / math.tan(0.5 * float(angle))
    elif fl_x is None:
        fl_x = fl_y
    elif fl_y is None:
        fl_y = fl_x

    cx = pick("cx")
    cy = pick("cy")
    if cx is None:
        cx = width / 2.0
    if cy is None:
        cy = height / 2.0
    return float(fl_x), float(fl_y), float(cx), float(cy), width, height


def load_cameras_nerf_json(path) -> list[CameraPose]:
    """Load poses from a NeRF transforms JSON file.

    An empty ``frames`` array yields an empty pose list (the pipeline warns
    and falls back to base colours); it is not an error.
    """
    path = Path(path)
    try:
        contents = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise FileFormatError(f"{path}: invalid JSON ({err})") from err
    if not isinstance(contents, dict) or "frames" not in contents:
        raise FileFormatError(f"{path}: missing 'frames' array")

    frames = contents["frames"]
    order = sorted(range(len(frames)),
                   key=lambda i: str(frames[i].get("file_path", f"{i:08d}")))

    poses = []
    for rank, frame_index in enumerate(order):
        frame = frames[frame_index]
        if "transform_matrix" not in frame:
            raise FileFormatError(f"{path}: frame {frame_index} lacks transform_matrix")
        c2w = np.array(frame["transform_matrix"], dtype=np.float64)
        if c2w.shape != (4, 4):
            raise FileFormatError(f"{path}: transform_matrix of frame {frame_index} is not 4x4")
        # OpenGL -> COLMAP: flip the y and z camera axes, then invert.
        c2w = c2w.copy()
        c2w[:3, 1:3] *= -1.0
        try:
            world_to_camera = np.linalg.inv(c2w)
        except np.linalg.LinAlgError as err:
            raise FileFormatError(
                f"{path}: transform_matrix of frame {frame_index} is not invertible"
            ) from err
        if not np.all(np.isfinite(world_to_camera)):
            raise FileFormatError(
                f"{path}: transform_matrix of frame {frame_index} is not invertible"
            )

        fx, fy, cx, cy, width, height = _frame_intrinsics(frame, contents, path)
        poses.append(CameraPose(
            image_id=rank,
            width=width, height=height,
            fx=fx, fy=fy, cx=cx, cy=cy,
            world_to_camera=world_to_camera,
        ))
    if not poses:
        log.warning("%s: frames array is empty, no poses loaded", path)
    return poses
