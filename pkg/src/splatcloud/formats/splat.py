"""Reader/writer for the community 32-byte ``.splat`` format.

Record layout (little endian):
  bytes  0-11  position, 3 x float32
  bytes 12-23  linear scale, 3 x float32
  bytes 24-27  RGBA, 4 x uint8
  bytes 28-31  quaternion (w, x, y, z), uint8 each, decoded as (b - 128) / 128
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from ..errors import FileFormatError
from ..types import RawGaussianRecord

log = logging.getLogger(__name__)

RECORD_SIZE = 32

# Degree-0 SH basis constant; colour = 0.5 + C0 * coefficient.
SH_C0 = 0.28209479177387814

# Alpha bytes of 0/255 would give infinite logits; clamp 1/512 away from both ends.
ALPHA_CLAMP = 1.0 / 512.0

_RECORD_DTYPE = np.dtype([
    ("position", "<f4", 3),
    ("scale", "<f4", 3),
    ("rgba", "u1", 4),
    ("quat", "u1", 4),
])


def load_gaussians_splat(path) -> list[RawGaussianRecord]:
    """Decode a .splat file into raw Gaussian records."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) % RECORD_SIZE != 0:
        raise FileFormatError(
            f"{path}: length {len(data)} is not a multiple of {RECORD_SIZE} "
            f"(remainder {len(data) % RECORD_SIZE})"
        )
    table = np.frombuffer(data, dtype=_RECORD_DTYPE)

    scale = table["scale"].astype(np.float64)
    if np.any(scale <= 0):
        bad = int(np.argwhere(scale <= 0)[0][0])
        raise FileFormatError(f"{path}: record {bad} has non-positive scale (log undefined)")
    log_scale = np.log(scale)

    rgba = table["rgba"].astype(np.float64)
    sh_dc = (rgba[:, :3] / 255.0 - 0.5) / SH_C0
    alpha = np.clip(rgba[:, 3] / 255.0, ALPHA_CLAMP, 1.0 - ALPHA_CLAMP)
    logit_opacity = np.log(alpha / (1.0 - alpha))

    rotation = (table["quat"].astype(np.float64) - 128.0) / 128.0
    position = table["position"].astype(np.float64)

    records = []
    dropped = 0
    for i in range(len(table)):
        record = RawGaussianRecord(
            position=position[i],
            log_scale=log_scale[i],
            rotation=rotation[i],
            logit_opacity=float(logit_opacity[i]),
            sh_dc=sh_dc[i],
        )
        if record.is_valid():
            records.append(record)
        else:
            dropped += 1
    if dropped:
        log.warning("%s: dropped %d records with zero-norm quaternions", path, dropped)
    return records


def encode_gaussians_splat(records: list[RawGaussianRecord]) -> bytes:
    """Encode records back into .splat bytes (inverse of the loader).

    Decode -> encode -> decode is a fixed point: the first decode already
    lands on the u8-quantised grid, so re-encoding reproduces the bytes.
    """
    table = np.empty(len(records), dtype=_RECORD_DTYPE)
    for i, rec in enumerate(records):
        table["position"][i] = rec.position.astype(np.float32)
        table["scale"][i] = np.exp(rec.log_scale).astype(np.float32)
        colour = np.clip(0.5 + SH_C0 * rec.sh_dc, 0.0, 1.0)
        opacity = 1.0 / (1.0 + np.exp(-rec.logit_opacity))
        table["rgba"][i, :3] = np.floor(colour * 255.0 + 0.5).astype(np.uint8)
        table["rgba"][i, 3] = int(np.floor(opacity * 255.0 + 0.5))
        quat = np.clip(np.floor(rec.rotation * 128.0 + 128.0 + 0.5), 0, 255)
        table["quat"][i] = quat.astype(np.uint8)
    return table.tobytes()


def write_gaussians_splat(records: list[RawGaussianRecord], path) -> None:
    Path(path).write_bytes(encode_gaussians_splat(records))
