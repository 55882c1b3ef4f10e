"""Meshing preparation: surface selection, normals and outlier removal.

The output of :func:`export_surface_cloud` is an oriented point cloud meant
to feed an external Poisson Surface Reconstruction step; no meshing happens
here.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .config import SamplerConfig, SurfaceConfig
from .errors import DomainError
from .sampler import SampleStats, _sample_scene
from .scene import GaussianScene, quats_to_rotmats
from .types import PointCloud

log = logging.getLogger(__name__)


@dataclass
class SurfaceSelection:
    """Mask of Gaussians whose best contribution reaches the scene mean."""

    surface_mask: np.ndarray
    mean_contribution: float


def select_surface(scene: GaussianScene) -> SurfaceSelection:
    """Keep Gaussians with best_contribution >= mean over all Gaussians.

    The maximum is always at least the mean, so the selection is non-empty
    whenever any Gaussian contributed at all.
    """
    state = scene.contribution
    if state is None or not state.rendered:
        raise DomainError("surface selection requires a completed rendering pass")
    # clamp to the max: the float mean of identical values can round above
    # them, which would otherwise empty the selection
    threshold = min(float(state.best_contribution.mean()),
                    float(state.best_contribution.max()))
    mask = state.best_contribution >= threshold
    return SurfaceSelection(surface_mask=mask, mean_contribution=threshold)


def surface_normals(scene: GaussianScene, selection: SurfaceSelection) -> np.ndarray:
    """Unit normal per Gaussian: the rotated axis of the smallest scale.

    The sign is chosen so the normal points towards the camera centre that
    recorded the Gaussian's best contribution (non-negative dot product with
    centre - mean). Gaussians never seen by a camera keep the unflipped axis.
    """
    if not np.any(selection.surface_mask):
        raise DomainError("surface selection is empty")
    rot = quats_to_rotmats(scene.rotation_unit)
    smallest = np.argmin(scene.log_scale, axis=1)
    normals = np.take_along_axis(rot, smallest[:, None, None], axis=2)[:, :, 0]

    centres = scene.contribution.best_camera_centre
    seen = np.isfinite(centres).all(axis=1)
    towards = centres - scene.position
    flip = seen & (np.einsum("nj,nj->n", normals, towards) < 0.0)
    normals[flip] *= -1.0
    return normals


def remove_statistical_outliers(cloud: PointCloud, k_neighbours: int = 20,
                                std_ratio: float = 2.0) -> PointCloud:
    """Drop points whose mean k-NN distance exceeds mean + std_ratio * std.

    Exact nearest neighbours via a KD-tree; survivor order is preserved.
    """
    if k_neighbours < 1:
        raise DomainError(f"k_neighbours must be >= 1, got {k_neighbours}")
    if std_ratio <= 0:
        raise DomainError(f"std_ratio must be > 0, got {std_ratio}")
    if len(cloud) <= k_neighbours:
        raise DomainError(
            f"outlier removal needs more than {k_neighbours} points, got {len(cloud)}"
        )
    points = cloud.points.astype(np.float64)
    tree = cKDTree(points)
    distances, _ = tree.query(points, k=k_neighbours + 1)
    mean_distance = distances[:, 1:].mean(axis=1)  # column 0 is the point itself
    threshold = mean_distance.mean() + std_ratio * mean_distance.std()
    keep = mean_distance <= threshold
    removed = int(np.count_nonzero(~keep))
    if removed:
        log.info("statistical outlier removal dropped %d of %d points", removed, len(cloud))
    return cloud.take(keep)


def export_surface_cloud(scene: GaussianScene, sampler_config: SamplerConfig,
                         surface_config: SurfaceConfig) -> tuple[PointCloud, SampleStats]:
    """Sample an oriented point cloud from the surface Gaussians.

    Selection -> allocation of ``surface_points`` across the selected subset
    -> sampling -> per-point normals -> statistical outlier removal. The
    result is independent of the main cloud's point budget.
    """
    selection = select_surface(scene)
    normals = surface_normals(scene, selection)[selection.surface_mask]
    subset = scene.take(selection.surface_mask)
    log.info("surface selection kept %d of %d gaussians (mean contribution %.4g)",
             subset.count, scene.count, selection.mean_contribution)

    points, colours, gaussian_ids, stats = _sample_scene(
        subset, surface_config.surface_points, sampler_config)
    cloud = PointCloud(
        points=points.astype(np.float32),
        colours=colours,
        normals=normals[gaussian_ids].astype(np.float32),
    )
    cloud = remove_statistical_outliers(cloud, surface_config.sor_k, surface_config.sor_std)
    return cloud, stats
