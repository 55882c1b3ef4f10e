"""Tiled software rasterizer with per-Gaussian contribution tracking.

Compositing follows the usual splatting conventions: front-to-back alpha
blending with a 0.99 alpha clamp, a 1/255 alpha skip, a 1e-4 transmittance
early-out and a +0.3 pixel low-pass on the projected covariance.

A Gaussian participates at a pixel only when the pixel lies inside the
Gaussian's integer-clipped 3-sigma screen bounding box. Tile membership is
derived from the same boxes, so the composited image is independent of the
tile layout (subdivided or not) up to floating-point accumulation order.
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RenderConfig
from .errors import DomainError
from .scene import ContributionState, GaussianScene
from .types import CameraPose

log = logging.getLogger(__name__)

NEAR_PLANE = 0.01
ALPHA_MAX = 0.99
ALPHA_MIN = 1.0 / 255.0
TRANSMITTANCE_EPS = 1e-4
COV2D_LOWPASS = 0.3

# Cap on gaussians x pixels processed per compositing chunk; bounds the
# working-set size independently of the tile budget.
_CHUNK_ELEMENTS = 1 << 22

# Pixel-block edge for the internal evaluation grid inside a tile. Each
# gaussian is only evaluated on blocks its bbox overlaps, which prunes the
# dense gaussians-x-pixels work without changing which gaussian composites
# at which pixel (the bbox rule already decides that).
_EVAL_BLOCK = 32


@dataclass
class ProjectedGaussians:
    """Columnar view of the Gaussians visible from one camera.

    Rows are sorted front to back by (depth, gaussian_index). ``bbox`` holds
    the integer-clipped half-open 3-sigma screen boxes (x0, y0, x1, y1).
    """

    gaussian_index: np.ndarray
    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: np.ndarray
    opacity: np.ndarray
    bbox: np.ndarray

    def __len__(self) -> int:
        return len(self.gaussian_index)


@dataclass
class Tile:
    """A pixel rect plus the projected rows overlapping it, front to back."""

    x0: int
    y0: int
    x1: int
    y1: int
    members: np.ndarray
    level: int = 0  # 0 = base grid, >0 = produced by subdivision

    @property
    def pixels(self) -> int:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    @property
    def product(self) -> int:
        return len(self.members) * self.pixels


@dataclass
class ImageBuffers:
    """Per-image output planes shared by all tiles of that image."""

    image: np.ndarray        # (H, W, 3) float64 in [0, 1]
    t_final: np.ndarray      # (H, W) transmittance after the last composited splat
    weight_sum: np.ndarray   # (H, W) sum of composited contributions
    terminated: np.ndarray   # (H, W) bool, True where the early-out fired

    @classmethod
    def allocate(cls, width: int, height: int) -> "ImageBuffers":
        return cls(
            image=np.zeros((height, width, 3)),
            t_final=np.ones((height, width)),
            weight_sum=np.zeros((height, width)),
            terminated=np.zeros((height, width), dtype=bool),
        )


@dataclass
class TileComposite:
    """Per-Gaussian best-pixel candidates produced by one tile."""

    rows: np.ndarray          # rows into the projection
    values: np.ndarray        # contribution at the best pixel
    pixel_index: np.ndarray   # global row-major pixel index
    colours: np.ndarray       # final colour of that pixel
    singular_skips: int = 0


@dataclass
class RenderStats:
    images_rendered: int = 0
    gaussians_projected: int = 0
    gaussians_excluded: int = 0
    tiles: int = 0
    tiles_subdivided: int = 0
    max_tile_product: int = 0
    singular_skips: int = 0
    seconds: float = 0.0


def project(scene: GaussianScene, pose: CameraPose) -> ProjectedGaussians:
    """Project means and covariances into screen space via the local Jacobian.

    Excludes Gaussians behind the near plane and those whose 3-sigma screen
    box misses the image entirely.
    """
    rot = pose.rotation
    cam = scene.position @ rot.T + pose.translation
    z = cam[:, 2]
    in_front = z > NEAR_PLANE

    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        inv_z = np.where(in_front, 1.0 / z, 0.0)
        mx = pose.fx * cam[:, 0] * inv_z + pose.cx
        my = pose.fy * cam[:, 1] * inv_z + pose.cy

        cov_cam = np.einsum("ij,njk,lk->nil", rot, scene.covariance, rot)
        jac = np.zeros((scene.count, 2, 3))
        jac[:, 0, 0] = pose.fx * inv_z
        jac[:, 0, 2] = -pose.fx * cam[:, 0] * inv_z * inv_z
        jac[:, 1, 1] = pose.fy * inv_z
        jac[:, 1, 2] = -pose.fy * cam[:, 1] * inv_z * inv_z
        cov2d = np.einsum("nij,njk,nlk->nil", jac, cov_cam, jac)
    cov2d[:, 0, 0] += COV2D_LOWPASS
    cov2d[:, 1, 1] += COV2D_LOWPASS

    with np.errstate(invalid="ignore"):
        rx = 3.0 * np.sqrt(cov2d[:, 0, 0])
        ry = 3.0 * np.sqrt(cov2d[:, 1, 1])
        x0 = np.clip(np.floor(mx - rx), 0, pose.width)
        x1 = np.clip(np.ceil(mx + rx), 0, pose.width)
        y0 = np.clip(np.floor(my - ry), 0, pose.height)
        y1 = np.clip(np.ceil(my + ry), 0, pose.height)

    finite = (
        np.isfinite(mx) & np.isfinite(my)
        & np.isfinite(cov2d).all(axis=(1, 2))
        & np.isfinite(rx) & np.isfinite(ry)
    )
    keep = in_front & finite & (x1 > x0) & (y1 > y0)

    indices = np.nonzero(keep)[0]
    order = np.lexsort((indices, z[indices]))
    rows = indices[order]
    bbox = np.stack([x0[rows], y0[rows], x1[rows], y1[rows]], axis=1).astype(np.int64)
    return ProjectedGaussians(
        gaussian_index=rows,
        mean2d=np.stack([mx[rows], my[rows]], axis=1),
        cov2d=cov2d[rows],
        depth=z[rows],
        opacity=scene.opacity[rows],
        bbox=bbox,
    )


def tile_scene(projected: ProjectedGaussians, width: int, height: int,
               budget: int, tile_size: int = 64) -> list[Tile]:
    """Partition the image into tiles whose gaussians x pixels fit the budget.

    Starts from a regular ``tile_size`` grid; any tile over budget is split
    into four quadrants recursively until the product fits or the tile is a
    single pixel. Member lists stay sorted front to back.
    """
    if budget < 1:
        raise DomainError(f"tile budget must be positive, got {budget}")
    tiles_x = (width + tile_size - 1) // tile_size
    tiles_y = (height + tile_size - 1) // tile_size

    # (row, tile) incidence pairs, ordered by (tile, depth, gaussian_index)
    bbox = projected.bbox
    if len(projected):
        depth_rank = np.empty(len(projected), dtype=np.int64)
        depth_rank[np.lexsort((projected.gaussian_index, projected.depth))] = \
            np.arange(len(projected))
        tx0 = bbox[:, 0] // tile_size
        ty0 = bbox[:, 1] // tile_size
        tx1 = (bbox[:, 2] - 1) // tile_size
        ty1 = (bbox[:, 3] - 1) // tile_size
        spans_x = tx1 - tx0 + 1
        spans_y = ty1 - ty0 + 1
        counts = spans_x * spans_y
        row_of_pair = np.repeat(np.arange(len(projected)), counts)
        offset = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        local_x = offset % np.repeat(spans_x, counts)
        local_y = offset // np.repeat(spans_x, counts)
        tile_key = (np.repeat(ty0, counts) + local_y) * tiles_x + np.repeat(tx0, counts) + local_x
        order = np.lexsort((depth_rank[row_of_pair], tile_key))
        tile_key = tile_key[order]
        row_of_pair = row_of_pair[order]
        boundaries = np.searchsorted(tile_key, np.arange(tiles_x * tiles_y + 1))
    else:
        row_of_pair = np.zeros(0, dtype=np.int64)
        boundaries = np.zeros(tiles_x * tiles_y + 1, dtype=np.int64)

    out: list[Tile] = []
    for ty in range(tiles_y):
        for tx in range(tiles_x):
            key = ty * tiles_x + tx
            members = row_of_pair[boundaries[key]:boundaries[key + 1]]
            rect = (
                tx * tile_size, ty * tile_size,
                min((tx + 1) * tile_size, width), min((ty + 1) * tile_size, height),
            )
            _subdivide(rect, members, 0, projected, budget, out)
    return out


def _subdivide(rect, members, level, projected, budget, out):
    x0, y0, x1, y1 = rect
    pixels = (x1 - x0) * (y1 - y0)
    if len(members) * pixels <= budget or (x1 - x0 == 1 and y1 - y0 == 1):
        out.append(Tile(x0, y0, x1, y1, members, level))
        return
    xm = x0 + (x1 - x0) // 2 if x1 - x0 >= 2 else x1
    ym = y0 + (y1 - y0) // 2 if y1 - y0 >= 2 else y1
    bbox = projected.bbox[members]
    for qy0, qy1 in ((y0, ym), (ym, y1)):
        for qx0, qx1 in ((x0, xm), (xm, x1)):
            if qx1 <= qx0 or qy1 <= qy0:
                continue
            inside = (
                (bbox[:, 0] < qx1) & (bbox[:, 2] > qx0)
                & (bbox[:, 1] < qy1) & (bbox[:, 3] > qy0)
            )
            _subdivide((qx0, qy0, qx1, qy1), members[inside], level + 1,
                       projected, budget, out)


def _composite_rect(x0, y0, x1, y1, mean, inv00, inv01, inv11, quad_cut,
                    opacity, bbox, colours, background):
    """Dense front-to-back compositing of the given rows over one pixel rect.

    Returns (pixels, t_final, weight_sum, done, best_values, best_pixel_local)
    with the pixel planes flattened row-major over the rect.
    """
    h, w = y1 - y0, x1 - x0
    npix = h * w
    pix_x = np.tile(np.arange(x0, x1), h)
    pix_y = np.repeat(np.arange(y0, y1), w)
    centre_x = pix_x + 0.5
    centre_y = pix_y + 0.5

    running_t = np.ones(npix)
    done = np.zeros(npix, dtype=bool)
    accum = np.zeros((npix, 3))
    weight_sum = np.zeros(npix)

    m = len(mean)
    chunk = max(1, _CHUNK_ELEMENTS // max(1, npix))
    best_values = np.zeros(m)
    best_pixel_local = np.zeros(m, dtype=np.int64)

    for lo in range(0, m, chunk):
        hi = min(lo + chunk, m)
        dx = centre_x[None, :] - mean[lo:hi, 0, None]
        dy = centre_y[None, :] - mean[lo:hi, 1, None]
        quad = (inv00[lo:hi, None] * dx * dx
                + 2.0 * inv01[lo:hi, None] * dx * dy
                + inv11[lo:hi, None] * dy * dy)
        relevant = (
            (pix_x[None, :] >= bbox[lo:hi, 0, None]) & (pix_x[None, :] < bbox[lo:hi, 2, None])
            & (pix_y[None, :] >= bbox[lo:hi, 1, None]) & (pix_y[None, :] < bbox[lo:hi, 3, None])
            # conservative pre-cut: alpha certainly below 1/255 out here
            & (quad <= quad_cut[lo:hi, None])
        )
        alpha = np.zeros_like(quad)
        np.exp(-0.5 * quad, out=alpha, where=relevant)
        alpha *= opacity[lo:hi, None]
        np.minimum(alpha, ALPHA_MAX, out=alpha)
        alpha[alpha < ALPHA_MIN] = 0.0

        t_raw = running_t[None, :] * np.cumprod(1.0 - alpha, axis=0)
        alive = (~done)[None, :] & (t_raw >= TRANSMITTANCE_EPS)
        alpha_eff = np.where(alive, alpha, 0.0)
        t_eff = running_t[None, :] * np.cumprod(1.0 - alpha_eff, axis=0)
        t_before = np.vstack([running_t[None, :], t_eff[:-1]])
        weights = alpha_eff * t_before

        accum += np.einsum("gp,gc->pc", weights, colours[lo:hi])
        weight_sum += weights.sum(axis=0)
        done |= t_raw[-1] < TRANSMITTANCE_EPS
        running_t = t_eff[-1]

        best_pixel_local[lo:hi] = np.argmax(weights, axis=1)
        best_values[lo:hi] = weights[np.arange(hi - lo), best_pixel_local[lo:hi]]

    pixels = accum + running_t[:, None] * background
    return pixels, running_t, weight_sum, done, best_values, best_pixel_local


def composite_tile(tile: Tile, projected: ProjectedGaussians, scene: GaussianScene,
                   buffers: ImageBuffers, contributions: ContributionState | None = None,
                   *, background=(0.0, 0.0, 0.0), image_rank: int = 0,
                   camera_centre=None) -> TileComposite:
    """Composite one tile front to back and report best-pixel candidates.

    Writes the tile's rect into ``buffers``. When ``contributions`` is given
    the candidates are merged immediately; parallel callers instead merge
    the returned ``TileComposite`` objects themselves (the merge is a total
    order, so any merge order produces the same state).
    """
    background = np.asarray(background, dtype=np.float64)
    image_width = buffers.image.shape[1]

    rows = tile.members
    singular = 0
    if len(rows):
        cov = projected.cov2d[rows]
        det = cov[:, 0, 0] * cov[:, 1, 1] - cov[:, 0, 1] * cov[:, 1, 0]
        good = np.isfinite(det) & (det > 0)
        singular = int(np.count_nonzero(~good))
        if singular:
            rows = rows[good]
            cov = cov[good]
            det = det[good]

    if len(rows) == 0:
        inv00 = inv01 = inv11 = quad_cut = opacity = np.zeros(0)
        mean = np.zeros((0, 2))
        bbox = np.zeros((0, 4), dtype=np.int64)
        colours = np.zeros((0, 3))
    else:
        inv00 = cov[:, 1, 1] / det
        inv01 = -cov[:, 0, 1] / det
        inv11 = cov[:, 0, 0] / det
        mean = projected.mean2d[rows]
        opacity = projected.opacity[rows]
        bbox = projected.bbox[rows]
        colours = scene.base_colour[projected.gaussian_index[rows]]
        # quad beyond this bound implies alpha < 1/255 with margin to spare
        with np.errstate(divide="ignore"):
            quad_cut = 2.0 * (np.log(255.0) + np.log(opacity)) + 1e-9

    m = len(rows)
    best_values = np.zeros(m)
    best_pixel = np.full(m, np.iinfo(np.int64).max, dtype=np.int64)
    best_colours = np.zeros((m, 3))

    for block_y0 in range(tile.y0, tile.y1, _EVAL_BLOCK):
        block_y1 = min(block_y0 + _EVAL_BLOCK, tile.y1)
        for block_x0 in range(tile.x0, tile.x1, _EVAL_BLOCK):
            block_x1 = min(block_x0 + _EVAL_BLOCK, tile.x1)
            if m:
                inside = (
                    (bbox[:, 0] < block_x1) & (bbox[:, 2] > block_x0)
                    & (bbox[:, 1] < block_y1) & (bbox[:, 3] > block_y0)
                )
                sub = np.nonzero(inside)[0]
            else:
                sub = np.zeros(0, dtype=np.int64)
            pixels, t_final, weight_sum, done, values, pixel_local = _composite_rect(
                block_x0, block_y0, block_x1, block_y1,
                mean[sub], inv00[sub], inv01[sub], inv11[sub], quad_cut[sub],
                opacity[sub], bbox[sub], colours[sub], background)

            bh, bw = block_y1 - block_y0, block_x1 - block_x0
            buffers.image[block_y0:block_y1, block_x0:block_x1] = pixels.reshape(bh, bw, 3)
            buffers.t_final[block_y0:block_y1, block_x0:block_x1] = t_final.reshape(bh, bw)
            buffers.weight_sum[block_y0:block_y1, block_x0:block_x1] = \
                weight_sum.reshape(bh, bw)
            buffers.terminated[block_y0:block_y1, block_x0:block_x1] = done.reshape(bh, bw)

            contributing = values > 0.0
            if not np.any(contributing):
                continue
            candidates = sub[contributing]
            local = pixel_local[contributing]
            pixel_global = ((block_y0 + local // bw) * image_width
                            + block_x0 + local % bw).astype(np.int64)
            candidate_values = values[contributing]
            better = (candidate_values > best_values[candidates]) | (
                (candidate_values == best_values[candidates])
                & (pixel_global < best_pixel[candidates])
            )
            winners = candidates[better]
            best_values[winners] = candidate_values[better]
            best_pixel[winners] = pixel_global[better]
            best_colours[winners] = pixels[local[better]]

    contributing = best_values > 0.0
    result = TileComposite(
        rows=rows[contributing],
        values=best_values[contributing],
        pixel_index=best_pixel[contributing],
        colours=best_colours[contributing],
        singular_skips=singular,
    )
    if contributions is not None:
        contributions.offer(
            projected.gaussian_index[result.rows], result.values, result.colours,
            image_rank, result.pixel_index,
            np.zeros(3) if camera_centre is None else camera_centre,
        )
    return result


def render_image(scene: GaussianScene, pose: CameraPose, config: RenderConfig,
                 image_rank: int = 0,
                 contributions: ContributionState | None = None,
                 ) -> tuple[ImageBuffers, RenderStats]:
    """Render one camera view, updating ``contributions`` when given."""
    stats = RenderStats(images_rendered=1)
    projected = project(scene, pose)
    stats.gaussians_projected = len(projected)
    stats.gaussians_excluded = scene.count - len(projected)

    tiles = tile_scene(projected, pose.width, pose.height,
                       config.tile_budget, config.tile_size)
    stats.tiles = len(tiles)
    stats.tiles_subdivided = sum(1 for t in tiles if t.level > 0)
    stats.max_tile_product = max((t.product for t in tiles), default=0)

    buffers = ImageBuffers.allocate(pose.width, pose.height)
    centre = pose.camera_centre

    def run_tile(tile: Tile) -> TileComposite:
        return composite_tile(tile, projected, scene, buffers, None,
                              background=config.background,
                              image_rank=image_rank, camera_centre=centre)

    workers = config.threads if config.threads > 0 else (os.cpu_count() or 1)
    if workers > 1 and len(tiles) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_tile, tiles))
    else:
        results = [run_tile(tile) for tile in tiles]

    for piece in results:
        stats.singular_skips += piece.singular_skips
        if contributions is not None and len(piece.rows):
            contributions.offer(
                projected.gaussian_index[piece.rows], piece.values, piece.colours,
                image_rank, piece.pixel_index, centre,
            )
    return buffers, stats


def render_all(scene: GaussianScene, poses: list[CameraPose],
               config: RenderConfig) -> RenderStats:
    """Render every pose and leave the per-Gaussian best colours in the scene.

    Poses are processed in a deterministic order (stable sort by image_id);
    ``skip_cameras=k`` with k >= 2 drops every k-th pose from that order.
    """
    if not poses:
        raise DomainError("rendering requires at least one camera pose")

    ordered = sorted(poses, key=lambda p: p.image_id)
    if config.skip_cameras >= 2:
        ordered = [p for i, p in enumerate(ordered)
                   if (i + 1) % config.skip_cameras != 0]
        if not ordered:
            raise DomainError("--skip-cameras removed every pose")
    if config.render_scale != 1.0:
        ordered = [p.scaled(config.render_scale) for p in ordered]

    state = scene.contribution
    state.reset(config.background)
    state.rendered = True

    if config.save_renders is not None:
        Path(config.save_renders).mkdir(parents=True, exist_ok=True)

    total = RenderStats()
    started = time.perf_counter()
    for rank, pose in enumerate(ordered):
        buffers, stats = render_image(scene, pose, config, rank, state)
        total.images_rendered += 1
        total.gaussians_projected += stats.gaussians_projected
        total.gaussians_excluded += stats.gaussians_excluded
        total.tiles += stats.tiles
        total.tiles_subdivided += stats.tiles_subdivided
        total.max_tile_product = max(total.max_tile_product, stats.max_tile_product)
        total.singular_skips += stats.singular_skips
        if config.save_renders is not None:
            write_ppm(Path(config.save_renders) / f"render_{rank:04d}.ppm", buffers.image)
        log.debug("rendered image %d/%d (image_id=%s)", rank + 1, len(ordered), pose.image_id)
    total.seconds = time.perf_counter() - started
    return total


def quantize_image(image: np.ndarray) -> np.ndarray:
    """Map float [0, 1] channels to uint8 with round-half-up."""
    return np.clip(np.floor(image * 255.0 + 0.5), 0, 255).astype(np.uint8)


def write_ppm(path, image: np.ndarray) -> None:
    """Write a float image as binary 8-bit PPM (P6); bit-exact baseline dump."""
    data = quantize_image(image)
    height, width = data.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{width} {height}\n255\n".encode("ascii"))
        fh.write(data.tobytes())
