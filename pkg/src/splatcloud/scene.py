"""Render-ready Gaussian scene: activation, covariance assembly and filters."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .config import FilterConfig
from .errors import DegenerateGaussianError, DomainError
from .types import RawGaussianRecord

log = logging.getLogger(__name__)

# Degree-0 SH basis constant; colour = 0.5 + C0 * coefficient.
SH_C0 = 0.28209479177387814

# Diagonal regularisation ladder for near-singular covariances.
CHOLESKY_EPS = 1e-8
CHOLESKY_ATTEMPTS = 4

# sigmoid(+-36) is still strictly inside (0, 1) in float64.
_LOGIT_LIMIT = 36.0


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.clip(x, -_LOGIT_LIMIT, _LOGIT_LIMIT)))


def quats_to_rotmats(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for an (N, 4) array of unit (w, x, y, z) quaternions."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    rot = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    rot[..., 0, 0] = 1 - 2 * (y * y + z * z)
    rot[..., 0, 1] = 2 * (x * y - w * z)
    rot[..., 0, 2] = 2 * (x * z + w * y)
    rot[..., 1, 0] = 2 * (x * y + w * z)
    rot[..., 1, 1] = 1 - 2 * (x * x + z * z)
    rot[..., 1, 2] = 2 * (y * z - w * x)
    rot[..., 2, 0] = 2 * (x * z - w * y)
    rot[..., 2, 1] = 2 * (y * z + w * x)
    rot[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return rot


def _cholesky3_batch(cov: np.ndarray):
    """Closed-form lower Cholesky factors of (N, 3, 3) matrices.

    Returns (L, ok) where ok flags rows whose pivots were all strictly
    positive and finite; L rows with ok=False are garbage.
    """
    c00, c01, c02 = cov[:, 0, 0], cov[:, 1, 0], cov[:, 2, 0]
    c11, c12, c22 = cov[:, 1, 1], cov[:, 2, 1], cov[:, 2, 2]
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        l00 = np.sqrt(c00)
        l10 = c01 / l00
        l20 = c02 / l00
        p1 = c11 - l10 * l10
        l11 = np.sqrt(p1)
        l21 = (c12 - l20 * l10) / l11
        p2 = c22 - l20 * l20 - l21 * l21
        l22 = np.sqrt(p2)
    n = len(cov)
    L = np.zeros((n, 3, 3), dtype=np.float64)
    L[:, 0, 0] = l00
    L[:, 1, 0] = l10
    L[:, 1, 1] = l11
    L[:, 2, 0] = l20
    L[:, 2, 1] = l21
    L[:, 2, 2] = l22
    with np.errstate(invalid="ignore"):
        ok = (c00 > 0) & (p1 > 0) & (p2 > 0)
    ok &= np.isfinite(L).all(axis=(1, 2))
    return L, ok


def _regularised_covariances(log_scale: np.ndarray, rotation_unit: np.ndarray):
    """Batched Sigma = R diag(e^{2s}) R^T with the epsilon ladder applied.

    Returns (cov, chol, ok). Rows that never factorise keep ok=False and are
    meant to be dropped by the caller.
    """
    rot = quats_to_rotmats(rotation_unit)
    with np.errstate(over="ignore"):
        variance = np.exp(2.0 * np.asarray(log_scale, dtype=np.float64))
    cov = np.einsum("nij,nj,nkj->nik", rot, variance, rot)

    eye = np.eye(3)
    out = cov.copy()
    chol = np.zeros_like(cov)
    ok = np.zeros(len(cov), dtype=bool)
    eps = CHOLESKY_EPS
    pending = np.arange(len(cov))
    for _ in range(CHOLESKY_ATTEMPTS):
        candidate = cov[pending] + eps * eye
        L, good = _cholesky3_batch(candidate)
        hit = pending[good]
        out[hit] = candidate[good]
        chol[hit] = L[good]
        ok[hit] = True
        pending = pending[~good]
        if len(pending) == 0:
            break
        eps *= 10.0
    return out, chol, ok


def build_covariance(log_scale, rotation_unit, index: int = 0) -> np.ndarray:
    """Covariance of a single Gaussian: R diag(e^{2s}) R^T plus regularisation.

    Raises DegenerateGaussianError (carrying ``index``) when the epsilon
    ladder is exhausted without a successful factorisation.
    """
    log_scale = np.asarray(log_scale, dtype=np.float64).reshape(1, 3)
    rotation_unit = np.asarray(rotation_unit, dtype=np.float64).reshape(1, 4)
    cov, _, ok = _regularised_covariances(log_scale, rotation_unit)
    if not ok[0]:
        raise DegenerateGaussianError(index)
    return cov[0]


@dataclass
class ContributionState:
    """Per-Gaussian running maximum of rendering contribution.

    ``best_colour`` starts at the background colour and is replaced by the
    colour of the pixel with the largest contribution seen so far. The
    auxiliary image-rank / pixel-index / camera-centre columns make the
    update a total order, so merges commute (any tile or thread order gives
    the same state) and record which camera saw each Gaussian best.
    """

    best_contribution: np.ndarray
    best_colour: np.ndarray
    best_image_rank: np.ndarray
    best_pixel_index: np.ndarray
    best_camera_centre: np.ndarray
    background: np.ndarray
    rendered: bool = False

    @classmethod
    def initial(cls, count: int, background=(0.0, 0.0, 0.0)) -> "ContributionState":
        background = np.asarray(background, dtype=np.float64)
        return cls(
            best_contribution=np.zeros(count),
            best_colour=np.tile(background, (count, 1)),
            best_image_rank=np.full(count, np.iinfo(np.int64).max, dtype=np.int64),
            best_pixel_index=np.full(count, np.iinfo(np.int64).max, dtype=np.int64),
            best_camera_centre=np.full((count, 3), np.nan),
            background=background,
            rendered=False,
        )

    def reset(self, background) -> None:
        fresh = ContributionState.initial(len(self.best_contribution), background)
        self.__dict__.update(fresh.__dict__)

    def offer(self, gaussians, values, colours, image_rank, pixel_index, camera_centre):
        """Merge per-pixel contribution candidates (one row per Gaussian).

        A candidate wins on strictly larger contribution; exact ties go to
        the lower image rank, then the lower row-major pixel index, which
        reproduces first-seen-wins under the fixed iteration order.
        """
        gaussians = np.asarray(gaussians)
        current = self.best_contribution[gaussians]
        better = values > current
        tie = values == current
        if np.any(tie):
            rank_now = self.best_image_rank[gaussians]
            pix_now = self.best_pixel_index[gaussians]
            better |= tie & (
                (image_rank < rank_now)
                | ((image_rank == rank_now) & (pixel_index < pix_now))
            )
        win = gaussians[better]
        self.best_contribution[win] = values[better]
        self.best_colour[win] = colours[better]
        self.best_image_rank[win] = image_rank
        self.best_pixel_index[win] = pixel_index[better]
        self.best_camera_centre[win] = camera_centre

    def take(self, selector) -> "ContributionState":
        return ContributionState(
            best_contribution=self.best_contribution[selector],
            best_colour=self.best_colour[selector],
            best_image_rank=self.best_image_rank[selector],
            best_pixel_index=self.best_pixel_index[selector],
            best_camera_centre=self.best_camera_centre[selector],
            background=self.background,
            rendered=self.rendered,
        )


@dataclass
class GaussianScene:
    """Columnar store of activated Gaussian parameters."""

    position: np.ndarray        # (N, 3)
    log_scale: np.ndarray       # (N, 3)
    rotation_unit: np.ndarray   # (N, 4) unit quaternions
    opacity: np.ndarray         # (N,) strictly inside (0, 1)
    covariance: np.ndarray      # (N, 3, 3) SPD
    cov_cholesky: np.ndarray    # (N, 3, 3) lower factors of covariance
    base_colour: np.ndarray     # (N, 3) in [0, 1]
    contribution: ContributionState = field(repr=False, default=None)

    @property
    def count(self) -> int:
        return len(self.position)

    def __len__(self) -> int:
        return self.count

    def point_colours(self) -> np.ndarray:
        """Colour source for sampled points: rendered colours when available."""
        if self.contribution is not None and self.contribution.rendered:
            return self.contribution.best_colour
        return self.base_colour

    def take(self, selector) -> "GaussianScene":
        """Subset by mask or index array; relative order is preserved."""
        return GaussianScene(
            position=self.position[selector],
            log_scale=self.log_scale[selector],
            rotation_unit=self.rotation_unit[selector],
            opacity=self.opacity[selector],
            covariance=self.covariance[selector],
            cov_cholesky=self.cov_cholesky[selector],
            base_colour=self.base_colour[selector],
            contribution=self.contribution.take(selector),
        )


def activate(records: list[RawGaussianRecord], background=(0.0, 0.0, 0.0)) -> GaussianScene:
    """Turn raw records into a render-ready scene.

    Applies sigmoid to opacity logits, normalises quaternions, evaluates the
    degree-0 SH colour and assembles covariances. Gaussians whose covariance
    cannot be factorised are dropped with a warning.
    """
    if not records:
        raise DomainError("cannot activate an empty record list")

    position = np.stack([r.position for r in records]).astype(np.float64)
    log_scale = np.stack([r.log_scale for r in records]).astype(np.float64)
    rotation = np.stack([r.rotation for r in records]).astype(np.float64)
    logit_opacity = np.array([r.logit_opacity for r in records], dtype=np.float64)
    sh_dc = np.stack([r.sh_dc for r in records]).astype(np.float64)

    norm = np.linalg.norm(rotation, axis=1, keepdims=True)
    rotation_unit = rotation / norm
    opacity = sigmoid(logit_opacity)
    base_colour = np.clip(0.5 + SH_C0 * sh_dc, 0.0, 1.0)

    covariance, chol, ok = _regularised_covariances(log_scale, rotation_unit)
    if not np.all(ok):
        log.warning("dropping %d degenerate gaussians (covariance not factorisable)",
                    int(np.count_nonzero(~ok)))
        position, log_scale = position[ok], log_scale[ok]
        rotation_unit, opacity = rotation_unit[ok], opacity[ok]
        base_colour = base_colour[ok]
        covariance, chol = covariance[ok], chol[ok]
        if len(position) == 0:
            raise DomainError("all gaussians were degenerate")

    scene = GaussianScene(
        position=position,
        log_scale=log_scale,
        rotation_unit=rotation_unit,
        opacity=opacity,
        covariance=covariance,
        cov_cholesky=chol,
        base_colour=base_colour,
        contribution=ContributionState.initial(len(position), background),
    )
    return scene


def filter_scene(scene: GaussianScene, filters: FilterConfig) -> GaussianScene:
    """Keep Gaussians passing every enabled predicate, preserving order."""
    keep = np.ones(scene.count, dtype=bool)
    if filters.bbox_min is not None:
        keep &= np.all(scene.position >= np.asarray(filters.bbox_min), axis=1)
    if filters.bbox_max is not None:
        keep &= np.all(scene.position <= np.asarray(filters.bbox_max), axis=1)
    if filters.max_scale is not None:
        keep &= np.exp(scene.log_scale).max(axis=1) <= filters.max_scale
    if filters.min_opacity is not None:
        keep &= scene.opacity >= filters.min_opacity
    if not np.any(keep):
        raise DomainError("empty scene after filtering")
    if np.all(keep):
        return scene
    return scene.take(keep)


def cull_unrendered(scene: GaussianScene) -> GaussianScene:
    """Drop Gaussians that contributed to no rendered pixel.

    A no-op when no rendering pass ran (no cameras supplied).
    """
    if scene.contribution is None or not scene.contribution.rendered:
        return scene
    keep = scene.contribution.best_contribution > 0.0
    if not np.any(keep):
        raise DomainError("no gaussian contributed to any rendered image")
    if np.all(keep):
        return scene
    return scene.take(keep)
