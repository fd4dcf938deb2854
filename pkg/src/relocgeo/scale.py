"""Metric scale of the translation from depth-lifted matches."""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidInputError, NoDepthOverlapError, ScaleFailedError
from .geometry import CameraIntrinsics, Pose
from .matching import CorrespondenceMap

log = logging.getLogger(__name__)

METRIC = "metric"
CANONICAL = "canonical"


@dataclass(frozen=True)
class DepthMap:
    depth: np.ndarray  # (H, W)
    valid: np.ndarray  # (H, W) bool
    space: str = METRIC
    focal_used: float = 0.0

    def __post_init__(self):
        depth = np.asarray(self.depth)
        valid = np.asarray(self.valid, dtype=bool)
        if depth.ndim != 2 or valid.shape != depth.shape:
            raise InvalidInputError("depth and valid must be matching 2-D arrays")
        if self.space not in (METRIC, CANONICAL):
            raise InvalidInputError(f"unknown depth space {self.space!r}")
        d = depth[valid]
        if not (np.isfinite(d).all() and (d > 0).all()):
            raise InvalidInputError("valid depths must be finite and positive")
        object.__setattr__(self, "valid", valid)

    @classmethod
    def from_array(cls, depth, space: str = METRIC, focal_used: float = 0.0) -> "DepthMap":
        depth = np.asarray(depth)
        valid = np.isfinite(depth) & (depth > 0)
        return cls(np.where(valid, depth, 0).astype(depth.dtype), valid, space, focal_used)

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape

    def scaled(self, factor: float) -> "DepthMap":
        return replace(self, depth=np.where(self.valid, self.depth * factor, self.depth))


@dataclass(frozen=True)
class ScaleConfig:
    rel_tol: float = 0.1
    eps: float = 1e-6


@dataclass(frozen=True)
class ScaleEstimate:
    scale: float
    inlier_count: int
    candidates_total: int


def rescale_ratio(f: float, fc: float) -> float:
    """Image scaling into the canonical camera, fc / f."""
    if not (f > 0 and fc > 0):
        raise InvalidInputError("focal lengths must be positive")
    return fc / f


def restore_ratio(f: float, fc: float) -> float:
    """Depth scaling back to the real camera, f / fc."""
    if not (f > 0 and fc > 0):
        raise InvalidInputError("focal lengths must be positive")
    return f / fc


def restore_metric_depth(dm: DepthMap, f: float, fc: float) -> DepthMap:
    if dm.space == METRIC:
        log.warning("depth map already metric; leaving it unchanged")
        return dm
    out = dm.scaled(restore_ratio(f, fc))
    return replace(out, space=METRIC, focal_used=f)


def to_canonical_depth(dm: DepthMap, f: float, fc: float) -> DepthMap:
    """Inverse of :func:`restore_metric_depth`."""
    if dm.space == CANONICAL:
        return dm
    out = dm.scaled(rescale_ratio(f, fc))
    return replace(out, space=CANONICAL, focal_used=fc)


def backproject_matches(
    cmap: CorrespondenceMap, d1: DepthMap, d2: DepthMap, k1: CameraIntrinsics, k2: CameraIntrinsics
):
    """3-D points for each match with valid depth at both ends.

    Returns ``(p1, p2, kept, skipped)``: points in each camera's own frame, the
    boolean mask of surviving pairs and the count of pairs dropped.
    """
    if d1.space != METRIC or d2.space != METRIC:
        raise InvalidInputError("depth maps must be metric; restore canonical depth first")
    f1 = cmap.idx1
    f2 = cmap.idx2
    ok = d1.valid.ravel()[f1] & d2.valid.ravel()[f2]
    skipped = int(len(cmap) - ok.sum())
    if not ok.any():
        raise NoDepthOverlapError("no match has valid depth in both views")
    z1 = d1.depth.ravel()[f1[ok]].astype(np.float64)
    z2 = d2.depth.ravel()[f2[ok]].astype(np.float64)
    q1 = cmap.pix1[ok].astype(np.float64)
    q2 = cmap.pix2[ok].astype(np.float64)
    p1 = z1[:, None] * np.c_[(q1[:, 0] - k1.cx) / k1.fx, (q1[:, 1] - k1.cy) / k1.fy, np.ones(len(q1))]
    p2 = z2[:, None] * np.c_[(q2[:, 0] - k2.cx) / k2.fx, (q2[:, 1] - k2.cy) / k2.fy, np.ones(len(q2))]
    return p1, p2, ok, skipped


def scale_candidate(p1, p2, r, direction) -> np.ndarray:
    """``|p1 - R p2| / |t|`` per pair; ``R`` rotates frame-2 vectors into frame 1."""
    p1 = np.asarray(p1, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    d = p1 - p2 @ np.asarray(r).T
    return np.linalg.norm(d, axis=-1) / np.linalg.norm(direction)


def ransac_scale(p1, p2, r, direction, cfg: ScaleConfig = ScaleConfig()) -> ScaleEstimate:
    """Consensus vote over per-pair scale candidates.

    Every non-degenerate candidate is a hypothesis; its support is the number of
    candidates within relative tolerance ``rel_tol``. Ties go to the smaller
    candidate and the result is the mean of the winning support set.
    """
    s = np.sort(np.atleast_1d(scale_candidate(p1, p2, r, direction)))
    total = len(s)
    s = s[s > cfg.eps]
    if len(s) == 0:
        raise ScaleFailedError("every scale candidate is degenerate")
    lo = np.searchsorted(s, s - cfg.rel_tol * s, side="left")
    hi = np.searchsorted(s, s + cfg.rel_tol * s, side="right")
    support = hi - lo
    win = int(np.argmax(support))  # first maximum is the smallest candidate
    agree = s[lo[win]:hi[win]]
    return ScaleEstimate(float(np.mean(agree)), int(len(agree)), total)


def compose_final_pose(r, direction, s: ScaleEstimate) -> Pose:
    if not s.scale > 0:
        raise InvalidInputError("scale must be positive")
    return Pose(r, s.scale * np.asarray(direction, dtype=np.float64))
