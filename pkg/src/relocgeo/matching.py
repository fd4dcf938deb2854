"""Reciprocal nearest-neighbour matching over point maps sharing one frame.

Pixels are addressed as ``(u, v)`` = (column, row); flat indices are
row-major, ``v * width + u``. Nearest-neighbour ties resolve to the smallest
flat index so results never depend on traversal order.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyInputError, EmptyInstanceError, InsufficientMatchesWarning, InvalidInputError

GLOBAL = 0
MIN_MATCHES = 5
_TIE_REL = 1e-9
_K_CANDIDATES = 8


@dataclass(frozen=True)
class PointMap:
    points: np.ndarray  # (H, W, 3), reference-camera frame
    valid: np.ndarray  # (H, W) bool
    confidence: np.ndarray | None = None  # (H, W), >= 0

    def __post_init__(self):
        pts = np.asarray(self.points)
        if pts.ndim != 3 or pts.shape[2] != 3:
            raise InvalidInputError(f"points must be HxWx3, got {pts.shape}")
        valid = np.asarray(self.valid, dtype=bool)
        conf = np.ones(pts.shape[:2], np.float32) if self.confidence is None else np.asarray(self.confidence)
        if valid.shape != pts.shape[:2] or conf.shape != pts.shape[:2]:
            raise InvalidInputError("points, valid and confidence dimensions disagree")
        if not np.isfinite(pts[valid]).all():
            raise InvalidInputError("valid pixels must hold finite points")
        object.__setattr__(self, "valid", valid)
        object.__setattr__(self, "confidence", conf)

    @classmethod
    def from_points(cls, points, valid=None) -> "PointMap":
        points = np.asarray(points)
        if valid is None:
            valid = np.isfinite(points).all(axis=-1)
        return cls(points, valid)

    @property
    def height(self) -> int:
        return self.points.shape[0]

    @property
    def width(self) -> int:
        return self.points.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.points.shape[:2]

    def gated(self, min_confidence: float = 0.0, stride: int = 1) -> np.ndarray:
        """Validity after the optional confidence gate and pixel stride."""
        valid = self.valid.copy()
        if min_confidence > 0:
            valid &= self.confidence >= min_confidence
        if stride > 1:
            keep = np.zeros_like(valid)
            keep[::stride, ::stride] = True
            valid &= keep
        return valid


@dataclass(frozen=True)
class InstanceMask:
    labels: np.ndarray  # (H, W) uint8, 0 = background

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise InvalidInputError("mask labels must be 2-D")
        object.__setattr__(self, "labels", labels.astype(np.uint8, copy=False))

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def instance_ids(self) -> list[int]:
        return [int(o) for o in np.unique(self.labels) if o != 0]


@dataclass(frozen=True)
class DirectedMatches:
    src_idx: np.ndarray
    dst_idx: np.ndarray
    src_shape: tuple[int, int]
    dst_shape: tuple[int, int]

    def as_dict(self) -> dict[int, int]:
        return dict(zip(self.src_idx.tolist(), self.dst_idx.tolist()))


@dataclass(frozen=True)
class CorrespondenceMap:
    idx1: np.ndarray
    idx2: np.ndarray
    tags: np.ndarray  # 0 = global, o >= 1 = instance o
    shape1: tuple[int, int]
    shape2: tuple[int, int]

    @classmethod
    def empty(cls, shape1, shape2) -> "CorrespondenceMap":
        z = np.zeros(0, np.int64)
        return cls(z, z, np.zeros(0, np.int16), tuple(shape1), tuple(shape2))

    def __len__(self) -> int:
        return len(self.idx1)

    @property
    def pix1(self) -> np.ndarray:
        """(N, 2) integer ``(u, v)`` pixels in image 1."""
        return _unflatten(self.idx1, self.shape1[1])

    @property
    def pix2(self) -> np.ndarray:
        return _unflatten(self.idx2, self.shape2[1])

    def pairs(self) -> list[tuple[tuple[int, int], tuple[int, int]]]:
        return [((a, b), (c, d)) for (a, b), (c, d) in zip(self.pix1.tolist(), self.pix2.tolist())]

    def subset(self, keep) -> "CorrespondenceMap":
        return replace(self, idx1=self.idx1[keep], idx2=self.idx2[keep], tags=self.tags[keep])

    def is_injective(self) -> bool:
        return len(np.unique(self.idx1)) == len(self) and len(np.unique(self.idx2)) == len(self)

    def dump_lines(self) -> list[str]:
        lines = []
        for (u1, v1), (u2, v2), tag in zip(self.pix1.tolist(), self.pix2.tolist(), self.tags.tolist()):
            name = "global" if tag == GLOBAL else f"instance({tag})"
            lines.append(f"{u1} {v1} {u2} {v2} {name}")
        return lines


def _unflatten(idx, width) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.int64)
    return np.stack([idx % width, idx // width], axis=1)


class SpatialIndex:
    """Exact 3-D nearest-valid-point lookup over one point map."""

    def __init__(self, points: np.ndarray, flat_idx: np.ndarray, shape: tuple[int, int]):
        if len(flat_idx) == 0:
            raise EmptyInputError("point map has no valid points")
        self.points = np.ascontiguousarray(points, dtype=np.float64)
        self.flat_idx = np.asarray(flat_idx, dtype=np.int64)
        self.shape = tuple(shape)
        self._tree = cKDTree(self.points)

    def __len__(self) -> int:
        return len(self.flat_idx)

    def query(self, q) -> np.ndarray:
        """Flat pixel index of the nearest indexed point for each row of ``q``."""
        q = np.atleast_2d(np.asarray(q, dtype=np.float64))
        n = len(self.flat_idx)
        k = min(_K_CANDIDATES, n)
        kd_dist, cand = self._tree.query(q, k=k)
        if k == 1:
            kd_dist, cand = kd_dist[:, None], cand[:, None]
        bound = kd_dist[:, :1] * (1 + _TIE_REL) + 1e-300
        out = np.empty(len(q), np.int64)
        # rows whose k-th candidate is still a near tie need the full ball
        ambiguous = (kd_dist[:, -1] <= bound[:, 0]) & (k < n)
        easy = ~ambiguous
        if easy.any():
            c = cand[easy]
            d = np.sum((self.points[c] - q[easy, None, :]) ** 2, axis=-1)
            near = kd_dist[easy] <= bound[easy]
            d = np.where(near, d, np.inf)
            out[easy] = self._pick(c, d)
        for row in np.flatnonzero(ambiguous):
            c = np.asarray(self._tree.query_ball_point(q[row], bound[row, 0]), dtype=np.int64)
            d = np.sum((self.points[c] - q[row]) ** 2, axis=-1)
            out[row] = self._pick(c[None], d[None])[0]
        return out

    def _pick(self, cand, d) -> np.ndarray:
        flat = self.flat_idx[cand]
        best = d.min(axis=1, keepdims=True)
        flat = np.where(d == best, flat, np.iinfo(np.int64).max)
        return flat.min(axis=1)


def build_spatial_index(pm: PointMap, min_confidence: float = 0.0, stride: int = 1) -> SpatialIndex:
    valid = pm.gated(min_confidence, stride)
    flat = np.flatnonzero(valid.ravel())
    return SpatialIndex(pm.points.reshape(-1, 3)[flat], flat, pm.shape)


def nn_match(src: PointMap, dst_index: SpatialIndex, min_confidence: float = 0.0, stride: int = 1) -> DirectedMatches:
    src_flat = np.flatnonzero(src.gated(min_confidence, stride).ravel())
    if len(src_flat) == 0:
        raise EmptyInputError("source point map has no valid points")
    dst_flat = dst_index.query(src.points.reshape(-1, 3)[src_flat])
    return DirectedMatches(src_flat, dst_flat, src.shape, dst_index.shape)


def reciprocal_filter(fwd: DirectedMatches, bwd: DirectedMatches, tag: int = GLOBAL) -> CorrespondenceMap:
    """Keep pairs that are each other's nearest neighbour."""
    back = np.full(bwd.src_shape[0] * bwd.src_shape[1], -1, np.int64)
    back[bwd.src_idx] = bwd.dst_idx
    keep = back[fwd.dst_idx] == fwd.src_idx
    n = int(keep.sum())
    return CorrespondenceMap(
        fwd.src_idx[keep], fwd.dst_idx[keep], np.full(n, tag, np.int16), fwd.src_shape, fwd.dst_shape
    )


def match_global(
    pm1: PointMap, pm2: PointMap, min_confidence: float = 0.0, stride: int = 1, tag: int = GLOBAL
) -> CorrespondenceMap:
    idx1 = build_spatial_index(pm1, min_confidence, stride)
    idx2 = build_spatial_index(pm2, min_confidence, stride)
    fwd = nn_match(pm1, idx2, min_confidence, stride)
    bwd = nn_match(pm2, idx1, min_confidence, stride)
    out = reciprocal_filter(fwd, bwd, tag)
    if len(out) < MIN_MATCHES:
        warnings.warn(f"only {len(out)} reciprocal matches", InsufficientMatchesWarning, stacklevel=2)
    return out


def mask_pointmap(pm: PointMap, mask: InstanceMask, o: int) -> PointMap:
    if mask.shape != pm.shape:
        raise InvalidInputError(f"mask {mask.shape} does not match point map {pm.shape}")
    inside = mask.labels == o
    if o == 0 or not inside.any():
        raise EmptyInstanceError(f"instance {o} not present in mask")
    return PointMap(pm.points, pm.valid & inside, pm.confidence)


def match_instance(
    pm1: PointMap,
    pm2: PointMap,
    mask1: InstanceMask,
    mask2: InstanceMask,
    o: int,
    min_confidence: float = 0.0,
    stride: int = 1,
) -> CorrespondenceMap:
    m1 = mask_pointmap(pm1, mask1, o)
    m2 = mask_pointmap(pm2, mask2, o)
    if not m1.gated(min_confidence, stride).any() or not m2.gated(min_confidence, stride).any():
        raise EmptyInstanceError(f"instance {o} has no valid points in one view")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", InsufficientMatchesWarning)
        return match_global(m1, m2, min_confidence, stride, tag=o)


def shared_instances(mask1: InstanceMask, mask2: InstanceMask) -> list[int]:
    return sorted(set(mask1.instance_ids()) & set(mask2.instance_ids()))


def merge_maps(
    global_map: CorrespondenceMap, per_instance: list[CorrespondenceMap], mask1: InstanceMask
) -> CorrespondenceMap:
    """Instance pairs own every masked image-1 pixel; global pairs fill the rest.

    Image-2 collisions keep the instance pair first, then the smaller image-1 index.
    """
    inside = mask1.labels.ravel() != 0
    g = global_map.subset(~inside[global_map.idx1])
    parts = [g, *per_instance]
    idx1 = np.concatenate([p.idx1 for p in parts]).astype(np.int64)
    idx2 = np.concatenate([p.idx2 for p in parts]).astype(np.int64)
    tags = np.concatenate([p.tags for p in parts]).astype(np.int16)
    if len(idx1) == 0:
        return CorrespondenceMap.empty(global_map.shape1, global_map.shape2)
    # priority order: instance before global, then image-1 index
    order = np.lexsort((idx1, tags == GLOBAL))
    idx1, idx2, tags = idx1[order], idx2[order], tags[order]
    _, first = np.unique(idx2, return_index=True)
    keep = np.zeros(len(idx2), bool)
    keep[first] = True
    _, first1 = np.unique(idx1, return_index=True)
    keep1 = np.zeros(len(idx1), bool)
    keep1[first1] = True
    keep &= keep1
    out_order = np.argsort(idx1[keep], kind="stable")
    return CorrespondenceMap(
        idx1[keep][out_order], idx2[keep][out_order], tags[keep][out_order],
        global_map.shape1, global_map.shape2,
    )
