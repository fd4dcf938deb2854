"""Per-frame relocalization: match, essential RANSAC, cheirality, metric scale."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import IntEnum

from .errors import (
    CheiralityError,
    EmptyInputError,
    EmptyInstanceError,
    EstimationFailedError,
    InsufficientMatchesError,
    InsufficientMatchesWarning,
    InvalidInputError,
    NoDepthOverlapError,
    RelocError,
    ScaleFailedError,
)
from .geometry import CameraIntrinsics, Pose
from .matching import (
    CorrespondenceMap,
    InstanceMask,
    PointMap,
    match_global,
    match_instance,
    merge_maps,
    shared_instances,
)
from .pose import (
    RansacConfig,
    RelativePoseHypothesis,
    decompose_essential,
    normalize,
    ransac_essential,
    select_cheirality,
    select_cheirality_depth,
)
from .scale import (
    CANONICAL,
    DepthMap,
    ScaleConfig,
    ScaleEstimate,
    backproject_matches,
    ransac_scale,
    restore_metric_depth,
)


CHEIRALITY_MODES = ("triangulation", "depth")


class Status(IntEnum):
    OK = 0
    INSUFFICIENT_MATCHES = 1
    ESTIMATION_FAILED = 2
    CHEIRALITY_FAILED = 3
    NO_DEPTH_OVERLAP = 4
    SCALE_FAILED = 5
    INVALID_INPUT = 6


@dataclass(frozen=True)
class PipelineConfig:
    use_instances: bool = True
    use_depth_scale: bool = True
    cheirality: str = "triangulation"
    min_confidence: float = 0.0
    stride: int = 1
    ransac: RansacConfig = field(default_factory=RansacConfig)
    scale: ScaleConfig = field(default_factory=ScaleConfig)

    def __post_init__(self):
        if self.cheirality not in CHEIRALITY_MODES:
            raise InvalidInputError(f"cheirality must be one of {CHEIRALITY_MODES}")
        if self.stride < 1:
            raise InvalidInputError("stride must be >= 1")


@dataclass(frozen=True)
class FrameInput:
    pm1: PointMap  # reference view, reference frame
    pm2: PointMap  # query view, reference frame
    k1: CameraIntrinsics
    k2: CameraIntrinsics
    d1: DepthMap | None = None
    d2: DepthMap | None = None
    mask1: InstanceMask | None = None
    mask2: InstanceMask | None = None


@dataclass
class FrameResult:
    status: Status
    pose: Pose | None = None
    confidence: float = 0.0
    matches: CorrespondenceMap | None = None
    hypothesis: RelativePoseHypothesis | None = None
    scale: ScaleEstimate | None = None
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == Status.OK

    @property
    def n_matches(self) -> int:
        return 0 if self.matches is None else len(self.matches)

    @property
    def n_inliers(self) -> int:
        return 0 if self.hypothesis is None else self.hypothesis.inlier_count

    @property
    def n_outliers(self) -> int:
        return self.n_matches - self.n_inliers if self.hypothesis is not None else 0


def correspondences(inp: FrameInput, cfg: PipelineConfig) -> CorrespondenceMap:
    """Global reciprocal matches, overridden by per-instance ones inside masks."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", InsufficientMatchesWarning)
        try:
            glob = match_global(inp.pm1, inp.pm2, cfg.min_confidence, cfg.stride)
        except EmptyInputError:
            glob = CorrespondenceMap.empty(inp.pm1.shape, inp.pm2.shape)
    if not cfg.use_instances or inp.mask1 is None or inp.mask2 is None:
        return glob
    per = []
    for o in shared_instances(inp.mask1, inp.mask2):
        try:
            per.append(match_instance(inp.pm1, inp.pm2, inp.mask1, inp.mask2, o, cfg.min_confidence, cfg.stride))
        except (EmptyInstanceError, EmptyInputError):
            continue
    return merge_maps(glob, per, inp.mask1)


def _metric(d: DepthMap, k: CameraIntrinsics) -> DepthMap:
    if d.space == CANONICAL:
        return restore_metric_depth(d, k.fx, d.focal_used)
    return d


def estimate_frame(inp: FrameInput, cfg: PipelineConfig = PipelineConfig()) -> FrameResult:
    """Run one query frame. Stage failures come back as a status, not an exception."""
    try:
        cmap = correspondences(inp, cfg)
    except InvalidInputError as exc:
        return FrameResult(Status.INVALID_INPUT, message=str(exc))
    res = FrameResult(Status.OK, matches=cmap)
    try:
        corrs = normalize(inp.k1, inp.k2, cmap)
        e, inl = ransac_essential(corrs, cfg.ransac)
    except InsufficientMatchesError as exc:
        res.status, res.message = Status.INSUFFICIENT_MATCHES, str(exc)
        return res
    except EstimationFailedError as exc:
        res.status, res.message = Status.ESTIMATION_FAILED, str(exc)
        return res

    have_depth = inp.d1 is not None and inp.d2 is not None
    if cfg.cheirality == "depth" and not have_depth:
        res.status, res.message = Status.INVALID_INPUT, "depth cheirality needs both depth maps"
        return res
    try:
        candidates = decompose_essential(e)
        inlier_map = cmap.subset(inl)
        p1 = p2 = None
        if have_depth and (cfg.use_depth_scale or cfg.cheirality == "depth"):
            d1, d2 = _metric(inp.d1, inp.k1), _metric(inp.d2, inp.k2)
            p1, p2, _, _ = backproject_matches(inlier_map, d1, d2, inp.k1, inp.k2)
        if cfg.cheirality == "depth":
            hyp = select_cheirality_depth(candidates, p1, p2, corrs.subset(inl), inl)
        else:
            hyp = select_cheirality(candidates, corrs.subset(inl), inl)
        if hyp.positive_depth == 0:
            raise CheiralityError("no candidate puts any point in front of both cameras")
        res.hypothesis = RelativePoseHypothesis(
            hyp.rotation, hyp.direction, inl, int(inl.sum()), hyp.positive_depth, e
        )
    except NoDepthOverlapError as exc:
        res.status, res.message = Status.NO_DEPTH_OVERLAP, str(exc)
        return res
    except (CheiralityError, RelocError) as exc:
        res.status, res.message = Status.CHEIRALITY_FAILED, str(exc)
        return res

    hyp = res.hypothesis
    if not cfg.use_depth_scale:
        res.pose = Pose(hyp.rotation, hyp.direction)
        res.confidence = float(hyp.inlier_count * hyp.inlier_ratio)
        return res
    if not have_depth:
        res.status, res.message = Status.SCALE_FAILED, "no depth maps for metric scale"
        return res
    try:
        # scale_candidate wants the rotation from query into reference
        s = ransac_scale(p1, p2, hyp.rotation.T, hyp.direction, cfg.scale)
    except ScaleFailedError as exc:
        res.status, res.message = Status.SCALE_FAILED, str(exc)
        return res
    res.scale = s
    res.pose = Pose(hyp.rotation, s.scale * hyp.direction)
    res.confidence = float(s.inlier_count * hyp.inlier_ratio)
    return res


def frame_input_from_synthetic(sp) -> FrameInput:
    return FrameInput(sp.pm1, sp.pm2, sp.k1, sp.k2, sp.d1, sp.d2, sp.mask1, sp.mask2)
