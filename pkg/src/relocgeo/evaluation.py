"""Relocalization benchmark metrics: pose errors, VCRE, precision and AUC."""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable

import numpy as np

from .errors import MalformedSubmissionError
from .geometry import CameraIntrinsics, Pose, rotation_angle_deg

# Virtual AR content: 3x3x3 lattice in the ground-truth query camera.
VCRE_LATTICE = np.array(
    [(x, y, z) for z in (1.2, 1.8, 2.4) for y in (-0.3, 0.0, 0.3) for x in (-0.3, 0.0, 0.3)]
)


@dataclass(frozen=True)
class FramePrediction:
    scene: str
    frame: str
    pose: Pose | None = None
    confidence: float = 0.0
    present: bool = True

    def __post_init__(self):
        if not self.present or self.pose is None:
            object.__setattr__(self, "present", False)
            object.__setattr__(self, "confidence", 0.0)

    @classmethod
    def absent(cls, scene: str, frame: str) -> "FramePrediction":
        return cls(scene, frame, None, 0.0, False)


@dataclass(frozen=True)
class GroundTruthFrame:
    scene: str
    frame: str
    pose: Pose  # query w.r.t. reference
    intrinsics: CameraIntrinsics


@dataclass(frozen=True)
class FrameRecord:
    scene: str
    frame: str
    present: bool
    trans_err: float = math.inf
    rot_err: float = math.inf
    vcre: float = math.inf
    confidence: float = 0.0


Criterion = Callable[[FrameRecord], bool]


def vcre_below(px: float) -> Criterion:
    return lambda r: r.present and r.vcre < px


def pose_within(meters: float, degrees: float) -> Criterion:
    return lambda r: r.present and r.trans_err < meters and r.rot_err < degrees


CRITERIA = {
    "vcre_45px": vcre_below(45.0),
    "vcre_90px": vcre_below(90.0),
    "pose_25cm_5deg": pose_within(0.25, 5.0),
}


def translation_error(est: Pose, gt: Pose) -> float:
    return float(np.linalg.norm(est.translation - gt.translation))


def rotation_error(est: Pose, gt: Pose) -> float:
    return rotation_angle_deg(est.rotation, gt.rotation)


def vcre(est: Pose, gt: Pose, k: CameraIntrinsics, lattice: np.ndarray = VCRE_LATTICE) -> float:
    """Mean pixel displacement of the virtual lattice under ``est`` vs ``gt``."""
    # est o gt^-1 written as identity plus a difference term, so equal poses give exactly zero
    d = (est.rotation - gt.rotation) @ gt.rotation.T
    shift = (est.translation - gt.translation) - d @ gt.translation
    moved = lattice + (lattice @ d.T + shift)
    diag = k.diagonal
    errs = np.full(len(lattice), diag)
    ok = (lattice[:, 2] > 0) & (moved[:, 2] > 0)
    if ok.any():
        a, b = lattice[ok], moved[ok]
        pa = np.c_[k.fx * a[:, 0] / a[:, 2] + k.cx, k.fy * a[:, 1] / a[:, 2] + k.cy]
        pb = np.c_[k.fx * b[:, 0] / b[:, 2] + k.cx, k.fy * b[:, 1] / b[:, 2] + k.cy]
        errs[ok] = np.linalg.norm(pa - pb, axis=1)
    return float(errs.mean())


def frame_records(preds: Iterable[FramePrediction], gts: Iterable[GroundTruthFrame]) -> list[FrameRecord]:
    """One record per ground-truth frame, in ground-truth order."""
    gts = list(gts)
    gt_keys = {(g.scene, g.frame) for g in gts}
    by_key: dict[tuple[str, str], FramePrediction] = {}
    for p in preds:
        key = (p.scene, p.frame)
        if key in by_key:
            raise MalformedSubmissionError(f"duplicate prediction for {p.scene} {p.frame}")
        if key not in gt_keys:
            raise MalformedSubmissionError(f"prediction for unknown frame {p.scene} {p.frame}")
        by_key[key] = p
    out = []
    for g in gts:
        p = by_key.get((g.scene, g.frame))
        if p is None or not p.present:
            out.append(FrameRecord(g.scene, g.frame, False))
            continue
        out.append(
            FrameRecord(
                g.scene,
                g.frame,
                True,
                translation_error(p.pose, g.pose),
                rotation_error(p.pose, g.pose),
                vcre(p.pose, g.pose, g.intrinsics),
                float(p.confidence),
            )
        )
    return out


def precision_of(records: list[FrameRecord], criterion: Criterion) -> float:
    if not records:
        return 0.0
    return sum(1 for r in records if criterion(r)) / len(records)


def auc_of(records: list[FrameRecord], criterion: Criterion) -> float:
    """Area under precision vs. coverage, predictions ranked by confidence.

    Coverage counts ranked predictions over all ground-truth frames, so absent
    predictions cap it. Equal confidences form a single step.
    """
    n = len(records)
    if n == 0:
        return 0.0
    present = [r for r in records if r.present]
    if not present:
        return 0.0
    conf = np.array([r.confidence for r in present])
    ok = np.array([criterion(r) for r in present], dtype=np.float64)
    order = np.argsort(-conf, kind="stable")
    conf, ok = conf[order], ok[order]
    hits = np.cumsum(ok)
    # last index of each run of equal confidence
    ends = np.flatnonzero(np.r_[conf[1:] != conf[:-1], True])
    steps, prev = [], 0
    for e in ends:
        count = int(e) + 1
        steps.append(hits[e] / count * (count - prev))
        prev = count
    return math.fsum(steps) / n


def precision(preds, gts, criterion: Criterion) -> float:
    return precision_of(frame_records(preds, gts), criterion)


def auc(preds, gts, criterion: Criterion) -> float:
    return auc_of(frame_records(preds, gts), criterion)


def lower_median(values) -> float:
    v = sorted(values)
    if not v:
        return math.nan
    return float(v[(len(v) - 1) // 2])


@dataclass
class EvalReport:
    scenes: dict[str, dict] = field(default_factory=dict)
    median_trans_err: float = math.nan
    median_rot_err: float = math.nan
    median_vcre: float = math.nan
    auc: dict[str, float] = field(default_factory=dict)
    precision: dict[str, float] = field(default_factory=dict)
    coverage: float = 0.0
    frames_total: int = 0
    frames_present: int = 0
    scenes_without_estimates: list[str] = field(default_factory=list)
    sorted_errors: dict[str, list[float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def key_values(self) -> list[tuple[str, object]]:
        kv = [
            ("frames_total", self.frames_total),
            ("frames_present", self.frames_present),
            ("coverage", self.coverage),
            ("avg_median_trans_err_m", self.median_trans_err),
            ("avg_median_rot_err_deg", self.median_rot_err),
            ("avg_median_vcre_px", self.median_vcre),
        ]
        kv += [(f"auc_{k}", v) for k, v in self.auc.items()]
        kv += [(f"precision_{k}", v) for k, v in self.precision.items()]
        kv.append(("scenes_without_estimates", ",".join(self.scenes_without_estimates)))
        for s, m in self.scenes.items():
            kv += [(f"scene.{s}.{k}", v) for k, v in m.items()]
        return kv


def aggregate(records: list[FrameRecord], criteria: dict[str, Criterion] = CRITERIA) -> EvalReport:
    """Per-scene lower medians, averaged over scenes without weighting."""
    by_scene: dict[str, list[FrameRecord]] = defaultdict(list)
    for r in records:
        by_scene[r.scene].append(r)
    report = EvalReport(frames_total=len(records), frames_present=sum(r.present for r in records))
    report.coverage = report.frames_present / len(records) if records else 0.0
    meds = {"trans_err": [], "rot_err": [], "vcre": []}
    for scene in sorted(by_scene):
        got = [r for r in by_scene[scene] if r.present]
        entry = {"frames": len(by_scene[scene]), "present": len(got)}
        if not got:
            report.scenes_without_estimates.append(scene)
        else:
            for key in meds:
                m = lower_median(getattr(r, key) for r in got)
                entry[f"median_{key}"] = m
                meds[key].append(m)
        report.scenes[scene] = entry
    if meds["trans_err"]:
        # fsum keeps the average independent of scene order
        report.median_trans_err = math.fsum(meds["trans_err"]) / len(meds["trans_err"])
        report.median_rot_err = math.fsum(meds["rot_err"]) / len(meds["rot_err"])
        report.median_vcre = math.fsum(meds["vcre"]) / len(meds["vcre"])
    for name, crit in criteria.items():
        report.auc[name] = auc_of(records, crit)
        report.precision[name] = precision_of(records, crit)
    present = [r for r in records if r.present]
    report.sorted_errors = {
        "trans_err": sorted(r.trans_err for r in present),
        "rot_err": sorted(r.rot_err for r in present),
        "vcre": sorted(r.vcre for r in present),
    }
    return report
