"""Synthetic benchmark loops shared by the scripts and the acceptance tests."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .geometry import rotation_angle_deg
from .pipeline import PipelineConfig, estimate_frame, frame_input_from_synthetic
from .synth import NoiseModel, SceneConfig, generate


@dataclass(frozen=True)
class SceneOutcome:
    seed: int
    ok: bool
    rot_err: float  # degrees
    trans_err: float  # metres
    rel_trans_err: float  # trans_err / |t_gt|
    outliers: int  # RANSAC rejects among the matches
    matches: int


def run_scene(scene: SceneConfig, cfg: PipelineConfig = PipelineConfig()) -> SceneOutcome:
    sp = generate(scene)
    res = estimate_frame(frame_input_from_synthetic(sp), cfg)
    if not res.ok:
        return SceneOutcome(scene.seed, False, np.inf, np.inf, np.inf, res.n_outliers, res.n_matches)
    t_gt = sp.gt_pose.translation
    err = float(np.linalg.norm(res.pose.translation - t_gt))
    return SceneOutcome(
        scene.seed,
        True,
        rotation_angle_deg(res.pose.rotation, sp.gt_pose.rotation),
        err,
        err / float(np.linalg.norm(t_gt)),
        res.n_outliers,
        res.n_matches,
    )


def run_many(seeds, noise: NoiseModel = NoiseModel(), cfg: PipelineConfig = PipelineConfig(), **scene_kw):
    return [run_scene(SceneConfig(seed=int(s), noise=noise, **scene_kw), cfg) for s in seeds]


def ablation(seeds, noise: NoiseModel = NoiseModel(clutter_fraction=1.0), cfg: PipelineConfig = PipelineConfig()):
    """Paired outcomes with and without instance masks on the same scenes."""
    with_inst = run_many(seeds, noise, replace(cfg, use_instances=True))
    without = run_many(seeds, noise, replace(cfg, use_instances=False))
    return list(zip(with_inst, without))
