"""Command-line entry point: estimate, eval, synth, match, formats."""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .errors import FormatError, MalformedSubmissionError, RelocError, SceneLoadError
from .evaluation import CRITERIA, aggregate, frame_records
from .io import (
    FORMATS_HELP,
    ensure_writable_dir,
    list_scenes,
    load_frame_input,
    read_ground_truth,
    read_scene,
    read_submission,
    submission_lines,
    write_scene,
)
from .pipeline import CHEIRALITY_MODES, PipelineConfig, Status, correspondences, estimate_frame
from .pose import RansacConfig
from .scale import ScaleConfig
from .seeding import DEFAULT_SEED
from .synth import NoiseModel, SceneConfig, generate

log = logging.getLogger("relocgeo")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_LOAD = 3


def _num(x) -> str:
    """Locale-independent, round-trippable number text."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "absent"
    return repr(x)


# ---------------------------------------------------------------- estimate


def _pipeline_config(args) -> PipelineConfig:
    return PipelineConfig(
        use_instances=not args.no_instance,
        use_depth_scale=not args.no_depth_scale,
        cheirality=args.cheirality,
        min_confidence=args.min_confidence,
        stride=args.stride,
        ransac=RansacConfig(
            max_iterations=args.max_iterations,
            inlier_threshold=args.threshold,
            confidence=args.ransac_confidence,
            seed=args.seed,
        ),
        scale=ScaleConfig(rel_tol=args.scale_tol),
    )


def _run_frame(job):
    scene_dir, frame, overrides, cfg = job
    try:
        rec = read_scene(scene_dir, *overrides)
        inp = load_frame_input(rec, frame)
    except (SceneLoadError, FormatError) as exc:
        return frame, Status.INVALID_INPUT, None, 0.0, 0, 0, 0, str(exc)
    res = estimate_frame(inp, cfg)
    scale_inl = res.scale.inlier_count if res.scale is not None else 0
    return frame, res.status, res.pose, res.confidence, res.n_matches, res.n_inliers, scale_inl, res.message


def cmd_estimate(args) -> int:
    cfg = _pipeline_config(args)
    overrides = (args.pointmap_dir, args.depth_dir, args.mask_dir)
    try:
        scenes = [read_scene(p, *overrides) for p in list_scenes(args.data)]
    except (SceneLoadError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_LOAD
    jobs = [(rec.root, q.frame, overrides, cfg) for rec in scenes for q in rec.queries]
    scene_of = [rec.scene for rec in scenes for _ in rec.queries]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            results = list(ex.map(_run_frame, jobs))
    else:
        results = [_run_frame(j) for j in jobs]
    rows, diag = [], []
    for scene, (frame, status, pose, conf, n_m, n_i, n_s, msg) in sorted(
        zip(scene_of, results), key=lambda r: (r[0], r[1][0])
    ):
        status = Status(status)
        rows.append((scene, frame, pose if status == Status.OK else None, conf, status.name.lower()))
        diag.append((scene, frame, int(status), status.name.lower(), n_m, n_i, n_s, conf, msg))
        if status != Status.OK:
            log.warning("%s %s: %s (%s)", scene, frame, status.name.lower(), msg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("".join(line + "\n" for line in submission_lines(rows)), encoding="utf-8")
    if args.diagnostics:
        lines = ["scene,frame,status,status_name,matches,inliers,scale_inliers,confidence"]
        for scene, frame, code, name, n_m, n_i, n_s, conf, _ in diag:
            lines.append(f"{scene},{frame},{code},{name},{n_m},{n_i},{n_s},{_num(conf)}")
        Path(args.diagnostics).write_text("\n".join(lines) + "\n", encoding="utf-8")
    ok = sum(1 for d in diag if d[2] == 0)
    print(f"estimated {ok}/{len(diag)} frames -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------- eval


def cmd_eval(args) -> int:
    try:
        gts = read_ground_truth(args.gt)
        preds = read_submission(args.submission)
        records = frame_records(preds, gts)
    except (SceneLoadError, MalformedSubmissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_LOAD
    report = aggregate(records, CRITERIA)
    out = ensure_writable_dir(args.out)
    kv = report.key_values()
    (out / "report.txt").write_text("".join(f"{k} = {_kv_text(v)}\n" for k, v in kv), encoding="utf-8")
    (out / "report.json").write_text(
        json.dumps(_json_safe(report.to_dict()), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    lines = ["scene,frame,trans_err,rot_err,vcre,confidence"]
    for r in records:
        if r.present:
            lines.append(f"{r.scene},{r.frame},{_num(r.trans_err)},{_num(r.rot_err)},{_num(r.vcre)},{_num(r.confidence)}")
        else:
            lines.append(f"{r.scene},{r.frame},absent,absent,absent,absent")
    (out / "frames.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    for k, v in kv[:6]:
        print(f"{k} = {_kv_text(v)}")
    for name in CRITERIA:
        print(f"auc_{name} = {_num(report.auc[name])}  precision_{name} = {_num(report.precision[name])}")
    return EXIT_OK


def _kv_text(v) -> str:
    return v if isinstance(v, str) else _num(v)


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


# ---------------------------------------------------------------- synth


def _pair_seed(seed: int, scene: int, query: int) -> int:
    return int(np.random.SeedSequence([seed & (2**63 - 1), scene, query]).generate_state(1, np.uint64)[0] >> 1)


def cmd_synth(args) -> int:
    noise = NoiseModel(
        point_sigma=args.point_sigma,
        depth_sigma_rel=args.depth_sigma,
        outlier_fraction=args.outlier_fraction,
        mask_erosion=args.mask_erosion,
        clutter_fraction=args.clutter_fraction,
    )
    try:
        out = ensure_writable_dir(args.out)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_LOAD
    for s in range(args.scenes):
        # one reference camera per scene, shared by all its queries
        ref_focal = np.random.default_rng([args.seed & (2**63 - 1), s]).uniform(*args.focal_range)
        pairs = []
        for q in range(args.queries):
            cfg = SceneConfig(
                n_instances=args.n_instances,
                points_per_instance=args.points_per_instance,
                background_points=args.background_points,
                noise=noise,
                seed=_pair_seed(args.seed, s, q),
                width=args.width,
                height=args.height,
                focal_range=tuple(args.focal_range),
                reference_focal=float(ref_focal),
            )
            pairs.append((f"q{q:04d}", generate(cfg)))
        scene_dir = write_scene(out / f"scene_{s:04d}", "ref", pairs)
        for name, sp in pairs:
            p = sp.gt_pose
            ang = math.degrees(np.linalg.norm(_rotvec(p.rotation)))
            print(
                f"{scene_dir.name} {name} rot_deg={ang:.4f} baseline_m={sp.baseline:.4f} "
                f"pairs={len(sp.gt_correspondence)} outliers={int(sp.outlier_labels.sum())}"
            )
    return EXIT_OK


def _rotvec(r):
    from scipy.spatial.transform import Rotation

    return Rotation.from_matrix(r).as_rotvec()


# ---------------------------------------------------------------- match / formats


def cmd_match(args) -> int:
    try:
        rec = read_scene(args.scene, args.pointmap_dir, args.depth_dir, args.mask_dir)
        frames = [args.query] if args.query else [q.frame for q in rec.queries]
        outputs = []
        for frame in frames:
            inp = load_frame_input(rec, frame)
            cfg = PipelineConfig(
                use_instances=not args.no_instance, min_confidence=args.min_confidence, stride=args.stride
            )
            cmap = correspondences(inp, cfg)
            outputs.append((frame, cmap))
    except (SceneLoadError, FormatError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_LOAD
    lines = []
    for frame, cmap in outputs:
        lines.append(f"# {rec.scene} {frame} matches={len(cmap)}")
        lines.extend(cmap.dump_lines())
    text = "".join(line + "\n" for line in lines)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_formats(args) -> int:
    sys.stdout.write(FORMATS_HELP)
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _add_input_overrides(p):
    p.add_argument("--pointmap-dir", help="directory of <scene>/<frame>.pts.fmap replacing frames/")
    p.add_argument("--depth-dir", help="directory of <scene>/<frame>.depth.fmap replacing frames/")
    p.add_argument("--mask-dir", help="directory of <scene>/<frame>.pgm replacing masks/")
    p.add_argument("--no-instance", action="store_true", help="global matching only")
    p.add_argument("--min-confidence", type=float, default=0.0)
    p.add_argument("--stride", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="relocgeo", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="relative pose for every query frame")
    p.add_argument("data", help="scene directory or a directory of scenes")
    p.add_argument("--out", required=True, help="submission file")
    p.add_argument("--diagnostics", help="per-frame status CSV")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--no-depth-scale", action="store_true", help="emit unit-norm translations")
    p.add_argument("--cheirality", choices=CHEIRALITY_MODES, default="triangulation")
    p.add_argument("--max-iterations", type=int, default=RansacConfig.max_iterations)
    p.add_argument("--threshold", type=float, default=RansacConfig.inlier_threshold, help="Sampson, normalized units")
    p.add_argument("--ransac-confidence", type=float, default=RansacConfig.confidence)
    p.add_argument("--scale-tol", type=float, default=ScaleConfig.rel_tol)
    _add_input_overrides(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("eval", help="score a submission against ground truth")
    p.add_argument("submission")
    p.add_argument("gt", help="scene directory or directory of scenes with poses.txt")
    p.add_argument("--out", required=True, help="report directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="write synthetic scenes")
    p.add_argument("out")
    p.add_argument("--scenes", type=int, default=1)
    p.add_argument("--queries", type=int, default=1)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--width", type=int, default=SceneConfig.width)
    p.add_argument("--height", type=int, default=SceneConfig.height)
    p.add_argument("--focal-range", type=float, nargs=2, default=SceneConfig.focal_range)
    p.add_argument("--n-instances", type=int, default=SceneConfig.n_instances)
    p.add_argument("--points-per-instance", type=int, default=SceneConfig.points_per_instance)
    p.add_argument("--background-points", type=int, default=SceneConfig.background_points)
    p.add_argument("--point-sigma", type=float, default=0.0)
    p.add_argument("--depth-sigma", type=float, default=0.0, help="relative depth noise")
    p.add_argument("--outlier-fraction", type=float, default=0.0)
    p.add_argument("--mask-erosion", type=int, default=0)
    p.add_argument("--clutter-fraction", type=float, default=0.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("match", help="dump correspondences")
    p.add_argument("scene")
    p.add_argument("--query", help="one query frame (default: all)")
    p.add_argument("--out", help="output file (default: stdout)")
    _add_input_overrides(p)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("formats", help="print file format specifications")
    p.set_defaults(func=cmd_formats)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (RelocError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
