"""On-disk formats: FMAP rasters, P5 masks, scene directories, submissions.

Scene layout::

    <scene>/intrinsics.txt        frame fx fy cx cy w h   (first line = reference)
    <scene>/poses.txt             frame qw qx qy qz tx ty tz   (optional, world -> camera)
    <scene>/frames/<f>.pts.fmap   3-channel point map in the reference frame
    <scene>/frames/<f>.depth.fmap 1-channel depth (optional)
    <scene>/frames/<f>.conf.fmap  1-channel confidence (optional)
    <scene>/masks/<f>.pgm         instance labels (optional)

Point maps come from pairwise reconstruction, so the reference view can differ
per query; ``<q>.refpts.fmap``, ``<q>.refdepth.fmap``, ``<q>.refconf.fmap``
and ``masks/<q>.refmask.pgm`` override the reference files for query ``q``.
"""
from __future__ import annotations

import math
import os
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, MalformedSubmissionError, SceneLoadError, TruncatedFileError
from .evaluation import FramePrediction, GroundTruthFrame
from .geometry import CameraIntrinsics, Pose, quaternion_to_rotation, relative_pose, rotation_to_quaternion
from .matching import InstanceMask, PointMap
from .scale import CANONICAL, METRIC, DepthMap

FMAP_MAGIC = b"FMAP"
FMAP_VERSION = 1
FMAP_HEADER = struct.Struct("<4sBBBBIIf")  # 20 bytes
DTYPE_F32 = 0
FLAG_CANONICAL = 1

INTRINSICS_FILE = "intrinsics.txt"
POSES_FILE = "poses.txt"
QUAT_TOL = 1e-3

FORMATS_HELP = f"""\
FMAP raster (.fmap), little-endian
  offset 0   4 bytes  magic "FMAP"
  offset 4   u8       version ({FMAP_VERSION})
  offset 5   u8       dtype (0 = float32)
  offset 6   u8       channels (1 = depth/confidence, 3 = point map)
  offset 7   u8       flags (bit0 = depth in canonical camera space)
  offset 8   u32      width
  offset 12  u32      height
  offset 16  f32      focal length the depth was produced for
  offset 20  payload  width*height*channels float32, row-major, channels interleaved
  then       bitmap   validity, 1 bit per pixel row-major, LSB first, zero-padded to a byte

Instance mask (.pgm)
  binary PGM "P5", maxval 255, one byte per pixel; 0 = background, o >= 1 = instance o

Scene directory
  intrinsics.txt   frame fx fy cx cy w h          first line is the reference frame
  poses.txt        frame qw qx qy qz tx ty tz     optional; world -> camera
  frames/<f>.pts.fmap, <f>.depth.fmap, <f>.conf.fmap
  frames/<q>.refpts.fmap, <q>.refdepth.fmap, <q>.refconf.fmap   per-query reference overrides
  masks/<f>.pgm, masks/<q>.refmask.pgm

Submission (.txt)
  scene frame qw qx qy qz tx ty tz confidence
  pose maps reference-camera coordinates to query-camera coordinates
  '#' starts a comment; failed frames are written as '# scene frame absent <status>'

Correspondence dump (match)
  u1 v1 u2 v2 tag     u = column, v = row; tag is 'global' or 'instance(<o>)'
"""


# ---------------------------------------------------------------- FMAP


@dataclass(frozen=True)
class Raster:
    data: np.ndarray  # (H, W, C) float32
    valid: np.ndarray  # (H, W) bool
    canonical: bool = False
    focal_used: float = 0.0

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @classmethod
    def from_pointmap(cls, pm: PointMap) -> "Raster":
        return cls(np.asarray(pm.points, np.float32), pm.valid)

    @classmethod
    def from_depth(cls, dm: DepthMap) -> "Raster":
        return cls(np.asarray(dm.depth, np.float32)[..., None], dm.valid, dm.space == CANONICAL, dm.focal_used)

    def to_pointmap(self, confidence: "Raster | None" = None) -> PointMap:
        if self.channels != 3:
            raise FormatError(f"point map needs 3 channels, got {self.channels}")
        pts = self.data.astype(np.float64)
        conf = None
        if confidence is not None:
            conf = np.where(confidence.valid, confidence.data[..., 0], 0.0).astype(np.float32)
        valid = self.valid & np.isfinite(pts).all(axis=-1)
        return PointMap(pts, valid, conf)

    def to_depth(self) -> DepthMap:
        if self.channels != 1:
            raise FormatError(f"depth needs 1 channel, got {self.channels}")
        d = self.data[..., 0].astype(np.float64)
        valid = self.valid & np.isfinite(d) & (d > 0)
        return DepthMap(np.where(valid, d, 0.0), valid, CANONICAL if self.canonical else METRIC, float(self.focal_used))


def encode_fmap(r: Raster) -> bytes:
    data = np.ascontiguousarray(r.data, dtype="<f4")
    if data.ndim != 3 or data.shape[2] not in (1, 3):
        raise FormatError(f"raster must be HxWx1 or HxWx3, got {data.shape}")
    h, w, c = data.shape
    if r.valid.shape != (h, w):
        raise FormatError("validity shape does not match raster")
    flags = FLAG_CANONICAL if r.canonical else 0
    head = FMAP_HEADER.pack(FMAP_MAGIC, FMAP_VERSION, DTYPE_F32, c, flags, w, h, r.focal_used)
    bits = np.packbits(np.asarray(r.valid, bool).ravel(), bitorder="little")
    return head + data.tobytes() + bits.tobytes()


def decode_fmap(buf: bytes, name: str = "<bytes>") -> Raster:
    if len(buf) < FMAP_HEADER.size:
        raise TruncatedFileError(f"{name}: {len(buf)} bytes is shorter than the FMAP header")
    magic, version, dtype, c, flags, w, h, focal = FMAP_HEADER.unpack_from(buf)
    if magic != FMAP_MAGIC:
        raise FormatError(f"{name}: bad magic {magic!r}")
    if version != FMAP_VERSION or dtype != DTYPE_F32:
        raise FormatError(f"{name}: unsupported version {version} / dtype {dtype}")
    if c not in (1, 3):
        raise FormatError(f"{name}: unsupported channel count {c}")
    n_payload = w * h * c * 4
    n_bits = (w * h + 7) // 8
    expected = FMAP_HEADER.size + n_payload + n_bits
    if len(buf) < expected:
        raise TruncatedFileError(f"{name}: {len(buf)} bytes, header declares {expected}")
    if len(buf) > expected:
        raise FormatError(f"{name}: {len(buf) - expected} trailing bytes after bitmap")
    data = np.frombuffer(buf, "<f4", count=w * h * c, offset=FMAP_HEADER.size).reshape(h, w, c)
    bits = np.frombuffer(buf, np.uint8, count=n_bits, offset=FMAP_HEADER.size + n_payload)
    valid = np.unpackbits(bits, count=w * h, bitorder="little").astype(bool).reshape(h, w)
    return Raster(data.astype(np.float32), valid, bool(flags & FLAG_CANONICAL), float(focal))


def write_fmap(path, r: Raster) -> None:
    Path(path).write_bytes(encode_fmap(r))


def read_fmap(path) -> Raster:
    return decode_fmap(Path(path).read_bytes(), str(path))


def fmap_header(path) -> tuple[int, int, int, bool]:
    """(width, height, channels, canonical) after checking the declared size."""
    p = Path(path)
    with p.open("rb") as fh:
        head = fh.read(FMAP_HEADER.size)
    if len(head) < FMAP_HEADER.size:
        raise TruncatedFileError(f"{p}: shorter than the FMAP header")
    magic, version, dtype, c, flags, w, h, _ = FMAP_HEADER.unpack(head)
    if magic != FMAP_MAGIC or version != FMAP_VERSION or dtype != DTYPE_F32:
        raise FormatError(f"{p}: not an FMAP v{FMAP_VERSION} float32 file")
    expected = FMAP_HEADER.size + w * h * c * 4 + (w * h + 7) // 8
    size = p.stat().st_size
    if size < expected:
        raise TruncatedFileError(f"{p}: {size} bytes, header declares {expected}")
    if size != expected:
        raise FormatError(f"{p}: {size} bytes, header declares {expected}")
    return w, h, c, bool(flags & FLAG_CANONICAL)


# ---------------------------------------------------------------- PGM

_PGM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def encode_pgm(labels: np.ndarray) -> bytes:
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise FormatError("mask must be 2-D")
    if labels.size and (labels.min() < 0 or labels.max() > 255):
        raise FormatError("mask labels must fit in 8 bits")
    h, w = labels.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + labels.astype(np.uint8).tobytes()


def decode_pgm(buf: bytes, name: str = "<bytes>") -> np.ndarray:
    pos = 0
    tokens = []
    for _ in range(4):
        m = _PGM_TOKEN.match(buf, pos)
        if m is None:
            raise TruncatedFileError(f"{name}: incomplete PGM header")
        tokens.append(m.group(1))
        pos = m.end()
    if tokens[0] != b"P5":
        raise FormatError(f"{name}: only binary PGM (P5) is supported, got {tokens[0]!r}")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FormatError(f"{name}: non-numeric PGM header") from exc
    if maxval != 255:
        raise FormatError(f"{name}: maxval {maxval} unsupported, need 255")
    pos += 1  # single whitespace byte ends the header
    body = buf[pos:]
    if len(body) != w * h:
        err = TruncatedFileError if len(body) < w * h else FormatError
        raise err(f"{name}: {len(body)} pixel bytes, header declares {w}x{h}")
    return np.frombuffer(body, np.uint8).reshape(h, w).copy()


def write_mask(path, mask: InstanceMask | np.ndarray) -> None:
    labels = mask.labels if isinstance(mask, InstanceMask) else mask
    Path(path).write_bytes(encode_pgm(labels))


def read_mask(path) -> InstanceMask:
    return InstanceMask(decode_pgm(Path(path).read_bytes(), str(path)))


# ---------------------------------------------------------------- scenes


def _fmt(x: float) -> str:
    return repr(float(x))


def _parse_floats(fields, path, lineno):
    try:
        vals = [float(f) for f in fields]
    except ValueError as exc:
        raise SceneLoadError(f"{path}:{lineno}: non-numeric field") from exc
    if not all(math.isfinite(v) for v in vals):
        raise SceneLoadError(f"{path}:{lineno}: non-finite value")
    return vals


def _data_lines(path: Path):
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if line:
            yield lineno, line.split()


def read_intrinsics(path) -> dict[str, CameraIntrinsics]:
    path = Path(path)
    out: dict[str, CameraIntrinsics] = {}
    for lineno, fields in _data_lines(path):
        if len(fields) != 7:
            raise SceneLoadError(f"{path}:{lineno}: expected 7 fields 'frame fx fy cx cy w h', got {len(fields)}")
        fx, fy, cx, cy, w, h = _parse_floats(fields[1:], path, lineno)
        if fields[0] in out:
            raise SceneLoadError(f"{path}:{lineno}: duplicate frame {fields[0]}")
        if w != int(w) or h != int(h):
            raise SceneLoadError(f"{path}:{lineno}: image size must be integral")
        try:
            out[fields[0]] = CameraIntrinsics(fx, fy, cx, cy, int(w), int(h))
        except ValueError as exc:
            raise SceneLoadError(f"{path}:{lineno}: {exc}") from exc
    if not out:
        raise SceneLoadError(f"{path}: no frames")
    return out


def read_poses(path) -> dict[str, Pose]:
    path = Path(path)
    out: dict[str, Pose] = {}
    for lineno, fields in _data_lines(path):
        if len(fields) != 8:
            raise SceneLoadError(f"{path}:{lineno}: expected 8 fields 'frame qw qx qy qz tx ty tz', got {len(fields)}")
        vals = _parse_floats(fields[1:], path, lineno)
        if fields[0] in out:
            raise SceneLoadError(f"{path}:{lineno}: duplicate frame {fields[0]}")
        q = np.array(vals[:4])
        if abs(np.linalg.norm(q) - 1.0) > QUAT_TOL:
            raise SceneLoadError(f"{path}:{lineno}: quaternion norm {np.linalg.norm(q):.6f} is not 1")
        out[fields[0]] = Pose(quaternion_to_rotation(q), np.array(vals[4:]))
    return out


def _pose_line(name: str, pose: Pose) -> str:
    q = rotation_to_quaternion(pose.rotation)
    return " ".join([name, *(_fmt(v) for v in q), *(_fmt(v) for v in pose.translation)])


@dataclass(frozen=True)
class FrameEntry:
    frame: str
    intrinsics: CameraIntrinsics
    points: Path
    depth: Path | None = None
    confidence: Path | None = None
    mask: Path | None = None
    ref_points: Path | None = None
    ref_depth: Path | None = None
    ref_confidence: Path | None = None
    ref_mask: Path | None = None


@dataclass(frozen=True)
class SceneRecord:
    scene: str
    root: Path
    reference: FrameEntry
    queries: tuple[FrameEntry, ...]
    poses: dict[str, Pose] | None = field(default=None, compare=False)

    def query(self, frame: str) -> FrameEntry:
        for q in self.queries:
            if q.frame == frame:
                return q
        raise KeyError(frame)

    def gt_relative_pose(self, frame: str) -> Pose | None:
        if self.poses is None:
            return None
        return relative_pose(self.poses[self.reference.frame], self.poses[frame])


def _existing(p: Path) -> Path | None:
    return p if p.is_file() else None


def _check_raster(path: Path | None, k: CameraIntrinsics, channels: int):
    if path is None:
        return
    try:
        w, h, c, _ = fmap_header(path)
    except FormatError as exc:
        raise SceneLoadError(str(exc)) from exc
    if (w, h) != (k.width, k.height) or c != channels:
        raise SceneLoadError(f"{path}: {w}x{h}x{c} does not match intrinsics {k.width}x{k.height}x{channels}")


def read_scene(path, pointmap_dir=None, depth_dir=None, mask_dir=None) -> SceneRecord:
    """Load and validate one scene directory.

    The override directories hold ``<scene>/<file>`` with the same file names
    as ``frames/`` (point maps, confidences, depths) or ``masks/``.
    """
    root = Path(path)
    if not root.is_dir():
        raise SceneLoadError(f"{root}: not a directory")
    scene = root.name
    intr_path = root / INTRINSICS_FILE
    if not intr_path.is_file():
        raise SceneLoadError(f"{root}: missing {INTRINSICS_FILE}")
    intr = read_intrinsics(intr_path)
    poses = read_poses(root / POSES_FILE) if (root / POSES_FILE).is_file() else None

    pts_dir = Path(pointmap_dir) / scene if pointmap_dir else root / "frames"
    dep_dir = Path(depth_dir) / scene if depth_dir else root / "frames"
    msk_dir = Path(mask_dir) / scene if mask_dir else root / "masks"

    entries = []
    for frame, k in intr.items():
        pts = pts_dir / f"{frame}.pts.fmap"
        if not pts.is_file():
            raise SceneLoadError(f"{scene}: missing point map {pts}")
        e = FrameEntry(
            frame,
            k,
            pts,
            _existing(dep_dir / f"{frame}.depth.fmap"),
            _existing(pts_dir / f"{frame}.conf.fmap"),
            _existing(msk_dir / f"{frame}.pgm"),
            _existing(pts_dir / f"{frame}.refpts.fmap"),
            _existing(dep_dir / f"{frame}.refdepth.fmap"),
            _existing(pts_dir / f"{frame}.refconf.fmap"),
            _existing(msk_dir / f"{frame}.refmask.pgm"),
        )
        entries.append(e)
    ref, queries = entries[0], sorted(entries[1:], key=lambda e: e.frame)
    for e in entries:
        _check_raster(e.points, e.intrinsics, 3)
        _check_raster(e.depth, e.intrinsics, 1)
        _check_raster(e.confidence, e.intrinsics, 1)
        _check_raster(e.ref_points, ref.intrinsics, 3)
        _check_raster(e.ref_depth, ref.intrinsics, 1)
        _check_raster(e.ref_confidence, ref.intrinsics, 1)
    if poses is not None:
        missing = [e.frame for e in entries if e.frame not in poses]
        if missing:
            raise SceneLoadError(f"{scene}: poses.txt lacks frames {missing}")
    return SceneRecord(scene, root, ref, tuple(queries), poses)


def list_scenes(root) -> list[Path]:
    """Scene directories under ``root`` in lexicographic order (or ``root`` itself)."""
    root = Path(root)
    if (root / INTRINSICS_FILE).is_file():
        return [root]
    if not root.is_dir():
        raise SceneLoadError(f"{root}: not a directory")
    return sorted((p for p in root.iterdir() if (p / INTRINSICS_FILE).is_file()), key=lambda p: p.name)


def _load_mask(path: Path | None, shape) -> InstanceMask | None:
    if path is None:
        return None
    try:
        m = read_mask(path)
    except FormatError as exc:
        raise SceneLoadError(str(exc)) from exc
    if m.shape != tuple(shape):
        raise SceneLoadError(f"{path}: mask {m.shape} does not match point map {tuple(shape)}")
    return m


def load_frame_input(rec: SceneRecord, frame: str):
    """Pipeline input for one query, applying per-query reference overrides."""
    from .pipeline import FrameInput

    q = rec.query(frame)
    ref = rec.reference
    conf1 = q.ref_confidence or ref.confidence
    pm1 = read_fmap(q.ref_points or ref.points).to_pointmap(read_fmap(conf1) if conf1 else None)
    pm2 = read_fmap(q.points).to_pointmap(read_fmap(q.confidence) if q.confidence else None)
    dpath1 = q.ref_depth or ref.depth
    d1 = read_fmap(dpath1).to_depth() if dpath1 else None
    d2 = read_fmap(q.depth).to_depth() if q.depth else None
    mask1 = _load_mask(q.ref_mask or ref.mask, pm1.shape)
    mask2 = _load_mask(q.mask, pm2.shape)
    return FrameInput(pm1, pm2, ref.intrinsics, q.intrinsics, d1, d2, mask1, mask2)


def write_scene(path, reference: str, pairs: list[tuple[str, object]]) -> Path:
    """Write synthetic pairs sharing one reference frame as a scene directory.

    The first pair also provides the reference frame's own files; every pair
    gets its reference-side rasters as per-query overrides.
    """
    root = Path(path)
    if not pairs:
        raise ValueError("need at least one query pair")
    names = [reference, *(n for n, _ in pairs)]
    if len(set(names)) != len(names):
        raise ValueError("frame names must be unique")
    (root / "frames").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(exist_ok=True)
    first = pairs[0][1]
    k_ref = first.k1
    lines = [_intr_line(reference, k_ref)]
    poses = [_pose_line(reference, Pose.identity())]
    frames, masks = root / "frames", root / "masks"
    write_fmap(frames / f"{reference}.pts.fmap", Raster.from_pointmap(first.pm1))
    write_fmap(frames / f"{reference}.depth.fmap", Raster.from_depth(first.d1))
    write_mask(masks / f"{reference}.pgm", first.mask1)
    for name, sp in pairs:
        if sp.k1 != k_ref:
            raise ValueError(f"pair {name} was generated with a different reference camera")
        lines.append(_intr_line(name, sp.k2))
        poses.append(_pose_line(name, sp.gt_pose))
        write_fmap(frames / f"{name}.pts.fmap", Raster.from_pointmap(sp.pm2))
        write_fmap(frames / f"{name}.depth.fmap", Raster.from_depth(sp.d2))
        write_mask(masks / f"{name}.pgm", sp.mask2)
        write_fmap(frames / f"{name}.refpts.fmap", Raster.from_pointmap(sp.pm1))
        write_fmap(frames / f"{name}.refdepth.fmap", Raster.from_depth(sp.d1))
        write_mask(masks / f"{name}.refmask.pgm", sp.mask1)
    (root / INTRINSICS_FILE).write_text("\n".join(lines) + "\n", encoding="utf-8")
    (root / POSES_FILE).write_text("\n".join(poses) + "\n", encoding="utf-8")
    return root


def _intr_line(name: str, k: CameraIntrinsics) -> str:
    return " ".join([name, _fmt(k.fx), _fmt(k.fy), _fmt(k.cx), _fmt(k.cy), str(k.width), str(k.height)])


# ---------------------------------------------------------------- submissions


def submission_lines(rows) -> list[str]:
    """``rows``: (scene, frame, pose or None, confidence, status name)."""
    out = []
    for scene, frame, pose, conf, status in rows:
        if pose is None:
            out.append(f"# {scene} {frame} absent {status}")
        else:
            out.append(f"{_pose_line(f'{scene} {frame}', pose)} {_fmt(conf)}")
    return out


def write_submission(path, rows) -> None:
    text = "".join(line + "\n" for line in submission_lines(rows))
    Path(path).write_text(text, encoding="utf-8")


def read_submission(path) -> list[FramePrediction]:
    path = Path(path)
    out = []
    seen = set()
    for lineno, fields in _data_lines(path):
        if len(fields) != 10:
            raise MalformedSubmissionError(f"{path}:{lineno}: expected 10 fields, got {len(fields)}")
        scene, frame = fields[:2]
        try:
            vals = [float(f) for f in fields[2:]]
        except ValueError as exc:
            raise MalformedSubmissionError(f"{path}:{lineno}: non-numeric field") from exc
        if not all(math.isfinite(v) for v in vals):
            raise MalformedSubmissionError(f"{path}:{lineno}: non-finite value")
        q = np.array(vals[:4])
        n = np.linalg.norm(q)
        if abs(n - 1.0) > QUAT_TOL:
            raise MalformedSubmissionError(f"{path}:{lineno}: quaternion norm {n:.6f} is not within {QUAT_TOL} of 1")
        if (scene, frame) in seen:
            raise MalformedSubmissionError(f"{path}:{lineno}: duplicate entry for {scene} {frame}")
        seen.add((scene, frame))
        pose = Pose(quaternion_to_rotation(q / n), np.array(vals[4:7]))
        out.append(FramePrediction(scene, frame, pose, vals[7]))
    return out


def read_ground_truth(root) -> list[GroundTruthFrame]:
    """Relative ground truth for every query in every scene under ``root``."""
    out = []
    for scene_dir in list_scenes(root):
        scene = scene_dir.name
        intr = read_intrinsics(scene_dir / INTRINSICS_FILE)
        pose_path = scene_dir / POSES_FILE
        if not pose_path.is_file():
            raise SceneLoadError(f"{scene_dir}: ground truth needs {POSES_FILE}")
        poses = read_poses(pose_path)
        names = list(intr)
        ref = names[0]
        for frame in sorted(names[1:]):
            if frame not in poses or ref not in poses:
                raise SceneLoadError(f"{scene_dir}: no ground-truth pose for {frame}")
            out.append(GroundTruthFrame(scene, frame, relative_pose(poses[ref], poses[frame]), intr[frame]))
    return out


def ensure_writable_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    if not os.access(p, os.W_OK):
        raise PermissionError(f"{p}: not writable")
    return p
