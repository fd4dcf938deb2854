"""Synthetic two-view scenes with exact ground truth.

Scene points are picked from integer pixel pairs that satisfy the true
epipolar geometry to within ``snap_tol_px``; a random rotation never maps one
pixel grid onto the other, so this is how correspondences stay pixel-exact.
Each view stores its own pixel-centre ray point at the triangulated depth,
so depth and point map agree to machine precision. Instances are random
ellipsoids; a point belongs to instance ``o`` when it lies inside ellipsoid
``o`` and the rasterized masks of both views show ``o`` at its pixels.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial.transform import Rotation as _Rot

from .errors import InvalidInputError, UnrenderableSceneError
from .geometry import CameraIntrinsics, Pose, invert, skew
from .matching import CorrespondenceMap, InstanceMask, PointMap
from .scale import DepthMap
from .seeding import DEFAULT_SEED, stream


@dataclass(frozen=True)
class NoiseModel:
    point_sigma: float = 0.0  # metres, Gaussian on point-map coordinates
    depth_sigma_rel: float = 0.0
    outlier_fraction: float = 0.0  # share of pairs rewired among themselves
    mask_erosion: int = 0  # px
    clutter_fraction: float = 0.0  # share of odd-instance pairs moved into even instances
    clutter_band_px: float = 0.07  # near-line moves stay within this distance of the epipolar line
    clutter_gross_share: float = 0.5

    def __post_init__(self):
        vals = (self.point_sigma, self.depth_sigma_rel, self.outlier_fraction, self.mask_erosion,
                self.clutter_fraction, self.clutter_band_px, self.clutter_gross_share)
        if min(vals) < 0:
            raise InvalidInputError("noise parameters must be non-negative")
        if self.outlier_fraction >= 1 or self.clutter_fraction > 1 or self.clutter_gross_share > 1:
            raise InvalidInputError("outlier_fraction must be < 1, clutter shares <= 1")


@dataclass(frozen=True)
class SceneConfig:
    n_instances: int = 3
    points_per_instance: int = 150
    background_points: int = 600
    depth_range: tuple[float, float] = (2.0, 8.0)
    baseline_range: tuple[float, float] = (0.5, 1.5)
    rotation_range: float = 10.0  # degrees
    noise: NoiseModel = field(default_factory=NoiseModel)
    seed: int = DEFAULT_SEED
    width: int = 128
    height: int = 96
    focal_range: tuple[float, float] = (90.0, 110.0)
    reference_focal: float | None = None  # pins camera 1, e.g. when queries share a reference
    instance_radius: tuple[float, float] = (0.6, 1.2)
    snap_tol_px: float = 2e-3
    instance_snap_tol_px: float = 2e-3  # raise for denser instances at some cost in accuracy
    max_retries: int = 20

    def __post_init__(self):
        for name in ("depth_range", "baseline_range", "focal_range", "instance_radius"):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi):
                raise InvalidInputError(f"{name} must satisfy 0 < min <= max")
        if min(self.n_instances, self.points_per_instance, self.background_points) < 0:
            raise InvalidInputError("counts must be non-negative")
        if self.n_instances > 255:
            raise InvalidInputError("at most 255 instances fit an 8-bit mask")
        if self.rotation_range < 0 or self.snap_tol_px <= 0 or self.instance_snap_tol_px <= 0:
            raise InvalidInputError("rotation_range must be >= 0 and snap tolerances > 0")


@dataclass(frozen=True)
class Ellipsoid:
    center: np.ndarray  # camera-1 frame
    axes: np.ndarray  # rotation, columns are principal directions
    radii: np.ndarray

    def shape_matrix(self) -> np.ndarray:
        return self.axes @ np.diag(1.0 / self.radii**2) @ self.axes.T

    def moved(self, pose: Pose) -> "Ellipsoid":
        return Ellipsoid(pose.apply(self.center), pose.rotation @ self.axes, self.radii)

    def contains(self, pts) -> np.ndarray:
        d = np.asarray(pts) - self.center
        return np.einsum("ni,ij,nj->n", d, self.shape_matrix(), d) <= 1.0


@dataclass(frozen=True)
class SyntheticPair:
    pm1: PointMap
    pm2: PointMap
    d1: DepthMap
    d2: DepthMap
    mask1: InstanceMask
    mask2: InstanceMask
    k1: CameraIntrinsics
    k2: CameraIntrinsics
    gt_pose: Pose  # reference camera -> query camera
    gt_correspondence: CorrespondenceMap  # tags carry instance labels
    outlier_labels: np.ndarray  # per pair, True where the query point was rewired
    points: np.ndarray  # triangulated scene points, camera-1 frame, per pair
    ray_points1: np.ndarray  # exact pixel-ray point of view 1, camera-1 frame
    ray_points2: np.ndarray  # exact pixel-ray point of view 2, camera-1 frame
    ellipsoids: tuple = ()
    config: SceneConfig | None = None

    @property
    def baseline(self) -> float:
        return float(np.linalg.norm(self.gt_pose.translation))


def _sample_intrinsics(rng, cfg: SceneConfig, fixed: float | None = None) -> CameraIntrinsics:
    f = rng.uniform(*cfg.focal_range)
    if fixed is not None:
        f = fixed
    return CameraIntrinsics(f, f, cfg.width / 2.0, cfg.height / 2.0, cfg.width, cfg.height)


def _sample_pose(rng, cfg: SceneConfig) -> Pose:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = np.deg2rad(rng.uniform(-cfg.rotation_range, cfg.rotation_range))
    r = _Rot.from_rotvec(axis * angle).as_matrix()
    # mostly sideways motion keeps the views overlapping
    d = rng.normal(size=3) * np.array([1.0, 0.6, 0.4])
    d /= np.linalg.norm(d)
    return Pose(r, d * rng.uniform(*cfg.baseline_range))


def _pixel_rays(k: CameraIntrinsics) -> np.ndarray:
    v, u = np.mgrid[0:k.height, 0:k.width]
    return np.stack([(u.ravel() - k.cx) / k.fx, (v.ravel() - k.cy) / k.fy, np.ones(u.size)], axis=1)


def _sample_ellipsoids(rng, cfg: SceneConfig, k1, k2, pose: Pose) -> list[Ellipsoid]:
    out = []
    dmin, dmax = cfg.depth_range
    for _ in range(cfg.n_instances):
        for _try in range(50):
            u = rng.uniform(0.15, 0.85) * cfg.width
            v = rng.uniform(0.15, 0.85) * cfg.height
            z = rng.uniform(dmin + 0.1 * (dmax - dmin), dmin + 0.5 * (dmax - dmin))
            c = z * np.array([(u - k1.cx) / k1.fx, (v - k1.cy) / k1.fy, 1.0])
            c2 = pose.apply(c)
            if c2[2] <= 0:
                continue
            u2 = k2.fx * c2[0] / c2[2] + k2.cx
            v2 = k2.fy * c2[1] / c2[2] + k2.cy
            if 0.1 * cfg.width < u2 < 0.9 * cfg.width and 0.1 * cfg.height < v2 < 0.9 * cfg.height:
                break
        radii = rng.uniform(*cfg.instance_radius, size=3)
        axes = _Rot.from_quat(rng.normal(size=4)).as_matrix()
        out.append(Ellipsoid(c, axes, radii))
    return out


def _rasterize(k: CameraIntrinsics, ellipsoids: list[Ellipsoid]) -> np.ndarray:
    """Per-pixel label of the nearest ellipsoid hit by each pixel ray."""
    rays = _pixel_rays(k)
    best = np.full(len(rays), np.inf)
    labels = np.zeros(len(rays), np.uint8)
    for o, e in enumerate(ellipsoids, start=1):
        a = e.shape_matrix()
        qa = np.einsum("ni,ij,nj->n", rays, a, rays)
        qb = rays @ (a @ e.center)
        qc = e.center @ a @ e.center - 1.0
        disc = qb**2 - qa * qc
        hit = disc >= 0
        lam = np.full(len(rays), np.inf)
        root = np.sqrt(np.where(hit, disc, 0.0))
        near = (qb - root) / qa
        far = (qb + root) / qa
        entry = np.where(near > 0, near, far)
        ok = hit & (entry > 0)
        lam[ok] = entry[ok]
        closer = lam < best
        best[closer] = lam[closer]
        labels[closer] = o
    return labels.reshape(k.height, k.width)


def _lattice_pairs(k1, k2, pose: Pose, tol: float, chunk: int = 4096):
    """Integer pixel pairs lying within ``tol`` px of each other's epipolar line."""
    f = k2.K_inv.T @ skew(pose.translation) @ pose.rotation @ k1.K_inv
    rays1 = np.c_[_pixel_rays(k1)[:, :2] * [k1.fx, k1.fy] + [k1.cx, k1.cy], np.ones(k1.width * k1.height)]
    xs = np.arange(k2.width, dtype=np.float64)
    ys = np.arange(k2.height, dtype=np.float64)
    out1, out2, out_d = [], [], []
    for start in range(0, len(rays1), chunk):
        idx = np.arange(start, min(start + chunk, len(rays1)))
        lines = rays1[idx] @ f.T
        norm = np.hypot(lines[:, 0], lines[:, 1])
        flat = np.abs(lines[:, 1]) >= np.abs(lines[:, 0])
        for sel, along, other_size, a, b in (
            (flat, xs, k2.height, 0, 1),
            (~flat, ys, k2.width, 1, 0),
        ):
            if not sel.any():
                continue
            ln = lines[sel]
            with np.errstate(divide="ignore", invalid="ignore"):
                other = -(ln[:, a:a + 1] * along + ln[:, 2:3]) / ln[:, b:b + 1]
            near = np.round(other)
            dist = np.abs(other - near) * np.abs(ln[:, b:b + 1]) / norm[sel][:, None]
            ok = (dist <= tol) & (near >= 0) & (near < other_size)
            i, j = np.nonzero(ok)
            src = idx[sel][i]
            if a == 0:
                u2, v2 = along[j], near[i, j]
            else:
                u2, v2 = near[i, j], along[j]
            out1.append(src)
            out2.append((v2 * k2.width + u2).astype(np.int64))
            out_d.append(dist[i, j])
    if not out1:
        return np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0)
    return np.concatenate(out1), np.concatenate(out2), np.concatenate(out_d)


def _triangulate_rays(k1, k2, pose: Pose, idx1, idx2):
    w1, w2 = k1.width, k2.width
    a = np.c_[((idx1 % w1) - k1.cx) / k1.fx, ((idx1 // w1) - k1.cy) / k1.fy, np.ones(len(idx1))]
    b = np.c_[((idx2 % w2) - k2.cx) / k2.fx, ((idx2 // w2) - k2.cy) / k2.fy, np.ones(len(idx2))]
    ra = a @ pose.rotation.T
    m = np.stack([ra, -b], axis=2)
    ata = np.einsum("nij,nik->njk", m, m)
    atb = np.einsum("nij,i->nj", m, -pose.translation)
    d = np.linalg.solve(ata, atb[..., None])[..., 0]
    return a, b, d[:, 0], d[:, 1]


def _first_unique(keys, order):
    """Mask keeping, per key, the first element in ``order``."""
    keep = np.zeros(len(keys), bool)
    _, first = np.unique(keys[order], return_index=True)
    keep[order[first]] = True
    return keep


def _build_geometry(rng, cfg: SceneConfig):
    k1 = _sample_intrinsics(rng, cfg, cfg.reference_focal)
    k2 = _sample_intrinsics(rng, cfg)
    pose = _sample_pose(rng, cfg)
    ellipsoids = _sample_ellipsoids(rng, cfg, k1, k2, pose)
    labels1 = _rasterize(k1, ellipsoids)
    labels2 = _rasterize(k2, [e.moved(pose) for e in ellipsoids])

    idx1, idx2, snap = _lattice_pairs(k1, k2, pose, max(cfg.snap_tol_px, cfg.instance_snap_tol_px))
    if len(idx1) == 0:
        return None
    a, b, z1, z2 = _triangulate_rays(k1, k2, pose, idx1, idx2)
    dmin, dmax = cfg.depth_range
    ok = (z1 >= dmin) & (z1 <= dmax) & (z2 > 0.1 * dmin)
    idx1, idx2, a, b, z1, z2, snap = idx1[ok], idx2[ok], a[ok], b[ok], z1[ok], z2[ok], snap[ok]
    p1 = z1[:, None] * a
    p2 = invert(pose).apply(z2[:, None] * b)
    mid = 0.5 * (p1 + p2)

    label = np.zeros(len(mid), np.int64)
    for o in range(len(ellipsoids), 0, -1):
        label[ellipsoids[o - 1].contains(mid)] = o
    ok = (labels1.ravel()[idx1] == label) & (labels2.ravel()[idx2] == label)
    ok &= snap <= np.where(label > 0, cfg.instance_snap_tol_px, cfg.snap_tol_px)
    sel = [arr[ok] for arr in (idx1, idx2, z1, z2, p1, p2, mid, label)]
    idx1, idx2, z1, z2, p1, p2, mid, label = sel

    # one point per pixel in each view; nearer points win
    keep = _first_unique(idx1, np.lexsort((idx2, z1)))
    keep &= _first_unique(idx2, np.lexsort((idx1, np.where(keep, z2, np.inf))))
    sel = [arr[keep] for arr in (idx1, idx2, z1, z2, p1, p2, mid, label)]
    idx1, idx2, z1, z2, p1, p2, mid, label = sel

    chosen = []
    for o in range(len(ellipsoids) + 1):
        members = np.flatnonzero(label == o)
        cap = cfg.background_points if o == 0 else cfg.points_per_instance
        if len(members) > cap:
            members = rng.choice(members, size=cap, replace=False)
        chosen.append(members)
    chosen = np.sort(np.concatenate(chosen))
    chosen = chosen[np.argsort(idx1[chosen], kind="stable")]
    if len(chosen) == 0:
        return None
    sel = [arr[chosen] for arr in (idx1, idx2, z1, z2, p1, p2, mid, label)]
    return k1, k2, pose, ellipsoids, labels1, labels2, sel


def _erode(labels: np.ndarray, px: int) -> np.ndarray:
    if px <= 0:
        return labels
    out = np.zeros_like(labels)
    for o in np.unique(labels):
        if o == 0:
            continue
        region = ndimage.binary_erosion(labels == o, iterations=px)
        out[region] = o
    return out


def _relocate_clutter(rng, noise: NoiseModel, k1, k2, pose, idx1, idx2, label, labels2, pts2, depth2, moved):
    """Move query points of odd instances onto empty pixels of even instances.

    Donors and receivers never overlap, so per-instance matching cannot pair a
    stranded reference point with a foreign query point. A share
    ``1 - clutter_gross_share`` of moves lands on the positive side of the
    epipolar line within ``clutter_band_px``, which keeps the wrong match an
    epipolar inlier that drags the rotation; the rest land anywhere.
    """
    donors = np.flatnonzero(label % 2 == 1)
    target = int(round(noise.clutter_fraction * len(donors)))
    flat2 = pts2.reshape(-1, 3)
    flat_d = depth2.reshape(-1)
    lab2 = labels2.ravel()
    free = np.flatnonzero((lab2 > 0) & (lab2 % 2 == 0) & ~np.isfinite(flat2).all(axis=1))
    if target == 0 or len(free) == 0:
        return
    f = k2.K_inv.T @ skew(pose.translation) @ pose.rotation @ k1.K_inv
    w1, w2 = k1.width, k2.width
    done = 0
    for k in rng.permutation(donors):
        if done >= target or len(free) == 0:
            break
        if rng.random() < noise.clutter_gross_share:
            dst = free[rng.integers(len(free))]
        else:
            line = f @ np.array([idx1[k] % w1, idx1[k] // w1, 1.0])
            signed = (np.c_[free % w2, free // w2, np.ones(len(free))] @ line) / np.hypot(line[0], line[1])
            ok = (signed > 0) & (signed <= noise.clutter_band_px)
            if not ok.any():
                continue
            dst = free[ok][np.argmax(signed[ok])]
        src = idx2[k]
        flat2[dst], flat_d[dst] = flat2[src], flat_d[src]
        flat2[src], flat_d[src] = np.nan, 0.0
        free = free[free != dst]
        moved[k] = True
        done += 1


def _apply_noise(rng, noise: NoiseModel, k1, k2, pose, pts1, pts2, depth1, depth2, idx1, idx2, label, labels1, labels2):
    n = len(idx1)
    outlier = np.zeros(n, bool)
    flat2 = pts2.reshape(-1, 3)

    _relocate_clutter(rng, noise, k1, k2, pose, idx1, idx2, label, labels2, pts2, depth2, outlier)
    original = flat2.copy()

    m = int(round(noise.outlier_fraction * n))
    free = np.flatnonzero(~outlier)
    m = min(m, len(free))
    if m >= 2:
        pick = rng.choice(free, size=m, replace=False)
        # cyclic shift is a derangement: every picked pair loses its point
        flat2[idx2[pick]] = original[idx2[np.roll(pick, 1)]]
        outlier[pick] = True
    elif m == 1:
        k = free[rng.integers(len(free))]
        empty = np.flatnonzero(~np.isfinite(original).all(axis=1))
        dst = empty[rng.integers(len(empty))]
        flat2[dst] = original[idx2[k]]
        flat2[idx2[k]] = np.nan
        outlier[k] = True

    if noise.point_sigma > 0:
        v1 = np.isfinite(pts1).all(axis=-1)
        v2 = np.isfinite(pts2).all(axis=-1)
        pts1[v1] += rng.normal(scale=noise.point_sigma, size=(int(v1.sum()), 3))
        pts2[v2] += rng.normal(scale=noise.point_sigma, size=(int(v2.sum()), 3))
    if noise.depth_sigma_rel > 0:
        for d in (depth1, depth2):
            v = d > 0
            d[v] = np.maximum(d[v] * (1.0 + noise.depth_sigma_rel * rng.normal(size=int(v.sum()))), 1e-6)
    return outlier, _erode(labels1, noise.mask_erosion), _erode(labels2, noise.mask_erosion)


def generate(cfg: SceneConfig = SceneConfig()) -> SyntheticPair:
    """Deterministic synthetic pair for ``cfg`` (including its seed)."""
    rng = stream(cfg.seed, "synth")
    built = None
    for _ in range(cfg.max_retries):
        built = _build_geometry(rng, cfg)
        if built is not None:
            break
    if built is None:
        raise UnrenderableSceneError(f"no co-visible points after {cfg.max_retries} attempts")
    k1, k2, pose, ellipsoids, labels1, labels2, sel = built
    idx1, idx2, z1, z2, p1, p2, mid, label = sel
    h1, w1, h2, w2 = k1.height, k1.width, k2.height, k2.width

    pts1 = np.full((h1 * w1, 3), np.nan)
    pts2 = np.full((h2 * w2, 3), np.nan)
    depth1 = np.zeros(h1 * w1)
    depth2 = np.zeros(h2 * w2)
    pts1[idx1], pts2[idx2] = p1, p2
    depth1[idx1], depth2[idx2] = z1, z2
    pts1, pts2 = pts1.reshape(h1, w1, 3), pts2.reshape(h2, w2, 3)
    depth1, depth2 = depth1.reshape(h1, w1), depth2.reshape(h2, w2)

    noise_rng = stream(cfg.seed, "noise")
    outlier, labels1, labels2 = _apply_noise(
        noise_rng, cfg.noise, k1, k2, pose, pts1, pts2, depth1, depth2, idx1, idx2, label, labels1, labels2
    )
    gt = CorrespondenceMap(idx1, idx2, label.astype(np.int16), (h1, w1), (h2, w2))
    return SyntheticPair(
        pm1=PointMap.from_points(pts1),
        pm2=PointMap.from_points(pts2),
        d1=DepthMap(depth1, depth1 > 0, focal_used=k1.fx),
        d2=DepthMap(depth2, depth2 > 0, focal_used=k2.fx),
        mask1=InstanceMask(labels1),
        mask2=InstanceMask(labels2),
        k1=k1,
        k2=k2,
        gt_pose=pose,
        gt_correspondence=gt,
        outlier_labels=outlier,
        points=mid,
        ray_points1=p1,
        ray_points2=p2,
        ellipsoids=tuple(ellipsoids),
        config=cfg,
    )


def verify_pair(sp: SyntheticPair, tol: float = 1e-9) -> dict:
    """Recompute the pair's internal consistency residuals.

    ``point_residual``: stored point vs. its own depth lifted through the pose.
    ``depth_residual``: stored depth vs. the true point's depth.
    ``reprojection_residual``: stored point projected into its own view vs. its pixel.
    ``snap_residual_px``: true point projected into both views vs. the pair pixels.
    """
    inv = invert(sp.gt_pose)
    clean = ~sp.outlier_labels
    gt = sp.gt_correspondence
    res = {}

    def lift(k, idx, depth):
        w = k.width
        rays = np.c_[((idx % w) - k.cx) / k.fx, ((idx // w) - k.cy) / k.fy, np.ones(len(idx))]
        return depth.ravel()[idx][:, None] * rays

    def proj(k, p):
        return np.c_[k.fx * p[:, 0] / p[:, 2] + k.cx, k.fy * p[:, 1] / p[:, 2] + k.cy]

    i1, i2 = gt.idx1[clean], gt.idx2[clean]
    pm1 = sp.pm1.points.reshape(-1, 3)
    pm2 = sp.pm2.points.reshape(-1, 3)
    point = [np.linalg.norm(pm1[i1] - lift(sp.k1, i1, sp.d1.depth), axis=1),
             np.linalg.norm(pm2[i2] - inv.apply(lift(sp.k2, i2, sp.d2.depth)), axis=1)]
    res["point_residual"] = float(max((p.max() for p in point if len(p)), default=0.0))

    depth = [np.abs(sp.d1.depth.ravel()[i1] - sp.ray_points1[clean][:, 2]),
             np.abs(sp.d2.depth.ravel()[i2] - sp.gt_pose.apply(sp.ray_points2[clean])[:, 2])]
    x = sp.points[clean]
    x2 = sp.gt_pose.apply(x)
    res["depth_residual"] = float(max((d.max() for d in depth if len(d)), default=0.0))

    reproj = [np.linalg.norm(proj(sp.k1, pm1[i1]) - gt.pix1[clean], axis=1),
              np.linalg.norm(proj(sp.k2, sp.gt_pose.apply(pm2[i2])) - gt.pix2[clean], axis=1)]
    res["reprojection_residual"] = float(max((r.max() for r in reproj if len(r)), default=0.0))

    snap = np.maximum(np.linalg.norm(proj(sp.k1, x) - gt.pix1[clean], axis=1),
                      np.linalg.norm(proj(sp.k2, x2) - gt.pix2[clean], axis=1))
    res["snap_residual_px"] = float(snap.max()) if len(snap) else 0.0
    cfg = sp.config
    if cfg is None:
        snap_ok = True
    else:
        bound = np.where(gt.tags[clean] > 0, cfg.instance_snap_tol_px, cfg.snap_tol_px)
        snap_ok = bool(np.all(snap <= bound))
    flags = {
        "point_residual": res["point_residual"] > tol,
        "depth_residual": res["depth_residual"] > tol,
        "reprojection_residual": res["reprojection_residual"] > tol,
        "snap_residual_px": not snap_ok,
    }
    res["flagged"] = sorted(k for k, bad in flags.items() if bad)
    res["ok"] = not res["flagged"]
    res["pairs"] = int(len(gt))
    res["outliers"] = int(sp.outlier_labels.sum())
    return res
