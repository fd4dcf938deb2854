"""Relative pose from correspondences: five-point RANSAC, decomposition, cheirality."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares
from scipy.spatial.transform import Rotation as _Rot

from .errors import (
    CheiralityError,
    DegenerateSampleError,
    EstimationFailedError,
    InsufficientMatchesError,
    InvalidEssentialError,
    InvalidInputError,
)
from .fivepoint import SQRT2, epipolar_rows, five_point_solve
from .geometry import CameraIntrinsics, skew
from .matching import CorrespondenceMap
from .seeding import DEFAULT_SEED, stream

ESSENTIAL_RANK_TOL = 1e-6
_W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class NormalizedCorrespondences:
    x1: np.ndarray  # (N, 2)
    x2: np.ndarray  # (N, 2)

    def __post_init__(self):
        x1 = np.asarray(self.x1, dtype=np.float64).reshape(-1, 2)
        x2 = np.asarray(self.x2, dtype=np.float64).reshape(-1, 2)
        if x1.shape != x2.shape:
            raise InvalidInputError("x1 and x2 must have equal length")
        if not (np.isfinite(x1).all() and np.isfinite(x2).all()):
            raise InvalidInputError("normalized coordinates must be finite")
        object.__setattr__(self, "x1", x1)
        object.__setattr__(self, "x2", x2)

    def __len__(self) -> int:
        return len(self.x1)

    def subset(self, keep) -> "NormalizedCorrespondences":
        return NormalizedCorrespondences(self.x1[keep], self.x2[keep])


@dataclass(frozen=True)
class RansacConfig:
    max_iterations: int = 2000
    inlier_threshold: float = 1e-3  # Sampson distance, normalized units
    confidence: float = 0.9999
    seed: int = DEFAULT_SEED
    refine: bool = True

    def __post_init__(self):
        if self.max_iterations < 1:
            raise InvalidInputError("max_iterations must be >= 1")
        if not self.inlier_threshold > 0:
            raise InvalidInputError("inlier_threshold must be positive")
        if not 0 < self.confidence < 1:
            raise InvalidInputError("confidence must lie in (0, 1)")


@dataclass(frozen=True)
class RelativePoseHypothesis:
    rotation: np.ndarray
    direction: np.ndarray
    inlier_mask: np.ndarray
    inlier_count: int
    positive_depth: int = 0
    essential: np.ndarray | None = field(default=None, repr=False)

    @property
    def inlier_ratio(self) -> float:
        return self.inlier_count / max(len(self.inlier_mask), 1)


def normalize(k1: CameraIntrinsics, k2: CameraIntrinsics, cmap: CorrespondenceMap) -> NormalizedCorrespondences:
    p1 = cmap.pix1.astype(np.float64)
    p2 = cmap.pix2.astype(np.float64)
    x1 = np.c_[(p1[:, 0] - k1.cx) / k1.fx, (p1[:, 1] - k1.cy) / k1.fy]
    x2 = np.c_[(p2[:, 0] - k2.cx) / k2.fx, (p2[:, 1] - k2.cy) / k2.fy]
    return NormalizedCorrespondences(x1, x2)


def sampson_error(e, x1, x2) -> np.ndarray:
    """Squared first-order epipolar distance; +inf where the gradient vanishes."""
    e = np.asarray(e, dtype=np.float64)
    x1 = np.atleast_2d(np.asarray(x1, dtype=np.float64))
    x2 = np.atleast_2d(np.asarray(x2, dtype=np.float64))
    h1 = np.c_[x1, np.ones(len(x1))]
    h2 = np.c_[x2, np.ones(len(x2))]
    ex1 = h1 @ e.T
    etx2 = h2 @ e
    num = np.sum(h2 * ex1, axis=1) ** 2
    den = ex1[:, 0] ** 2 + ex1[:, 1] ** 2 + etx2[:, 0] ** 2 + etx2[:, 1] ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        err = num / den
    return np.where(den > 0, err, np.inf)


def _signed_sampson(e, h1, h2):
    ex1 = h1 @ e.T
    etx2 = h2 @ e
    den = np.sqrt(ex1[:, 0] ** 2 + ex1[:, 1] ** 2 + etx2[:, 0] ** 2 + etx2[:, 1] ** 2)
    return np.sum(h2 * ex1, axis=1) / np.maximum(den, 1e-300)


def adaptive_iterations(inlier_ratio: float, confidence: float, sample_size: int = 5) -> float:
    good = inlier_ratio**sample_size
    if good >= 1.0:
        return 1.0
    if good <= 0.0:
        return math.inf
    return math.log(1.0 - confidence) / math.log(1.0 - good)


def refine_essential(e, corrs: NormalizedCorrespondences) -> np.ndarray:
    """Least-squares Sampson refinement on the essential manifold."""
    r0, t0 = decompose_essential(e)[0]
    basis = np.linalg.svd(t0[None, :])[2][1:]  # two directions orthogonal to t0
    h1 = np.c_[corrs.x1, np.ones(len(corrs))]
    h2 = np.c_[corrs.x2, np.ones(len(corrs))]

    def model(p):
        r = _Rot.from_rotvec(p[:3]).as_matrix() @ r0
        t = t0 + p[3] * basis[0] + p[4] * basis[1]
        return skew(t / np.linalg.norm(t)) @ r

    sol = least_squares(
        lambda p: _signed_sampson(model(p), h1, h2), np.zeros(5), method="trf", jac="3-point", xtol=1e-15, ftol=1e-15, gtol=1e-15
    )
    out = model(sol.x)
    return out * (SQRT2 / np.linalg.norm(out))


def linear_essential(corrs: NormalizedCorrespondences) -> np.ndarray:
    """Eight-point least-squares fit projected onto the essential manifold."""
    if len(corrs) < 8:
        raise InsufficientMatchesError(f"linear fit needs 8 correspondences, got {len(corrs)}")
    vt = np.linalg.svd(epipolar_rows(corrs.x1, corrs.x2))[2]
    u, _, vt = np.linalg.svd(vt[-1].reshape(3, 3))
    return u @ np.diag([1.0, 1.0, 0.0]) @ vt  # Frobenius norm sqrt(2)


def _score(e, corrs, thr2):
    err = sampson_error(e, corrs.x1, corrs.x2)
    inl = err <= thr2
    n = int(inl.sum())
    mean = float(err[inl].mean()) if n else math.inf
    return inl, n, mean


def _starts(corrs, fallback):
    if len(corrs) >= 8:
        yield linear_essential(corrs)
    yield fallback


def ransac_essential(corrs: NormalizedCorrespondences, cfg: RansacConfig = RansacConfig(), trace: list | None = None):
    """Robust essential matrix. Returns ``(E, inlier_mask)``.

    ``trace``, when given, receives one ``(iteration, inliers, mean_sampson)``
    tuple per iteration for the best model of that iteration.
    """
    n = len(corrs)
    if n < 5:
        raise InsufficientMatchesError(f"need at least 5 correspondences, got {n}")
    rng = stream(cfg.seed, "ransac")
    thr2 = cfg.inlier_threshold**2
    best_e, best_inl, best_n, best_mean = None, None, 0, math.inf
    needed = math.inf
    it = 0
    while it < min(cfg.max_iterations, needed):
        sample = rng.choice(n, size=5, replace=False)
        it += 1
        try:
            candidates = five_point_solve(corrs.x1[sample], corrs.x2[sample])
        except DegenerateSampleError:
            candidates = []
        it_n, it_mean = 0, math.inf
        for e in candidates:
            inl, cnt, mean = _score(e, corrs, thr2)
            if (cnt, -mean) > (it_n, -it_mean):
                it_n, it_mean = cnt, mean
            if (cnt, -mean) > (best_n, -best_mean):
                best_e, best_inl, best_n, best_mean = e, inl, cnt, mean
        if trace is not None:
            trace.append((it, it_n, it_mean))
        if best_n:
            needed = adaptive_iterations(best_n / n, cfg.confidence)
    if best_n == 0:
        raise EstimationFailedError("no model gathered any inliers")

    if cfg.refine and best_n >= 5:
        # polishing restarts from a fit of the inlier set alone, so the final
        # model depends on which matches are inliers, not on the lucky sample
        e, inl = best_e, best_inl
        for _ in range(3):
            inl_corrs = corrs.subset(inl)
            e_new, cnt = None, -1
            for start in _starts(inl_corrs, e):
                try:
                    cand = refine_essential(start, inl_corrs)
                except (InvalidEssentialError, np.linalg.LinAlgError, ValueError):
                    continue
                inl_new, cnt, mean = _score(cand, corrs, thr2)
                if cnt >= best_n:
                    e_new = cand
                    break
            if e_new is None:
                break
            changed = not np.array_equal(inl_new, inl)
            e, inl = e_new, inl_new
            if not changed:
                break
        if e is not best_e:
            best_e, best_inl = e, inl
    return best_e, best_inl


def decompose_essential(e, tol: float = ESSENTIAL_RANK_TOL) -> list[tuple[np.ndarray, np.ndarray]]:
    """Four (R, t) candidates with det(R) = +1 and unit t."""
    e = np.asarray(e, dtype=np.float64)
    u, s, vt = np.linalg.svd(e)
    if not s[0] > 0 or s[2] > tol * s[0]:
        raise InvalidEssentialError(f"not rank two: singular values {s}")
    if np.linalg.det(u) < 0:
        u = -u
    if np.linalg.det(vt) < 0:
        vt = -vt
    r1 = u @ _W @ vt
    r2 = u @ _W.T @ vt
    t = u[:, 2] / np.linalg.norm(u[:, 2])
    return [(r1, t), (r1, -t), (r2, t), (r2, -t)]


def triangulate(r, t, x1, x2) -> tuple[np.ndarray, np.ndarray]:
    """Linear two-view triangulation. Returns depths in camera 1 and camera 2."""
    x1 = np.atleast_2d(x1)
    x2 = np.atleast_2d(x2)
    p1 = np.hstack([np.eye(3), np.zeros((3, 1))])
    p2 = np.hstack([r, np.asarray(t).reshape(3, 1)])
    a = np.stack(
        [
            x1[:, :1] * p1[2] - p1[0],
            x1[:, 1:2] * p1[2] - p1[1],
            x2[:, :1] * p2[2] - p2[0],
            x2[:, 1:2] * p2[2] - p2[1],
        ],
        axis=1,
    )
    # unit-normalize rows so both views weigh equally
    a = a / np.linalg.norm(a, axis=2, keepdims=True)
    x = np.linalg.svd(a)[2][:, -1, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        pts = x[:, :3] / x[:, 3:]
    z1 = pts[:, 2]
    z2 = pts @ np.asarray(r)[2] + np.asarray(t).reshape(3)[2]
    return z1, z2


def _pick(candidates, counts, corrs):
    counts = np.asarray(counts)
    if counts.max() <= 0:
        raise CheiralityError("no candidate places any point in front of the cameras")
    best = np.flatnonzero(counts == counts.max())
    if len(best) > 1 and corrs is not None and len(corrs):
        errs = [float(np.mean(sampson_error(skew(candidates[i][1]) @ candidates[i][0], corrs.x1, corrs.x2))) for i in best]
        best = best[np.argsort(errs, kind="stable")]
    return int(best[0])


def select_cheirality(candidates, corrs: NormalizedCorrespondences, inlier_mask=None) -> RelativePoseHypothesis:
    """Candidate with the most triangulated points in front of both cameras."""
    if len(corrs) < 1:
        raise CheiralityError("no correspondences to test")
    counts = []
    for r, t in candidates:
        z1, z2 = triangulate(r, t, corrs.x1, corrs.x2)
        counts.append(int(np.sum((z1 > 0) & (z2 > 0))))
    i = _pick(candidates, counts, corrs)
    mask = np.ones(len(corrs), bool) if inlier_mask is None else np.asarray(inlier_mask, bool)
    r, t = candidates[i]
    return RelativePoseHypothesis(r, t, mask, int(mask.sum()), counts[i])


def select_cheirality_depth(candidates, p1, p2, corrs=None, inlier_mask=None) -> RelativePoseHypothesis:
    """Cheirality from depth-lifted points instead of triangulation.

    ``p1``/``p2`` are back-projected points in each camera's own frame. For a
    candidate (R, t) a pair counts when its signed baseline length
    ``t . (p2 - R p1)`` is positive, the point it predicts in camera 2 has
    positive depth, and the displacement ``p2 - R p1`` runs mostly along ``t``
    (off-axis part shorter than the along-axis part). The last test rejects
    the twisted-pair rotation, which can pass the sign tests.
    """
    p1 = np.atleast_2d(np.asarray(p1, dtype=np.float64))
    p2 = np.atleast_2d(np.asarray(p2, dtype=np.float64))
    if len(p1) < 1:
        raise CheiralityError("no depth-lifted points to test")
    counts = []
    for r, t in candidates:
        rp1 = p1 @ np.asarray(r).T
        s = (p2 - rp1) @ t
        z2 = rp1[:, 2] + s * t[2]
        off = np.linalg.norm(p2 - rp1 - s[:, None] * t, axis=1)
        counts.append(int(np.sum((s > 0) & (z2 > 0) & (off < s))))
    i = _pick(candidates, counts, corrs)
    n = len(corrs) if corrs is not None else len(p1)
    mask = np.ones(n, bool) if inlier_mask is None else np.asarray(inlier_mask, bool)
    r, t = candidates[i]
    return RelativePoseHypothesis(r, t, mask, int(mask.sum()), counts[i])


def estimate_relative_pose(corrs: NormalizedCorrespondences, cfg: RansacConfig = RansacConfig(), trace=None):
    """RANSAC, decomposition and triangulation cheirality in one call."""
    e, inl = ransac_essential(corrs, cfg, trace)
    hyp = select_cheirality(decompose_essential(e), corrs.subset(inl), inl)
    return RelativePoseHypothesis(hyp.rotation, hyp.direction, inl, int(inl.sum()), hyp.positive_depth, e)
