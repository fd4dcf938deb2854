"""Shared random two-view problems for the tests."""
import numpy as np

from relocgeo.geometry import essential_from_pose, rotation_about
from relocgeo.pose import NormalizedCorrespondences


def random_relative_pose(rng, max_angle=30.0):
    axis = rng.normal(size=3)
    r = rotation_about(axis, rng.uniform(-max_angle, max_angle))
    t = rng.normal(size=3)
    return r, t / np.linalg.norm(t)


def random_problem(rng, n=5, max_angle=30.0, noise=0.0):
    """Normalized correspondences of points in front of both cameras."""
    r, t = random_relative_pose(rng, max_angle)
    pts = []
    while len(pts) < n:
        p = np.array([rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5), rng.uniform(2.0, 6.0)])
        if (r @ p + t)[2] > 0.5:
            pts.append(p)
    p1 = np.array(pts)
    p2 = p1 @ r.T + t
    x1 = p1[:, :2] / p1[:, 2:]
    x2 = p2[:, :2] / p2[:, 2:]
    if noise:
        x1 = x1 + rng.normal(scale=noise, size=x1.shape)
        x2 = x2 + rng.normal(scale=noise, size=x2.shape)
    return NormalizedCorrespondences(x1, x2), r, t, p1


def normalized_essential(r, t):
    e = essential_from_pose(r, t)
    return e * (np.sqrt(2.0) / np.linalg.norm(e))


def essential_distance(a, b):
    """Frobenius distance up to sign between sqrt(2)-normalized essentials."""
    return min(np.linalg.norm(a - b), np.linalg.norm(a + b))


def brute_nn(src_pts, src_valid, dst_pts, dst_valid):
    """O(n^2) nearest neighbour: exact squared distance, ties to the smallest flat index."""
    s_idx = np.flatnonzero(src_valid.ravel())
    d_idx = np.flatnonzero(dst_valid.ravel())
    s = src_pts.reshape(-1, 3)[s_idx].astype(np.float64)
    d = dst_pts.reshape(-1, 3)[d_idx].astype(np.float64)
    out = np.empty(len(s_idx), np.int64)
    for lo in range(0, len(s), 512):
        dist = np.sum((s[lo:lo + 512, None, :] - d[None, :, :]) ** 2, axis=-1)
        # argmin returns the first minimum and d_idx is ascending
        out[lo:lo + 512] = d_idx[np.argmin(dist, axis=1)]
    return s_idx, out


def brute_reciprocal(pts1, valid1, pts2, valid2):
    a, fwd = brute_nn(pts1, valid1, pts2, valid2)
    b, bwd = brute_nn(pts2, valid2, pts1, valid1)
    back = dict(zip(b.tolist(), bwd.tolist()))
    return sorted((i, j) for i, j in zip(a.tolist(), fwd.tolist()) if back[j] == i)


def random_pointmap_pair(rng, h, w, lattice=False, invalid=0.2):
    """Two point maps; ``lattice`` draws integer coordinates so exact ties are common."""
    def one():
        if lattice:
            pts = rng.integers(0, 4, size=(h, w, 3)).astype(np.float64)
        else:
            pts = rng.normal(size=(h, w, 3))
        valid = rng.random((h, w)) >= invalid
        if not valid.any():
            valid.flat[0] = True
        return pts, valid

    return one(), one()
