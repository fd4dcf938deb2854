"""Minimal five-point relative pose solver for calibrated cameras.

The essential matrix is sought in the four-dimensional null space of the
5x9 epipolar system, ``E = x X + y Y + z Z + W``. Imposing ``det(E) = 0`` and
``2 E E^T E - tr(E E^T) E = 0`` gives ten cubics in (x, y, z). After
Gauss-Jordan elimination, three rows combine into a 3x3 matrix polynomial
in ``z`` whose determinant is a degree-10 univariate polynomial; its real
roots, found from companion-matrix eigenvalues, give the candidates.
"""
from __future__ import annotations

import numpy as np
from numpy.polynomial import polynomial as P

from .errors import DegenerateSampleError

IMAG_TOL = 1e-8
RANK_TOL = 1e-9
SQRT2 = np.sqrt(2.0)

# Monomials in (x, y, z). The first ten are eliminated; the last ten are the tail.
MONOMIALS = [
    (3, 0, 0), (0, 3, 0), (2, 1, 0), (1, 2, 0), (2, 0, 1),
    (2, 0, 0), (0, 2, 1), (0, 2, 0), (1, 1, 1), (1, 1, 0),
    (1, 0, 2), (1, 0, 1), (1, 0, 0), (0, 1, 2), (0, 1, 1),
    (0, 1, 0), (0, 0, 3), (0, 0, 2), (0, 0, 1), (0, 0, 0),
]
_EXP = np.array(MONOMIALS, dtype=np.float64)
_INDEX = {m: i for i, m in enumerate(MONOMIALS)}
_LINEAR = [_INDEX[(1, 0, 0)], _INDEX[(0, 1, 0)], _INDEX[(0, 0, 1)], _INDEX[(0, 0, 0)]]


def _product_table() -> np.ndarray:
    table = np.zeros((20, 20, 20))
    for i, a in enumerate(MONOMIALS):
        for j, b in enumerate(MONOMIALS):
            c = (a[0] + b[0], a[1] + b[1], a[2] + b[2])
            if c in _INDEX:
                table[i, j, _INDEX[c]] = 1.0
    return table


_MUL = _product_table()


def _pmul(p, q):
    return np.einsum("i,j,ijk->k", p, q, _MUL)


def _constraint_matrix(basis: np.ndarray) -> np.ndarray:
    """10x20 coefficients of the determinant and trace constraints."""
    e = np.zeros((3, 3, 20))
    for k in range(4):
        e[:, :, _LINEAR[k]] = basis[k].reshape(3, 3)
    eet = np.einsum("aci,bcj,ijk->abk", e, e, _MUL)
    tr = eet[0, 0] + eet[1, 1] + eet[2, 2]
    a = eet - 0.5 * np.eye(3)[:, :, None] * tr
    trace_eqs = np.einsum("aci,cbj,ijk->abk", a, e, _MUL).reshape(9, 20)
    det = (
        _pmul(e[0, 0], _pmul(e[1, 1], e[2, 2]) - _pmul(e[1, 2], e[2, 1]))
        - _pmul(e[0, 1], _pmul(e[1, 0], e[2, 2]) - _pmul(e[1, 2], e[2, 0]))
        + _pmul(e[0, 2], _pmul(e[1, 0], e[2, 1]) - _pmul(e[1, 1], e[2, 0]))
    )
    return np.vstack([det, trace_eqs])


def _row_polys(b: np.ndarray, r: int):
    # tail columns: xz^2 xz x | yz^2 yz y | z^3 z^2 z 1
    return (
        np.array([b[r, 2], b[r, 1], b[r, 0]]),
        np.array([b[r, 5], b[r, 4], b[r, 3]]),
        np.array([b[r, 9], b[r, 8], b[r, 7], b[r, 6]]),
    )


def _shift_sub(b, r_hi, r_lo):
    """Row ``r_hi`` minus z times row ``r_lo``; their leading monomials cancel."""
    return [P.polysub(hi, P.polymulx(lo)) for hi, lo in zip(_row_polys(b, r_hi), _row_polys(b, r_lo))]


def _det3(m):
    def minor(a, b, c, d):
        return P.polysub(P.polymul(a, d), P.polymul(b, c))

    t0 = P.polymul(m[0][0], minor(m[1][1], m[1][2], m[2][1], m[2][2]))
    t1 = P.polymul(m[0][1], minor(m[1][0], m[1][2], m[2][0], m[2][2]))
    t2 = P.polymul(m[0][2], minor(m[1][0], m[1][1], m[2][0], m[2][1]))
    return P.polyadd(P.polysub(t0, t1), t2)


def _polish(a: np.ndarray, p: np.ndarray, steps: int = 2) -> np.ndarray:
    """Gauss-Newton on the ten cubic constraints."""
    for _ in range(steps):
        with np.errstate(invalid="ignore", divide="ignore"):
            mono = np.prod(p ** _EXP, axis=1)
            jac = np.empty((20, 3))
            for k in range(3):
                e = _EXP.copy()
                e[:, k] = np.maximum(e[:, k] - 1, 0)
                jac[:, k] = _EXP[:, k] * np.prod(p ** e, axis=1)
        step = np.linalg.lstsq(a @ jac, a @ mono, rcond=None)[0]
        if not np.all(np.isfinite(step)):
            break
        p = p - step
    return p


def epipolar_rows(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """Rows q with q . vec(E) = x2^T E x1 (row-major vec)."""
    h1 = np.c_[x1, np.ones(len(x1))]
    h2 = np.c_[x2, np.ones(len(x2))]
    return np.einsum("ni,nj->nij", h2, h1).reshape(-1, 9)


def five_point_solve(x1, x2) -> list[np.ndarray]:
    """Essential matrices consistent with five normalized correspondences.

    ``x1``, ``x2``: (5, 2) normalized image coordinates. Returns up to ten
    candidates, each scaled to Frobenius norm sqrt(2).
    """
    x1 = np.asarray(x1, dtype=np.float64).reshape(5, 2)
    x2 = np.asarray(x2, dtype=np.float64).reshape(5, 2)
    q = epipolar_rows(x1, x2)
    _, s, vt = np.linalg.svd(q)
    if s[4] <= RANK_TOL * s[0]:
        raise DegenerateSampleError("epipolar system has a null space larger than four")
    basis = vt[5:]
    a = _constraint_matrix(basis)
    try:
        b = np.linalg.solve(a[:, :10], a[:, 10:])
    except np.linalg.LinAlgError as exc:
        raise DegenerateSampleError("constraint elimination is singular") from exc
    if not np.all(np.isfinite(b)):
        raise DegenerateSampleError("constraint elimination is singular")

    # rows: x^2 z (4) / x^2 (5), y^2 z (6) / y^2 (7), xyz (8) / xy (9)
    bz = [_shift_sub(b, 4, 5), _shift_sub(b, 6, 7), _shift_sub(b, 8, 9)]
    poly = _det3(bz)
    poly = np.trim_zeros(poly, "b")
    if len(poly) < 2:
        raise DegenerateSampleError("degenerate hidden-variable polynomial")
    dpoly = P.polyder(poly)

    out = []
    for root in P.polyroots(poly):
        if abs(root.imag) > IMAG_TOL * max(1.0, abs(root)):
            continue
        z = root.real
        for _ in range(3):
            dz = P.polyval(z, dpoly)
            if dz == 0:
                break
            z -= P.polyval(z, poly) / dz
        bn = np.array([[P.polyval(z, c) for c in row] for row in bz])
        v = max((np.cross(bn[0], bn[1]), np.cross(bn[0], bn[2]), np.cross(bn[1], bn[2])), key=np.linalg.norm)
        if abs(v[2]) < 1e-300:
            continue
        p = _polish(a, np.array([v[0] / v[2], v[1] / v[2], z]))
        e = (p[0] * basis[0] + p[1] * basis[1] + p[2] * basis[2] + basis[3]).reshape(3, 3)
        n = np.linalg.norm(e)
        if np.isfinite(n) and n > 0:
            out.append(e * (SQRT2 / n))
    return out
