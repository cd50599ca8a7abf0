"""Planar homography algebra.

Conventions used throughout the package:

* a homography is a (3, 3) float64 array normalized so that ``H[2, 2] == 1``;
* points are ``(u, v)`` pairs, ``u`` horizontal, ``v`` vertical;
* a corner set is a (4, 2) array ordered top-left, top-right, bottom-right,
  bottom-left;
* four-point offsets are a length-8 array ``du1, dv1, ..., du4, dv4``.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateProjection, SingularMatrix, SingularSystem

EPS_W = 1e-12
EPS_DET = 1e-12
# relative pivot threshold for the elimination solver
PIVOT_RTOL = 1e-12


def identity() -> np.ndarray:
    return np.eye(3)


def translation(tu: float, tv: float) -> np.ndarray:
    H = np.eye(3)
    H[0, 2] = tu
    H[1, 2] = tv
    return H


def normalize(H) -> np.ndarray:
    H = np.asarray(H, dtype=np.float64)
    if H.shape != (3, 3):
        raise ValueError(f"homography must be 3x3, got {H.shape}")
    if not np.all(np.isfinite(H)):
        raise SingularMatrix("homography has non-finite entries")
    if abs(H[2, 2]) <= EPS_W:
        raise SingularMatrix("H33 vanishes; cannot normalize scale")
    if H[2, 2] == 1.0:
        return H.copy()
    return H / H[2, 2]


def square_corners(x: float, y: float, size: float) -> np.ndarray:
    """Corner pixel centers of an axis-aligned ``size`` square at ``(x, y)``."""
    e = size - 1
    return np.array([[x, y], [x + e, y], [x + e, y + e], [x, y + e]], dtype=np.float64)


# --------------------------------------------------------------------------- projection

def project_points(H, pts) -> np.ndarray:
    """Map an (n, 2) array of points through ``H``."""
    H = np.asarray(H, dtype=np.float64)
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    u, v = pts[:, 0], pts[:, 1]
    w = H[2, 0] * u + H[2, 1] * v + H[2, 2]
    if np.any(np.abs(w) <= EPS_W):
        raise DegenerateProjection("point maps toward the line at infinity")
    x = (H[0, 0] * u + H[0, 1] * v + H[0, 2]) / w
    y = (H[1, 0] * u + H[1, 1] * v + H[1, 2]) / w
    return np.stack([x, y], axis=1)


def project_point(H, p) -> tuple[float, float]:
    q = project_points(H, np.asarray(p, dtype=np.float64).reshape(1, 2))[0]
    return float(q[0]), float(q[1])


# --------------------------------------------------------------------------- linear solver

def solve_batch(A, b, rtol: float = PIVOT_RTOL):
    """Gaussian elimination with partial pivoting over a batch of systems.

    ``A`` is (B, n, n), ``b`` is (B, n). Returns ``(x, ok)`` where ``ok`` flags
    the systems whose pivots all cleared ``rtol`` times the largest entry of
    their matrix. Rows of failed systems contain garbage.
    """
    A = np.array(A, dtype=np.float64)
    b = np.array(b, dtype=np.float64)
    B, n, _ = A.shape
    M = np.concatenate([A, b[:, :, None]], axis=2)
    scale = np.abs(A).reshape(B, -1).max(axis=1)
    ok = scale > 0
    tol = rtol * np.where(ok, scale, 1.0)
    rows = np.arange(B)
    for k in range(n):
        piv = k + np.argmax(np.abs(M[:, k:, k]), axis=1)
        if np.any(piv != k):
            swap_k = M[rows, k].copy()
            M[rows, k] = M[rows, piv]
            M[rows, piv] = swap_k
        p = M[:, k, k]
        ok &= np.abs(p) > tol
        p = np.where(ok, p, 1.0)
        f = M[:, k + 1:, k] / p[:, None]
        M[:, k + 1:, k:] -= f[:, :, None] * M[:, None, k, k:]
        M[:, k, k] = p
    x = np.zeros((B, n))
    for k in range(n - 1, -1, -1):
        s = M[:, k, n] - np.einsum("bj,bj->b", M[:, k, k + 1:n], x[:, k + 1:])
        x[:, k] = s / M[:, k, k]
    return x, ok


def _four_point_system(src, dst):
    """Rows of the 8x8 system for H with H33 fixed to 1; batched over axis 0."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    u, v = src[..., 0], src[..., 1]
    x, y = dst[..., 0], dst[..., 1]
    z = np.zeros_like(u)
    o = np.ones_like(u)
    r1 = np.stack([u, v, o, z, z, z, -u * x, -v * x], axis=-1)
    r2 = np.stack([z, z, z, u, v, o, -u * y, -v * y], axis=-1)
    A = np.stack([r1, r2], axis=-2).reshape(*src.shape[:-2], 2 * src.shape[-2], 8)
    rhs = np.stack([x, y], axis=-1).reshape(*src.shape[:-2], 2 * src.shape[-2])
    return A, rhs


def _h_from_vec(h) -> np.ndarray:
    return np.concatenate([h, np.ones(h.shape[:-1] + (1,))], axis=-1).reshape(h.shape[:-1] + (3, 3))


def _has_collinear_triple(quad, rtol=1e-9) -> bool:
    quad = np.asarray(quad, dtype=np.float64)
    span = max(np.ptp(quad[:, 0]), np.ptp(quad[:, 1]), 1e-300)
    for i, j, k in ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)):
        a, b, c = quad[i], quad[j], quad[k]
        cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if abs(cross) <= rtol * span * span:
            return True
    return False


def four_point_homographies(src, dst):
    """Batched exact 4-point solve. ``src``/``dst`` are (B, 4, 2).

    Returns ``(H, ok)`` with H of shape (B, 3, 3).
    """
    A, rhs = _four_point_system(src, dst)
    h, ok = solve_batch(A, rhs)
    H = _h_from_vec(h)
    ok &= np.all(np.isfinite(H).reshape(len(H), -1), axis=1)
    return H, ok


def homography_from_quads(src, dst) -> np.ndarray:
    src = np.asarray(src, dtype=np.float64).reshape(4, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(4, 2)
    if _has_collinear_triple(src) or _has_collinear_triple(dst):
        raise SingularSystem("corner configuration has three collinear points")
    H, ok = four_point_homographies(src[None], dst[None])
    if not ok[0]:
        raise SingularSystem("4-point system is rank deficient")
    return H[0]


def offsets_to_homography(corners, offsets) -> np.ndarray:
    """Homography taking ``corners`` to ``corners + offsets``."""
    corners = np.asarray(corners, dtype=np.float64).reshape(4, 2)
    offsets = np.asarray(offsets, dtype=np.float64).reshape(4, 2)
    if not np.any(offsets):
        return identity()
    return homography_from_quads(corners, corners + offsets)


def homography_to_offsets(H, corners) -> np.ndarray:
    corners = np.asarray(corners, dtype=np.float64).reshape(4, 2)
    return (project_points(H, corners) - corners).reshape(8)


def offsets_to_homographies(corners, offsets) -> np.ndarray:
    """Batched :func:`offsets_to_homography`: (B, 4, 2) corners, (B, 8) offsets."""
    corners = np.asarray(corners, dtype=np.float64).reshape(-1, 4, 2)
    offsets = np.asarray(offsets, dtype=np.float64).reshape(-1, 4, 2)
    H, ok = four_point_homographies(corners, corners + offsets)
    if not ok.all():
        raise SingularSystem(f"{int((~ok).sum())} of {len(ok)} corner systems are rank deficient")
    zero = ~offsets.reshape(len(offsets), -1).any(axis=1)
    H[zero] = np.eye(3)
    return H


def homographies_to_offsets(H, corners) -> np.ndarray:
    """Batched :func:`homography_to_offsets`; returns (B, 8)."""
    H = np.asarray(H, dtype=np.float64)
    c = np.asarray(corners, dtype=np.float64).reshape(-1, 4, 2)
    x = np.einsum("bij,bnj->bni", H[:, :, :2], c) + H[:, None, :, 2]
    if np.any(np.abs(x[..., 2]) <= EPS_W):
        raise DegenerateProjection("corner maps toward the line at infinity")
    return (x[..., :2] / x[..., 2:3] - c).reshape(len(H), 8)


# --------------------------------------------------------------------------- group ops

def det(H) -> float:
    return float(np.linalg.det(np.asarray(H, dtype=np.float64)))


def invert(H) -> np.ndarray:
    H = normalize(H)
    if abs(det(H)) <= EPS_DET:
        raise SingularMatrix("homography is not invertible")
    a, b, c = H[0]
    d, e, f = H[1]
    g, h, i = H[2]
    # adjugate; exact for identity and pure translations
    adj = np.array([
        [e * i - f * h, c * h - b * i, b * f - c * e],
        [f * g - d * i, a * i - c * g, c * d - a * f],
        [d * h - e * g, b * g - a * h, a * e - b * d],
    ])
    return normalize(adj)


def compose(A, B) -> np.ndarray:
    """``compose(A, B)`` applies ``B`` first, then ``A``."""
    C = np.asarray(A, dtype=np.float64) @ np.asarray(B, dtype=np.float64)
    C = normalize(C)
    if abs(det(C)) <= EPS_DET:
        raise SingularMatrix("composition is degenerate")
    return C


# --------------------------------------------------------------------------- least squares DLT

def hartley_transform(pts) -> np.ndarray:
    """Similarity moving the centroid to the origin with mean distance sqrt(2)."""
    pts = np.asarray(pts, dtype=np.float64)
    c = pts.mean(axis=0)
    d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
    if d <= 0:
        raise SingularSystem("all points coincide")
    s = np.sqrt(2.0) / d
    return np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])


def _all_collinear(pts, rtol=1e-9) -> bool:
    centered = pts - pts.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    return sv[0] == 0 or sv[-1] <= rtol * sv[0]


def dlt_least_squares(src, dst, normalize_points: bool = True) -> np.ndarray:
    """Homography mapping ``src`` points onto ``dst`` points (n >= 4).

    Four pairs go through the exact 4-point solve. More pairs are solved in
    the least-squares sense from the normal equations of the stacked 2n x 8
    system, optionally after Hartley normalization of both point sets.
    """
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    if len(src) != len(dst):
        raise ValueError("src and dst must have the same length")
    if len(src) < 4:
        raise SingularSystem(f"need at least 4 correspondences, got {len(src)}")
    if _all_collinear(src) or _all_collinear(dst):
        raise SingularSystem("correspondences are collinear")
    if len(src) == 4:
        return homography_from_quads(src, dst)
    if normalize_points:
        T1 = hartley_transform(src)
        T2 = hartley_transform(dst)
        s = project_points(T1, src)
        d = project_points(T2, dst)
    else:
        s, d = src, dst
    A, rhs = _four_point_system(s[None], d[None])
    A, rhs = A[0], rhs[0]
    h, ok = solve_batch((A.T @ A)[None], (A.T @ rhs)[None])
    if not ok[0]:
        raise SingularSystem("normal equations are rank deficient")
    Hn = _h_from_vec(h[0])
    if normalize_points:
        return normalize(invert(T2) @ Hn @ T1)
    return normalize(Hn)
