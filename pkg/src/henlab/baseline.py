"""Classical reference estimator: FAST corners, BRIEF-style binary
descriptors, Hamming matching and RANSAC around the DLT.

No orientation or scale pyramid; patch pairs only differ by a bounded
perspective change.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import geom
from .errors import (InsufficientMatches, NoConsensus, NumericError, SingularSystem,
                     TooCloseToBorder)

CIRCLE = np.array([(0, -3), (1, -3), (2, -2), (3, -1), (3, 0), (3, 1), (2, 2), (1, 3),
                   (0, 3), (-1, 3), (-2, 2), (-3, 1), (-3, 0), (-3, -1), (-2, -2), (-1, -3)])
DESC_BITS = 256
PATCH_RADIUS = 15
DESC_BORDER = 16
_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint16)


@dataclass(frozen=True)
class Keypoint:
    u: float
    v: float
    response: float


@dataclass
class RansacConfig:
    iterations: int = 2000
    inlier_threshold: float = 3.0
    min_inliers: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1 or self.inlier_threshold <= 0:
            raise ValueError("iterations must be >= 1 and inlier_threshold > 0")


@dataclass
class BaselineConfig:
    max_keypoints: int = 500
    fast_threshold: float = 20.0 / 255.0
    ratio: float = 0.8
    ransac: RansacConfig = field(default_factory=RansacConfig)


def _brief_pairs(seed: int = 0x5EED) -> np.ndarray:
    rng = np.random.default_rng(seed)
    pts = np.rint(rng.normal(0.0, (2 * PATCH_RADIUS + 1) / 5.0, size=(DESC_BITS, 4)))
    return np.clip(pts, -PATCH_RADIUS, PATCH_RADIUS).astype(np.intp)


# (du1, dv1, du2, dv2) per bit; fixed for the life of the package
BRIEF_PAIRS = _brief_pairs()


# --------------------------------------------------------------------------- detection

def fast_mask(img, threshold: float, arc: int = 9) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    h, w = a.shape
    p = np.pad(a, 3, mode="edge")
    ring = np.stack([p[3 + dv:3 + dv + h, 3 + du:3 + du + w] for du, dv in CIRCLE])
    mask = np.zeros((h, w), dtype=bool)
    for cmp in (ring > a + threshold, ring < a - threshold):
        ext = np.concatenate([cmp, cmp[:arc - 1]]).astype(np.int16)
        cs = np.concatenate([np.zeros((1, h, w), np.int16), np.cumsum(ext, axis=0, dtype=np.int16)])
        runs = cs[arc:arc + 16] - cs[:16]
        mask |= (runs == arc).any(axis=0)
    return mask


def harris_response(img, sigma: float = 1.5, k: float = 0.04) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    gx = ndimage.sobel(a, axis=1, mode="nearest")
    gy = ndimage.sobel(a, axis=0, mode="nearest")
    sxx = ndimage.gaussian_filter(gx * gx, sigma, mode="nearest")
    syy = ndimage.gaussian_filter(gy * gy, sigma, mode="nearest")
    sxy = ndimage.gaussian_filter(gx * gy, sigma, mode="nearest")
    return sxx * syy - sxy * sxy - k * (sxx + syy) ** 2


def detect_corners(img, max_n: int = 500, threshold: float = 20.0 / 255.0,
                   border: int = DESC_BORDER) -> list[Keypoint]:
    """FAST-9 candidates, 3x3 non-max suppression on the Harris response.

    Keypoints closer than ``border`` pixels to the image edge are dropped so
    every returned point can be described.
    """
    a = np.asarray(img, dtype=np.float64)
    h, w = a.shape
    cand = fast_mask(a, threshold)
    resp = np.where(cand, harris_response(a), -np.inf)
    peak = ndimage.maximum_filter(resp, size=3, mode="constant", cval=-np.inf)
    keep = cand & (resp == peak)
    keep[:border] = keep[h - border:] = False
    keep[:, :border] = keep[:, w - border:] = False
    vs, us = np.nonzero(keep)
    r = resp[vs, us]
    order = np.lexsort((us, vs, -r))[:max_n]
    return [Keypoint(float(us[i]), float(vs[i]), float(r[i])) for i in order]


# --------------------------------------------------------------------------- description

def smooth_for_description(img) -> np.ndarray:
    return ndimage.gaussian_filter(np.asarray(img, dtype=np.float64), 2.0, mode="nearest")


def describe_many(img, kps, smoothed=None) -> np.ndarray:
    """Packed (n, 32) uint8 descriptors; ``smoothed`` skips re-filtering."""
    s = smooth_for_description(img) if smoothed is None else smoothed
    h, w = s.shape
    if len(kps) == 0:
        return np.zeros((0, DESC_BITS // 8), dtype=np.uint8)
    pos = np.array([[int(round(k.u)), int(round(k.v))] for k in kps])
    bad = ((pos[:, 0] < DESC_BORDER) | (pos[:, 0] > w - 1 - DESC_BORDER)
           | (pos[:, 1] < DESC_BORDER) | (pos[:, 1] > h - 1 - DESC_BORDER))
    if bad.any():
        raise TooCloseToBorder(f"keypoint {kps[int(np.argmax(bad))]} is within {DESC_BORDER}px of the border")
    u, v = pos[:, 0:1], pos[:, 1:2]
    a = s[v + BRIEF_PAIRS[:, 1], u + BRIEF_PAIRS[:, 0]]
    b = s[v + BRIEF_PAIRS[:, 3], u + BRIEF_PAIRS[:, 2]]
    return np.packbits(a < b, axis=1)


def describe(img, kp: Keypoint) -> np.ndarray:
    return describe_many(img, [kp])[0]


def hamming_matrix(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.uint8)
    b = np.asarray(b, dtype=np.uint8)
    return _POPCOUNT[a[:, None, :] ^ b[None, :, :]].sum(axis=2)


def match_descriptors(a, b, ratio: float = 0.8) -> list[tuple[int, int]]:
    """Mutual nearest neighbours that also pass the distance-ratio test."""
    if len(a) == 0 or len(b) == 0:
        return []
    d = hamming_matrix(a, b).astype(np.float64)
    best = np.argmin(d, axis=1)
    rows = np.arange(len(a))
    d1 = d[rows, best]
    if d.shape[1] > 1:
        d2 = np.partition(d, 1, axis=1)[:, 1]
    else:
        d2 = np.full(len(a), DESC_BITS + 1.0)
    back = np.argmin(d, axis=0)
    ok = (d1 < ratio * d2) & (back[best] == rows)
    return [(int(i), int(best[i])) for i in np.nonzero(ok)[0]]


# --------------------------------------------------------------------------- robust fitting

def _project_batch(Hs, pts):
    """(B, 3, 3) x (n, 2) -> (B, n, 2) and a (B, n) validity mask."""
    x = np.einsum("bij,nj->bni", Hs[:, :, :2], pts) + Hs[:, None, :, 2]
    w = x[..., 2]
    valid = np.abs(w) > geom.EPS_W
    w = np.where(valid, w, 1.0)
    return x[..., :2] / w[..., None], valid


def transfer_distances(Hs, Hinv, src, dst):
    """Forward and backward transfer distances, shape (B, n); inf where undefined."""
    fwd, vf = _project_batch(Hs, src)
    bwd, vb = _project_batch(Hinv, dst)
    df = np.where(vf, np.linalg.norm(fwd - dst[None], axis=2), np.inf)
    db = np.where(vb, np.linalg.norm(bwd - src[None], axis=2), np.inf)
    return df, db


def _inliers(H, src, dst, thr):
    df, db = transfer_distances(H[None], geom.invert(H)[None], src, dst)
    return (df[0] < thr) & (db[0] < thr)


def ransac_homography(src, dst, cfg: RansacConfig | None = None):
    """Hypothesize from 4 random pairs, keep the one with the lowest truncated cost.

    A pair is an inlier when both its forward and backward transfer distance
    are below the threshold. Hypotheses are ranked MSAC-style by
    ``sum(min(r^2, thr^2))`` with ``r`` the larger of the two distances. The
    threshold is then shrunk to the winning hypothesis' own noise level (see
    :func:`_adapted_threshold`) and the fit is refined by least-squares DLT on
    its inliers, twice, re-selecting inliers in between.
    Returns ``(H, inlier_mask)``.
    """
    cfg = cfg or RansacConfig()
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    n = len(src)
    if n < 4:
        raise InsufficientMatches(f"need at least 4 matches, got {n}")
    thr = cfg.inlier_threshold
    rng = np.random.default_rng(cfg.seed)
    idx = np.argsort(rng.random((cfg.iterations, n)), axis=1)[:, :4]
    Hs, ok = geom.four_point_homographies(src[idx], dst[idx])
    dets = np.linalg.det(Hs)
    ok &= np.abs(dets) > geom.EPS_DET
    Hs = np.where(ok[:, None, None], Hs, np.eye(3))
    Hinv = np.linalg.inv(Hs)
    df, db = transfer_distances(Hs, Hinv, src, dst)
    r = np.maximum(df, db)
    inl = (r < thr) & ok[:, None]
    cost = np.where(ok, np.minimum(r * r, thr * thr).sum(axis=1), np.inf)
    best = int(np.argmin(cost))
    need = max(cfg.min_inliers, 4)
    if inl[best].sum() < need:
        raise NoConsensus(f"best hypothesis has {inl[best].sum()} inliers (< {cfg.min_inliers})")
    thr = _adapted_threshold(r[best], inl[best], thr, need)
    mask = r[best] < thr
    H = geom.normalize(Hs[best])
    for _ in range(2):
        try:
            H_new = geom.dlt_least_squares(src[mask], dst[mask])
            new_mask = _inliers(H_new, src, dst, thr)
        except NumericError:
            break
        if new_mask.sum() < mask.sum():
            break
        H = H_new
        if np.array_equal(new_mask, mask):
            break
        mask = new_mask
    return H, mask


def _adapted_threshold(r, mask, thr: float, need: int) -> float:
    """Shrink ``thr`` to ``max(5 sigma, 1e-3 thr)`` for nearly noise-free consensus sets.

    ``sigma`` is the MAD scale of the hypothesis' inlier residuals. A stray
    outlier that lands just inside ``thr`` would otherwise bias the
    least-squares refit. Noisy data keeps the configured threshold, and so
    does a shrink that would leave fewer than ``need`` inliers.
    """
    sigma = 1.4826 * np.median(r[mask])
    tight = min(thr, max(5.0 * sigma, 1e-3 * thr))
    return tight if (r < tight).sum() >= need else thr


# --------------------------------------------------------------------------- pair estimation

@dataclass
class BaselineResult:
    offsets: np.ndarray
    failed: bool
    n_matches: int = 0
    n_inliers: int = 0
    reason: str = ""


def estimate_offsets(src_patch, dst_patch, cfg: BaselineConfig | None = None) -> BaselineResult:
    """Four-point offsets of the patch-local homography; identity on failure."""
    cfg = cfg or BaselineConfig()
    p = np.asarray(src_patch).shape[0]
    corners = geom.square_corners(0, 0, p)
    zero = np.zeros(8)
    kp_s = detect_corners(src_patch, cfg.max_keypoints, cfg.fast_threshold)
    kp_d = detect_corners(dst_patch, cfg.max_keypoints, cfg.fast_threshold)
    if len(kp_s) < 4 or len(kp_d) < 4:
        return BaselineResult(zero, True, reason="too few keypoints")
    matches = match_descriptors(describe_many(src_patch, kp_s), describe_many(dst_patch, kp_d), cfg.ratio)
    if len(matches) < 4:
        return BaselineResult(zero, True, len(matches), reason="too few matches")
    a = np.array([[kp_s[i].u, kp_s[i].v] for i, _ in matches])
    b = np.array([[kp_d[j].u, kp_d[j].v] for _, j in matches])
    try:
        H_sd, mask = ransac_homography(a, b, cfg.ransac)
        # source->warped point map is the inverse of the corner perturbation
        off = geom.homography_to_offsets(geom.invert(H_sd), corners)
    except (NumericError, SingularSystem) as exc:
        return BaselineResult(zero, True, len(matches), reason=type(exc).__name__)
    if not np.all(np.isfinite(off)):
        return BaselineResult(zero, True, len(matches), reason="non-finite estimate")
    return BaselineResult(off, False, len(matches), int(mask.sum()))


def estimate_pair(sample, cfg: BaselineConfig | None = None) -> BaselineResult:
    return estimate_offsets(sample.input[0], sample.input[1], cfg)
