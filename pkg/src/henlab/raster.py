"""Grayscale raster substrate.

A gray image is a 2-D ``float32`` numpy array of shape ``(height, width)``
with values in [0, 1]. Pixel ``img[y, x]`` sits at coordinate ``(u=x, v=y)``,
so sampling at integer coordinates returns stored values exactly.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from . import geom
from .errors import CorruptFile, OutOfBounds, UnsupportedFormat

DTYPE = np.float32
LUMA = (0.299, 0.587, 0.114)


def as_gray(img) -> np.ndarray:
    a = np.asarray(img)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"gray image must be a non-empty 2-D array, got shape {a.shape}")
    return np.clip(a, 0.0, 1.0).astype(DTYPE, copy=False)


@dataclass(frozen=True)
class Rect:
    x: int
    y: int
    size: int

    def corners(self) -> np.ndarray:
        return geom.square_corners(self.x, self.y, self.size)


@dataclass(frozen=True)
class ShapeSpec:
    kind: str                  # square | triangle | circle
    center: tuple[float, float]
    size: float                # square side, triangle side, circle diameter
    intensity: float
    style: str = "filled"      # filled | outlined
    outline_width: float = 2.0
    rotation: float = 0.0

    def __post_init__(self):
        if self.kind not in ("square", "triangle", "circle"):
            raise ValueError(f"unknown shape kind {self.kind!r}")
        if self.style not in ("filled", "outlined"):
            raise ValueError(f"unknown shape style {self.style!r}")
        if self.size <= 0:
            raise ValueError("shape size must be positive")
        if self.style == "outlined" and self.outline_width < 1:
            raise ValueError("outline_width must be >= 1 for outlined shapes")


# --------------------------------------------------------------------------- sampling

def sample_bilinear(img, us, vs) -> np.ndarray:
    """Vectorized bilinear sampling with zero fill outside ``[0, w-1] x [0, h-1]``."""
    img = np.asarray(img)
    h, w = img.shape
    us = np.asarray(us, dtype=np.float64)
    vs = np.asarray(vs, dtype=np.float64)
    inside = (us >= 0) & (us <= w - 1) & (vs >= 0) & (vs <= h - 1)
    u = np.where(inside, us, 0.0)
    v = np.where(inside, vs, 0.0)
    x0 = np.floor(u).astype(np.intp)
    y0 = np.floor(v).astype(np.intp)
    fx = u - x0
    fy = v - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    src = img.astype(np.float64, copy=False)
    val = ((1 - fx) * (1 - fy) * src[y0, x0] + fx * (1 - fy) * src[y0, x1]
           + (1 - fx) * fy * src[y1, x0] + fx * fy * src[y1, x1])
    return np.where(inside, val, 0.0)


def bilinear_sample(img, u: float, v: float) -> float:
    return float(sample_bilinear(img, np.array([u]), np.array([v]))[0])


def warp_region(img, inverse_map, rect: Rect | None = None, shape=None) -> np.ndarray:
    """Pull-warp: ``out[y, x] = img(inverse_map(x + rx, y + ry))``.

    ``rect`` selects an output window in warped-image coordinates; without it
    the output covers ``shape`` (default: the input's shape) from the origin.
    """
    img = np.asarray(img)
    if rect is not None:
        x0, y0, hh, ww = rect.x, rect.y, rect.size, rect.size
    else:
        x0, y0 = 0, 0
        hh, ww = shape if shape is not None else img.shape
    ys, xs = np.mgrid[y0:y0 + hh, x0:x0 + ww]
    q = geom.project_points(inverse_map, np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64))
    out = sample_bilinear(img, q[:, 0], q[:, 1]).reshape(hh, ww)
    return np.clip(out, 0.0, 1.0).astype(DTYPE)


def warp_by_homography(img, M) -> np.ndarray:
    """Warp so that content at source location ``p`` lands at ``M(p)``."""
    img = np.asarray(img)
    if np.array_equal(geom.normalize(M), geom.identity()):
        return img.astype(DTYPE, copy=True)
    return warp_region(img, geom.invert(M))


def crop(img, r: Rect) -> np.ndarray:
    img = np.asarray(img)
    h, w = img.shape
    if r.size < 1 or r.x < 0 or r.y < 0 or r.x + r.size > w or r.y + r.size > h:
        raise OutOfBounds(f"{r} does not fit inside a {w}x{h} image")
    return img[r.y:r.y + r.size, r.x:r.x + r.size].astype(DTYPE, copy=True)


# --------------------------------------------------------------------------- filtering

def gaussian_blur_3x3(img) -> np.ndarray:
    """Binomial [1, 2, 1] / 4 in each axis with edge-clamp borders."""
    a = np.asarray(img, dtype=np.float64)
    p = np.pad(a, 1, mode="edge")
    rows = (p[:, :-2] + 2.0 * p[:, 1:-1] + p[:, 2:]) / 4.0
    out = (rows[:-2] + 2.0 * rows[1:-1] + rows[2:]) / 4.0
    return np.clip(out, 0.0, 1.0).astype(DTYPE)


def total_variation(img) -> float:
    a = np.asarray(img, dtype=np.float64)
    return float(np.abs(np.diff(a, axis=0)).sum() + np.abs(np.diff(a, axis=1)).sum())


def sobel_magnitude(img) -> np.ndarray:
    p = np.pad(np.asarray(img, dtype=np.float64), 1, mode="edge")
    gx = (p[:-2, 2:] + 2 * p[1:-1, 2:] + p[2:, 2:]) - (p[:-2, :-2] + 2 * p[1:-1, :-2] + p[2:, :-2])
    gy = (p[2:, :-2] + 2 * p[2:, 1:-1] + p[2:, 2:]) - (p[:-2, :-2] + 2 * p[:-2, 1:-1] + p[:-2, 2:])
    return np.hypot(gx, gy)


def resize_bilinear(img, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-centered bilinear resize with edge clamping."""
    a = np.asarray(img, dtype=np.float64)
    h, w = a.shape
    ys = np.clip((np.arange(out_h) + 0.5) * h / out_h - 0.5, 0, h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * w / out_w - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = a[y0][:, x0] * (1 - fx) + a[y0][:, x1] * fx
    bot = a[y1][:, x0] * (1 - fx) + a[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


# --------------------------------------------------------------------------- shapes

def shape_masks(s: ShapeSpec, height: int, width: int):
    """Boolean ``(region, interior)`` masks; the outline band is ``region & ~interior``."""
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    cu, cv = s.center
    c, sn = math.cos(s.rotation), math.sin(s.rotation)
    du, dv = xs - cu, ys - cv
    # rotate into the shape frame
    lx = c * du + sn * dv
    ly = -sn * du + c * dv
    wid = s.outline_width if s.style == "outlined" else 0.0
    half = s.size / 2.0
    if s.kind == "square":
        region = (lx >= -half) & (lx < half) & (ly >= -half) & (ly < half)
        hi = half - wid
        interior = (lx >= -hi) & (lx < hi) & (ly >= -hi) & (ly < hi)
    elif s.kind == "circle":
        r2 = lx * lx + ly * ly
        region = r2 <= half * half
        ri = max(half - wid, 0.0)
        interior = r2 <= ri * ri if ri > 0 else np.zeros_like(region)
    else:
        # equilateral triangle, centroid at center, apex up
        r_in = s.size / (2.0 * math.sqrt(3.0))
        k = math.sqrt(3.0) / 2.0
        normals = ((0.0, 1.0), (-k, -0.5), (k, -0.5))
        d = [nx * lx + ny * ly for nx, ny in normals]
        region = np.logical_and.reduce([di <= r_in for di in d])
        interior = np.logical_and.reduce([di <= r_in - wid for di in d])
    if s.style == "filled":
        interior = region
    return region, interior


def draw_shape(img, s: ShapeSpec) -> np.ndarray:
    img = np.asarray(img)
    h, w = img.shape
    out = img.astype(DTYPE, copy=True)
    region, interior = shape_masks(s, h, w)
    paint = region if s.style == "filled" else region & ~interior
    out[paint] = DTYPE(np.clip(s.intensity, 0.0, 1.0))
    return out


# --------------------------------------------------------------------------- file io

def _pnm_header(data: bytes):
    """Parse a binary PNM header; returns (magic, width, height, maxval, offset)."""
    fields = []
    i = 0
    n = len(data)
    while len(fields) < 4:
        while i < n and data[i:i + 1].isspace():
            i += 1
        if i < n and data[i:i + 1] == b"#":
            while i < n and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < n and not data[i:i + 1].isspace() and data[i:i + 1] != b"#":
            i += 1
        if start == i:
            raise CorruptFile("truncated PNM header")
        fields.append(data[start:i])
    # exactly one whitespace byte separates header from raster
    i += 1
    magic = fields[0].decode("ascii", "replace")
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError as exc:
        raise CorruptFile("non-numeric PNM header field") from exc
    return magic, width, height, maxval, i


def read_pnm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] not in (b"P5", b"P6"):
        raise UnsupportedFormat(f"{path}: not a binary PGM/PPM file")
    magic, width, height, maxval, off = _pnm_header(data)
    if maxval != 255:
        raise UnsupportedFormat(f"{path}: only maxval 255 is supported (got {maxval})")
    if width < 1 or height < 1:
        raise CorruptFile(f"{path}: bad dimensions {width}x{height}")
    channels = 1 if magic == "P5" else 3
    need = width * height * channels
    raster = data[off:off + need]
    if len(raster) != need:
        raise CorruptFile(f"{path}: raster truncated ({len(raster)} of {need} bytes)")
    arr = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, channels)
    return arr[..., 0] if channels == 1 else arr


def write_pgm(path, img) -> None:
    q = to_uint8(img)
    h, w = q.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(q.tobytes())


def to_uint8(img) -> np.ndarray:
    a = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.rint(a * 255.0).astype(np.uint8)


def _read_png(path) -> np.ndarray:
    try:
        from PIL import Image, UnidentifiedImageError
    except ImportError as exc:  # pragma: no cover - Pillow is optional
        raise UnsupportedFormat(f"{path}: PNG support requires Pillow") from exc
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("L", "RGB"):
                arr = np.asarray(im)
            elif im.mode in ("LA", "RGBA", "P", "I;16", "I"):
                if im.mode.startswith("I"):
                    raise UnsupportedFormat(f"{path}: only 8-bit PNGs are supported")
                arr = np.asarray(im.convert("RGB" if im.mode != "LA" else "L"))
            else:
                raise UnsupportedFormat(f"{path}: unsupported PNG mode {im.mode}")
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise CorruptFile(f"{path}: {exc}") from exc
    return arr


def to_gray(arr) -> np.ndarray:
    """8-bit gray or RGB array to a [0, 1] gray image."""
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim == 3:
        a = LUMA[0] * a[..., 0] + LUMA[1] * a[..., 1] + LUMA[2] * a[..., 2]
    return np.clip(a / 255.0, 0.0, 1.0).astype(DTYPE)


SUPPORTED_EXTENSIONS = (".pgm", ".ppm", ".png")


def ingest_image(path) -> np.ndarray:
    ext = os.path.splitext(str(path))[1].lower()
    if ext in (".pgm", ".ppm", ".pnm"):
        return to_gray(read_pnm(path))
    if ext == ".png":
        return to_gray(_read_png(path))
    raise UnsupportedFormat(f"{path}: unsupported extension {ext!r}")


def write_png(path, img) -> None:
    from PIL import Image

    Image.fromarray(to_uint8(img)).save(path)


def write_rgb_ppm(path, rgb) -> None:
    q = np.rint(np.clip(np.asarray(rgb, dtype=np.float64), 0, 1) * 255).astype(np.uint8)
    h, w, _ = q.shape
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(q.tobytes())
