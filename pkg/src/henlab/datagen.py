"""Synthetic supervision: patch pairs, GSS shape images and corpus sources.

Pair sources expose ``draw_image(rng)`` and ``sample(rng)``; ``sample``
always draws the source image first and then the pair from the same
generator, so wrapping a source (for example with :func:`blur_variant`)
leaves the random stream untouched.
"""

from __future__ import annotations

import logging
import math
import os
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import geom, raster
from .errors import ConfigError, EmptyCorpus, HenLabError, ImageTooSmall
from .raster import Rect, ShapeSpec

log = logging.getLogger(__name__)


@dataclass
class GenConfig:
    patch_size: int = 128
    rho: float = 32.0
    border_margin: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.border_margin is None:
            self.border_margin = self.rho
        self.validate()

    @property
    def margin(self) -> int:
        return int(math.ceil(self.border_margin))

    def min_image_side(self) -> int:
        return self.patch_size + 2 * self.margin

    def validate(self):
        if self.patch_size < 2 or self.rho < 0:
            raise ConfigError("patch_size must be >= 2 and rho >= 0")
        if self.patch_size < 2 * self.rho:
            raise ConfigError(f"patch_size {self.patch_size} must be >= 2*rho ({2 * self.rho})")
        if self.border_margin < self.rho:
            raise ConfigError("border_margin must be >= rho")


@dataclass
class PairSample:
    input: np.ndarray          # (2, P, P) float32: source patch, warped patch
    target: np.ndarray         # (8,) float64 corner offsets in pixels
    rect: Rect                 # crop position in the source image
    H: np.ndarray              # crop corners -> perturbed corners, image coordinates

    @property
    def corners(self) -> np.ndarray:
        return self.rect.corners()


@dataclass
class GssConfig:
    image_size: int = 320
    n_shapes: int = 5
    size_range: tuple[float, float] = (16.0, 96.0)
    intensity_levels: tuple[float, ...] = (0.25, 0.5, 0.75, 1.0)
    outline_probability: float = 0.5
    outline_width: float = 2.0
    kinds: tuple[str, ...] = ("square", "triangle", "circle")
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        lo, hi = self.size_range
        if self.n_shapes < 0:
            raise ConfigError("n_shapes must be >= 0")
        if lo < 4 or hi < lo:
            raise ConfigError(f"bad size_range {self.size_range}")
        if not self.intensity_levels or any(not 0 < t <= 1 for t in self.intensity_levels):
            raise ConfigError("intensity_levels must be a non-empty subset of (0, 1]")
        if not 0 <= self.outline_probability <= 1:
            raise ConfigError("outline_probability must lie in [0, 1]")
        if self.image_size < 1:
            raise ConfigError("image_size must be positive")
        for k in self.kinds:
            if k not in ("square", "triangle", "circle"):
                raise ConfigError(f"unknown shape kind {k!r}")


# --------------------------------------------------------------------------- pairs

def generate_pair(img, cfg: GenConfig, rng: np.random.Generator, offsets=None) -> PairSample:
    """Crop, perturb the crop corners, and crop the inversely warped image.

    ``offsets`` forces the corner perturbation (mainly for tests); the crop
    position is still drawn from ``rng``.
    """
    img = np.asarray(img)
    h, w = img.shape
    P, m = cfg.patch_size, cfg.margin
    if w < P + 2 * m or h < P + 2 * m:
        raise ImageTooSmall(f"{w}x{h} image cannot host a {P} patch with margin {m}")
    x = int(rng.integers(m, w - P - m + 1))
    y = int(rng.integers(m, h - P - m + 1))
    rect = Rect(x, y, P)
    delta = rng.uniform(-cfg.rho, cfg.rho, size=8)
    if offsets is not None:
        delta = np.asarray(offsets, dtype=np.float64).reshape(8)
    H = geom.offsets_to_homography(rect.corners(), delta)
    src = raster.crop(img, rect)
    # warped image I' = I under H^-1, so I'(q) = I(H q)
    dst = raster.warp_region(img, H, rect)
    return PairSample(np.stack([src, dst]), delta, rect, H)


# --------------------------------------------------------------------------- GSS images

def random_shape(cfg: GssConfig, rng: np.random.Generator) -> ShapeSpec:
    kind = cfg.kinds[int(rng.integers(len(cfg.kinds)))]
    cu = rng.uniform(0, cfg.image_size - 1)
    cv = rng.uniform(0, cfg.image_size - 1)
    size = rng.uniform(*cfg.size_range)
    rotation = rng.uniform(0.0, 2.0 * math.pi)
    intensity = cfg.intensity_levels[int(rng.integers(len(cfg.intensity_levels)))]
    outlined = rng.random() < cfg.outline_probability
    return ShapeSpec(kind, (cu, cv), size, intensity,
                     "outlined" if outlined else "filled", cfg.outline_width, rotation)


def generate_gss_image(cfg: GssConfig, rng: np.random.Generator, return_shapes: bool = False):
    img = np.zeros((cfg.image_size, cfg.image_size), dtype=raster.DTYPE)
    shapes = [random_shape(cfg, rng) for _ in range(cfg.n_shapes)]
    for s in shapes:
        img = raster.draw_shape(img, s)
    return (img, shapes) if return_shapes else img


# --------------------------------------------------------------------------- sources

class PairSource:
    """Base for anything that can produce :class:`PairSample` values."""

    gen: GenConfig
    label: str = "source"

    def draw_image(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator) -> PairSample:
        return generate_pair(self.draw_image(rng), self.gen, rng)

    def stream(self, rng: np.random.Generator):
        while True:
            yield self.sample(rng)

    def take(self, n: int, seed: int) -> list[PairSample]:
        rng = np.random.default_rng(seed)
        return [self.sample(rng) for _ in range(n)]

    def batch(self, n: int, seed: int, step: int) -> list[PairSample]:
        """Batch for training step ``step``; independent of every other step."""
        rng = np.random.default_rng([seed, step])
        return [self.sample(rng) for _ in range(n)]


def split_of(name: str) -> str:
    """Deterministic train/eval assignment by filename hash parity."""
    return "train" if zlib.crc32(name.encode("utf-8")) % 2 == 0 else "eval"


def list_images(dir_path) -> list[str]:
    if not os.path.isdir(dir_path):
        return []
    names = sorted(n for n in os.listdir(dir_path)
                   if os.path.splitext(n)[1].lower() in raster.SUPPORTED_EXTENSIONS)
    return [os.path.join(dir_path, n) for n in names]


class Corpus(PairSource):
    """Images from a directory, loaded once in lexicographic filename order.

    ``split`` is ``"all"``, ``"train"`` or ``"eval"``; the hash-parity split
    falls back to all images when one side would be empty.
    """

    def __init__(self, dir_path, gen: GenConfig, split: str = "all", label: str | None = None):
        if split not in ("all", "train", "eval"):
            raise ConfigError(f"unknown split {split!r}")
        self.dir_path = str(dir_path)
        self.gen = gen
        self.split = split
        self.label = label or os.path.basename(os.path.normpath(self.dir_path))
        paths = list_images(self.dir_path)
        if split != "all":
            chosen = [p for p in paths if split_of(os.path.basename(p)) == split]
            if chosen:
                paths = chosen
            else:
                log.warning("split %r of %s is empty; using all images", split, self.dir_path)
        self.paths: list[str] = []
        self.images: list[np.ndarray] = []
        side = gen.min_image_side()
        for p in paths:
            try:
                img = raster.ingest_image(p)
            except HenLabError as exc:
                log.warning("skipping %s: %s", p, exc)
                continue
            if img.shape[0] < side or img.shape[1] < side:
                log.warning("skipping %s: %dx%d is smaller than %d", p, img.shape[1], img.shape[0], side)
                continue
            self.paths.append(p)
            self.images.append(img)
        if not self.images:
            raise EmptyCorpus(f"no usable image in {self.dir_path!r}")

    def __len__(self):
        return len(self.images)

    def draw_image(self, rng):
        return self.images[int(rng.integers(len(self.images)))]


class GssSource(PairSource):
    """Fresh GSS image for every sample."""

    def __init__(self, gss: GssConfig, gen: GenConfig, label: str | None = None):
        if gss.image_size < gen.min_image_side():
            raise ImageTooSmall(f"GSS image_size {gss.image_size} < {gen.min_image_side()}")
        self.gss = gss
        self.gen = gen
        self.label = label or f"gss{gss.n_shapes}"

    def draw_image(self, rng):
        return generate_gss_image(self.gss, rng)


class ImageSource(PairSource):
    """Fixed in-memory images (handy for tests and notebooks)."""

    def __init__(self, images, gen: GenConfig, label: str = "images"):
        self.images = [raster.as_gray(i) for i in images]
        if not self.images:
            raise EmptyCorpus("no images given")
        self.gen = gen
        self.label = label

    def draw_image(self, rng):
        return self.images[int(rng.integers(len(self.images)))]


@dataclass
class BlurredSource(PairSource):
    base: PairSource
    gen: GenConfig = field(init=False)
    label: str = field(init=False)

    def __post_init__(self):
        self.gen = self.base.gen
        self.label = f"{self.base.label}+blur"

    def draw_image(self, rng):
        return raster.gaussian_blur_3x3(self.base.draw_image(rng))


def blur_variant(source: PairSource, on: bool) -> PairSource:
    """Blur source images before pair generation when ``on``."""
    return BlurredSource(source) if on else source


def corpus_stream(dir_path, cfg: GenConfig, rng: np.random.Generator, split: str = "all"):
    return Corpus(dir_path, cfg, split=split).stream(rng)


# --------------------------------------------------------------------------- dumps

def dump_samples(samples, out_dir) -> list[str]:
    """Write ``NNNNNN_s.pgm``, ``NNNNNN_d.pgm`` and ``NNNNNN.txt`` per sample."""
    os.makedirs(out_dir, exist_ok=True)
    stems = []
    for i, s in enumerate(samples):
        stem = os.path.join(out_dir, f"{i:06d}")
        raster.write_pgm(stem + "_s.pgm", s.input[0])
        raster.write_pgm(stem + "_d.pgm", s.input[1])
        with open(stem + ".txt", "w") as fh:
            fh.write(" ".join(repr(float(v)) for v in s.target) + "\n")
        stems.append(stem)
    return stems
