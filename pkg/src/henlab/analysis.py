"""Evaluation and focus analysis.

A *predictor* is any callable mapping a list of :class:`PairSample` to
``(offsets (n, 8) in pixels, failed (n,) bool)``. All evaluations draw their
samples from a source with ``numpy.random.default_rng(seed)``, so a report
is a pure function of (predictor, source, n, seed).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import raster
from .baseline import BaselineConfig, estimate_pair
from .datagen import GenConfig, GssConfig, GssSource, PairSource, blur_variant
from .errors import EmptyInput, ShapeMismatch
from .hen.core import HENModel, forward_batch, gap_forward

CSV_COLUMNS = ("name", "n", "mae_px", "corner_mae_px", "failure_rate", "seed")


@dataclass
class EvalReport:
    name: str
    model: str
    n: int
    mae_px: float
    corner_mae_px: float
    failure_rate: float
    seed: int
    errors: np.ndarray | None = field(default=None, repr=False)

    def row(self) -> dict:
        return {"name": f"{self.model}/{self.name}", "n": self.n,
                "mae_px": f"{self.mae_px:.6f}", "corner_mae_px": f"{self.corner_mae_px:.6f}",
                "failure_rate": f"{self.failure_rate:.6f}", "seed": self.seed}


# --------------------------------------------------------------------------- metrics

def _pairs(predictions, targets):
    p = np.asarray(predictions, dtype=np.float64).reshape(-1, 8)
    t = np.asarray(targets, dtype=np.float64).reshape(-1, 8)
    if len(p) == 0:
        raise EmptyInput("no predictions to score")
    if p.shape != t.shape:
        raise ShapeMismatch(f"{len(p)} predictions vs {len(t)} targets")
    return p, t


def mae(predictions, targets) -> float:
    """Mean absolute error over samples and all 8 offset components."""
    p, t = _pairs(predictions, targets)
    return float(np.abs(p - t).mean())


def corner_mae(predictions, targets) -> float:
    """Mean Euclidean corner displacement error."""
    p, t = _pairs(predictions, targets)
    d = (p - t).reshape(-1, 4, 2)
    return float(np.sqrt((d * d).sum(axis=2)).mean())


# --------------------------------------------------------------------------- predictors

class ZeroPredictor:
    label = "identity"

    def __call__(self, samples):
        return np.zeros((len(samples), 8)), np.zeros(len(samples), dtype=bool)


def pool_features(fmap, keep_fraction: float = 1.0) -> np.ndarray:
    """Average the top ``keep_fraction`` of positions per channel, ranked by focus.

    With ``keep_fraction == 1`` this is exactly global average pooling.
    """
    if not 0 < keep_fraction <= 1:
        raise ValueError("keep_fraction must lie in (0, 1]")
    fmap = np.asarray(fmap)
    n, c, h, w = fmap.shape
    k = min(h * w, max(1, math.ceil(keep_fraction * h * w - 1e-9)))
    if k == h * w:
        return gap_forward(fmap)
    flat = fmap.reshape(n, c, h * w)
    focus = normalize_channels(fmap).reshape(n, c, h * w)
    order = np.argsort(-focus, axis=2, kind="stable")[:, :, :k]
    return np.take_along_axis(flat, order, axis=2).mean(axis=2)


class HENPredictor:
    def __init__(self, model: HENModel, keep_fraction: float = 1.0, batch_size: int = 64,
                 label: str | None = None):
        self.model = model
        self.keep_fraction = keep_fraction
        self.batch_size = batch_size
        self.label = label or ("HEN" if keep_fraction == 1 else f"HEN-top{keep_fraction:g}")

    def __call__(self, samples):
        out = []
        for i in range(0, len(samples), self.batch_size):
            x = np.stack([s.input for s in samples[i:i + self.batch_size]])
            _, fmap, _ = forward_batch(self.model, x)
            raw = pool_features(fmap, self.keep_fraction)
            out.append(raw.astype(np.float64) * self.model.loss_scale)
        return np.concatenate(out), np.zeros(len(samples), dtype=bool)


class BaselinePredictor:
    label = "FAST-BRIEF+RANSAC"

    def __init__(self, cfg: BaselineConfig | None = None):
        self.cfg = cfg or BaselineConfig()

    def __call__(self, samples):
        res = [estimate_pair(s, self.cfg) for s in samples]
        return np.stack([r.offsets for r in res]), np.array([r.failed for r in res])


# --------------------------------------------------------------------------- evaluation

def evaluate(predictor, source: PairSource, n: int, seed: int = 0, chunk: int = 256,
             keep_errors: bool = False, name: str | None = None) -> EvalReport:
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    preds, targets, failed = [], [], []
    done = 0
    while done < n:
        batch = [source.sample(rng) for _ in range(min(chunk, n - done))]
        p, f = predictor(batch)
        preds.append(p)
        failed.append(f)
        targets.append(np.stack([s.target for s in batch]))
        done += len(batch)
    p = np.concatenate(preds)
    t = np.concatenate(targets)
    f = np.concatenate(failed)
    return EvalReport(name or source.label, getattr(predictor, "label", "model"), n, mae(p, t),
                      corner_mae(p, t), float(f.mean()), seed,
                      np.abs(p - t).mean(axis=1) if keep_errors else None)


def selected2gap_eval(model: HENModel, source: PairSource, n: int, keep_fraction: float = 0.8,
                      seed: int = 0) -> EvalReport:
    return evaluate(HENPredictor(model, keep_fraction), source, n, seed)


# --------------------------------------------------------------------------- focus maps

def normalize_channels(fmap) -> np.ndarray:
    """Min-max normalize over the last two axes; flat channels become 0."""
    a = np.asarray(fmap, dtype=np.float64)
    lo = a.min(axis=(-2, -1), keepdims=True)
    hi = a.max(axis=(-2, -1), keepdims=True)
    rng = hi - lo
    safe = np.where(rng > 0, rng, 1.0)
    return np.where(rng > 0, (a - lo) / safe, 0.0)


@dataclass
class FocusMap:
    maps: np.ndarray     # (8, H, W) in [0, 1], input resolution
    raw: np.ndarray      # (8, h, w) pre-GAP activations, loss units

    @property
    def channels(self) -> int:
        return self.maps.shape[0]


def upsample_maps(maps, size: int) -> np.ndarray:
    return np.stack([np.clip(raster.resize_bilinear(m, size, size), 0.0, 1.0) for m in maps])


def focus_maps(model: HENModel, sample) -> FocusMap:
    """Each output of a GAP head is the mean of one channel, so each channel
    is that output's activation map."""
    _, fmap, _ = forward_batch(model, sample.input[None])
    raw = fmap[0]
    size = sample.input.shape[-1]
    return FocusMap(upsample_maps(normalize_channels(raw), size), raw)


def overlay(focus: FocusMap, base, alpha: float = 0.5) -> list[np.ndarray]:
    base = np.asarray(base, dtype=np.float64)
    if focus.maps.shape[1:] != base.shape:
        raise ShapeMismatch(f"focus maps {focus.maps.shape[1:]} vs base {base.shape}")
    return [((1.0 - alpha) * base + alpha * m).astype(raster.DTYPE) for m in focus.maps]


def focus_grid(sample, focus: FocusMap, alpha: float = 0.5) -> np.ndarray:
    """Gray strip: source patch, warped patch, then one overlay per channel."""
    tiles = [sample.input[0], sample.input[1]] + overlay(focus, sample.input[0], alpha)
    return np.concatenate(tiles, axis=1)


def focus_grid_rgb(sample, focus: FocusMap, alpha: float = 0.5) -> np.ndarray:
    base = np.asarray(sample.input[0], dtype=np.float64)
    tiles = [np.repeat(sample.input[0][..., None], 3, axis=2),
             np.repeat(sample.input[1][..., None], 3, axis=2)]
    for m in focus.maps:
        rgb = np.stack([base, base, base], axis=2) * (1 - alpha)
        rgb[..., 0] += alpha * m
        rgb[..., 2] += alpha * (1 - m)
        tiles.append(rgb)
    return np.clip(np.concatenate(tiles, axis=1), 0, 1)


# --------------------------------------------------------------------------- edge affinity

def edge_mask(patch, dilation: int = 3) -> np.ndarray:
    """Pixels within ``dilation`` px of an intensity discontinuity."""
    a = np.asarray(patch)
    edge = np.zeros(a.shape, dtype=bool)
    dx = a[:, 1:] != a[:, :-1]
    dy = a[1:, :] != a[:-1, :]
    edge[:, 1:] |= dx
    edge[:, :-1] |= dx
    edge[1:, :] |= dy
    edge[:-1, :] |= dy
    if dilation > 0 and edge.any():
        edge = ndimage.binary_dilation(edge, structure=np.ones((3, 3), bool), iterations=dilation)
    return edge


def edge_affinity(model: HENModel, samples, dilation: int = 3) -> np.ndarray:
    """(n, 8) flags: channel focus is higher on the edge band than elsewhere.

    Samples whose edge band is empty or covers the whole patch get all-False rows.
    """
    out = np.zeros((len(samples), model.out_channels), dtype=bool)
    for i, s in enumerate(samples):
        mask = edge_mask(s.input[0], dilation)
        if not mask.any() or mask.all():
            continue
        f = focus_maps(model, s).maps
        out[i] = f[:, mask].mean(axis=1) > f[:, ~mask].mean(axis=1)
    return out


# --------------------------------------------------------------------------- sweeps

def run_domain_eval(predictors, sources, n: int, seed: int = 0) -> list[EvalReport]:
    return [evaluate(p, s, n, seed) for p in predictors for s in sources]


def run_shape_sweep(model: HENModel, n_shapes, samples_per: int, gen: GenConfig,
                    gss: GssConfig | None = None, seed: int = 0) -> list[EvalReport]:
    gss = gss or GssConfig()
    reports = []
    for k in n_shapes:
        cfg = GssConfig(**{**gss.__dict__, "n_shapes": int(k)})
        reports.append(evaluate(HENPredictor(model), GssSource(cfg, gen), samples_per, seed))
    return reports


def run_blur_sweep(model: HENModel, sources, n: int, seed: int = 0):
    """Clean and blurred report per source; blur hits the source image before pairing."""
    pred = HENPredictor(model)
    return [(evaluate(pred, s, n, seed, name=f"{s.label}/clean"),
             evaluate(pred, blur_variant(s, True), n, seed, name=f"{s.label}/blurred"))
            for s in sources]


def write_csv(reports, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        w.writeheader()
        for r in reports:
            w.writerow(r.row())


# --------------------------------------------------------------------------- corner overlays

def _draw_line(rgb, p, q, color):
    n = int(max(abs(q[0] - p[0]), abs(q[1] - p[1]))) * 2 + 2
    t = np.linspace(0.0, 1.0, n)
    us = np.rint(p[0] + t * (q[0] - p[0])).astype(int)
    vs = np.rint(p[1] + t * (q[1] - p[1])).astype(int)
    ok = (us >= 0) & (us < rgb.shape[1]) & (vs >= 0) & (vs < rgb.shape[0])
    rgb[vs[ok], us[ok]] = color


def corner_overlay(sample, prediction, margin: int | None = None) -> np.ndarray:
    """RGB canvas: source patch framed by ``margin`` px, truth quad blue, prediction red."""
    p = sample.input.shape[-1]
    if margin is None:
        margin = int(np.ceil(np.abs(sample.target).max())) + 2
    canvas = np.zeros((p + 2 * margin, p + 2 * margin, 3))
    canvas[margin:margin + p, margin:margin + p] = sample.input[0][..., None]
    corners = sample.rect.corners() - sample.rect.corners()[0] + margin
    for off, color in ((sample.target, (0.0, 0.0, 1.0)), (prediction, (1.0, 0.0, 0.0))):
        quad = corners + np.asarray(off).reshape(4, 2)
        for i in range(4):
            _draw_line(canvas, quad[i], quad[(i + 1) % 4], color)
    return canvas
