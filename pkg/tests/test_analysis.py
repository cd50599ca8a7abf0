import csv

import numpy as np
import pytest

from henlab import analysis, raster
from henlab.analysis import (FocusMap, HENPredictor, ZeroPredictor, corner_mae, edge_mask, evaluate,
                             focus_maps, mae, normalize_channels, overlay, pool_features)
from henlab.datagen import GenConfig, GssConfig, GssSource, ImageSource
from henlab.errors import EmptyInput, ShapeMismatch
from henlab.hen.core import FAST_CHANNELS, build_hen, gap_forward

from test_raster import smooth_texture

GEN = GenConfig(64, 16)
GSS = GssConfig(image_size=160, size_range=(8.0, 48.0))


@pytest.fixture(scope="module")
def model():
    return build_hen(FAST_CHANNELS, seed=1, loss_scale=16, input_size=64)


@pytest.fixture(scope="module")
def gss_source():
    return GssSource(GSS, GEN)


# ---- metrics

def test_mae_examples():
    t = np.random.default_rng(0).uniform(-32, 32, (10_000, 8))
    assert mae(t, t) == 0
    assert abs(mae(np.zeros_like(t), t) - 16.0) < 0.3
    assert mae([[1, -1, 2, -2, 3, -3, 4, -4]], np.zeros((1, 8))) == 2.5


def test_mae_invariances():
    rng = np.random.default_rng(1)
    p, t = rng.normal(size=(50, 8)), rng.normal(size=(50, 8))
    perm = rng.permutation(50)
    assert mae(p[perm], t[perm]) == pytest.approx(mae(p, t))
    assert mae(2 * t - p, t) == pytest.approx(mae(p, t))


def test_mae_errors():
    with pytest.raises(EmptyInput):
        mae(np.zeros((0, 8)), np.zeros((0, 8)))
    with pytest.raises(ShapeMismatch):
        mae(np.zeros((2, 8)), np.zeros((3, 8)))


def test_corner_mae():
    assert corner_mae([[3, 4] + [0, 0] * 3], np.zeros((1, 8))) == pytest.approx(5 / 4)


# ---- evaluation

def test_zero_predictor_floor():
    src = ImageSource([smooth_texture(200, 200)], GenConfig())
    rep = evaluate(ZeroPredictor(), src, 2000, seed=0)
    assert abs(rep.mae_px - 16.0) < 0.3 and rep.failure_rate == 0 and rep.n == 2000


def test_evaluate_deterministic(model, gss_source):
    a = evaluate(HENPredictor(model), gss_source, 40, seed=3, chunk=16)
    b = evaluate(HENPredictor(model), gss_source, 40, seed=3, chunk=16)
    c = evaluate(HENPredictor(model), gss_source, 40, seed=3, chunk=40)
    assert a.mae_px == b.mae_px and a.corner_mae_px == b.corner_mae_px
    # batch shape only changes float32 rounding
    assert c.mae_px == pytest.approx(a.mae_px, abs=1e-6)


def test_evaluate_rejects_zero_n(gss_source):
    with pytest.raises(ValueError):
        evaluate(ZeroPredictor(), gss_source, 0)


# ---- feature pooling

def test_pool_full_fraction_is_gap():
    f = np.random.default_rng(2).normal(size=(3, 8, 4, 4)).astype(np.float32)
    assert np.array_equal(pool_features(f, 1.0), gap_forward(f))


def test_pool_top_fraction_oracle():
    f = np.random.default_rng(3).normal(size=(2, 8, 5, 5))
    out = pool_features(f, 0.8)
    for n in range(2):
        for c in range(8):
            top = np.sort(f[n, c].ravel())[::-1][:20]
            assert out[n, c] == pytest.approx(top.mean())
    assert np.all(out >= gap_forward(f) - 1e-12)


def test_pool_bad_fraction():
    with pytest.raises(ValueError):
        pool_features(np.zeros((1, 8, 2, 2)), 0.0)


def test_selected2gap_full_fraction_bit_identical(model, gss_source):
    a = evaluate(HENPredictor(model), gss_source, 30, seed=4, keep_errors=True)
    b = analysis.selected2gap_eval(model, gss_source, 30, keep_fraction=1.0, seed=4)
    assert a.mae_px == b.mae_px and a.corner_mae_px == b.corner_mae_px


# ---- focus maps

def test_normalize_flat_and_range():
    f = np.random.default_rng(4).normal(size=(8, 4, 4))
    f[3] = 2.5
    n = normalize_channels(f)
    assert not n[3].any()
    others = np.delete(n, 3, axis=0)
    assert others.min() == 0 and others.max() == 1


def test_upsampled_peak_preserved():
    m = np.zeros((1, 8, 8))
    m[0, 5, 2] = 1.0
    up = analysis.upsample_maps(m, 128)[0]
    v, u = np.unravel_index(np.argmax(up), up.shape)
    assert abs(u - (2.5 * 16 - 0.5)) <= 1 and abs(v - (5.5 * 16 - 0.5)) <= 1


def test_focus_maps_shape_range_and_gap_identity(model, gss_source):
    s = gss_source.take(1, 5)[0]
    fm = focus_maps(model, s)
    assert fm.maps.shape == (8, 64, 64) and fm.channels == 8
    assert fm.maps.min() >= 0 and fm.maps.max() <= 1
    pred, _ = HENPredictor(model)([s])
    assert np.allclose(fm.raw.mean(axis=(1, 2)) * model.loss_scale, pred[0], rtol=1e-6, atol=1e-5)


def test_overlay_blend():
    maps = np.random.default_rng(5).random((8, 16, 16))
    base = np.random.default_rng(6).random((16, 16))
    fm = FocusMap(maps, np.zeros((8, 2, 2)))
    assert np.allclose(overlay(fm, base, 0.0)[0], base, atol=1e-7)
    assert np.allclose(overlay(fm, base, 1.0)[7], maps[7], atol=1e-7)
    assert np.allclose(overlay(fm, base, 0.3)[2], 0.7 * base + 0.3 * maps[2], atol=1e-6)
    with pytest.raises(ShapeMismatch):
        overlay(fm, np.zeros((8, 8)))


def test_focus_grids(model, gss_source, tmp_path):
    s = gss_source.take(1, 6)[0]
    fm = focus_maps(model, s)
    grid = analysis.focus_grid(s, fm)
    assert grid.shape == (64, 640)
    raster.write_pgm(tmp_path / "g.pgm", grid)
    assert raster.ingest_image(tmp_path / "g.pgm").shape == (64, 640)
    assert analysis.focus_grid_rgb(s, fm).shape == (64, 640, 3)


# ---- edge affinity

def test_edge_mask_band():
    img = raster.draw_shape(np.zeros((40, 40), np.float32), raster.ShapeSpec("square", (20, 20), 20, 1.0))
    m0, m3 = edge_mask(img, 0), edge_mask(img, 3)
    assert m0.sum() > 0 and m3.sum() > m0.sum()
    assert not m3[20, 20] and not m3[0, 0] and m3[10, 20]
    assert not edge_mask(np.zeros((8, 8)), 3).any()


def test_edge_affinity_shape(model, gss_source):
    flags = analysis.edge_affinity(model, gss_source.take(5, 7))
    assert flags.shape == (5, 8) and flags.dtype == bool


# ---- sweeps and output

def test_shape_sweep_deterministic(model):
    a = analysis.run_shape_sweep(model, (1, 15), 20, GEN, GSS, seed=1)
    b = analysis.run_shape_sweep(model, (1, 15), 20, GEN, GSS, seed=1)
    assert [r.name for r in a] == ["gss1", "gss15"]
    assert [r.mae_px for r in a] == [r.mae_px for r in b]


def test_blur_sweep_pairs(model):
    src = ImageSource([smooth_texture(120, 120)], GEN, label="tex")
    (clean, blurred), = analysis.run_blur_sweep(model, [src], 10, seed=2)
    assert clean.name == "tex/clean" and blurred.name == "tex/blurred"
    assert clean.mae_px != blurred.mae_px


def test_write_csv(tmp_path, gss_source):
    rep = evaluate(ZeroPredictor(), gss_source, 5, seed=0)
    analysis.write_csv([rep, rep], tmp_path / "t.csv")
    rows = list(csv.DictReader(open(tmp_path / "t.csv")))
    assert list(rows[0]) == list(analysis.CSV_COLUMNS) and len(rows) == 2
    assert rows[0]["name"] == "identity/gss5" and rows[0]["n"] == "5"


def test_corner_overlay(gss_source):
    s = gss_source.take(1, 8)[0]
    img = analysis.corner_overlay(s, s.target + 3)
    m = int(np.ceil(np.abs(s.target).max())) + 2
    assert img.shape == (64 + 2 * m, 64 + 2 * m, 3)
    blue = (img[..., 2] == 1) & (img[..., 0] == 0)
    red = (img[..., 0] == 1) & (img[..., 2] == 0)
    assert blue.any() and red.any()
