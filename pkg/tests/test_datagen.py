import numpy as np
import pytest
from scipy import ndimage

from henlab import geom, raster
from henlab.datagen import (Corpus, GenConfig, GssConfig, GssSource, ImageSource, blur_variant,
                            corpus_stream, dump_samples, generate_gss_image, generate_pair, split_of)
from henlab.errors import ConfigError, EmptyCorpus, ImageTooSmall

from test_raster import smooth_texture


@pytest.fixture(scope="module")
def texture():
    return smooth_texture(200, 220, seed=3)


def test_zero_offsets_identical_patches(texture):
    s = generate_pair(texture, GenConfig(), np.random.default_rng(0), offsets=np.zeros(8))
    assert np.array_equal(s.input[0], s.input[1])
    assert np.array_equal(s.target, np.zeros(8))


def test_offsets_bounded(texture):
    rng = np.random.default_rng(1)
    t = np.stack([generate_pair(texture, GenConfig(), rng).target for _ in range(500)])
    assert np.abs(t).max() <= 32


def test_pair_consistency_oracle(texture):
    rng = np.random.default_rng(2)
    for _ in range(10):
        s = generate_pair(texture, GenConfig(64, 16), rng)
        c = s.corners
        assert np.abs(geom.project_points(s.H, c) - (c + s.target.reshape(4, 2))).max() < 1e-9
        assert np.array_equal(s.input[0], raster.crop(texture, s.rect))
        # I_d(q) = I(H q) at every patch pixel, resampled independently
        vs, us = np.mgrid[0:64, 0:64]
        q = np.stack([us.ravel() + s.rect.x, vs.ravel() + s.rect.y], axis=1).astype(float)
        p = geom.project_points(s.H, q)
        ref = ndimage.map_coordinates(texture.astype(np.float64), [p[:, 1], p[:, 0]], order=1,
                                      mode="constant", cval=0.0).reshape(64, 64)
        assert np.abs(ref - s.input[1]).max() < 1e-6


def test_crop_stays_inside_margin(texture):
    rng = np.random.default_rng(4)
    cfg = GenConfig(64, 16)
    for _ in range(200):
        r = generate_pair(texture, cfg, rng).rect
        assert r.x >= 16 and r.y >= 16
        assert r.x + 64 + 16 <= texture.shape[1] and r.y + 64 + 16 <= texture.shape[0]


def test_image_too_small():
    with pytest.raises(ImageTooSmall):
        generate_pair(np.zeros((100, 300), np.float32), GenConfig(), np.random.default_rng(0))


@pytest.mark.parametrize("kw", [dict(patch_size=32, rho=20), dict(rho=-1), dict(rho=8, border_margin=4)])
def test_gen_config_validation(kw):
    with pytest.raises(ConfigError):
        GenConfig(**kw)


def test_mean_abs_target_is_half_rho(texture):
    src = ImageSource([texture], GenConfig())
    t = np.stack([s.target for s in src.take(10_000, 5)])
    assert abs(np.abs(t).mean() - 16.0) < 0.3


# ---- GSS

def test_gss_zero_and_single_square():
    assert not generate_gss_image(GssConfig(n_shapes=0), np.random.default_rng(0)).any()
    cfg = GssConfig(n_shapes=1, kinds=("square",), intensity_levels=(0.5,), outline_probability=0.0)
    img = generate_gss_image(cfg, np.random.default_rng(1))
    assert set(np.unique(img).tolist()) == {0.0, 0.5}


def test_gss_more_shapes_more_coverage():
    one = [np.count_nonzero(generate_gss_image(GssConfig(n_shapes=1), np.random.default_rng(s)))
           for s in range(100)]
    many = [np.count_nonzero(generate_gss_image(GssConfig(n_shapes=15), np.random.default_rng(s)))
            for s in range(100)]
    assert np.mean(many) > np.mean(one)


def test_gss_shapes_reported():
    img, shapes = generate_gss_image(GssConfig(n_shapes=7), np.random.default_rng(3), return_shapes=True)
    assert len(shapes) == 7 and img.shape == (320, 320)


# ---- corpora

def write_corpus(path, n, size=(200, 200), seed=0):
    path.mkdir(exist_ok=True)
    for i in range(n):
        raster.write_pgm(path / f"img_{i:03d}.pgm", smooth_texture(*size, seed=seed + i))
    return path


def test_corpus_single_image(tmp_path):
    d = write_corpus(tmp_path / "one", 1)
    img = raster.ingest_image(d / "img_000.pgm")
    stream = corpus_stream(d, GenConfig(64, 16), np.random.default_rng(0))
    for _ in range(5):
        s = next(stream)
        assert np.array_equal(s.input[0], raster.crop(img, s.rect))


def test_corpus_determinism(tmp_path):
    d = write_corpus(tmp_path / "c", 4)
    a = Corpus(d, GenConfig(64, 16)).take(20, 9)
    b = Corpus(d, GenConfig(64, 16)).take(20, 9)
    for x, y in zip(a, b):
        assert np.array_equal(x.input, y.input) and np.array_equal(x.target, y.target)


def test_corpus_skips_small_and_bad(tmp_path, caplog):
    d = write_corpus(tmp_path / "m", 2)
    raster.write_pgm(d / "tiny.pgm", np.zeros((10, 10), np.float32))
    (d / "broken.png").write_bytes(b"not a png")
    (d / "notes.txt").write_text("ignored")
    c = Corpus(d, GenConfig(64, 16))
    assert len(c) == 2


def test_empty_corpus(tmp_path):
    with pytest.raises(EmptyCorpus):
        Corpus(tmp_path, GenConfig())
    with pytest.raises(EmptyCorpus):
        Corpus(tmp_path / "missing", GenConfig())
    write_corpus(tmp_path / "small", 2, size=(50, 50))
    with pytest.raises(EmptyCorpus):
        Corpus(tmp_path / "small", GenConfig())


def test_split_is_stable_and_disjoint(tmp_path):
    d = write_corpus(tmp_path / "s", 12)
    tr = Corpus(d, GenConfig(64, 16), split="train")
    ev = Corpus(d, GenConfig(64, 16), split="eval")
    assert set(tr.paths).isdisjoint(ev.paths)
    assert len(tr) + len(ev) == 12
    assert split_of("img_003.pgm") == split_of("img_003.pgm")


def test_training_batches_are_per_step(texture):
    src = ImageSource([texture], GenConfig(64, 16))
    a = src.batch(4, 0, 7)
    b = src.batch(4, 0, 7)
    c = src.batch(4, 0, 8)
    assert all(np.array_equal(x.target, y.target) for x, y in zip(a, b))
    assert not np.array_equal(a[0].target, c[0].target)


# ---- blur

def test_blur_off_is_passthrough(texture):
    src = ImageSource([texture], GenConfig(64, 16))
    assert blur_variant(src, False) is src


def test_blur_on_constant_is_noop():
    src = ImageSource([np.full((120, 120), 0.6, np.float32)], GenConfig(64, 16))
    a = src.take(5, 1)
    b = blur_variant(src, True).take(5, 1)
    for x, y in zip(a, b):
        assert np.allclose(x.input, y.input, atol=1e-6) and np.array_equal(x.target, y.target)


def test_blur_lowers_gss_gradients():
    src = GssSource(GssConfig(image_size=160, size_range=(8, 48)), GenConfig(64, 16))
    clean = src.take(30, 2)
    blurred = blur_variant(src, True).take(30, 2)
    g = lambda ss: np.mean([raster.sobel_magnitude(s.input[0]).mean() for s in ss])
    assert g(blurred) < g(clean)


def test_dump_samples(tmp_path, texture):
    samples = ImageSource([texture], GenConfig(64, 16)).take(3, 0)
    stems = dump_samples(samples, tmp_path / "pairs")
    assert len(stems) == 3
    back = np.array(open(stems[1] + ".txt").read().split(), float)
    assert np.array_equal(back, samples[1].target)
    assert raster.ingest_image(stems[1] + "_d.pgm").shape == (64, 64)
