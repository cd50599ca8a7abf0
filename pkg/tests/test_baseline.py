import numpy as np
import pytest

from henlab import geom, raster
from henlab.baseline import (BaselineConfig, Keypoint, RansacConfig, describe, describe_many,
                             detect_corners, estimate_offsets, estimate_pair, hamming_matrix,
                             match_descriptors, ransac_homography)
from henlab.datagen import GenConfig, ImageSource, generate_pair
from henlab.errors import InsufficientMatches, NoConsensus, TooCloseToBorder
from henlab.raster import ShapeSpec

from test_raster import smooth_texture


def square_image():
    return raster.draw_shape(np.zeros((64, 64), np.float32), ShapeSpec("square", (32, 32), 24, 1.0))


def known_h(rng):
    return geom.offsets_to_homography(geom.square_corners(0, 0, 128), rng.uniform(-16, 16, 8))


def corner_error(H_est, H_true, size=128):
    c = geom.square_corners(0, 0, size)
    return np.abs(geom.project_points(H_est, c) - geom.project_points(H_true, c)).max()


# ---- detection

def test_constant_image_has_no_corners():
    assert detect_corners(np.full((64, 64), 0.5, np.float32), 100) == []


def test_square_corners_found():
    kps = detect_corners(square_image(), 50)
    expected = np.array([[20, 20], [43, 20], [43, 43], [20, 43]], float)
    found = np.array([[k.u, k.v] for k in kps])
    for e in expected:
        assert np.linalg.norm(found - e, axis=1).min() <= 2


@pytest.mark.parametrize("max_n", [1, 5, 50])
def test_detect_respects_max_n(max_n):
    img = smooth_texture(128, 128, seed=1)
    kps = detect_corners(img, max_n)
    assert len(kps) <= max_n
    r = [k.response for k in kps]
    assert r == sorted(r, reverse=True)


# ---- description and matching

def test_descriptor_determinism_and_offset_invariance():
    img = smooth_texture(96, 96, seed=2)
    kp = Keypoint(40.0, 50.0, 0.0)
    d = describe(img, kp)
    assert d.shape == (32,) and d.dtype == np.uint8
    assert np.array_equal(d, describe(img, kp))
    assert np.array_equal(d, describe(img + 0.1, kp))


def test_descriptor_translation():
    img = smooth_texture(96, 96, seed=3)
    shifted = np.zeros_like(img)
    shifted[5:, 7:] = img[:-5, :-7]
    a = describe(img, Keypoint(40, 40, 0))
    b = describe(shifted, Keypoint(47, 45, 0))
    assert hamming_matrix(a[None], b[None])[0, 0] == 0


def test_descriptor_border():
    with pytest.raises(TooCloseToBorder):
        describe(smooth_texture(64, 64), Keypoint(3, 30, 0))


def test_matching_rules():
    rng = np.random.default_rng(0)
    a = rng.integers(0, 256, (40, 32), dtype=np.uint8)
    assert match_descriptors(a, a) == [(i, i) for i in range(40)]
    assert match_descriptors(a, a, ratio=0.0) == []
    b = rng.integers(0, 256, (40, 32), dtype=np.uint8)
    assert len(match_descriptors(a, b)) <= 4


def test_hamming_oracle():
    rng = np.random.default_rng(1)
    a = rng.integers(0, 256, (5, 32), dtype=np.uint8)
    b = rng.integers(0, 256, (7, 32), dtype=np.uint8)
    ref = np.array([[np.unpackbits(x ^ y).sum() for y in b] for x in a])
    assert np.array_equal(hamming_matrix(a, b), ref)


# ---- RANSAC

def test_ransac_exact():
    rng = np.random.default_rng(2)
    H = known_h(rng)
    src = rng.uniform(0, 128, (30, 2))
    est, mask = ransac_homography(src, geom.project_points(H, src))
    assert mask.all() and corner_error(est, H) < 1e-6


def test_ransac_half_outliers():
    ok = 0
    for trial in range(100):
        rng = np.random.default_rng(1000 + trial)
        H = known_h(rng)
        src = rng.uniform(0, 128, (30, 2))
        dst = geom.project_points(H, src)
        bad = rng.permutation(30)[:15]
        dst[bad] = rng.uniform(-16, 144, (15, 2))
        try:
            est, _ = ransac_homography(src, dst, RansacConfig(seed=trial))
        except NoConsensus:
            continue
        ok += corner_error(est, H) < 0.5
    assert ok >= 99


def test_ransac_errors():
    with pytest.raises(InsufficientMatches):
        ransac_homography(np.zeros((3, 2)), np.zeros((3, 2)))
    rng = np.random.default_rng(3)
    with pytest.raises(NoConsensus):
        ransac_homography(rng.uniform(0, 100, (12, 2)), rng.uniform(0, 100, (12, 2)),
                          RansacConfig(iterations=200))


# ---- end to end

def test_identity_pair_recovered():
    img = smooth_texture(200, 200, seed=4)
    s = generate_pair(img, GenConfig(), np.random.default_rng(0), offsets=np.zeros(8))
    res = estimate_pair(s)
    assert not res.failed and np.abs(res.offsets).mean() < 0.5


def test_textureless_pair_fails_to_identity():
    flat = np.full((128, 128), 0.4, np.float32)
    res = estimate_offsets(flat, flat)
    assert res.failed and np.array_equal(res.offsets, np.zeros(8))


def test_textured_pairs_recover_offsets():
    src = ImageSource([smooth_texture(260, 260, seed=s) for s in range(3)], GenConfig())
    errs = []
    for s in src.take(10, 5):
        res = estimate_pair(s, BaselineConfig())
        errs.append(np.abs(res.offsets - s.target).mean())
    assert np.median(errs) < 2.0


def test_describe_many_empty():
    assert describe_many(smooth_texture(64, 64), []).shape == (0, 32)
