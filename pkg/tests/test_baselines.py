import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from clbpcrowd.baselines import (
    GLCMParams,
    glcm,
    glcm_averaged,
    haralick_features,
    lbp_histogram,
    quantize,
)
from clbpcrowd.descriptor import CLBPParams, frame_codes
from clbpcrowd.errors import RegionTooSmall
from clbpcrowd.imaging import GrayImage, Rect

import oracles


def test_lbp_constant_cell_single_bin():
    img = GrayImage(np.full((10, 10), 50))
    hist = lbp_histogram(img, Rect(0, 0, 10, 10))
    assert hist[8] == 1.0 and hist.sum() == 1.0


def test_lbp_is_sign_marginal_of_joint():
    rng = np.random.default_rng(4)
    img = GrayImage(rng.integers(0, 256, size=(24, 24)))
    params = CLBPParams()
    cell = Rect(2, 3, 16, 16)
    k = params.code_bins
    joint = frame_codes(img, params).histogram(cell).reshape(k, k, 2)
    np.testing.assert_allclose(lbp_histogram(img, cell, params), joint.sum(axis=(1, 2)), atol=1e-12)


def test_lbp_matches_brute_force():
    rng = np.random.default_rng(6)
    img = GrayImage(rng.integers(0, 256, size=(16, 16)))
    for r, p in [(1, 8), (2, 8), (1, 4)]:
        ours = lbp_histogram(img, Rect(0, 0, 16, 16), CLBPParams(r, p))
        ref = oracles.naive_lbp_histogram(img.pixels, (0, 0, 16, 16), r, p)
        np.testing.assert_allclose(ours, ref, atol=1e-12)


def test_glcm_constant_region():
    m = glcm(GrayImage(np.full((6, 6), 200)), Rect(0, 0, 6, 6))
    level = 200 * 8 // 256
    assert m[level, level] == 1.0 and np.count_nonzero(m) == 1


def test_glcm_hand_count():
    img = GrayImage(np.array([[0, 255]]))
    raw = glcm(img, Rect(0, 0, 2, 1), GLCMParams((1, 0), 2, symmetric=False))
    assert raw.tolist() == [[0.0, 1.0], [0.0, 0.0]]
    sym = glcm(img, Rect(0, 0, 2, 1), GLCMParams((1, 0), 2, symmetric=True))
    assert sym.tolist() == [[0.0, 0.5], [0.5, 0.0]]


@pytest.mark.parametrize("offset", [(1, 0), (0, 1), (1, 1), (1, -1), (-2, 1)])
@pytest.mark.parametrize("symmetric", [True, False])
def test_glcm_matches_double_loop(offset, symmetric):
    rng = np.random.default_rng(1)
    img = GrayImage(rng.integers(0, 256, size=(9, 11)))
    ours = glcm(img, Rect(0, 0, 11, 9), GLCMParams(offset, 8, symmetric))
    ref = oracles.naive_glcm(img.pixels, 8, *offset, symmetric=symmetric)
    np.testing.assert_allclose(ours, ref, atol=1e-15)


def test_glcm_region_is_respected():
    rng = np.random.default_rng(1)
    pix = rng.integers(0, 256, size=(20, 20))
    sub = glcm(GrayImage(pix), Rect(4, 5, 8, 7))
    np.testing.assert_allclose(sub, oracles.naive_glcm(pix[5:12, 4:12], 8, 1, 0))


def test_glcm_errors():
    with pytest.raises(RegionTooSmall):
        glcm(GrayImage(np.zeros((4, 4))), Rect(0, 0, 1, 4))
    with pytest.raises(ValueError):
        GLCMParams((0, 0))
    with pytest.raises(ValueError):
        GLCMParams(levels=1)


def test_quantize_edges():
    assert quantize(np.array([0, 31, 32, 255]), 8).tolist() == [0, 0, 1, 7]


def test_haralick_degenerate():
    p = np.zeros((8, 8))
    p[3, 3] = 1.0
    contrast, energy, entropy, homogeneity, corr = haralick_features(p)
    assert (contrast, energy, entropy, homogeneity, corr) == (0.0, 1.0, 0.0, 1.0, 0.0)


@pytest.mark.parametrize("k", [2, 4, 8])
def test_haralick_uniform_closed_form(k):
    p = np.full((k, k), 1.0 / k ** 2)
    _, energy, entropy, _, corr = haralick_features(p)
    assert energy == pytest.approx(1.0 / k ** 2, abs=1e-12)
    assert entropy == pytest.approx(2 * math.log(k), abs=1e-12)
    assert corr == pytest.approx(0.0, abs=1e-12)


def test_haralick_perfect_correlation():
    p = np.eye(4) / 4
    assert haralick_features(p)[4] == pytest.approx(1.0)
    assert haralick_features(np.fliplr(p))[4] == pytest.approx(-1.0)


images = arrays(np.uint8, st.tuples(st.integers(3, 16), st.integers(3, 16)))


@given(img=images, levels=st.sampled_from([2, 4, 8, 16, 32]),
       offset=st.sampled_from([(1, 0), (0, 1), (1, 1), (1, -1)]))
def test_glcm_gray_inversion_reverses_axes(img, levels, offset):
    h, w = img.shape
    params = GLCMParams(offset, levels)
    a = glcm(GrayImage(img), Rect(0, 0, w, h), params)
    b = glcm(GrayImage(255 - img), Rect(0, 0, w, h), params)
    np.testing.assert_allclose(b, a[::-1, ::-1], atol=1e-15)


@given(img=images, levels=st.integers(2, 16))
def test_glcm_sums_to_one_and_haralick_bounds(img, levels):
    h, w = img.shape
    m = glcm_averaged(GrayImage(img), Rect(0, 0, w, h), levels)
    assert abs(m.sum() - 1.0) <= 1e-9
    contrast, energy, entropy, homogeneity, corr = haralick_features(m)
    assert 0.0 < energy <= 1.0 + 1e-12
    assert entropy >= 0.0 and contrast >= 0.0
    assert 0.0 < homogeneity <= 1.0 + 1e-12
    assert -1.0 <= corr <= 1.0
