import math
import unittest

import numpy as np
import pytest

from conftest import checker_icon
from src.schemas.autoencoder import AeConfig, AeArchitecture
from src.schemas.icon import IconRaster
from src.services.autoencoder import ae_init
from src.services.errors import TooSmall, WrongSize
from src.services.features_hog import BINS, CELL, HOG_FEATURE_COUNT, HOG_SIZE, hog_features, prepare_for_hog
from src.services.features_mc import MC_FEATURE_COUNT, grid_bounds, mc_features
from src.services.featurize import feature_columns, featurize_icons, icon_features
from src.services.raster import composite_to_rgb, resize_bilinear, to_grayscale


def mc_oracle(img: np.ndarray) -> list[float]:
    """Straight-loop MC features with population statistics."""
    height, width = img.shape[:2]

    def stats(values):
        mean = sum(values) / len(values)
        return [mean, math.sqrt(sum((v - mean) ** 2 for v in values) / len(values))]

    every = [float(img[r, c, ch]) for r in range(height) for c in range(width) for ch in range(3)]
    out = stats(every)
    for ch in range(3):
        out += stats([float(img[r, c, ch]) for r in range(height) for c in range(width)])
    rows = [(b * height // 3, (b + 1) * height // 3) for b in range(3)]
    cols = [(b * width // 3, (b + 1) * width // 3) for b in range(3)]
    for top, bottom in rows:
        for left, right in cols:
            out += stats([float(img[r, c, ch]) for r in range(top, bottom) for c in range(left, right)
                          for ch in range(3)])
    return out


def hog_oracle(img: np.ndarray) -> list[float]:
    """Straight-loop HOG: edge-replicated central differences, linear voting between bin centres."""
    size = img.shape[0]

    def pixel(r, c):
        return float(img[min(max(r, 0), size - 1), min(max(c, 0), size - 1)])

    cells = size // CELL
    hist = [[0.0] * BINS for _ in range(cells * cells)]
    for r in range(size):
        for c in range(size):
            gx = pixel(r, c + 1) - pixel(r, c - 1)
            gy = pixel(r + 1, c) - pixel(r - 1, c)
            magnitude = math.hypot(gx, gy)
            theta = math.degrees(math.atan2(gy, gx)) % 180.0
            if theta >= 180.0:
                theta = 0.0
            position = theta / (180.0 / BINS) - 0.5
            lower = math.floor(position)
            weight = position - lower
            cell = (r // CELL) * cells + c // CELL
            hist[cell][lower % BINS] += magnitude * (1.0 - weight)
            hist[cell][(lower + 1) % BINS] += magnitude * weight
    out = []
    for cell in hist:
        norm = math.sqrt(sum(v * v for v in cell))
        out += [v / (norm + 1e-12) for v in cell]
    return out


class TestRaster(unittest.TestCase):

    def test_composite_onto_background(self):
        icon = IconRaster(width=2, height=1, pixels=bytes([255, 255, 255, 0, 0, 0, 0, 255]))
        # Calling the function under test
        rgb = composite_to_rgb(icon, background=0.5)
        # Verifying transparent pixels take the background and opaque ones keep their colour
        self.assertEqual(rgb.tolist(), [[[0.5, 0.5, 0.5], [0.0, 0.0, 0.0]]])

    def test_grayscale_weights(self):
        rgb = np.array([[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 1.0, 1.0]]])
        gray = to_grayscale(rgb)
        np.testing.assert_allclose(gray[0], [0.299, 0.587, 0.114, 1.0], atol=1e-12)

    def test_resize_identity_and_constants(self):
        rng = np.random.Generator(np.random.PCG64(0))
        img = rng.random((7, 5, 3))
        self.assertTrue(np.array_equal(resize_bilinear(img, 5, 7), img))
        constant = np.full((9, 4), 0.3)
        self.assertTrue(np.all(resize_bilinear(constant, 24, 24) == 0.3))

    def test_resize_keeps_range(self):
        rng = np.random.Generator(np.random.PCG64(1))
        out = resize_bilinear(rng.random((16, 16, 3)), 32, 32)
        self.assertEqual(out.shape, (32, 32, 3))
        self.assertTrue(out.min() >= 0.0 and out.max() <= 1.0)


def test_grid_bounds_floor_rule():
    assert grid_bounds(3) == [(0, 1), (1, 2), (2, 3)]
    assert grid_bounds(16) == [(0, 5), (5, 10), (10, 16)]


def test_mc_matches_loop_oracle():
    rng = np.random.Generator(np.random.PCG64(11))
    for _ in range(100):
        height, width = rng.integers(3, 20, size=2)
        img = rng.random((height, width, 3))
        features = mc_features(img)
        assert features.shape == (MC_FEATURE_COUNT,)
        np.testing.assert_allclose(features, mc_oracle(img), rtol=0, atol=1e-12)


def test_mc_constant_image():
    features = mc_features(np.full((8, 8, 3), 0.25))
    assert np.allclose(features[0::2], 0.25) and np.allclose(features[1::2], 0.0)


def test_mc_offset_moves_means_only():
    rng = np.random.Generator(np.random.PCG64(14))
    img = rng.uniform(0.0, 0.5, size=(17, 11, 3))
    delta = 0.25
    # Calling the function under test
    base, shifted = mc_features(img), mc_features(img + delta)
    # Verifying every mean moves by delta and every std stays put
    np.testing.assert_allclose(shifted[0::2], base[0::2] + delta, rtol=0, atol=1e-12)
    np.testing.assert_allclose(shifted[1::2], base[1::2], rtol=0, atol=1e-12)


def test_mc_ignores_pixel_order_inside_grid_cells():
    rng = np.random.Generator(np.random.PCG64(15))
    img = rng.random((16, 20, 3))
    shuffled = img.copy()
    for top, bottom in grid_bounds(16):
        for left, right in grid_bounds(20):
            block = shuffled[top:bottom, left:right].reshape(-1, 3)
            shuffled[top:bottom, left:right] = rng.permutation(block).reshape(bottom - top, right - left, 3)
    assert not np.array_equal(shuffled, img)
    np.testing.assert_allclose(mc_features(shuffled), mc_features(img), rtol=0, atol=1e-12)


def test_mc_too_small():
    with pytest.raises(TooSmall):
        mc_features(np.zeros((2, 5, 3)))


def test_hog_matches_loop_oracle():
    rng = np.random.Generator(np.random.PCG64(12))
    for _ in range(100):
        img = rng.random((HOG_SIZE, HOG_SIZE))
        features = hog_features(img)
        assert features.shape == (HOG_FEATURE_COUNT,)
        np.testing.assert_allclose(features, hog_oracle(img), rtol=0, atol=1e-9)


def test_hog_illumination_offset():
    rng = np.random.Generator(np.random.PCG64(13))
    for _ in range(20):
        # Dyadic values keep the offset addition exact.
        img = rng.integers(0, 128, size=(HOG_SIZE, HOG_SIZE)) / 256.0
        shifted = img + 0.375
        assert np.max(np.abs(hog_features(img) - hog_features(shifted))) <= 1e-9


@pytest.mark.parametrize("scale", [0.5, 3.0])
def test_hog_contrast_scale(scale):
    rng = np.random.Generator(np.random.PCG64(16))
    img = rng.random((HOG_SIZE, HOG_SIZE))
    assert np.max(np.abs(hog_features(img) - hog_features(scale * img))) <= 1e-9


def test_hog_cells_are_unit_or_zero():
    img = np.zeros((HOG_SIZE, HOG_SIZE))
    img[:, 12:] = 1.0
    norms = np.linalg.norm(hog_features(img).reshape(-1, BINS), axis=1)
    assert np.all((np.abs(norms - 1.0) < 1e-9) | (norms == 0.0))
    assert np.any(norms == 0.0) and np.any(norms > 0.5)


def test_hog_vertical_edge_votes_horizontal_gradient():
    img = np.zeros((HOG_SIZE, HOG_SIZE))
    img[:, 12:] = 1.0
    cell = hog_features(img).reshape(8, 8, BINS)[0, 4]
    # Gradient angle 0 degrees sits halfway between the 10 and 170 degree bins.
    assert cell[0] == pytest.approx(cell[-1]) and cell[0] > 0.7


def test_hog_wrong_size():
    with pytest.raises(WrongSize):
        hog_features(np.zeros((23, 24)))
    with pytest.raises(WrongSize):
        hog_features(np.zeros((24, 24, 3)))


def test_prepare_for_hog_shapes():
    assert prepare_for_hog(np.zeros((48, 48, 3))).shape == (HOG_SIZE, HOG_SIZE)
    assert prepare_for_hog(np.zeros((5, 7))).shape == (HOG_SIZE, HOG_SIZE)


class TestFeaturize(unittest.TestCase):

    def setUp(self) -> None:
        self.model = ae_init(AeConfig(seed=0))

    def test_feature_count(self):
        # Calling the function under test
        features = icon_features(checker_icon(16), self.model)
        # Verifying MC + HOG + AE = 1114 values
        self.assertEqual(features.shape, (1114,))
        self.assertEqual(len(feature_columns()), 1114)
        self.assertEqual(feature_columns()[0], "mc_00")
        self.assertEqual(feature_columns()[26], "hog_000")
        self.assertEqual(feature_columns()[-1], "ae_511")

    def test_batch_matches_single(self):
        icons = [checker_icon(16), checker_icon(40, alpha=100), checker_icon(3)]
        batch = featurize_icons(icons, self.model)
        for row, icon in zip(batch, icons):
            np.testing.assert_allclose(row, icon_features(icon, self.model), atol=1e-12)

    def test_small_architecture_columns(self):
        model = ae_init(AeConfig(seed=1), AeArchitecture(input_size=8, channels=3, widths=(2, 2, 2)))
        features = icon_features(checker_icon(9), model)
        self.assertEqual(features.shape, (26 + 576 + model.architecture.latent_dim,))
        self.assertEqual(len(feature_columns(model.architecture.latent_dim)), features.shape[0])
