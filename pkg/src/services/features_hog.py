"""
Histogram of oriented gradients on a 24x24 grayscale icon.

Cells are 3x3 pixels (an 8x8 grid), each holding 9 unsigned orientation bins of 20 degrees
centred at 10, 30, ..., 170. There is no block normalization; every cell vector is L2
normalized on its own.
"""
import numpy as np

from src.services.errors import WrongSize
from src.services.raster import GrayImage, resize_bilinear, to_grayscale

HOG_SIZE = 24
CELL = 3
BINS = 9
BIN_WIDTH = 180.0 / BINS
EPSILON = 1e-12
HOG_FEATURE_COUNT = (HOG_SIZE // CELL) ** 2 * BINS


def prepare_for_hog(img: np.ndarray) -> GrayImage:
    """
    Converts an RGB image to grayscale and resizes it to 24x24. Gray input skips the conversion.

    :param img: RGB (H, W, 3) or gray (H, W) image.
    :type img: np.ndarray
    :return: The 24x24 gray image.
    :rtype: GrayImage
    """
    gray = to_grayscale(img) if img.ndim == 3 else img
    return resize_bilinear(gray, HOG_SIZE, HOG_SIZE)


def gradients(img: GrayImage) -> tuple[np.ndarray, np.ndarray]:
    """Central differences [-1, 0, 1] with edge replication."""
    padded = np.pad(img, 1, mode="edge")
    gx = padded[1:-1, 2:] - padded[1:-1, :-2]
    gy = padded[2:, 1:-1] - padded[:-2, 1:-1]
    return gx, gy


def hog_features(img: GrayImage) -> np.ndarray:
    """
    Computes the 576 HOG features.

    :param img: A 24x24 gray image.
    :type img: GrayImage
    :return: Cell histograms flattened row-major, 9 bins per cell.
    :rtype: np.ndarray
    :raises WrongSize: Input is not 24x24.
    """
    if img.ndim != 2 or img.shape != (HOG_SIZE, HOG_SIZE):
        raise WrongSize()
    gx, gy = gradients(img)
    magnitude = np.hypot(gx, gy)
    theta = np.mod(np.degrees(np.arctan2(gy, gx)), 180.0)
    theta[theta >= 180.0] = 0.0

    position = theta / BIN_WIDTH - 0.5
    lower = np.floor(position)
    upper_weight = position - lower
    lower_bin = lower.astype(np.intp) % BINS
    upper_bin = (lower_bin + 1) % BINS

    cells = HOG_SIZE // CELL
    cell_index = (np.arange(HOG_SIZE) // CELL)
    cell_id = cell_index[:, None] * cells + cell_index[None, :]
    histogram = np.zeros(cells * cells * BINS)
    np.add.at(histogram, (cell_id * BINS + lower_bin).ravel(), (magnitude * (1.0 - upper_weight)).ravel())
    np.add.at(histogram, (cell_id * BINS + upper_bin).ravel(), (magnitude * upper_weight).ravel())

    histogram = histogram.reshape(cells * cells, BINS)
    norms = np.linalg.norm(histogram, axis=1, keepdims=True)
    return (histogram / (norms + EPSILON)).ravel()
