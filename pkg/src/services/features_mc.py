"""
Manually created (MC) colour statistics of an icon.

The 26 values are: mean and std over every pixel and channel, mean and std of the red, green and
blue channels, then mean and std of each cell of a 3x3 grid in row-major order with the three
channels pooled. Standard deviations are population values.
"""
import numpy as np

from src.services.errors import TooSmall
from src.services.raster import RgbImage

MC_FEATURE_COUNT = 26
GRID = 3


def grid_bounds(size: int) -> list[tuple[int, int]]:
    """
    Floor-rule band boundaries of a 3-way split.

    >>> grid_bounds(32)
    [(0, 10), (10, 21), (21, 32)]
    """
    return [((band * size) // GRID, ((band + 1) * size) // GRID) for band in range(GRID)]


def mc_features(img: RgbImage) -> np.ndarray:
    """
    Computes the 26 MC features on the image at its original size.

    :param img: RGB image in [0, 1], at least 3x3.
    :type img: RgbImage
    :return: The feature vector.
    :rtype: np.ndarray
    :raises TooSmall: Width or height below 3.
    """
    height, width = img.shape[:2]
    if height < GRID or width < GRID:
        raise TooSmall()
    features = [img.mean(), img.std()]
    for channel in range(3):
        plane = img[..., channel]
        features.extend([plane.mean(), plane.std()])
    for top, bottom in grid_bounds(height):
        for left, right in grid_bounds(width):
            region = img[top:bottom, left:right]
            features.extend([region.mean(), region.std()])
    return np.asarray(features, dtype=np.float64)
