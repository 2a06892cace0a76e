"""
Raster service module.

Image primitives shared by every featurizer. An RGB image is a float64 array of shape
(height, width, 3) and a gray image one of shape (height, width); values lie in [0, 1].

Functions:
    - composite_to_rgb: Flattens the alpha channel of an icon onto a gray background.
    - to_grayscale: Luma conversion with the 0.299/0.587/0.114 weights.
    - resize_bilinear: Half-pixel-centred bilinear resampling with edge clamping.
"""
import numpy as np

from src.schemas.icon import IconRaster

RgbImage = np.ndarray
GrayImage = np.ndarray

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


def composite_to_rgb(icon: IconRaster, background: float = 1.0) -> RgbImage:
    """
    Composites an icon onto a uniform gray background.

    :param icon: The decoded icon.
    :type icon: IconRaster
    :param background: Background gray level in [0, 1].
    :type background: float
    :return: The (height, width, 3) image in [0, 1].
    :rtype: RgbImage

    >>> icon = IconRaster(width=1, height=1, pixels=bytes([255, 0, 0, 255]))
    >>> composite_to_rgb(icon, 0.0).tolist()
    [[[1.0, 0.0, 0.0]]]
    """
    rgba = icon.to_array().astype(np.float64) / 255.0
    alpha = rgba[..., 3:4]
    out = alpha * rgba[..., :3] + (1.0 - alpha) * background
    return np.clip(out, 0.0, 1.0)


def to_grayscale(img: RgbImage) -> GrayImage:
    """Weighted channel sum, clipped to [0, 1]."""
    gray = img[..., 0] * LUMA_WEIGHTS[0] + img[..., 1] * LUMA_WEIGHTS[1] + img[..., 2] * LUMA_WEIGHTS[2]
    return np.clip(gray, 0.0, 1.0)


def _axis_weights(src: int, out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Lower index, upper index and fractional weight of each output sample along one axis."""
    position = (np.arange(out) + 0.5) * (src / out) - 0.5
    position = np.clip(position, 0.0, src - 1)
    lower = np.floor(position).astype(np.intp)
    upper = np.minimum(lower + 1, src - 1)
    return lower, upper, position - lower


def resize_bilinear(img: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """
    Bilinear resize. The source coordinate of output index ``i`` is ``(i + 0.5) * src / out - 0.5``,
    clamped to the image. Matching sizes return a copy of the input.

    :param img: A gray (H, W) or RGB (H, W, 3) image.
    :type img: np.ndarray
    :param out_w: Output width, at least 1.
    :type out_w: int
    :param out_h: Output height, at least 1.
    :type out_h: int
    :return: The resized image of the same kind.
    :rtype: np.ndarray

    >>> resize_bilinear(np.array([[0.0, 1.0]]), 4, 1).tolist()
    [[0.0, 0.25, 0.75, 1.0]]
    """
    if out_w < 1 or out_h < 1:
        raise ValueError("output size must be at least 1x1")
    height, width = img.shape[:2]
    if (height, width) == (out_h, out_w):
        return img.copy()
    rows_lo, rows_hi, ty = _axis_weights(height, out_h)
    cols_lo, cols_hi, tx = _axis_weights(width, out_w)
    if img.ndim == 3:
        ty = ty[:, None, None]
        tx = tx[None, :, None]
    else:
        ty = ty[:, None]
        tx = tx[None, :]
    top = img[rows_lo]
    bottom = img[rows_hi]
    # a + t * (b - a) keeps constant inputs exactly constant.
    vertical = top + ty * (bottom - top)
    left = vertical[:, cols_lo]
    right = vertical[:, cols_hi]
    return left + tx * (right - left)
