"""
Icon feature assembly: MC (26) ++ HOG (576) ++ AE (512) = 1114 values per icon.
"""
import numpy as np

from src.schemas.autoencoder import AeModel
from src.schemas.icon import IconRaster
from src.services.autoencoder import ae_encode_batch
from src.services.features_hog import HOG_FEATURE_COUNT, hog_features, prepare_for_hog
from src.services.features_mc import MC_FEATURE_COUNT, mc_features
from src.services.raster import composite_to_rgb

MC_COLUMNS = [f"mc_{index:02d}" for index in range(MC_FEATURE_COUNT)]
HOG_COLUMNS = [f"hog_{index:03d}" for index in range(HOG_FEATURE_COUNT)]


def ae_columns(latent_dim: int = 512) -> list[str]:
    return [f"ae_{index:03d}" for index in range(latent_dim)]


def feature_columns(latent_dim: int = 512) -> list[str]:
    return MC_COLUMNS + HOG_COLUMNS + ae_columns(latent_dim)


def icon_features(icon: IconRaster, model: AeModel, background: float = 1.0) -> np.ndarray:
    """
    The concatenated feature vector of one icon.

    :param icon: The decoded icon.
    :type icon: IconRaster
    :param model: Trained autoencoder.
    :type model: AeModel
    :param background: Gray level the alpha channel is composited onto.
    :type background: float
    :return: MC, HOG and AE features in that order.
    :rtype: np.ndarray
    :raises TooSmall: The icon is smaller than 3x3.
    """
    return featurize_icons([icon], model, background)[0]


def featurize_icons(icons: list[IconRaster], model: AeModel, background: float = 1.0) -> np.ndarray:
    """Feature rows for several icons, encoding them through the autoencoder as one batch."""
    images = [composite_to_rgb(icon, background) for icon in icons]
    handcrafted = [np.concatenate([mc_features(image), hog_features(prepare_for_hog(image))]) for image in images]
    latents = ae_encode_batch(model, images)
    return np.hstack([np.array(handcrafted), latents])
