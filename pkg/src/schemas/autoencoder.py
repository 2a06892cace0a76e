"""
Schemas module.

This module contains Pydantic models for the convolutional autoencoder.

Models:
    - AeArchitecture: Input size, channel count and layer widths of the network.
    - AeConfig: Training hyperparameters.
    - AeModel: The live network parameters as numpy arrays.
    - AeLayerRecord: One parameter array in the persisted model file.
    - AeModelFile: The versioned JSON model file.
"""
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

AE_FORMAT_VERSION = 1

# (name, input width index, output width index, stride, activation).
# Index -1 means the image channel count, 0..2 index into AeArchitecture.widths.
AE_LAYERS = (
    ("enc1", -1, 0, 2, "relu"),
    ("enc2", 0, 1, 2, "relu"),
    ("enc3", 1, 2, 1, "linear"),
    ("dec1", 2, 1, 1, "relu"),
    ("dec2", 1, 0, 1, "relu"),
    ("dec3", 0, -1, 1, "sigmoid"),
)
KERNEL = 3


class AeArchitecture(BaseModel):
    """
    Schema for the network shape.

    Attributes:
        input_size (int): Side of the square input, divisible by 4.
        channels (int): Image channels.
        widths (tuple[int, int, int]): Channels after enc1, enc2 and enc3.
    """
    input_size: int = Field(32, ge=4)
    channels: int = Field(3, ge=1)
    widths: tuple[int, int, int] = (8, 16, 8)
    model_config = ConfigDict(frozen=True)

    @field_validator("input_size")
    @classmethod
    def validate_input_size(cls, v: int):
        if v % 4:
            raise ValueError("input size must be divisible by 4")
        return v

    @property
    def latent_dim(self) -> int:
        return self.widths[2] * (self.input_size // 4) ** 2

    def width(self, index: int) -> int:
        return self.channels if index < 0 else self.widths[index]

    def weight_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        for name, source, target, _, _ in AE_LAYERS:
            shapes[f"{name}.weight"] = (self.width(target), self.width(source), KERNEL, KERNEL)
            shapes[f"{name}.bias"] = (self.width(target),)
        return shapes


DEFAULT_ARCHITECTURE = AeArchitecture()
TINY_ARCHITECTURE = AeArchitecture(input_size=4, channels=2, widths=(2, 3, 2))


class AeConfig(BaseModel):
    """Schema for training hyperparameters."""
    seed: int = Field(0, ge=0)
    learning_rate: float = Field(1e-3, gt=0)
    batch_size: int = Field(16, ge=1)
    epochs: int = Field(50, ge=1)


class AeModel(BaseModel):
    """
    The network parameters.

    Attributes:
        architecture (AeArchitecture): The network shape.
        params (dict[str, np.ndarray]): ``<layer>.weight`` as (out, in, 3, 3) and ``<layer>.bias`` as (out,).
        corpus_hash (str): Hash of the training corpus, empty for an untrained model.
    """
    architecture: AeArchitecture = DEFAULT_ARCHITECTURE
    params: dict[str, np.ndarray]
    corpus_hash: str = ""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    def copy_params(self) -> dict[str, np.ndarray]:
        return {name: value.copy() for name, value in self.params.items()}


class AeLayerRecord(BaseModel):
    """One parameter array, row-major."""
    name: str
    shape: list[int]
    values: list[float]


class AeModelFile(BaseModel):
    """Schema of the persisted autoencoder."""
    format_version: int = AE_FORMAT_VERSION
    architecture: AeArchitecture
    corpus_hash: str = ""
    layers: list[AeLayerRecord]
