"""
Schemas module.

This module contains Pydantic models for decoded icons.

Models:
    - IconRaster: A decoded RGBA icon image.
    - ExtractionDiagnostics: Tally of decoded and failed icon payloads.
"""
import hashlib

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

MAX_ICON_SIDE = 1024


class IconRaster(BaseModel):
    """
    Schema for a decoded icon.

    Attributes:
        width (int): Width in pixels, 1..1024.
        height (int): Height in pixels, 1..1024.
        pixels (bytes): Row-major RGBA, 8 bits per channel, top row first.
    """
    width: int = Field(ge=1, le=MAX_ICON_SIDE)
    height: int = Field(ge=1, le=MAX_ICON_SIDE)
    pixels: bytes
    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def check_pixel_count(self):
        if len(self.pixels) != self.width * self.height * 4:
            raise ValueError("pixels length must equal width * height * 4")
        return self

    @property
    def area(self) -> int:
        return self.width * self.height

    def to_array(self) -> np.ndarray:
        """The pixels as a (height, width, 4) uint8 array."""
        return np.frombuffer(self.pixels, dtype=np.uint8).reshape(self.height, self.width, 4)

    @classmethod
    def from_array(cls, rgba: np.ndarray) -> "IconRaster":
        rgba = np.ascontiguousarray(rgba, dtype=np.uint8)
        height, width = rgba.shape[:2]
        return cls(width=width, height=height, pixels=rgba.tobytes())

    def content_hash(self) -> str:
        digest = hashlib.sha256()
        digest.update(f"{self.width}x{self.height}:".encode())
        digest.update(self.pixels)
        return digest.hexdigest()


class ExtractionDiagnostics(BaseModel):
    """Counts decoded icons and keeps one reason per failed payload."""
    decoded: int = 0
    failures: list[str] = Field(default_factory=list)

    @property
    def failed(self) -> int:
        return len(self.failures)
