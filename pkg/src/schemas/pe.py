"""
Schemas module.

This module contains Pydantic models for the parsed structure of a PE file.

Models:
    - SectionRecord: One entry of the section table with its raw bytes.
    - ResourceDirectoryRef: Location of the resource directory (data directory index 2).
    - PeSummary: Section table plus resource directory reference.
    - PefileFeatureVector: The nine section features of the ``.text``, ``.data`` and ``.rsrc`` sections.
    - IngestResult: What one input file contributed to the extract command.
"""
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.schemas.icon import IconRaster

SECTION_NAMES = (".text", ".data", ".rsrc")

PEFILE_COLUMNS = [
    "text_entropy", "text_vsize", "text_rawsize",
    "data_entropy", "data_vsize", "data_rawsize",
    "rsrc_entropy", "rsrc_vsize", "rsrc_rawsize",
]


class SectionRecord(BaseModel):
    """
    Schema for a section table entry.

    Attributes:
        name (str): The raw 8-byte section name with trailing NULs removed.
        raw_bytes (bytes): The section's file data, exactly ``size_of_raw_data`` bytes.
        misc_virtual_size (int): The ``Misc_VirtualSize`` header field.
        size_of_raw_data (int): The ``SizeOfRawData`` header field.
        virtual_address (int): The section RVA, used to resolve resource data.
    """
    name: str
    raw_bytes: bytes
    misc_virtual_size: int = Field(ge=0)
    size_of_raw_data: int = Field(ge=0)
    virtual_address: int = Field(0, ge=0)
    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def check_raw_length(self):
        if len(self.raw_bytes) != self.size_of_raw_data:
            raise ValueError("raw_bytes length must equal size_of_raw_data")
        return self

    def contains_rva(self, rva: int) -> bool:
        span = max(self.misc_virtual_size, self.size_of_raw_data)
        return self.virtual_address <= rva < self.virtual_address + span


class ResourceDirectoryRef(BaseModel):
    """Schema for the resource data directory entry."""
    rva: int = Field(ge=0)
    size: int = Field(ge=0)
    model_config = ConfigDict(frozen=True)


class PeSummary(BaseModel):
    """
    Schema for a parsed PE file.

    Attributes:
        sections (list[SectionRecord]): Sections in section-table order.
        resources (ResourceDirectoryRef | None): The resource directory, when the file has one.
        is_valid_pe (bool): Whether the MZ/PE structure parsed cleanly.
    """
    sections: list[SectionRecord]
    resources: ResourceDirectoryRef | None = None
    is_valid_pe: bool = True
    model_config = ConfigDict(frozen=True)

    def section(self, name: str) -> SectionRecord | None:
        """First section with exactly this name, or None."""
        for record in self.sections:
            if record.name == name:
                return record
        return None

    def read_rva(self, rva: int, size: int) -> bytes | None:
        """Reads ``size`` bytes at an RVA from the section raw data, or None when unmapped."""
        for record in self.sections:
            if record.contains_rva(rva):
                start = rva - record.virtual_address
                if start + size > len(record.raw_bytes):
                    return None
                return record.raw_bytes[start:start + size]
        return None


class PefileFeatureVector(BaseModel):
    """
    Schema for the nine PEfile features, ordered (.text, .data, .rsrc) x (entropy, vsize, rawsize).
    """
    text_entropy: float = Field(0.0, ge=0.0, le=8.0)
    text_vsize: float = Field(0.0, ge=0.0)
    text_rawsize: float = Field(0.0, ge=0.0)
    data_entropy: float = Field(0.0, ge=0.0, le=8.0)
    data_vsize: float = Field(0.0, ge=0.0)
    data_rawsize: float = Field(0.0, ge=0.0)
    rsrc_entropy: float = Field(0.0, ge=0.0, le=8.0)
    rsrc_vsize: float = Field(0.0, ge=0.0)
    rsrc_rawsize: float = Field(0.0, ge=0.0)
    model_config = ConfigDict(frozen=True)

    def values(self) -> list[float]:
        return [getattr(self, column) for column in PEFILE_COLUMNS]


class IngestResult(BaseModel):
    """
    Schema for the outcome of ingesting one input file.

    Attributes:
        name (str): Input file name.
        key (str): SHA-256 of the file contents.
        kind (str): ``pe`` or ``ico``.
        features (PefileFeatureVector | None): Section features, PE files only.
        icon (IconRaster | None): The primary icon, when one decoded.
        icons_decoded (int): Icon payloads decoded.
        icons_failed (int): Icon payloads that failed to decode.
        error (str | None): Why the file produced no output.
    """
    name: str
    key: str
    kind: str = "pe"
    features: PefileFeatureVector | None = None
    icon: IconRaster | None = None
    icons_decoded: int = 0
    icons_failed: int = 0
    error: str | None = None

    @property
    def processed(self) -> bool:
        return self.error is None
