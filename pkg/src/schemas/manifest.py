"""
Schemas module.

This module contains Pydantic models for the manifests written next to command outputs.

Models:
    - ManifestFailure: One input that could not be processed.
    - Manifest: Summary of a command run.
"""
from pydantic import BaseModel, Field


class ManifestFailure(BaseModel):
    """
    Schema for a per-input failure.

    Attributes:
        name (str): File name or row key.
        reason (str): Why it was skipped.
    """
    name: str
    reason: str


class Manifest(BaseModel):
    """
    Schema for a manifest. Contains no timestamps so reruns write identical files.

    Attributes:
        command (str): The subcommand.
        inputs (int): Inputs seen.
        processed (int): Inputs that produced output rows.
        icons_decoded (int): Icon payloads decoded.
        icons_failed (int): Icon payloads that failed to decode.
        corpus_hash (str): Hash of the produced data, when meaningful.
        outputs (list[str]): Files written, relative to the output directory.
        failures (list[ManifestFailure]): Skipped inputs, sorted by name.
    """
    command: str
    inputs: int = 0
    processed: int = 0
    icons_decoded: int = 0
    icons_failed: int = 0
    corpus_hash: str = ""
    outputs: list[str] = Field(default_factory=list)
    failures: list[ManifestFailure] = Field(default_factory=list)
