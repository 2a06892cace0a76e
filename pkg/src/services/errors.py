"""
Error types raised by the pipeline services.

Every class carries a default ``detail`` taken from :mod:`src.conf.messages`; callers may
pass a more specific text. Command handlers turn any :class:`PipelineError` into exit code 2.
"""
from src.conf import messages


class PipelineError(Exception):
    """Base class for domain failures."""
    detail = "Pipeline error"

    def __init__(self, detail: str | None = None):
        self.detail = detail or self.detail
        super().__init__(self.detail)


class BadInput(PipelineError):
    detail = "Bad input"


class NotPe(PipelineError):
    detail = messages.NOT_PE


class Truncated(PipelineError):
    detail = messages.TRUNCATED


class MalformedHeader(PipelineError):
    detail = messages.MALFORMED_HEADER


class DecodeError(PipelineError):
    detail = messages.MALFORMED_ICO


class UnsupportedBpp(DecodeError):
    detail = messages.UNSUPPORTED_BPP


class MalformedDib(DecodeError):
    detail = messages.MALFORMED_DIB


class MalformedPng(DecodeError):
    detail = messages.MALFORMED_PNG


class EmptyList(PipelineError):
    detail = messages.EMPTY_ICON_LIST


class TooSmall(PipelineError):
    detail = messages.IMAGE_TOO_SMALL


class WrongSize(PipelineError):
    detail = messages.WRONG_HOG_SIZE


class ShapeMismatch(PipelineError):
    detail = messages.SHAPE_MISMATCH


class EmptyDataset(PipelineError):
    detail = messages.EMPTY_DATASET


class NonFiniteLoss(PipelineError):
    detail = messages.NON_FINITE_LOSS


class TooFewRows(PipelineError):
    detail = messages.TOO_FEW_ROWS


class KTooLarge(PipelineError):
    detail = messages.K_TOO_LARGE


class DegenerateLabels(PipelineError):
    detail = messages.DEGENERATE_LABELS


class ModelEmpty(PipelineError):
    detail = messages.MODEL_EMPTY


class OutOfRange(PipelineError):
    detail = messages.OUT_OF_RANGE


class KeyMismatch(PipelineError):
    detail = messages.KEY_MISMATCH


class SingleClass(PipelineError):
    detail = messages.SINGLE_CLASS


class TooFewPerClass(PipelineError):
    detail = messages.TOO_FEW_PER_CLASS


class NonFinite(PipelineError):
    detail = messages.NON_FINITE


class ModelFormatError(PipelineError):
    detail = messages.MODEL_FORMAT
