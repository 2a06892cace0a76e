"""
PE ingest service module.

This module parses PE files natively, computes the nine section features and extracts the
embedded icons, and decodes standalone ICO files.

Functions:
    - parse_pe: Parses the headers, section table and resource directory location.
    - section_entropy: Shannon entropy of a byte sequence in bits per byte.
    - pefile_features: The nine ``.text``/``.data``/``.rsrc`` features.
    - extract_icons: Decodes the icons referenced by the RT_GROUP_ICON resources.
    - parse_ico: Decodes every image of a standalone ICO file.
    - decode_icon_image: Decodes one BMP DIB or PNG icon payload to RGBA.
    - select_primary_icon: Picks the largest icon.
    - ingest_file: Features and primary icon of one PE or ICO input file.
"""
import hashlib
import io
import struct

import numpy as np
from loguru import logger
from PIL import Image, UnidentifiedImageError

from src.schemas.icon import ExtractionDiagnostics, IconRaster, MAX_ICON_SIDE
from src.schemas.pe import (
    IngestResult,
    PeSummary,
    PefileFeatureVector,
    ResourceDirectoryRef,
    SectionRecord,
    SECTION_NAMES,
)
from src.services.errors import (
    DecodeError,
    EmptyList,
    MalformedDib,
    MalformedHeader,
    MalformedPng,
    NotPe,
    Truncated,
    UnsupportedBpp,
)

PE32_MAGIC = 0x10B
PE32_PLUS_MAGIC = 0x20B
RESOURCE_DIRECTORY_INDEX = 2
RT_ICON = 3
RT_GROUP_ICON = 14
PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
ICO_MAGIC = b"\x00\x00\x01\x00"
SUPPORTED_BPP = (1, 4, 8, 24, 32)

COFF_HEADER_SIZE = 20
SECTION_HEADER_SIZE = 40
# Offset of NumberOfRvaAndSizes, the data directories follow it.
RVA_COUNT_OFFSET = {PE32_MAGIC: 92, PE32_PLUS_MAGIC: 108}


def _u16(data: bytes, offset: int) -> int:
    return struct.unpack_from("<H", data, offset)[0]


def _u32(data: bytes, offset: int) -> int:
    return struct.unpack_from("<I", data, offset)[0]


def parse_pe(data: bytes) -> PeSummary:
    """
    Parses a PE file.

    MZ header -> e_lfanew -> PE signature -> COFF header -> optional header -> section table,
    and the resource data directory (index 2) of the optional header.

    :param data: The file contents.
    :type data: bytes
    :return: The section table and resource directory reference.
    :rtype: PeSummary
    :raises NotPe: Missing MZ or PE signature.
    :raises Truncated: A header or section extends past the end of the file.
    :raises MalformedHeader: Inconsistent header fields.
    """
    if len(data) < 2 or data[:2] != b"MZ":
        raise NotPe()
    if len(data) < 0x40:
        raise Truncated("DOS header extends past end of file")
    e_lfanew = _u32(data, 0x3C)
    if e_lfanew + 4 > len(data):
        raise Truncated("PE signature offset points past end of file")
    if data[e_lfanew:e_lfanew + 4] != b"PE\x00\x00":
        raise NotPe()

    coff = e_lfanew + 4
    if coff + COFF_HEADER_SIZE > len(data):
        raise Truncated("COFF header extends past end of file")
    number_of_sections = _u16(data, coff + 2)
    size_of_optional_header = _u16(data, coff + 16)

    optional = coff + COFF_HEADER_SIZE
    if optional + size_of_optional_header > len(data):
        raise Truncated("optional header extends past end of file")
    resources = None
    if size_of_optional_header:
        if size_of_optional_header < 2:
            raise MalformedHeader("optional header too small to hold its magic")
        magic = _u16(data, optional)
        if magic not in RVA_COUNT_OFFSET:
            raise MalformedHeader(f"unknown optional header magic 0x{magic:x}")
        count_offset = RVA_COUNT_OFFSET[magic]
        if size_of_optional_header < count_offset + 4:
            raise MalformedHeader("optional header too small for its data directories")
        rva_count = _u32(data, optional + count_offset)
        directories = optional + count_offset + 4
        if directories + 8 * rva_count > optional + size_of_optional_header:
            raise MalformedHeader("data directories overflow the optional header")
        if rva_count > RESOURCE_DIRECTORY_INDEX:
            entry = directories + 8 * RESOURCE_DIRECTORY_INDEX
            rva, size = _u32(data, entry), _u32(data, entry + 4)
            if rva and size:
                resources = ResourceDirectoryRef(rva=rva, size=size)

    table = optional + size_of_optional_header
    if table + number_of_sections * SECTION_HEADER_SIZE > len(data):
        raise Truncated("section table extends past end of file")
    sections = []
    for index in range(number_of_sections):
        header = table + index * SECTION_HEADER_SIZE
        name = data[header:header + 8].rstrip(b"\x00").decode("latin-1")
        virtual_size = _u32(data, header + 8)
        virtual_address = _u32(data, header + 12)
        raw_size = _u32(data, header + 16)
        raw_pointer = _u32(data, header + 20)
        if raw_size and raw_pointer + raw_size > len(data):
            raise Truncated(f"section {name!r} data extends past end of file")
        raw = data[raw_pointer:raw_pointer + raw_size] if raw_size else b""
        sections.append(SectionRecord(name=name, raw_bytes=raw, misc_virtual_size=virtual_size,
                                      size_of_raw_data=raw_size, virtual_address=virtual_address))
    return PeSummary(sections=sections, resources=resources, is_valid_pe=True)


def section_entropy(data: bytes) -> float:
    """
    Shannon entropy of the byte histogram, base 2, in bits per byte.

    >>> section_entropy(b"")
    0.0
    >>> section_entropy(bytes(range(256)))
    8.0
    """
    if not data:
        return 0.0
    counts = np.bincount(np.frombuffer(data, dtype=np.uint8), minlength=256)
    p = counts[counts > 0] / len(data)
    h = float(-np.sum(p * np.log2(p)))
    if h <= 0.0:
        return 0.0
    return min(h, 8.0)


def pefile_features(pe: PeSummary) -> PefileFeatureVector:
    """
    The nine PEfile features. A missing section contributes zeros; duplicates use the first match.

    :param pe: A parsed PE file.
    :type pe: PeSummary
    :return: The feature vector.
    :rtype: PefileFeatureVector
    """
    values = {}
    for name in SECTION_NAMES:
        prefix = name.lstrip(".")
        record = pe.section(name)
        if record is None:
            values.update({f"{prefix}_entropy": 0.0, f"{prefix}_vsize": 0.0, f"{prefix}_rawsize": 0.0})
            continue
        values[f"{prefix}_entropy"] = section_entropy(record.raw_bytes)
        values[f"{prefix}_vsize"] = float(record.misc_virtual_size)
        values[f"{prefix}_rawsize"] = float(record.size_of_raw_data)
    return PefileFeatureVector(**values)


class _ResourceReader:
    """Walks an IMAGE_RESOURCE_DIRECTORY tree inside the section data."""

    def __init__(self, pe: PeSummary):
        self.pe = pe
        self.base = pe.resources.rva
        self.size = pe.resources.size

    def _read(self, offset: int, size: int) -> bytes:
        blob = self.pe.read_rva(self.base + offset, size)
        if blob is None:
            raise MalformedHeader("resource directory points outside the mapped sections")
        return blob

    def entries(self, offset: int) -> list[tuple[tuple[int, int | str], int, bool]]:
        """Directory entries as ((is_named, id or name), target offset, is_subdirectory)."""
        header = self._read(offset, 16)
        count = _u16(header, 12) + _u16(header, 14)
        table = self._read(offset + 16, 8 * count)
        result = []
        for index in range(count):
            name_field = _u32(table, 8 * index)
            target = _u32(table, 8 * index + 4)
            if name_field & 0x80000000:
                key = (1, self._name(name_field & 0x7FFFFFFF))
            else:
                key = (0, name_field & 0xFFFF)
            result.append((key, target & 0x7FFFFFFF, bool(target & 0x80000000)))
        return result

    def _name(self, offset: int) -> str:
        length = _u16(self._read(offset, 2), 0)
        return self._read(offset + 2, 2 * length).decode("utf-16-le", errors="replace")

    def leaf_data(self, offset: int, is_directory: bool, depth: int = 0) -> bytes:
        """Follows the first language entry down to the data bytes."""
        while is_directory:
            if depth > 4:
                raise MalformedHeader("resource tree too deep")
            children = self.entries(offset)
            if not children:
                raise MalformedHeader("empty resource directory")
            _, offset, is_directory = children[0]
            depth += 1
        entry = self._read(offset, 16)
        data_rva, data_size = _u32(entry, 0), _u32(entry, 4)
        blob = self.pe.read_rva(data_rva, data_size)
        if blob is None:
            raise MalformedHeader("resource data outside the mapped sections")
        return blob

    def resources_of_type(self, type_id: int) -> list[tuple[tuple[int, int | str], bytes]]:
        for key, offset, is_directory in self.entries(0):
            if key == (0, type_id) and is_directory:
                items = []
                for name_key, child, child_is_directory in self.entries(offset):
                    items.append((name_key, self.leaf_data(child, child_is_directory)))
                return sorted(items, key=lambda item: item[0])
        return []


def _decode_into(payload: bytes, icons: list[IconRaster], diagnostics: ExtractionDiagnostics, label: str):
    try:
        icons.append(decode_icon_image(payload))
        diagnostics.decoded += 1
    except DecodeError as err:
        logger.debug(f"icon {label} skipped: {err.detail}")
        diagnostics.failures.append(f"{label}: {err.detail}")


def extract_icons(pe: PeSummary, diagnostics: ExtractionDiagnostics | None = None) -> list[IconRaster]:
    """
    Decodes the icons of every RT_GROUP_ICON directory, ordered by (group id, entry index).

    A PE without a resource directory yields an empty list. Payloads that fail to decode are
    skipped and tallied in ``diagnostics``. When the file has RT_ICON entries but no group,
    the bare icons are decoded in id order.

    :param pe: A parsed PE file.
    :type pe: PeSummary
    :param diagnostics: Optional tally updated in place.
    :type diagnostics: ExtractionDiagnostics | None
    :return: The decoded icons.
    :rtype: list[IconRaster]
    """
    diagnostics = diagnostics if diagnostics is not None else ExtractionDiagnostics()
    if pe.resources is None:
        return []
    reader = _ResourceReader(pe)
    try:
        icon_payloads = dict(reader.resources_of_type(RT_ICON))
        groups = reader.resources_of_type(RT_GROUP_ICON)
    except (MalformedHeader, struct.error) as err:
        diagnostics.failures.append(f"resource tree: {err}")
        logger.warning(f"unreadable resource tree: {err}")
        return []

    icons: list[IconRaster] = []
    if not groups:
        for (_, icon_id), payload in sorted(icon_payloads.items()):
            _decode_into(payload, icons, diagnostics, f"icon {icon_id}")
        return icons

    for (_, group_id), directory in groups:
        if len(directory) < 6:
            diagnostics.failures.append(f"group {group_id}: truncated GRPICONDIR")
            continue
        count = _u16(directory, 4)
        for index in range(count):
            entry = 6 + 14 * index
            if entry + 14 > len(directory):
                diagnostics.failures.append(f"group {group_id} entry {index}: truncated GRPICONDIRENTRY")
                break
            icon_id = _u16(directory, entry + 12)
            payload = icon_payloads.get((0, icon_id))
            if payload is None:
                diagnostics.failures.append(f"group {group_id} entry {index}: missing RT_ICON {icon_id}")
                continue
            _decode_into(payload, icons, diagnostics, f"group {group_id} entry {index}")
    return icons


def parse_ico(data: bytes, diagnostics: ExtractionDiagnostics | None = None) -> list[IconRaster]:
    """
    Decodes every image of a standalone ICO file, in directory order.

    :param data: The ICO file contents.
    :type data: bytes
    :param diagnostics: Optional tally updated in place.
    :type diagnostics: ExtractionDiagnostics | None
    :return: The decoded icons.
    :rtype: list[IconRaster]
    :raises DecodeError: The ICONDIR header is invalid.
    """
    diagnostics = diagnostics if diagnostics is not None else ExtractionDiagnostics()
    if len(data) < 6 or data[:4] != ICO_MAGIC:
        raise DecodeError()
    count = _u16(data, 4)
    if 6 + 16 * count > len(data):
        raise DecodeError("ICONDIR entries extend past end of file")
    icons: list[IconRaster] = []
    for index in range(count):
        entry = 6 + 16 * index
        size, offset = _u32(data, entry + 8), _u32(data, entry + 12)
        if offset + size > len(data):
            diagnostics.failures.append(f"image {index}: payload extends past end of file")
            continue
        _decode_into(data[offset:offset + size], icons, diagnostics, f"image {index}")
    return icons


def _decode_png(payload: bytes) -> IconRaster:
    try:
        with Image.open(io.BytesIO(payload)) as image:
            image.load()
            rgba = np.asarray(image.convert("RGBA"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as err:
        raise MalformedPng(f"{MalformedPng.detail}: {err}")
    height, width = rgba.shape[:2]
    if not (1 <= width <= MAX_ICON_SIDE and 1 <= height <= MAX_ICON_SIDE):
        raise MalformedPng(f"PNG size {width}x{height} out of range")
    return IconRaster.from_array(rgba)


def _decode_dib(payload: bytes) -> IconRaster:
    if len(payload) < 40:
        raise MalformedDib("payload shorter than BITMAPINFOHEADER")
    header_size = _u32(payload, 0)
    width, stored_height = struct.unpack_from("<ii", payload, 4)
    bpp = _u16(payload, 14)
    compression = _u32(payload, 16)
    colors_used = _u32(payload, 32)
    if header_size < 40 or header_size > len(payload):
        raise MalformedDib(f"bad header size {header_size}")
    if bpp not in SUPPORTED_BPP:
        raise UnsupportedBpp(f"{UnsupportedBpp.detail}: {bpp}")
    if compression not in (0, 3) or (compression == 3 and bpp != 32):
        raise MalformedDib(f"unsupported compression {compression}")
    height = stored_height // 2
    if not (1 <= width <= MAX_ICON_SIDE and 1 <= height <= MAX_ICON_SIDE):
        raise MalformedDib(f"DIB size {width}x{stored_height} out of range")

    offset = header_size
    if compression == 3 and header_size == 40:
        # BI_BITFIELDS: three DWORD colour masks follow a bare BITMAPINFOHEADER.
        offset += 12
    palette = None
    if bpp <= 8:
        palette_size = colors_used or (1 << bpp)
        if palette_size > (1 << bpp) or offset + 4 * palette_size > len(payload):
            raise MalformedDib("palette extends past end of payload")
        bgrx = np.frombuffer(payload, dtype=np.uint8, count=4 * palette_size, offset=offset).reshape(-1, 4)
        palette = bgrx[:, [2, 1, 0]]
        offset += 4 * palette_size

    xor_stride = ((width * bpp + 31) // 32) * 4
    and_stride = ((width + 31) // 32) * 4
    needed = offset + xor_stride * height + (and_stride * height if bpp < 32 else 0)
    if needed > len(payload):
        raise MalformedDib("pixel data extends past end of payload")

    rows = np.frombuffer(payload, dtype=np.uint8, count=xor_stride * height, offset=offset).reshape(height, xor_stride)
    rgba = np.empty((height, width, 4), dtype=np.uint8)
    if bpp == 32:
        bgra = rows[:, :width * 4].reshape(height, width, 4)
        rgba[...] = bgra[..., [2, 1, 0, 3]]
    elif bpp == 24:
        bgr = rows[:, :width * 3].reshape(height, width, 3)
        rgba[..., :3] = bgr[..., ::-1]
        rgba[..., 3] = 255
    else:
        if bpp == 8:
            indices = rows[:, :width]
        elif bpp == 4:
            nibbles = np.stack([rows >> 4, rows & 0x0F], axis=-1).reshape(height, -1)
            indices = nibbles[:, :width]
        else:
            indices = np.unpackbits(rows, axis=1)[:, :width]
        if int(indices.max()) >= len(palette):
            raise MalformedDib("palette index out of range")
        rgba[..., :3] = palette[indices]
        rgba[..., 3] = 255

    if bpp < 32:
        mask_offset = offset + xor_stride * height
        mask_rows = np.frombuffer(payload, dtype=np.uint8, count=and_stride * height,
                                  offset=mask_offset).reshape(height, and_stride)
        transparent = np.unpackbits(mask_rows, axis=1)[:, :width].astype(bool)
        rgba[..., 3][transparent] = 0
    # DIB rows are stored bottom-up.
    return IconRaster.from_array(rgba[::-1])


def decode_icon_image(payload: bytes) -> IconRaster:
    """
    Decodes one icon payload, either a PNG stream or a BMP DIB with the ICO doubled-height convention.

    :param payload: The RT_ICON or ICO image bytes.
    :type payload: bytes
    :return: The RGBA raster.
    :rtype: IconRaster
    :raises UnsupportedBpp: The DIB bit depth is not 1, 4, 8, 24 or 32.
    :raises MalformedDib: The DIB header or data is inconsistent.
    :raises MalformedPng: The PNG stream cannot be decoded.
    """
    if payload[:8] == PNG_SIGNATURE:
        return _decode_png(payload)
    return _decode_dib(payload)


def select_primary_icon(icons: list[IconRaster]) -> IconRaster:
    """
    The icon with the largest area; the earliest wins a tie.

    :raises EmptyList: No icons given.
    """
    if not icons:
        raise EmptyList()
    best = icons[0]
    for icon in icons[1:]:
        if icon.area > best.area:
            best = icon
    return best


def ingest_file(name: str, data: bytes) -> IngestResult:
    """
    Everything the extract command keeps from one input file.

    ICO files contribute their primary icon only. PE files contribute the nine section features
    and, when one decodes, their primary icon. Failures are returned, never raised.

    :param name: File name, used in diagnostics only.
    :type name: str
    :param data: The file contents.
    :type data: bytes
    :return: The result keyed by the SHA-256 of ``data``.
    :rtype: IngestResult
    """
    key = hashlib.sha256(data).hexdigest()
    diagnostics = ExtractionDiagnostics()
    if data[:4] == ICO_MAGIC:
        try:
            icons = parse_ico(data, diagnostics)
        except DecodeError as err:
            return IngestResult(name=name, key=key, kind="ico", error=err.detail)
        if not icons:
            return IngestResult(name=name, key=key, kind="ico", icons_failed=diagnostics.failed,
                                error="ICO file holds no decodable image")
        return IngestResult(name=name, key=key, kind="ico", icon=select_primary_icon(icons),
                            icons_decoded=diagnostics.decoded, icons_failed=diagnostics.failed)
    try:
        pe = parse_pe(data)
    except (NotPe, Truncated, MalformedHeader) as err:
        return IngestResult(name=name, key=key, error=err.detail)
    icons = extract_icons(pe, diagnostics)
    if diagnostics.failures:
        logger.warning(f"{name}: {diagnostics.failed} icon payload(s) skipped")
    return IngestResult(name=name, key=key, features=pefile_features(pe),
                        icon=select_primary_icon(icons) if icons else None,
                        icons_decoded=diagnostics.decoded, icons_failed=diagnostics.failed)
