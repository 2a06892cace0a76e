"""
Synthetic fixture service module.

Encoders for the icon payload formats, a minimal PE32 writer with a resource tree, and a seeded
labelled corpus generator. Icon templates carry the label signal; section entropies carry a
weaker one.

Functions:
    - encode_dib: ICO-style DIB (doubled height, AND mask) at 1/4/8/24/32 bpp.
    - encode_png: PNG stream through Pillow.
    - encode_ico: ICONDIR container around encoded payloads.
    - build_pe: PE32 image with the given sections and an optional icon resource tree.
    - icon_templates: Five 32x32 RGBA templates.
    - perturb_icon: Colour shift and optional box blur.
    - synthetic_corpus: Seeded labelled PE files.
"""
import io
import struct

import numpy as np
from PIL import Image
from pydantic import BaseModel
from scipy.ndimage import uniform_filter

from src.schemas.icon import IconRaster

TEMPLATE_SIZE = 32
# Probability that a sample drawn with template i is malware.
TEMPLATE_MALWARE_RATE = (0.9, 0.9, 0.1, 0.1, 0.5)
RT_ICON = 3
RT_GROUP_ICON = 14
LANG_EN_US = 0x409
FILE_ALIGNMENT = 0x200
SECTION_ALIGNMENT = 0x1000
OPTIONAL_HEADER_SIZE = 224


def _align(value: int, alignment: int) -> int:
    return (value + alignment - 1) // alignment * alignment


def _pack_rows(rows: np.ndarray, bits: int) -> bytes:
    """Packs (height, width) indices or bits into DIB rows with 4-byte stride, bottom row first."""
    height, width = rows.shape
    stride = ((width * bits + 31) // 32) * 4
    out = bytearray()
    for row in rows[::-1]:
        if bits == 8:
            packed = row.astype(np.uint8).tobytes()
        elif bits == 4:
            padded = np.append(row, 0) if width % 2 else row
            packed = ((padded[0::2] << 4) | padded[1::2]).astype(np.uint8).tobytes()
        else:
            packed = np.packbits(row.astype(np.uint8)).tobytes()
        out += packed + bytes(stride - len(packed))
    return bytes(out)


def encode_dib(icon: IconRaster, bpp: int = 32) -> bytes:
    """
    Encodes an icon as a BITMAPINFOHEADER DIB with the ICO doubled height and an AND mask.

    Pixels with alpha 0 set the mask bit. Paletted depths need at most ``2 ** bpp`` distinct colours.

    :param icon: The icon.
    :type icon: IconRaster
    :param bpp: 1, 4, 8, 24 or 32.
    :type bpp: int
    :return: The payload bytes.
    :rtype: bytes
    """
    rgba = icon.to_array()
    height, width = rgba.shape[:2]
    palette = b""
    colours = 0
    if bpp == 32:
        bgra = rgba[..., [2, 1, 0, 3]]
        xor = b"".join(bgra[row].tobytes() for row in range(height - 1, -1, -1))
    elif bpp == 24:
        stride = ((width * 24 + 31) // 32) * 4
        bgr = rgba[..., [2, 1, 0]]
        xor = b"".join(bgr[row].tobytes().ljust(stride, b"\x00") for row in range(height - 1, -1, -1))
    elif bpp in (1, 4, 8):
        unique, indices = np.unique(rgba[..., :3].reshape(-1, 3), axis=0, return_inverse=True)
        if len(unique) > 1 << bpp:
            raise ValueError(f"{len(unique)} colours do not fit a {bpp}-bpp palette")
        colours = len(unique)
        palette = b"".join(bytes((b, g, r, 0)) for r, g, b in unique.tolist())
        xor = _pack_rows(indices.reshape(height, width), bpp)
    else:
        raise ValueError(f"cannot encode {bpp} bpp")
    mask = _pack_rows((rgba[..., 3] == 0).astype(np.uint8), 1)
    header = struct.pack("<IiiHHIIiiII", 40, width, height * 2, 1, bpp, 0, len(xor) + len(mask), 0, 0, colours, 0)
    return header + palette + xor + mask


def encode_png(icon: IconRaster) -> bytes:
    buffer = io.BytesIO()
    Image.fromarray(icon.to_array(), "RGBA").save(buffer, format="PNG")
    return buffer.getvalue()


def encode_ico(payloads: list[tuple[IconRaster, bytes]]) -> bytes:
    """ICO file holding each (icon, encoded payload) pair in order."""
    offset = 6 + 16 * len(payloads)
    entries, blobs = b"", b""
    for icon, payload in payloads:
        entries += struct.pack("<BBBBHHII", icon.width % 256, icon.height % 256, 0, 0, 1, 32, len(payload), offset)
        blobs += payload
        offset += len(payload)
    return struct.pack("<HHH", 0, 1, len(payloads)) + entries + blobs


class SectionSpec(BaseModel):
    """A section for :func:`build_pe`; ``virtual_size`` defaults to the data length."""
    name: str
    data: bytes
    virtual_size: int | None = None


def _resource_section(payloads: list[bytes], base_rva: int, with_group: bool) -> bytes:
    n = len(payloads)
    types = [RT_ICON] + ([RT_GROUP_ICON] if with_group else [])
    root_size = 16 + 8 * len(types)
    icon_dir = root_size
    group_dir = icon_dir + 16 + 8 * n
    lang_dirs = group_dir + (16 + 8 if with_group else 0)
    leaves = n + (1 if with_group else 0)
    data_entries = lang_dirs + 24 * leaves
    blobs_start = _align(data_entries + 16 * leaves, 4)

    group = struct.pack("<HHH", 0, 1, n)
    for index, payload in enumerate(payloads):
        width = height = 0
        if payload[:4] == b"\x28\x00\x00\x00":
            width, double = struct.unpack_from("<ii", payload, 4)
            height = double // 2
        group += struct.pack("<BBBBHHIH", width % 256, height % 256, 0, 0, 1, 32, len(payload), index + 1)
    blobs = list(payloads) + ([group] if with_group else [])

    out = bytearray()
    out += struct.pack("<IIHHHH", 0, 0, 0, 0, 0, len(types))
    out += struct.pack("<II", RT_ICON, 0x80000000 | icon_dir)
    if with_group:
        out += struct.pack("<II", RT_GROUP_ICON, 0x80000000 | group_dir)
    out += struct.pack("<IIHHHH", 0, 0, 0, 0, 0, n)
    for index in range(n):
        out += struct.pack("<II", index + 1, 0x80000000 | (lang_dirs + 24 * index))
    if with_group:
        out += struct.pack("<IIHHHH", 0, 0, 0, 0, 0, 1)
        out += struct.pack("<II", 1, 0x80000000 | (lang_dirs + 24 * n))
    for leaf in range(leaves):
        out += struct.pack("<IIHHHH", 0, 0, 0, 0, 0, 1)
        out += struct.pack("<II", LANG_EN_US, data_entries + 16 * leaf)
    offset = blobs_start
    for blob in blobs:
        out += struct.pack("<IIII", base_rva + offset, len(blob), 0, 0)
        offset = _align(offset + len(blob), 4)
    out += bytes(blobs_start - len(out))
    for blob in blobs:
        out += blob
        out += bytes(_align(len(out), 4) - len(out))
    return bytes(out)


def build_pe(sections: list[SectionSpec], icon_payloads: list[bytes] | None = None, with_group: bool = True) -> bytes:
    """
    Writes a PE32 image. With ``icon_payloads`` an ``.rsrc`` section is appended holding one
    RT_ICON per payload (ids from 1) and, when ``with_group``, RT_GROUP_ICON 1 listing them.

    :param sections: Sections in table order.
    :type sections: list[SectionSpec]
    :param icon_payloads: Encoded icon images.
    :type icon_payloads: list[bytes] | None
    :param with_group: Write the RT_GROUP_ICON directory.
    :type with_group: bool
    :return: The file bytes.
    :rtype: bytes
    """
    sections = list(sections)
    count = len(sections) + (1 if icon_payloads else 0)
    table_offset = 0x40 + 4 + 20 + OPTIONAL_HEADER_SIZE
    headers_size = _align(table_offset + 40 * count, FILE_ALIGNMENT)

    rva = SECTION_ALIGNMENT
    layout = []
    for spec in sections:
        vsize = spec.virtual_size if spec.virtual_size is not None else len(spec.data)
        layout.append((spec.name, spec.data, vsize, rva))
        rva += _align(max(vsize, len(spec.data), 1), SECTION_ALIGNMENT)
    resource = (0, 0)
    if icon_payloads:
        data = _resource_section(icon_payloads, rva, with_group)
        layout.append((".rsrc", data, len(data), rva))
        resource = (rva, len(data))
        rva += _align(len(data), SECTION_ALIGNMENT)

    table = b""
    body = b""
    pointer = headers_size
    for name, data, vsize, section_rva in layout:
        raw_pointer = pointer if data else 0
        table += struct.pack("<8sIIIIIIHHI", name.encode("latin-1")[:8], vsize, section_rva, len(data), raw_pointer,
                             0, 0, 0, 0, 0x40000040)
        if data:
            chunk = data + bytes(_align(len(data), FILE_ALIGNMENT) - len(data))
            body += chunk
            pointer += len(chunk)

    dos = bytearray(0x40)
    dos[0:2] = b"MZ"
    struct.pack_into("<I", dos, 0x3C, 0x40)
    coff = struct.pack("<HHIIIHH", 0x14C, count, 0, 0, 0, OPTIONAL_HEADER_SIZE, 0x0102)
    optional = bytearray(OPTIONAL_HEADER_SIZE)
    struct.pack_into("<H", optional, 0, 0x10B)
    struct.pack_into("<I", optional, 28, 0x400000)
    struct.pack_into("<II", optional, 32, SECTION_ALIGNMENT, FILE_ALIGNMENT)
    struct.pack_into("<II", optional, 56, rva, headers_size)
    struct.pack_into("<H", optional, 68, 2)
    struct.pack_into("<I", optional, 92, 16)
    struct.pack_into("<II", optional, 96 + 8 * 2, *resource)
    head = bytes(dos) + b"PE\x00\x00" + coff + bytes(optional) + table
    return head + bytes(headers_size - len(head)) + body


def _disc(size: int, cy: float, cx: float, radius: float) -> np.ndarray:
    rows, cols = np.mgrid[0:size, 0:size]
    return (rows - cy) ** 2 + (cols - cx) ** 2 <= radius ** 2


def icon_templates() -> list[np.ndarray]:
    """Five visually distinct opaque 32x32 RGBA templates, colours within 40..215."""
    size = TEMPLATE_SIZE
    rows, cols = np.mgrid[0:size, 0:size]
    masks = [
        rows > cols,
        _disc(size, 15.5, 15.5, 10.0),
        (rows // 4) % 2 == 0,
        ((rows // 8) + (cols // 8)) % 2 == 0,
        (np.abs(rows - 15.5) < 4) | (np.abs(cols - 15.5) < 4),
    ]
    colours = [
        ((200, 60, 50), (50, 60, 190)),
        ((215, 200, 60), (40, 120, 60)),
        ((60, 180, 200), (200, 100, 160)),
        ((90, 90, 90), (210, 210, 210)),
        ((160, 60, 200), (120, 200, 80)),
    ]
    templates = []
    for mask, (foreground, background) in zip(masks, colours):
        rgba = np.empty((size, size, 4), dtype=np.uint8)
        rgba[..., :3] = np.where(mask[..., None], foreground, background)
        rgba[..., 3] = 255
        templates.append(rgba)
    return templates


def perturb_icon(rgba: np.ndarray, rng: np.random.Generator, max_shift: int = 12, blur_rate: float = 0.3) -> np.ndarray:
    """
    Shifts every colour channel by an integer in [-max_shift, max_shift] and, with probability
    ``blur_rate``, applies a 3x3 box blur. Alpha is unchanged.
    """
    rgb = rgba[..., :3].astype(np.float64) + rng.integers(-max_shift, max_shift + 1, size=3)
    if rng.random() < blur_rate:
        rgb = uniform_filter(rgb, size=(3, 3, 1), mode="nearest")
    out = rgba.copy()
    out[..., :3] = np.clip(np.rint(rgb), 0, 255).astype(np.uint8)
    return out


def _section_bytes(rng: np.random.Generator, symbols: int, length: int) -> bytes:
    alphabet = rng.permutation(256)[:symbols]
    return alphabet[rng.integers(0, symbols, size=length)].astype(np.uint8).tobytes()


class SyntheticSample(BaseModel):
    """One generated file: name, contents, label (+1 malware, -1 benign) and template, -1 without icon."""
    name: str
    data: bytes
    label: int
    template: int


def synthetic_corpus(n_samples: int, seed: int = 0, iconless_rate: float = 0.05) -> list[SyntheticSample]:
    """
    Seeded labelled corpus of PE files.

    Each sample draws a template uniformly; its label is malware with the template's rate in
    ``TEMPLATE_MALWARE_RATE``. Section entropies lean towards higher values for malware but
    overlap strongly with benign ones. A fraction of samples carries no icon.

    :param n_samples: Number of files.
    :type n_samples: int
    :param seed: PRNG seed.
    :type seed: int
    :param iconless_rate: Probability that a sample has no resource section.
    :type iconless_rate: float
    :return: The samples, named ``sample_0000.exe`` onwards.
    :rtype: list[SyntheticSample]
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    templates = icon_templates()
    samples = []
    for index in range(n_samples):
        template = int(rng.integers(len(templates)))
        malware = rng.random() < TEMPLATE_MALWARE_RATE[template]
        low, high = (48, 256) if malware else (16, 224)
        text = _section_bytes(rng, int(rng.integers(low, high)), int(rng.integers(512, 4096)))
        data = _section_bytes(rng, int(rng.integers(4, 64)), int(rng.integers(256, 2048)))
        sections = [SectionSpec(name=".text", data=text, virtual_size=len(text) + int(rng.integers(0, 512))),
                    SectionSpec(name=".data", data=data)]
        payloads = None
        if rng.random() >= iconless_rate:
            icon = IconRaster.from_array(perturb_icon(templates[template], rng))
            payloads = [encode_dib(icon, 32)]
        else:
            template = -1
        samples.append(SyntheticSample(name=f"sample_{index:04d}.exe", data=build_pe(sections, payloads),
                                       label=1 if malware else -1, template=template))
    return samples
