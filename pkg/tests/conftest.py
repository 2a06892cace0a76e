from pathlib import Path

import numpy as np
import pytest

from main import main
from src.conf.config import Settings
from src.schemas.icon import IconRaster
from src.services.synthetic import SectionSpec, build_pe, encode_dib, encode_ico, encode_png, icon_templates

TEXT_BYTES = bytes(range(256)) * 4
DATA_BYTES = b"\x00\x01" * 300


def checker_icon(size: int = 16, alpha: int = 255) -> IconRaster:
    rows, cols = np.mgrid[0:size, 0:size]
    rgba = np.zeros((size, size, 4), dtype=np.uint8)
    rgba[..., 0] = np.where((rows + cols) % 2 == 0, 200, 40)
    rgba[..., 1] = (rows * 255 // max(size - 1, 1)).astype(np.uint8)
    rgba[..., 2] = (cols * 255 // max(size - 1, 1)).astype(np.uint8)
    rgba[..., 3] = alpha
    return IconRaster.from_array(rgba)


def fixture_pe(icons: list[IconRaster] | None = None, bpp: int = 32, with_group: bool = True) -> bytes:
    sections = [SectionSpec(name=".text", data=TEXT_BYTES, virtual_size=len(TEXT_BYTES) + 100),
                SectionSpec(name=".data", data=DATA_BYTES)]
    payloads = [encode_dib(icon, bpp) for icon in icons] if icons else None
    return build_pe(sections, payloads, with_group=with_group)


@pytest.fixture()
def icon16() -> IconRaster:
    return checker_icon(16)


@pytest.fixture()
def pe_with_icons() -> bytes:
    return fixture_pe([checker_icon(16), checker_icon(32)])


@pytest.fixture()
def ico_file() -> bytes:
    small, large = checker_icon(16), checker_icon(24)
    return encode_ico([(small, encode_dib(small, 32)), (large, encode_png(large))])


@pytest.fixture()
def corpus_dir(tmp_path) -> Path:
    """Three PE files with distinct template icons, one without icon, one corrupt file and one ICO."""
    directory = tmp_path / "corpus"
    directory.mkdir()
    templates = icon_templates()
    for index in range(3):
        (directory / f"good_{index}.exe").write_bytes(fixture_pe([IconRaster.from_array(templates[index])]))
    (directory / "plain.exe").write_bytes(fixture_pe())
    (directory / "broken.exe").write_bytes(b"MZ" + bytes(10))
    icon = IconRaster.from_array(templates[4])
    (directory / "standalone.ico").write_bytes(encode_ico([(icon, encode_dib(icon, 32))]))
    return directory


@pytest.fixture()
def fast_settings() -> Settings:
    return Settings(AE_EPOCHS=2, AE_BATCH_SIZE=4, MIN_CLUSTER_SIZE=3, ALPHA_POINTS=3, ALPHA_MIN=1e-3,
                    ALPHA_MAX=1e-1, SOLVER_MAX_ITER=500, K_FOLDS=2, TEST_FRACTION=0.3)


@pytest.fixture()
def config_file(tmp_path) -> Path:
    """Dotenv settings keeping end-to-end runs short."""
    path = tmp_path / "fast.env"
    path.write_text("\n".join([
        "AE_EPOCHS=2",
        "AE_BATCH_SIZE=8",
        "MIN_CLUSTER_SIZE=5",
        "OUTLIER_K_MAX=6",
        "ALPHA_POINTS=3",
        "ALPHA_MIN=0.001",
        "ALPHA_MAX=0.1",
        "SOLVER_MAX_ITER=400",
        "LOG_LEVEL=WARNING",
    ]) + "\n", encoding="utf-8")
    return path


@pytest.fixture()
def run_cli():
    def run(*args) -> int:
        return main([str(arg) for arg in args])
    return run
