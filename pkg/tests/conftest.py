import io
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from jpegrdh.jpeg_codec import parse_jpeg

CORPUS = Path(__file__).parent / "corpus"
# ascent and camera stand in for Airplane and Peppers
IMAGES = ("lena", "baboon", "ascent", "camera")
QUALITIES = (30, 50, 70, 90)


@lru_cache(maxsize=None)
def raster(name: str) -> np.ndarray:
    return np.asarray(Image.open(CORPUS / f"{name}.png").convert("L"))


@lru_cache(maxsize=None)
def cover_bytes(name: str, quality: int) -> bytes:
    """Baseline JPEG with the standard tables scaled to ``quality`` (libjpeg via Pillow)."""
    buf = io.BytesIO()
    Image.fromarray(raster(name)).save(buf, "JPEG", quality=quality)
    return buf.getvalue()


def cover(name: str, quality: int):
    return parse_jpeg(cover_bytes(name, quality))


def jpeg_bytes(array: np.ndarray, **options) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(array).save(buf, "JPEG", **options)
    return buf.getvalue()


@pytest.fixture(scope="session")
def lena50():
    return cover("lena", 50)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
