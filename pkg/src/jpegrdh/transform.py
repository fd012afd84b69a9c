"""8x8 orthonormal DCT, pixel reconstruction and PSNR."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch
from .jpeg_codec import CoefficientImage


def _basis() -> np.ndarray:
    # row u holds c(u)/2 * cos((2x+1) u pi / 16), so F = B f B^T is the 2-D transform
    c = np.array([1 / math.sqrt(2)] + [1.0] * 7)
    x = np.arange(8)
    u = x[:, None]
    return (c[:, None] / 2) * np.cos((2 * x[None, :] + 1) * u * np.pi / 16)


DCT_MATRIX = _basis()


@dataclass
class PixelImage:
    width: int
    height: int
    samples: np.ndarray  # (height, width) uint8

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.samples.shape != (self.height, self.width):
            raise DimensionMismatch(
                f"samples have shape {self.samples.shape}, expected {(self.height, self.width)}")


def _as_blocks(values) -> tuple[np.ndarray, tuple]:
    arr = np.asarray(values, dtype=np.float64)
    shape = arr.shape
    if shape[-2:] == (8, 8):
        return arr, shape
    if shape[-1] == 64:
        return arr.reshape(shape[:-1] + (8, 8)), shape
    raise ValueError(f"expected trailing dimension 64 or (8, 8), got {shape}")


def dct_block(spatial) -> np.ndarray:
    """Forward 2-D DCT of one block (or a stack of blocks), same layout as the input."""
    f, shape = _as_blocks(spatial)
    return (DCT_MATRIX @ f @ DCT_MATRIX.T).reshape(shape)


def idct_block(freq) -> np.ndarray:
    """Inverse 2-D DCT; the exact inverse of :func:`dct_block`."""
    F, shape = _as_blocks(freq)
    return (DCT_MATRIX.T @ F @ DCT_MATRIX).reshape(shape)


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def component_size(img: CoefficientImage, index: int = 0) -> tuple[int, int]:
    comps = img.components
    comp = comps[index]
    if len(comps) == 1:
        return img.width, img.height
    hmax = max(c.h for c in comps)
    vmax = max(c.v for c in comps)
    return -(-img.width * comp.h // hmax), -(-img.height * comp.v // vmax)


def decompress(img: CoefficientImage, component: int = 0) -> PixelImage:
    """Dequantize, inverse-transform, level-shift, round and clamp one component."""
    comp = img.components[component]
    quant = comp.quant if comp.quant is not None else img.quant_tables[comp.tq]
    deq = comp.blocks.astype(np.float64) * quant
    spatial = idct_block(deq.reshape(-1, 8, 8)) + 128.0
    pixels = np.clip(round_half_away(spatial), 0, 255).astype(np.uint8)
    tiled = pixels.reshape(comp.rows, comp.cols, 8, 8).transpose(0, 2, 1, 3)
    tiled = tiled.reshape(comp.rows * 8, comp.cols * 8)
    width, height = component_size(img, component)
    return PixelImage(width, height, np.ascontiguousarray(tiled[:height, :width]))


def mse(a: PixelImage, b: PixelImage) -> float:
    if (a.width, a.height) != (b.width, b.height):
        raise DimensionMismatch(f"{a.width}x{a.height} vs {b.width}x{b.height}")
    diff = a.samples.astype(np.float64) - b.samples.astype(np.float64)
    return float(np.mean(diff * diff))


def psnr(a: PixelImage, b: PixelImage) -> float:
    """Peak signal-to-noise ratio in dB for 8-bit samples; ``inf`` for identical images."""
    err = mse(a, b)
    if err == 0:
        return math.inf
    return 10 * math.log10(255.0 ** 2 / err)


def write_pgm(path, image: PixelImage) -> None:
    header = f"P5\n{image.width} {image.height}\n255\n".encode()
    Path(path).write_bytes(header + image.samples.astype(np.uint8).tobytes())


def read_pgm(path) -> PixelImage:
    data = Path(path).read_bytes()
    fields = []
    pos = 0
    # magic, width, height, maxval separated by whitespace, '#' comments allowed
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    if fields[0] != b"P5" or int(fields[3]) != 255:
        raise ValueError("only 8-bit binary PGM (P5) is supported")
    width, height = int(fields[1]), int(fields[2])
    pos += 1
    samples = np.frombuffer(data[pos:pos + width * height], dtype=np.uint8)
    if samples.size != width * height:
        raise DimensionMismatch("truncated PGM raster")
    return PixelImage(width, height, samples.reshape(height, width).copy())
