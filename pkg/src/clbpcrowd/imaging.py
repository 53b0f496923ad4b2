"""Grayscale frames and their block/cell decomposition."""

from __future__ import annotations

import io
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (
    BlockTooLarge,
    CellTooLarge,
    CorruptImage,
    ImageNotFound,
    UnsupportedFormat,
)

DEFAULT_CELL_SIZE = 32
DEFAULT_OVERLAP = 0.5

# ITU-R BT.601 luma
LUMA_WEIGHTS = (0.299, 0.587, 0.114)

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Immutable 2D grid of gray levels in [0, 255].

    ``pixels`` has shape ``(height, width)``; row ``i`` is image row ``i``.
    Values are stored as float64 so interpolation never quantizes.
    """

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.array(self.pixels, dtype=np.float64, copy=True)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"expected a non-empty 2D array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("pixel values must be finite")
        if arr.min() < 0.0 or arr.max() > 255.0:
            raise ValueError("pixel values must lie in [0, 255]")
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @classmethod
    def from_buffer(cls, width: int, height: int, values) -> "GrayImage":
        values = np.asarray(values, dtype=np.float64)
        if values.size != width * height:
            raise ValueError(
                f"buffer holds {values.size} values, expected {width}x{height}")
        return cls(values.reshape(height, width))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.pixels, other.pixels))

    def __hash__(self):
        return hash((self.shape, self.pixels.tobytes()))

    def __repr__(self):
        return f"GrayImage({self.width}x{self.height})"

    def to_uint8(self) -> np.ndarray:
        return np.clip(np.rint(self.pixels), 0, 255).astype(np.uint8)


@dataclass(frozen=True, order=True)
class Rect:
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ValueError(f"rect extent must be positive: {self}")
        if self.x < 0 or self.y < 0:
            raise ValueError(f"rect origin must be non-negative: {self}")

    @property
    def x1(self) -> int:
        return self.x + self.w

    @property
    def y1(self) -> int:
        return self.y + self.h

    def inside(self, width: int, height: int) -> bool:
        return self.x1 <= width and self.y1 <= height

    def contains(self, other: "Rect") -> bool:
        return (self.x <= other.x and self.y <= other.y
                and other.x1 <= self.x1 and other.y1 <= self.y1)

    def slices(self) -> tuple[slice, slice]:
        """Row/column slices for indexing a ``(height, width)`` array."""
        return slice(self.y, self.y1), slice(self.x, self.x1)


@dataclass(frozen=True)
class BlockGrid:
    frame_size: tuple[int, int]
    block_size: int
    blocks: tuple[Rect, ...]
    rows: int
    cols: int

    def __len__(self):
        return len(self.blocks)

    def __iter__(self) -> Iterator[Rect]:
        return iter(self.blocks)

    def __getitem__(self, i) -> Rect:
        return self.blocks[i]


def _read_bytes(path) -> bytes:
    path = Path(path)
    if not path.is_file():
        raise ImageNotFound(f"no such image file: {path}")
    return path.read_bytes()


def load_grayscale(path) -> GrayImage:
    """Load an 8-bit PGM (P5) or PNG (gray or RGB) frame.

    RGB input is converted with BT.601 luma weights and rounded to the
    nearest gray level; 8-bit gray input is returned unchanged.
    """
    data = _read_bytes(path)
    if len(data) == 0:
        raise CorruptImage(f"{path}: empty file")
    if data.startswith(_PNG_MAGIC):
        kind = "PNG"
    elif data[:2] == b"P5":
        kind = "PPM"  # Pillow's format name for the netpbm family
    else:
        raise UnsupportedFormat(f"{path}: only PGM (P5) and PNG are supported")
    try:
        img = Image.open(io.BytesIO(data))
        if img.format != kind:
            raise UnsupportedFormat(f"{path}: unexpected {img.format} payload")
        img.load()
    except UnsupportedFormat:
        raise
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise CorruptImage(f"{path}: {exc}") from exc
    return _to_gray(img, path)


def _to_gray(img: Image.Image, path) -> GrayImage:
    if img.mode == "L":
        return GrayImage(np.asarray(img, dtype=np.float64))
    if img.mode == "RGB":
        return GrayImage(rgb_to_gray(np.asarray(img)))
    raise UnsupportedFormat(f"{path}: image mode {img.mode!r} is not 8-bit gray or RGB")


def rgb_to_gray(rgb: np.ndarray) -> np.ndarray:
    """Luma conversion of an ``(H, W, 3)`` array, rounded to integer levels."""
    rgb = np.asarray(rgb, dtype=np.float64)
    r, g, b = LUMA_WEIGHTS
    luma = r * rgb[..., 0] + g * rgb[..., 1] + b * rgb[..., 2]
    return np.clip(np.rint(luma), 0, 255)


def save_grayscale(image: GrayImage, path) -> None:
    """Write an 8-bit PNG or PGM, chosen by file extension."""
    path = Path(path)
    suffix = path.suffix.lower()
    fmt = {".png": "PNG", ".pgm": "PPM"}.get(suffix)
    if fmt is None:
        raise UnsupportedFormat(f"cannot write {suffix!r}; use .png or .pgm")
    Image.fromarray(image.to_uint8(), mode="L").save(path, format=fmt)


def image_size(path) -> tuple[int, int]:
    """(width, height) of an image file without decoding the pixels."""
    if not os.path.isfile(path):
        raise ImageNotFound(f"no such image file: {path}")
    try:
        with Image.open(path) as img:
            return img.size
    except (UnidentifiedImageError, OSError) as exc:
        raise CorruptImage(f"{path}: {exc}") from exc


def image_mean(image: GrayImage) -> float:
    return math.fsum(image.pixels.ravel()) / image.pixels.size


def _axis_starts(extent: int, size: int) -> list[tuple[int, int]]:
    # last tile absorbs the remainder, so no tile is shorter than `size`
    n = extent // size
    spans = [(k * size, size) for k in range(n)]
    start, _ = spans[-1]
    spans[-1] = (start, extent - start)
    return spans


def partition_blocks(image: GrayImage | tuple[int, int], block_size: int,
                     cell_size: int | None = None) -> BlockGrid:
    """Tile a frame into row-major blocks.

    ``image`` may also be a ``(width, height)`` pair. When ``block_size``
    does not divide a dimension, the last block along it is widened to
    absorb the remainder.
    """
    if isinstance(image, GrayImage):
        width, height = image.width, image.height
    else:
        width, height = image
    if block_size < 1:
        raise ValueError("block_size must be positive")
    if cell_size is not None and block_size < cell_size:
        raise CellTooLarge(f"block_size {block_size} is smaller than cell_size {cell_size}")
    if block_size > min(width, height):
        raise BlockTooLarge(
            f"block_size {block_size} exceeds frame dimension {width}x{height}")
    ys = _axis_starts(height, block_size)
    xs = _axis_starts(width, block_size)
    blocks = tuple(Rect(x, y, w, h) for (y, h) in ys for (x, w) in xs)
    return BlockGrid((width, height), block_size, blocks, len(ys), len(xs))


def partition_region(region: Rect, block_size: int) -> list[Rect]:
    """Tile a sub-rectangle of a frame with the same remainder policy."""
    grid = partition_blocks((region.w, region.h), block_size)
    return [Rect(region.x + b.x, region.y + b.y, b.w, b.h) for b in grid]


def cell_stride(cell_size: int, overlap: float) -> int:
    return max(1, int(math.floor(cell_size * (1.0 - overlap) + 1e-9)))


def _cell_starts(extent: int, cell_size: int, stride: int) -> list[int]:
    starts = list(range(0, extent - cell_size + 1, stride))
    if starts[-1] + cell_size < extent:
        starts.append(extent - cell_size)
    return starts


def cells_of_block(block: Rect, cell_size: int = DEFAULT_CELL_SIZE,
                   overlap: float = DEFAULT_OVERLAP) -> list[Rect]:
    """Overlapping cells covering ``block``, in row-major order.

    Cells step by ``floor(cell_size * (1 - overlap))`` pixels (at least 1).
    A final cell flush with the far edge is added when the stride leaves
    pixels uncovered.
    """
    if not 0.0 <= overlap < 1.0:
        raise ValueError(f"overlap must lie in [0, 1), got {overlap}")
    if cell_size < 1:
        raise ValueError("cell_size must be positive")
    if cell_size > block.w or cell_size > block.h:
        raise CellTooLarge(f"cell_size {cell_size} does not fit block {block.w}x{block.h}")
    stride = cell_stride(cell_size, overlap)
    xs = _cell_starts(block.w, cell_size, stride)
    ys = _cell_starts(block.h, cell_size, stride)
    return [Rect(block.x + x, block.y + y, cell_size, cell_size) for y in ys for x in xs]


def cell_layout(block: Rect, block_size: int, cell_size: int = DEFAULT_CELL_SIZE,
                overlap: float = DEFAULT_OVERLAP) -> list[Rect]:
    """Cells of ``block`` laid out as for a nominal ``block_size`` square.

    Edge blocks that absorbed a remainder get the nominal layout stretched
    to their extent, so every block of a grid yields the same number of
    cells (and thus the same feature length) while coverage is preserved.
    """
    if block.w == block_size and block.h == block_size:
        return cells_of_block(block, cell_size, overlap)
    if block.w < block_size or block.h < block_size:
        raise CellTooLarge(f"block {block.w}x{block.h} is smaller than nominal size {block_size}")
    nominal = cells_of_block(Rect(0, 0, block_size, block_size), cell_size, overlap)
    sx, sy = block.w / block_size, block.h / block_size
    out = []
    for c in nominal:
        x0, x1 = int(round(c.x * sx)), int(round(c.x1 * sx))
        y0, y1 = int(round(c.y * sy)), int(round(c.y1 * sy))
        out.append(Rect(block.x + x0, block.y + y0, x1 - x0, y1 - y0))
    return out
