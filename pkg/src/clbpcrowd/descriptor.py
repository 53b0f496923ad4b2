"""Completed Local Binary Pattern (CLBP) codes, cell histograms and block features.

Three codes are computed at every pixel whose sampling ring fits in the frame:

* ``S``: sign of each neighbor minus the center (the classic LBP code),
* ``M``: whether each absolute neighbor difference reaches the frame-wide
  mean absolute difference ``mu``,
* ``C``: whether the center reaches the frame-wide mean gray level.

``mu`` and the gray mean are frame statistics, computed once per frame and
passed down to every cell. Neighbor ``n`` of ``p`` sits at angle
``2*pi*n/p`` measured counter-clockwise from east, so with image rows
growing downwards its offset is ``(r*cos, -r*sin)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import EmptyCell, ImageTooSmall, OutOfBounds
from .imaging import DEFAULT_CELL_SIZE, DEFAULT_OVERLAP, GrayImage, Rect, cells_of_block, image_mean

MAPPINGS = ("riu2", "full")
SCHEMES = ("joint", "concat")
SNAP_EPS = 1e-6
MAX_BINS = 1 << 22


@dataclass(frozen=True)
class CLBPParams:
    """Descriptor configuration.

    ``scheme="joint"`` builds one 3D histogram over (S, M, C);
    ``scheme="concat"`` concatenates the three marginal histograms.
    """

    radius: float = 1.0
    points: int = 8
    mapping: str = "riu2"
    scheme: str = "joint"

    def __post_init__(self):
        if not (math.isfinite(self.radius) and self.radius >= 1.0):
            raise ValueError(f"radius must be >= 1, got {self.radius}")
        if not 4 <= self.points <= 24:
            raise ValueError(f"points must be in [4, 24], got {self.points}")
        if self.mapping not in MAPPINGS:
            raise ValueError(f"mapping must be one of {MAPPINGS}, got {self.mapping!r}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.bin_count > MAX_BINS:
            raise ValueError(
                f"{self.scheme}/{self.mapping} with p={self.points} needs "
                f"{self.bin_count} bins per cell; use riu2 or the concat scheme")

    @property
    def code_bins(self) -> int:
        """Bins for one mapped S or M code."""
        return self.points + 2 if self.mapping == "riu2" else 1 << self.points

    @property
    def bin_count(self) -> int:
        k = self.code_bins
        return k * k * 2 if self.scheme == "joint" else 2 * k + 2

    @property
    def margin(self) -> int:
        """Pixels a ring center must keep from the frame edge."""
        return int(math.ceil(self.radius - SNAP_EPS))

    @cached_property
    def offsets(self) -> tuple[tuple[float, float], ...]:
        out = []
        for n in range(self.points):
            angle = 2.0 * math.pi * n / self.points
            dx = _snap(self.radius * math.cos(angle))
            dy = _snap(-self.radius * math.sin(angle))
            out.append((dx, dy))
        return tuple(out)

    @property
    def integer_geometry(self) -> bool:
        return all(float(dx).is_integer() and float(dy).is_integer() for dx, dy in self.offsets)


def _snap(v: float) -> float:
    r = round(v)
    return float(r) if abs(v - r) < SNAP_EPS else v


@dataclass(frozen=True)
class NeighborSamples:
    center: float
    ring: tuple[float, ...]


def sign(x: float) -> int:
    """Threshold function with the ``x >= 0`` convention, so ``sign(0) == 1``."""
    return 1 if x >= 0 else 0


def _interp(get, dx: float, dy: float):
    """Bilinear sample at integer center + (dx, dy).

    ``get(ix, iy)`` returns the pixel (or array of pixels) at an integer
    offset. Written in lerp form so a flat neighborhood reproduces its
    value exactly.
    """
    fx, fy = math.floor(dx), math.floor(dy)
    tx, ty = dx - fx, dy - fy
    if tx == 0.0 and ty == 0.0:
        return get(fx, fy)
    if ty == 0.0:
        a = get(fx, fy)
        return a + tx * (get(fx + 1, fy) - a)
    if tx == 0.0:
        a = get(fx, fy)
        return a + ty * (get(fx, fy + 1) - a)
    a, b = get(fx, fy), get(fx + 1, fy)
    c, d = get(fx, fy + 1), get(fx + 1, fy + 1)
    top = a + tx * (b - a)
    bottom = c + tx * (d - c)
    return top + ty * (bottom - top)


def _pixels(image) -> np.ndarray:
    return image.pixels if isinstance(image, GrayImage) else np.asarray(image, dtype=np.float64)


def sample_neighbors(image: GrayImage, cx: int, cy: int, params: CLBPParams) -> NeighborSamples:
    pix = _pixels(image)
    h, w = pix.shape
    m = params.margin
    if not (m <= cx <= w - 1 - m and m <= cy <= h - 1 - m):
        raise OutOfBounds(
            f"ring of radius {params.radius} around ({cx}, {cy}) leaves the {w}x{h} image")

    def get(ix, iy):
        return float(pix[cy + iy, cx + ix])

    ring = tuple(_interp(get, dx, dy) for dx, dy in params.offsets)
    return NeighborSamples(float(pix[cy, cx]), ring)


def clbp_s_code(samples: NeighborSamples) -> int:
    return sum(sign(x - samples.center) << n for n, x in enumerate(samples.ring))


def clbp_m_code(samples: NeighborSamples, mu: float) -> int:
    if mu < 0:
        raise ValueError("mu must be non-negative")
    return sum(sign(abs(x - samples.center) - mu) << n for n, x in enumerate(samples.ring))


def clbp_c_bit(center: float, global_mean: float) -> int:
    return sign(center - global_mean)


def _circular_transitions(code: int, p: int) -> int:
    rotated = ((code >> 1) | ((code & 1) << (p - 1)))
    return bin(code ^ rotated).count("1")


def riu2_map(code: int, p: int) -> int:
    """Rotation-invariant uniform index: bit count if uniform, else ``p + 1``."""
    if not 0 <= code < (1 << p):
        raise ValueError(f"code {code} out of range for p={p}")
    if _circular_transitions(code, p) <= 2:
        return bin(code).count("1")
    return p + 1


def riu2_array(codes: np.ndarray, p: int) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.int64)
    ones = np.zeros(codes.shape, dtype=np.int64)
    transitions = np.zeros(codes.shape, dtype=np.int64)
    for k in range(p):
        bit = (codes >> k) & 1
        ones += bit
        transitions += bit ^ ((codes >> ((k + 1) % p)) & 1)
    return np.where(transitions <= 2, ones, p + 1)


def map_codes(codes: np.ndarray, params: CLBPParams) -> np.ndarray:
    if params.mapping == "riu2":
        return riu2_array(codes, params.points)
    return np.asarray(codes, dtype=np.int64)


def _interior(shape, params: CLBPParams) -> Rect:
    h, w = shape
    m = params.margin
    if h - 2 * m < 1 or w - 2 * m < 1:
        raise ImageTooSmall(f"{w}x{h} image has no center for radius {params.radius}")
    return Rect(m, m, w - 2 * m, h - 2 * m)


def _clip(region: Rect, bounds: Rect) -> Rect | None:
    x0, y0 = max(region.x, bounds.x), max(region.y, bounds.y)
    x1, y1 = min(region.x1, bounds.x1), min(region.y1, bounds.y1)
    if x1 <= x0 or y1 <= y0:
        return None
    return Rect(x0, y0, x1 - x0, y1 - y0)


def _ring_stack(pix: np.ndarray, centers: Rect, params: CLBPParams) -> tuple[np.ndarray, np.ndarray]:
    """Center values and ``(p, h, w)`` ring samples for every center in ``centers``."""
    ys, xs = centers.slices()

    def get(ix, iy):
        return pix[ys.start + iy:ys.stop + iy, xs.start + ix:xs.stop + ix]

    ring = np.stack([np.asarray(_interp(get, dx, dy), dtype=np.float64)
                     for dx, dy in params.offsets])
    return pix[ys, xs], ring


def global_magnitude_mean(image: GrayImage, params: CLBPParams) -> float:
    """Mean absolute neighbor-center difference over all interior centers and ring positions."""
    pix = _pixels(image)
    centers = _interior(pix.shape, params)
    center, ring = _ring_stack(pix, centers, params)
    total = float(np.sum(np.abs(ring - center)))
    return total / (centers.w * centers.h * params.points)


@dataclass(frozen=True)
class CodeMap:
    """Mapped S/M indices and C bits for every valid center of a region.

    ``origin`` is the frame position of element ``[0, 0]`` of the arrays.
    """

    params: CLBPParams
    mu: float
    mean: float
    origin: Rect
    s_index: np.ndarray
    m_index: np.ndarray
    c_bit: np.ndarray

    def histogram(self, cell: Rect) -> np.ndarray:
        part = _clip(cell, self.origin)
        if part is None:
            raise EmptyCell(f"cell {cell} has no center whose ring fits in the frame")
        rows = slice(part.y - self.origin.y, part.y1 - self.origin.y)
        cols = slice(part.x - self.origin.x, part.x1 - self.origin.x)
        return histogram_from_codes(
            self.s_index[rows, cols], self.m_index[rows, cols], self.c_bit[rows, cols], self.params)

    def block_feature(self, block: Rect, cell_size: int = DEFAULT_CELL_SIZE,
                      overlap: float = DEFAULT_OVERLAP, normalize: str = "cell",
                      cells=None) -> "FeatureVector":
        """Concatenated cell histograms; ``cells`` overrides the default cell layout."""
        cells = tuple(cells_of_block(block, cell_size, overlap) if cells is None else cells)
        if normalize == "cell":
            values = np.concatenate([self.histogram(c) for c in cells])
        elif normalize == "block":
            raw = np.concatenate([self._counts(c) for c in cells])
            values = raw / raw.sum()
        else:
            raise ValueError(f"normalize must be 'cell' or 'block', got {normalize!r}")
        return FeatureVector(values, block, self.params, cells)

    def s_histogram(self, cell: Rect) -> np.ndarray:
        """Normalized histogram of the mapped sign codes alone."""
        part = _clip(cell, self.origin)
        if part is None:
            raise EmptyCell(f"cell {cell} has no center whose ring fits in the frame")
        rows = slice(part.y - self.origin.y, part.y1 - self.origin.y)
        cols = slice(part.x - self.origin.x, part.x1 - self.origin.x)
        counts = np.bincount(self.s_index[rows, cols].ravel(),
                             minlength=self.params.code_bins).astype(np.float64)
        return counts / counts.sum()

    def _counts(self, cell: Rect) -> np.ndarray:
        part = _clip(cell, self.origin)
        if part is None:
            raise EmptyCell(f"cell {cell} has no center whose ring fits in the frame")
        rows = slice(part.y - self.origin.y, part.y1 - self.origin.y)
        cols = slice(part.x - self.origin.x, part.x1 - self.origin.x)
        return _bin_counts(self.s_index[rows, cols], self.m_index[rows, cols],
                           self.c_bit[rows, cols], self.params)


def compute_codes(image: GrayImage, params: CLBPParams, mu: float, mean: float,
                  region: Rect | None = None) -> CodeMap:
    """CLBP codes for the centers of ``region`` (default: whole frame).

    Centers whose ring would leave the frame are dropped; ring samples may
    come from outside ``region``.
    """
    pix = _pixels(image)
    interior = _interior(pix.shape, params)
    centers = interior if region is None else _clip(region, interior)
    if centers is None:
        raise EmptyCell(f"region {region} has no center whose ring fits in the frame")
    center, ring = _ring_stack(pix, centers, params)
    diff = ring - center
    weights = (np.int64(1) << np.arange(params.points, dtype=np.int64))[:, None, None]
    s_codes = np.sum((diff >= 0).astype(np.int64) * weights, axis=0)
    m_codes = np.sum(((np.abs(diff) - mu) >= 0).astype(np.int64) * weights, axis=0)
    c_bit = ((center - mean) >= 0).astype(np.int64)
    return CodeMap(params, mu, mean, centers,
                   map_codes(s_codes, params), map_codes(m_codes, params), c_bit)


def frame_codes(image: GrayImage, params: CLBPParams = CLBPParams()) -> CodeMap:
    """Codes for a whole frame using its own ``mu`` and gray mean."""
    return compute_codes(image, params, global_magnitude_mean(image, params), image_mean(image))


def _bin_counts(s_idx, m_idx, c_bit, params: CLBPParams) -> np.ndarray:
    s_idx, m_idx, c_bit = (np.ravel(a) for a in (s_idx, m_idx, c_bit))
    if s_idx.size == 0:
        raise EmptyCell("no valid centers")
    k = params.code_bins
    if params.scheme == "joint":
        flat = (s_idx * k + m_idx) * 2 + c_bit
        return np.bincount(flat, minlength=params.bin_count).astype(np.float64)
    return np.concatenate([
        np.bincount(s_idx, minlength=k),
        np.bincount(m_idx, minlength=k),
        np.bincount(c_bit, minlength=2),
    ]).astype(np.float64)


def histogram_from_codes(s_idx, m_idx, c_bit, params: CLBPParams) -> np.ndarray:
    counts = _bin_counts(s_idx, m_idx, c_bit, params)
    return counts / counts.sum()


def cell_histogram(image: GrayImage, cell: Rect, mu: float, image_mean: float,
                   params: CLBPParams = CLBPParams()) -> np.ndarray:
    """L1-normalized CLBP histogram of one cell.

    For the joint scheme the (S, M, C) histogram is flattened row-major,
    so bin ``(s*k + m)*2 + c`` holds mapped S index ``s``, M index ``m``
    and center bit ``c``.
    """
    return compute_codes(image, params, mu, image_mean, region=cell).histogram(cell)


@dataclass(frozen=True, eq=False)
class FeatureVector:
    values: np.ndarray
    block: Rect
    params: object
    cells: tuple[Rect, ...]

    def __len__(self):
        return self.values.size

    def __eq__(self, other):
        if not isinstance(other, FeatureVector):
            return NotImplemented
        return (self.block == other.block and self.params == other.params
                and self.cells == other.cells and np.array_equal(self.values, other.values))

    __hash__ = None


def block_feature(image: GrayImage, block: Rect, mu: float, mean: float,
                  params: CLBPParams = CLBPParams(), cell_size: int = DEFAULT_CELL_SIZE,
                  overlap: float = DEFAULT_OVERLAP, normalize: str = "cell") -> FeatureVector:
    """Concatenate the cell histograms of ``block`` in row-major cell order."""
    codes = compute_codes(image, params, mu, mean, region=block)
    return codes.block_feature(block, cell_size, overlap, normalize)
