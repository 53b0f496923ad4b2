"""Comparison descriptors: the original LBP histogram and GLCM/Haralick statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .descriptor import CLBPParams, compute_codes
from .errors import RegionTooSmall
from .imaging import GrayImage, Rect

DEFAULT_OFFSETS = ((1, 0), (0, 1), (1, 1), (1, -1))
HARALICK_NAMES = ("contrast", "energy", "entropy", "homogeneity", "correlation")


@dataclass(frozen=True)
class GLCMParams:
    offset: tuple[int, int] = (1, 0)
    levels: int = 8
    symmetric: bool = True

    def __post_init__(self):
        if self.levels < 2:
            raise ValueError("levels must be >= 2")
        if tuple(self.offset) == (0, 0):
            raise ValueError("offset must be non-zero")


def lbp_histogram(image: GrayImage, cell: Rect, params: CLBPParams = CLBPParams()) -> np.ndarray:
    """Normalized histogram of sign codes only (the original LBP)."""
    return compute_codes(image, params, 0.0, 0.0, region=cell).s_histogram(cell)


def quantize(values: np.ndarray, levels: int) -> np.ndarray:
    """Map gray levels in [0, 255] onto ``levels`` equal-width bins."""
    q = np.floor(np.asarray(values, dtype=np.float64) * levels / 256.0).astype(np.int64)
    return np.clip(q, 0, levels - 1)


def glcm(image: GrayImage, region: Rect, params: GLCMParams = GLCMParams()) -> np.ndarray:
    """Normalized co-occurrence matrix of quantized gray pairs inside ``region``.

    Entry ``[a, b]`` counts pixels of level ``a`` whose neighbor at
    ``offset = (dx, dy)`` has level ``b``. Both pixels must lie in the region.
    """
    dx, dy = params.offset
    ys, xs = region.slices()
    q = quantize(image.pixels[ys, xs], params.levels)
    h, w = q.shape
    if abs(dx) >= w or abs(dy) >= h:
        raise RegionTooSmall(f"region {region.w}x{region.h} too small for offset {params.offset}")
    src = q[max(0, -dy):h - max(0, dy), max(0, -dx):w - max(0, dx)]
    dst = q[max(0, dy):h + min(0, dy), max(0, dx):w + min(0, dx)]
    n = params.levels
    counts = np.bincount((src * n + dst).ravel(), minlength=n * n).reshape(n, n).astype(np.float64)
    if params.symmetric:
        counts = counts + counts.T
    return counts / counts.sum()


def glcm_averaged(image: GrayImage, region: Rect, levels: int = 8, symmetric: bool = True,
                  offsets=DEFAULT_OFFSETS) -> np.ndarray:
    mats = [glcm(image, region, GLCMParams(tuple(o), levels, symmetric)) for o in offsets]
    return np.mean(mats, axis=0)


def haralick_features(p: np.ndarray) -> np.ndarray:
    """[contrast, energy, entropy, homogeneity, correlation] of a normalized GLCM.

    Entropy uses the natural log with 0 log 0 = 0; correlation is 0 when
    either marginal has zero variance.
    """
    p = np.asarray(p, dtype=np.float64)
    n = p.shape[0]
    i, j = np.indices((n, n))
    d2 = (i - j) ** 2
    contrast = float(np.sum(d2 * p))
    energy = float(np.sum(p * p))
    nz = p[p > 0]
    entropy = float(-np.sum(nz * np.log(nz)))
    homogeneity = float(np.sum(p / (1.0 + d2)))
    mu_i, mu_j = np.sum(i * p), np.sum(j * p)
    var_i = np.sum((i - mu_i) ** 2 * p)
    var_j = np.sum((j - mu_j) ** 2 * p)
    if var_i <= 1e-15 or var_j <= 1e-15:
        correlation = 0.0
    else:
        cov = np.sum((i - mu_i) * (j - mu_j) * p)
        correlation = float(np.clip(cov / np.sqrt(var_i * var_j), -1.0, 1.0))
    return np.array([contrast, energy, entropy, homogeneity, correlation])
