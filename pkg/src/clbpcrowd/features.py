"""Per-block feature extraction for whole frames and manifests."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .baselines import glcm_averaged, haralick_features
from .dataset import DensityLabel, Manifest
from .descriptor import CLBPParams, FeatureVector, compute_codes, frame_codes
from .imaging import (
    DEFAULT_CELL_SIZE,
    DEFAULT_OVERLAP,
    GrayImage,
    Rect,
    cell_layout,
    load_grayscale,
    partition_region,
)

DESCRIPTORS = ("clbp", "lbp", "glcm")
DEFAULT_BLOCK_SIZE = 96


@dataclass(frozen=True)
class FeatureConfig:
    descriptor: str = "clbp"
    params: CLBPParams = field(default_factory=CLBPParams)
    block_size: int = DEFAULT_BLOCK_SIZE
    cell_size: int = DEFAULT_CELL_SIZE
    overlap: float = DEFAULT_OVERLAP
    normalize: str = "cell"
    glcm_levels: int = 8

    def __post_init__(self):
        if self.descriptor not in DESCRIPTORS:
            raise ValueError(f"descriptor must be one of {DESCRIPTORS}, got {self.descriptor!r}")
        if self.cell_size < 1 or self.block_size < self.cell_size:
            raise ValueError(f"need 1 <= cell_size <= block_size, got "
                             f"cell {self.cell_size}, block {self.block_size}")
        if not 0.0 <= self.overlap < 1.0:
            raise ValueError("overlap must lie in [0, 1)")
        if self.normalize not in ("cell", "block"):
            raise ValueError("normalize must be 'cell' or 'block'")

    def with_block_size(self, block_size: int) -> "FeatureConfig":
        return FeatureConfig(self.descriptor, self.params, block_size, self.cell_size,
                             self.overlap, self.normalize, self.glcm_levels)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureConfig":
        d = dict(d)
        d["params"] = CLBPParams(**d.get("params", {}))
        return cls(**d)


def block_features(image: GrayImage, blocks, config: FeatureConfig) -> np.ndarray:
    """``(len(blocks), dim)`` matrix of block descriptors for one frame.

    CLBP statistics (``mu`` and the gray mean) are taken over the whole
    frame, not per block.
    """
    blocks = list(blocks)
    layouts = [block_cells(b, config) for b in blocks]
    if config.descriptor == "clbp":
        codes = frame_codes(image, config.params)
        rows = [codes.block_feature(b, normalize=config.normalize, cells=cells).values
                for b, cells in zip(blocks, layouts)]
    elif config.descriptor == "lbp":
        # the sign code ignores mu and the gray mean
        codes = compute_codes(image, config.params, 0.0, 0.0)
        rows = [np.concatenate([codes.s_histogram(c) for c in cells]) for cells in layouts]
    else:
        rows = [np.concatenate([haralick_features(glcm_averaged(image, c, config.glcm_levels))
                                for c in cells]) for cells in layouts]
    return np.vstack(rows) if rows else np.zeros((0, 0))


def block_cells(block: Rect, config: FeatureConfig) -> list[Rect]:
    return cell_layout(block, config.block_size, config.cell_size, config.overlap)


def block_feature_vectors(image: GrayImage, blocks, config: FeatureConfig) -> list[FeatureVector]:
    blocks = list(blocks)
    mat = block_features(image, blocks, config)
    return [FeatureVector(row, b, config.params, tuple(block_cells(b, config)))
            for row, b in zip(mat, blocks)]


@dataclass
class BlockSet:
    """Feature rows with their labels and (frame_id, block) keys."""

    X: np.ndarray
    labels: np.ndarray
    keys: list

    def __len__(self):
        return len(self.keys)


def _frame_job(args):
    path, frame_id, annotations, config = args
    image = load_grayscale(path)
    blocks, labels = [], []
    for ann in annotations:
        for b in partition_region(ann.block, config.block_size):
            blocks.append(b)
            labels.append(int(ann.label))
    return frame_id, blocks, labels, block_features(image, blocks, config)


def manifest_features(manifest: Manifest, config: FeatureConfig, jobs: int = 1) -> BlockSet:
    """Features for every annotated region, re-tiled at ``config.block_size``.

    Each block inherits the label of the annotation it was cut from.
    Results keep manifest order regardless of ``jobs``.
    """
    tasks = [(manifest.frame_path(e.frame_id), e.frame_id, e.annotations, config)
             for e in manifest.entries if e.annotations]
    jobs = resolve_jobs(jobs)
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_frame_job, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        results = [_frame_job(t) for t in tasks]
    rows, labels, keys = [], [], []
    for frame_id, blocks, labs, mat in results:
        rows.append(mat)
        labels.extend(labs)
        keys.extend((frame_id, b) for b in blocks)
    X = np.vstack(rows) if rows else np.zeros((0, 0))
    return BlockSet(X, np.asarray(labels, dtype=np.int64), keys)


def resolve_jobs(jobs: int | None) -> int:
    if jobs is None or jobs <= 0:
        return os.cpu_count() or 1
    return jobs


def labels_of(values) -> list[DensityLabel]:
    return [DensityLabel(int(v)) for v in values]
