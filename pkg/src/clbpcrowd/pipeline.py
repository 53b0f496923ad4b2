"""Training and prediction glue between features, manifests and the SVM."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .dataset import DensityLabel, Manifest
from .errors import GeometryMismatch
from .features import BlockSet, FeatureConfig, block_features, manifest_features
from .imaging import BlockGrid, GrayImage, partition_blocks
from .svm import (
    DEFAULT_C_GRID,
    DEFAULT_GAMMA_GRID,
    GridSearchResult,
    KernelSpec,
    MulticlassModel,
    grid_search_cv,
    train_multiclass,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SVMSettings:
    """Classifier settings. ``C``/``gamma`` left as ``None`` are grid-searched."""

    kernel: str = "rbf"
    C: float | None = None
    gamma: float | None = None
    tol: float = 1e-3
    max_passes: int = 100
    C_grid: tuple = DEFAULT_C_GRID
    gamma_grid: tuple = DEFAULT_GAMMA_GRID
    k_folds: int = 5
    scale: str = "none"

    def scale_for(self, descriptor: str) -> str:
        # "auto" standardizes only Haralick statistics, whose ranges differ
        if self.scale == "auto":
            return "zscore" if descriptor == "glcm" else "none"
        return self.scale

    @property
    def needs_search(self) -> bool:
        return self.C is None or (self.kernel == "rbf" and self.gamma is None)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["C_grid"], d["gamma_grid"] = list(self.C_grid), list(self.gamma_grid)
        return d


def fit_model(blocks: BlockSet, config: FeatureConfig, settings: SVMSettings = SVMSettings(),
              seed: int = 0) -> tuple[MulticlassModel, GridSearchResult | None]:
    scale = settings.scale_for(config.descriptor)
    search = None
    C, gamma = settings.C, settings.gamma
    if settings.needs_search:
        search = grid_search_cv(
            blocks.X, blocks.labels,
            C_grid=(C,) if C is not None else settings.C_grid,
            gamma_grid=(gamma,) if gamma is not None else settings.gamma_grid,
            k_folds=settings.k_folds, seed=seed, kernel=settings.kernel, tol=settings.tol,
            max_passes=settings.max_passes, scale=scale)
        C, gamma = search.best_C, search.best_gamma
        log.info("grid search picked C=%g gamma=%g (cv accuracy %.4f)",
                 C, gamma, search.mean(C, gamma))
    spec = KernelSpec("rbf", gamma) if settings.kernel == "rbf" else KernelSpec("linear")
    meta = {"features": config.to_dict(), "svm": settings.to_dict(), "seed": seed}
    model = train_multiclass(blocks.X, blocks.labels, C, spec, settings.tol, seed,
                             settings.max_passes, scale, meta)
    return model, search


def model_feature_config(model: MulticlassModel) -> FeatureConfig:
    return FeatureConfig.from_dict(model.meta["features"])


def train_on_manifest(manifest: Manifest, config: FeatureConfig,
                      settings: SVMSettings = SVMSettings(), seed: int = 0, jobs: int = 1):
    blocks = manifest_features(manifest, config, jobs)
    model, search = fit_model(blocks, config, settings, seed)
    return model, search, blocks


def predict_blocks(model: MulticlassModel, blocks: BlockSet) -> tuple[list[DensityLabel], np.ndarray]:
    return model.predict_many(blocks.X)


def predict_frame(model: MulticlassModel, image: GrayImage):
    """Tile a frame at the model's block size and label every block.

    Returns ``(grid, labels, votes)``.
    """
    config = model_feature_config(model)
    if config.block_size > min(image.width, image.height):
        raise GeometryMismatch(
            f"model block size {config.block_size} does not fit the "
            f"{image.width}x{image.height} frame")
    grid: BlockGrid = partition_blocks(image, config.block_size, config.cell_size)
    X = block_features(image, grid.blocks, config)
    labels, votes = model.predict_many(X)
    return grid, labels, votes
