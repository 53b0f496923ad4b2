"""Block-wise crowd density classification with completed local binary patterns and an SVM."""

__version__ = "0.1.0"

from .baselines import GLCMParams, glcm, glcm_averaged, haralick_features, lbp_histogram
from .dataset import (
    ALL_LABELS,
    BlockAnnotation,
    DensityLabel,
    Manifest,
    label_from_count,
    load_manifest,
    parse_manifest,
    split,
    synth_crowd_texture,
    write_synth_corpus,
)
from .descriptor import (
    CLBPParams,
    FeatureVector,
    block_feature,
    cell_histogram,
    clbp_c_bit,
    clbp_m_code,
    clbp_s_code,
    frame_codes,
    global_magnitude_mean,
    riu2_map,
    sample_neighbors,
)
from .errors import ClbpError, NoConvergenceWarning
from .evaluation import ConfusionMatrix, accuracy, confusion, overlay_labels, sweep_block_sizes
from .features import FeatureConfig, block_features, manifest_features
from .imaging import GrayImage, Rect, cells_of_block, load_grayscale, partition_blocks
from .pipeline import SVMSettings, fit_model, predict_frame, train_on_manifest
from .svm import (
    KernelSpec,
    MulticlassModel,
    grid_search_cv,
    load_model,
    predict,
    save_model,
    train_binary,
    train_multiclass,
)

__all__ = [
    "accuracy",
    "ALL_LABELS",
    "block_feature",
    "block_features",
    "BlockAnnotation",
    "cell_histogram",
    "cells_of_block",
    "clbp_c_bit",
    "clbp_m_code",
    "clbp_s_code",
    "ClbpError",
    "CLBPParams",
    "confusion",
    "ConfusionMatrix",
    "DensityLabel",
    "FeatureConfig",
    "FeatureVector",
    "fit_model",
    "frame_codes",
    "glcm",
    "glcm_averaged",
    "GLCMParams",
    "global_magnitude_mean",
    "GrayImage",
    "grid_search_cv",
    "haralick_features",
    "KernelSpec",
    "label_from_count",
    "lbp_histogram",
    "load_grayscale",
    "load_manifest",
    "load_model",
    "Manifest",
    "manifest_features",
    "MulticlassModel",
    "NoConvergenceWarning",
    "overlay_labels",
    "parse_manifest",
    "partition_blocks",
    "predict",
    "predict_frame",
    "Rect",
    "riu2_map",
    "sample_neighbors",
    "save_model",
    "split",
    "SVMSettings",
    "sweep_block_sizes",
    "synth_crowd_texture",
    "train_binary",
    "train_multiclass",
    "train_on_manifest",
    "write_synth_corpus",
]
