"""Confusion matrices, block-size sweeps and per-block label overlays."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .dataset import ALL_LABELS, DensityLabel, Manifest, split
from .errors import ClbpError, CountMismatch, Empty, LengthMismatch
from .features import FeatureConfig, manifest_features
from .imaging import BlockGrid, GrayImage
from .pipeline import SVMSettings, fit_model

log = logging.getLogger(__name__)

LABEL_COLORS = {
    DensityLabel.VERY_LOW: (46, 204, 64),
    DensityLabel.LOW: (255, 220, 0),
    DensityLabel.MEDIUM: (255, 133, 27),
    DensityLabel.HIGH: (255, 65, 54),
}


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Rows are ground truth, columns predictions."""

    classes: tuple[DensityLabel, ...]
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def row_percentages(self) -> np.ndarray:
        rows = self.counts.sum(axis=1, keepdims=True).astype(np.float64)
        with np.errstate(invalid="ignore", divide="ignore"):
            pct = np.where(rows > 0, 100.0 * self.counts / rows, 0.0)
        return pct

    def to_table(self) -> str:
        """Row-percentage matrix laid out with truth rows and predicted columns."""
        names = [c.display for c in self.classes]
        width = max(len(n) for n in names) + 2
        head = " " * width + "".join(f"{n:>{width}}" for n in names)
        lines = [head]
        for name, row in zip(names, self.row_percentages):
            lines.append(f"{name:<{width}}" + "".join(f"{v:>{width - 1}.1f}%" for v in row))
        return "\n".join(lines)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["truth\\pred"] + [c.title for c in self.classes]
                   + [f"{c.title}_pct" for c in self.classes])
        for c, counts, pct in zip(self.classes, self.counts, self.row_percentages):
            w.writerow([c.title] + [int(v) for v in counts] + [f"{v:.1f}" for v in pct])
        return buf.getvalue()


def confusion(pred, truth, classes=ALL_LABELS) -> ConfusionMatrix:
    pred, truth = list(pred), list(truth)
    if len(pred) != len(truth):
        raise LengthMismatch(f"{len(pred)} predictions for {len(truth)} labels")
    if not pred:
        raise Empty("no samples to score")
    classes = tuple(DensityLabel(c) for c in classes)
    index = {c: k for k, c in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for p, t in zip(pred, truth):
        counts[index[DensityLabel(int(t))], index[DensityLabel(int(p))]] += 1
    return ConfusionMatrix(classes, counts)


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise Empty("confusion matrix is empty")
    return float(np.trace(cm.counts)) / cm.total


@dataclass(frozen=True)
class SweepRow:
    descriptor: str
    block_size: int
    accuracy: float | None
    seconds: float
    error: str | None = None


@dataclass
class SweepReport:
    descriptor: str
    rows: list[SweepRow] = field(default_factory=list)

    @property
    def block_sizes(self) -> list[int]:
        return [r.block_size for r in self.rows]

    @property
    def accuracies(self) -> dict[int, float | None]:
        return {r.block_size: r.accuracy for r in self.rows}

    @property
    def ok(self) -> bool:
        return all(r.error is None for r in self.rows)

    def csv_rows(self) -> list[list[str]]:
        out = []
        for r in self.rows:
            acc = f"ERROR:{r.error}" if r.error else f"{r.accuracy:.6f}"
            out.append([r.descriptor, str(r.block_size), acc, f"{r.seconds:.3f}"])
        return out

    def to_table(self) -> str:
        lines = [f"{'descriptor':<10} {'block':>6} {'accuracy':>9} {'seconds':>9}"]
        for r in self.rows:
            acc = r.error if r.error else f"{r.accuracy:.4f}"
            lines.append(f"{r.descriptor:<10} {r.block_size:>6} {acc:>9} {r.seconds:>9.3f}")
        return "\n".join(lines)


CSV_HEADER = ["descriptor", "block_size", "accuracy", "seconds"]


def reports_to_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for rep in reports:
        w.writerows(rep.csv_rows())
    return buf.getvalue()


def holdout_accuracy(train: Manifest, test: Manifest, config: FeatureConfig,
                     settings: SVMSettings, seed: int, jobs: int = 1):
    """Fit on ``train``, score on ``test``. Returns ``(accuracy, confusion, model)``."""
    tr = manifest_features(train, config, jobs)
    te = manifest_features(test, config, jobs)
    model, _ = fit_model(tr, config, settings, seed)
    pred, _ = model.predict_many(te.X)
    cm = confusion(pred, te.labels)
    return accuracy(cm), cm, model


def sweep_block_sizes(manifest: Manifest, sizes, descriptor: str = "clbp",
                      settings: SVMSettings = SVMSettings(), seed: int = 0,
                      base: FeatureConfig | None = None, test_fraction: float = 0.3,
                      jobs: int = 1) -> SweepReport:
    """Re-tile, re-extract and retrain at each block size on one seeded split.

    A failing size produces a row carrying the error code instead of
    aborting the sweep.
    """
    base = base or FeatureConfig()
    config0 = FeatureConfig(descriptor, base.params, base.block_size, base.cell_size,
                            base.overlap, base.normalize, base.glcm_levels)
    train, test = split(manifest, test_fraction, seed)
    report = SweepReport(descriptor)
    for size in sizes:
        start = time.monotonic()
        try:
            config = config0.with_block_size(int(size))
            acc, _, _ = holdout_accuracy(train, test, config, settings, seed, jobs)
            row = SweepRow(descriptor, int(size), acc, round(time.monotonic() - start, 3))
        except (ClbpError, ValueError) as exc:
            code = getattr(exc, "code", "ValueError")
            log.warning("block size %s failed: %s", size, exc)
            row = SweepRow(descriptor, int(size), None, round(time.monotonic() - start, 3), code)
        report.rows.append(row)
        log.info("%s block %s -> %s", descriptor, size, row.accuracy if row.error is None else row.error)
    return report


def overlay_labels(image: GrayImage, grid: BlockGrid, labels) -> np.ndarray:
    """RGB copy of ``image`` with block outlines and a VL/L/M/H tag per block."""
    labels = list(labels)
    if len(labels) != len(grid.blocks):
        raise CountMismatch(f"{len(labels)} labels for {len(grid.blocks)} blocks")
    canvas = Image.fromarray(image.to_uint8(), mode="L").convert("RGB")
    draw = ImageDraw.Draw(canvas)
    font = ImageFont.load_default()
    for block, label in zip(grid.blocks, labels):
        label = DensityLabel(label)
        color = LABEL_COLORS[label]
        draw.rectangle([block.x, block.y, block.x1 - 1, block.y1 - 1], outline=color, width=2)
        tx, ty = block.x + 4, block.y + 4
        box = draw.textbbox((tx, ty), label.short, font=font)
        draw.rectangle([box[0] - 1, box[1] - 1, box[2] + 1, box[3] + 1], fill=(0, 0, 0))
        draw.text((tx, ty), label.short, fill=color, font=font)
    return np.asarray(canvas)


def save_overlay(rgb: np.ndarray, path) -> None:
    Image.fromarray(np.asarray(rgb, dtype=np.uint8), mode="RGB").save(path, format="PNG")
