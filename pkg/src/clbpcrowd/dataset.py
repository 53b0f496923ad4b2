"""Density labels, annotation manifests, frame-grouped splits and synthetic crowd blocks.

Manifest grammar (UTF-8, one record per line)::

    # comment                       ignored, as are blank lines
    @source <tag>                   optional, e.g. PETS2009
    @block_size <pixels>            optional block size the rectangles were drawn at
    <frame_id> <x> <y> <w> <h> <count> <label>

``frame_id`` is the frame path relative to the manifest's directory and may
not contain whitespace. ``count`` is a non-negative integer or ``-`` when
unknown. ``label`` is one of ``VeryLow``, ``Low``, ``Medium``, ``High``.
Trailing ``# ...`` comments are allowed on annotation lines.
"""

from __future__ import annotations

import enum
import math
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InconsistentLabel, InsufficientData, MissingFrame, ParseError
from .imaging import GrayImage, Rect, image_size, save_grayscale


class DensityLabel(enum.IntEnum):
    VERY_LOW = 0
    LOW = 1
    MEDIUM = 2
    HIGH = 3

    @property
    def title(self) -> str:
        return _TITLES[self]

    @property
    def short(self) -> str:
        return _SHORT[self]

    @property
    def display(self) -> str:
        return _DISPLAY[self]

    @classmethod
    def parse(cls, text: str) -> "DensityLabel":
        key = text.strip().replace(" ", "").replace("_", "").lower()
        for label in cls:
            if key in (label.title.lower(), label.short.lower(), label.name.replace("_", "").lower()):
                return label
        raise ValueError(f"unknown density label {text!r}")

    def __str__(self):
        return self.title


_TITLES = {DensityLabel.VERY_LOW: "VeryLow", DensityLabel.LOW: "Low",
           DensityLabel.MEDIUM: "Medium", DensityLabel.HIGH: "High"}
_SHORT = {DensityLabel.VERY_LOW: "VL", DensityLabel.LOW: "L",
          DensityLabel.MEDIUM: "M", DensityLabel.HIGH: "H"}
_DISPLAY = {DensityLabel.VERY_LOW: "Very Low", DensityLabel.LOW: "Low",
            DensityLabel.MEDIUM: "Medium", DensityLabel.HIGH: "High"}

ALL_LABELS = tuple(DensityLabel)


def label_from_count(count: int) -> DensityLabel:
    """Person count per block -> density level.

    Bands: 0-6 Very Low, 7-10 Low, 11-16 Medium, 17 and above High. The
    published table leaves 17-26 unassigned; those counts are mapped to
    High so the function is total and monotone.
    """
    if count < 0:
        raise ValueError("count must be non-negative")
    if count < 7:
        return DensityLabel.VERY_LOW
    if count <= 10:
        return DensityLabel.LOW
    if count <= 16:
        return DensityLabel.MEDIUM
    return DensityLabel.HIGH


@dataclass(frozen=True)
class BlockAnnotation:
    frame_id: str
    block: Rect
    person_count: int | None
    label: DensityLabel

    def __post_init__(self):
        if self.person_count is not None:
            if self.person_count < 0:
                raise ValueError("person_count must be non-negative")
            expected = label_from_count(self.person_count)
            if expected != self.label:
                raise InconsistentLabel(
                    f"{self.frame_id} {self.block}: count {self.person_count} implies "
                    f"{expected.title}, annotated {self.label.title}")


@dataclass(frozen=True)
class FrameEntry:
    frame_id: str
    annotations: tuple[BlockAnnotation, ...]
    size: tuple[int, int] | None = None

    @property
    def dominant_label(self) -> DensityLabel:
        counts = Counter(a.label for a in self.annotations)
        return min(counts, key=lambda lab: (-counts[lab], lab))


@dataclass(frozen=True)
class Manifest:
    root: Path
    entries: tuple[FrameEntry, ...] = ()
    block_size: int | None = None
    source: str | None = None

    def frame_path(self, frame_id: str) -> Path:
        return self.root / frame_id

    @property
    def annotations(self) -> list[BlockAnnotation]:
        return [a for e in self.entries for a in e.annotations]

    @property
    def labels(self) -> set[DensityLabel]:
        return {a.label for a in self.annotations}

    def __len__(self):
        return len(self.entries)


def _parse_int(tok: str, what: str, lineno: int) -> int:
    try:
        value = int(tok)
    except ValueError:
        raise ParseError(f"line {lineno}: field {what}: expected an integer, got {tok!r}") from None
    return value


def parse_manifest(text: str, root: Path, check_frames: bool = True) -> Manifest:
    """Parse manifest text; see the module docstring for the grammar."""
    source = None
    block_size = None
    frames: dict[str, list[BlockAnnotation]] = {}
    seen: set[tuple[str, Rect]] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("@"):
            key, _, value = line[1:].partition(" ")
            value = value.strip()
            if key == "source":
                if not value:
                    raise ParseError(f"line {lineno}: field source: missing value")
                source = value
            elif key == "block_size":
                block_size = _parse_int(value, "block_size", lineno)
                if block_size < 1:
                    raise ParseError(f"line {lineno}: field block_size: must be positive")
            else:
                raise ParseError(f"line {lineno}: unknown directive @{key}")
            continue
        toks = line.split()
        if len(toks) != 7:
            raise ParseError(f"line {lineno}: expected 7 fields "
                             f"'frame_id x y w h count label', got {len(toks)}")
        frame_id = toks[0]
        x, y, w, h = (_parse_int(t, name, lineno) for t, name in zip(toks[1:5], "xywh"))
        try:
            rect = Rect(x, y, w, h)
        except ValueError as exc:
            raise ParseError(f"line {lineno}: field rect: {exc}") from None
        if toks[5] == "-":
            count = None
        else:
            count = _parse_int(toks[5], "count", lineno)
            if count < 0:
                raise ParseError(f"line {lineno}: field count: must be non-negative")
        try:
            label = DensityLabel.parse(toks[6])
        except ValueError as exc:
            raise ParseError(f"line {lineno}: field label: {exc}") from None
        if (frame_id, rect) in seen:
            raise ParseError(f"line {lineno}: duplicate annotation for {frame_id} {rect}")
        seen.add((frame_id, rect))
        try:
            ann = BlockAnnotation(frame_id, rect, count, label)
        except InconsistentLabel as exc:
            raise InconsistentLabel(f"line {lineno}: {exc}") from None
        frames.setdefault(frame_id, []).append(ann)

    entries = []
    for frame_id, anns in frames.items():
        size = None
        if check_frames:
            path = root / frame_id
            if not path.is_file():
                raise MissingFrame(f"frame {frame_id} not found under {root}")
            size = image_size(path)
            for a in anns:
                if not a.block.inside(*size):
                    raise ParseError(f"{frame_id}: block {a.block} lies outside the "
                                     f"{size[0]}x{size[1]} frame")
        entries.append(FrameEntry(frame_id, tuple(anns), size))
    return Manifest(root, tuple(entries), block_size, source)


def load_manifest(path, check_frames: bool = True) -> Manifest:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise MissingFrame(f"manifest {path} not found") from None
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: not UTF-8: {exc}") from None
    return parse_manifest(text, path.parent, check_frames)


def format_manifest(manifest: Manifest) -> str:
    lines = []
    if manifest.source is not None:
        lines.append(f"@source {manifest.source}")
    if manifest.block_size is not None:
        lines.append(f"@block_size {manifest.block_size}")
    for entry in manifest.entries:
        for a in entry.annotations:
            count = "-" if a.person_count is None else str(a.person_count)
            b = a.block
            lines.append(f"{a.frame_id} {b.x} {b.y} {b.w} {b.h} {count} {a.label.title}")
    return "\n".join(lines) + "\n"


def save_manifest(manifest: Manifest, path) -> None:
    Path(path).write_text(format_manifest(manifest), encoding="utf-8")


def split(manifest: Manifest, test_fraction: float, seed: int) -> tuple[Manifest, Manifest]:
    """Frame-grouped split, stratified by each frame's dominant label.

    All blocks of a frame land on the same side. Every label present in the
    input must appear on both sides, otherwise ``InsufficientData``.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    groups: dict[DensityLabel, list[FrameEntry]] = {}
    for entry in manifest.entries:
        if entry.annotations:
            groups.setdefault(entry.dominant_label, []).append(entry)
    test_ids: set[str] = set()
    for label in sorted(groups):
        members = sorted(groups[label], key=lambda e: e.frame_id)
        n = len(members)
        n_test = int(math.floor(n * test_fraction + 0.5))
        if n >= 2:
            n_test = min(max(n_test, 1), n - 1)
        rng = np.random.default_rng([seed, int(label)])
        order = rng.permutation(n)
        test_ids.update(members[k].frame_id for k in order[:n_test])
    train = replace(manifest, entries=tuple(e for e in manifest.entries if e.frame_id not in test_ids))
    test = replace(manifest, entries=tuple(e for e in manifest.entries if e.frame_id in test_ids))
    wanted = manifest.labels
    for side, part in (("train", train), ("test", test)):
        missing = wanted - part.labels
        if missing or not part.entries:
            names = ", ".join(lab.title for lab in sorted(missing)) or "all"
            raise InsufficientData(f"{side} side of the split lacks labels: {names}")
    return train, test


# Blob counts per label for a 96x96 reference block, scaled by area.
SYNTH_REFERENCE_SIZE = 96
SYNTH_COUNT_RANGES = {
    DensityLabel.VERY_LOW: (1, 4),
    DensityLabel.LOW: (7, 10),
    DensityLabel.MEDIUM: (13, 16),
    DensityLabel.HIGH: (27, 34),
}
SYNTH_NOISE_SIGMA = 4.0
_PLASTIC = 1.324717957244746
_R2_STEP = np.array([1.0 / _PLASTIC, 1.0 / _PLASTIC ** 2])


def synth_count_range(label: DensityLabel, size: int) -> tuple[int, int]:
    lo, hi = SYNTH_COUNT_RANGES[DensityLabel(label)]
    scale = (size / SYNTH_REFERENCE_SIZE) ** 2
    return int(round(lo * scale)), int(round(hi * scale))


def synth_crowd_texture(label: DensityLabel, size: int, seed: int | Sequence[int]) -> GrayImage:
    """Render a ``size`` x ``size`` block of dark elliptical heads on a flat background.

    The blob count is drawn from a label-specific range, so blocks of
    different labels never share a count. Gaussian noise with sigma 4 gray
    levels is added and the result rounded to integer levels.
    """
    if size < 64:
        raise ValueError("size must be >= 64")
    label = DensityLabel(label)
    seq = [seed] if np.isscalar(seed) else list(seed)
    rng = np.random.default_rng([*seq, int(label), size])
    lo, hi = synth_count_range(label, size)
    n_blobs = int(rng.integers(lo, hi + 1))
    background = float(rng.uniform(150.0, 190.0))
    img = np.full((size, size), background)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    # R2 low-discrepancy placement keeps density even at every sub-block scale
    start = rng.uniform(0.0, 1.0, 2)
    for k in range(n_blobs):
        cx, cy = size * ((start + (k + 1) * _R2_STEP) % 1.0)
        ax = rng.uniform(3.0, 6.0)             # 6-12 px across
        ay = ax * rng.uniform(1.0, 1.5)
        tone = rng.uniform(30.0, 90.0)
        inside = ((xx - cx) / ax) ** 2 + ((yy - cy) / ay) ** 2 <= 1.0
        img[inside] = tone
    img += rng.normal(0.0, SYNTH_NOISE_SIGMA, img.shape)
    return GrayImage(np.clip(np.rint(img), 0, 255))


def synth_blob_count(label: DensityLabel, size: int, seed) -> int:
    """Blob count that ``synth_crowd_texture`` draws for the same arguments."""
    label = DensityLabel(label)
    seq = [seed] if np.isscalar(seed) else list(seed)
    rng = np.random.default_rng([*seq, int(label), size])
    lo, hi = synth_count_range(label, size)
    return int(rng.integers(lo, hi + 1))


def write_synth_corpus(out_dir, per_class: int, size: int = 128, seed: int = 0,
                       labels: Sequence[DensityLabel] = ALL_LABELS) -> Manifest:
    """Write ``per_class`` single-density frames per label plus ``manifest.txt``.

    Each frame carries one annotation covering the whole frame.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for label in labels:
        for k in range(per_class):
            frame_id = f"synth_{DensityLabel(label).short.lower()}_{k:04d}.png"
            save_grayscale(synth_crowd_texture(label, size, (seed, k)), out / frame_id)
            ann = BlockAnnotation(frame_id, Rect(0, 0, size, size), None, DensityLabel(label))
            entries.append(FrameEntry(frame_id, (ann,), (size, size)))
    manifest = Manifest(out, tuple(entries), size, "synthetic")
    save_manifest(manifest, out / "manifest.txt")
    return manifest
