"""Command-line entry point: ``clbpcrowd {train,predict,evaluate,sweep,synth}``.

Settings are resolved as command-line flags > ``--config`` JSON file >
built-in defaults, and the effective configuration is echoed to stderr
before any work starts. Failures print a single ``ERROR <code>: <detail>``
line and exit non-zero.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from . import __version__
from .dataset import load_manifest, write_synth_corpus
from .descriptor import CLBPParams
from .errors import ClbpError, ConfigError, Empty
from .evaluation import (
    accuracy,
    confusion,
    overlay_labels,
    reports_to_csv,
    save_overlay,
    sweep_block_sizes,
)
from .features import DESCRIPTORS, FeatureConfig, manifest_features, resolve_jobs
from .imaging import load_grayscale
from .pipeline import SVMSettings, model_feature_config, predict_frame, train_on_manifest
from .svm import KernelSpec, load_model, save_model

log = logging.getLogger("clbpcrowd")


@dataclass
class RunConfig:
    # descriptor
    descriptor: str = "clbp"
    radius: float = 1.0
    points: int = 8
    mapping: str = "riu2"
    scheme: str = "joint"
    # geometry
    block_size: int | None = None
    cell_size: int = 32
    overlap: float = 0.5
    # classifier
    kernel: str = "rbf"
    c: float | None = None
    gamma: float | None = None
    tol: float = 1e-3
    folds: int = 5
    scale: str = "none"
    seed: int = 0
    jobs: int = 0
    # paths
    manifest: str | None = None
    model: str | None = None
    out: str | None = None
    overlay: str | None = None
    # command specific
    sizes: list | None = None
    descriptors: list | None = None
    per_class: int = 50
    size: int = 128
    sanity: bool = False

    def feature_config(self, fallback_block: int | None = None) -> FeatureConfig:
        block = self.block_size or fallback_block or 96
        params = CLBPParams(self.radius, self.points, self.mapping, self.scheme)
        return FeatureConfig(self.descriptor, params, block, self.cell_size, self.overlap)

    def svm_settings(self) -> SVMSettings:
        return SVMSettings(kernel=self.kernel, C=self.c, gamma=self.gamma, tol=self.tol,
                           k_folds=self.folds, scale=self.scale)

    def validate(self) -> None:
        try:
            self.feature_config()
            if self.kernel not in ("rbf", "linear"):
                raise ValueError(f"kernel must be rbf or linear, got {self.kernel!r}")
            if self.gamma is not None:
                KernelSpec(self.kernel, self.gamma)
            if self.c is not None and not self.c > 0:
                raise ValueError("--c must be positive")
            if self.scale not in ("auto", "none", "zscore"):
                raise ValueError("scale must be auto, none or zscore")
            if self.folds < 2:
                raise ValueError("folds must be >= 2")
            for d in self.descriptors or ():
                if d not in DESCRIPTORS:
                    raise ValueError(f"unknown descriptor {d!r}")
            if self.per_class < 1:
                raise ValueError("per_class must be >= 1")
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


_FIELD_NAMES = {f.name for f in fields(RunConfig)}


def _csv_ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _csv_words(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _common(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    g = p.add_argument_group("configuration")
    g.add_argument("--config", metavar="FILE", help="JSON file with RunConfig keys")
    g.add_argument("--manifest", default=S, help="annotation manifest")
    g.add_argument("--model", default=S, help="model file")
    g.add_argument("--out", default=S, help="output directory")
    g.add_argument("--seed", type=int, default=S, help="root random seed (default 0)")
    g.add_argument("--jobs", type=int, default=S,
                   help="feature-extraction workers; 0 = logical CPUs (default)")
    d = p.add_argument_group("descriptor")
    d.add_argument("--descriptor", choices=DESCRIPTORS, default=S, help="default clbp")
    d.add_argument("--radius", type=float, default=S, help="ring radius (default 1)")
    d.add_argument("--points", type=int, default=S, help="ring samples (default 8)")
    d.add_argument("--mapping", choices=("riu2", "full"), default=S, help="default riu2")
    d.add_argument("--scheme", choices=("joint", "concat"), default=S, help="default joint")
    d.add_argument("--block-size", dest="block_size", type=int, default=S,
                   help="block side in pixels (default: manifest @block_size, else 96)")
    d.add_argument("--cell-size", dest="cell_size", type=int, default=S, help="default 32")
    d.add_argument("--overlap", type=float, default=S, help="cell overlap in [0,1) (default 0.5)")
    s = p.add_argument_group("classifier")
    s.add_argument("--kernel", choices=("rbf", "linear"), default=S, help="default rbf")
    s.add_argument("--c", type=float, default=S, help="SVM C; omitted = grid search")
    s.add_argument("--gamma", type=float, default=S, help="RBF gamma; omitted = grid search")
    s.add_argument("--tol", type=float, default=S, help="SMO KKT tolerance (default 1e-3)")
    s.add_argument("--folds", type=int, default=S, help="grid-search folds (default 5)")
    s.add_argument("--scale", choices=("auto", "none", "zscore"), default=S,
                   help="feature scaling (default none; auto = z-score for glcm only)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clbpcrowd", description="Block-wise crowd density estimation with CLBP + SVM.",
        allow_abbrev=False)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", allow_abbrev=False,
                       help="extract features, (grid-search,) train, write model")
    _common(p)

    p = sub.add_parser("predict", allow_abbrev=False,
                       help="label every block of one frame (CSV on stdout)")
    _common(p)
    p.add_argument("frame", help="PGM or PNG frame")
    p.add_argument("--overlay", default=argparse.SUPPRESS, help="write a labeled PNG here")

    p = sub.add_parser("evaluate", allow_abbrev=False,
                       help="confusion matrix and accuracy on a labeled manifest")
    _common(p)
    p.add_argument("--sanity", action="store_true", default=argparse.SUPPRESS,
                   help="mark the run as scoring the training set")

    p = sub.add_parser("sweep", allow_abbrev=False,
                       help="accuracy per block size and descriptor (CSV on stdout)")
    _common(p)
    p.add_argument("--sizes", type=_csv_ints, default=argparse.SUPPRESS,
                   help="comma-separated block sizes, e.g. 64,96,128")
    p.add_argument("--descriptors", type=_csv_words, default=argparse.SUPPRESS,
                   help="comma-separated subset of clbp,lbp,glcm (default all)")

    p = sub.add_parser("synth", allow_abbrev=False,
                       help="write a synthetic labeled corpus")
    _common(p)
    p.add_argument("--per-class", dest="per_class", type=int, default=argparse.SUPPRESS,
                   help="frames per density level (default 50)")
    p.add_argument("--size", type=int, default=argparse.SUPPRESS,
                   help="frame side in pixels, >= 64 (default 128)")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        try:
            data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = sorted(set(data) - _FIELD_NAMES)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        values.update(data)
    for name in _FIELD_NAMES:
        if name in vars(args):
            values[name] = getattr(args, name)
    try:
        cfg = RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    cfg.validate()
    return cfg


def _require(value, flag: str):
    if not value:
        raise ConfigError(f"{flag} is required")
    return value


def cmd_train(cfg: RunConfig) -> int:
    manifest = load_manifest(_require(cfg.manifest, "--manifest"))
    model_path = _require(cfg.model, "--model")
    config = cfg.feature_config(manifest.block_size)
    model, search, blocks = train_on_manifest(manifest, config, cfg.svm_settings(), cfg.seed,
                                              resolve_jobs(cfg.jobs))
    if search is not None:
        print(f"grid_search C={search.best_C:g} gamma={search.best_gamma:g} "
              f"cv_accuracy={search.mean(search.best_C, search.best_gamma):.4f}")
    pred, _ = model.predict_many(blocks.X)
    acc = accuracy(confusion(pred, blocks.labels))
    save_model(model, model_path)
    print(f"blocks {len(blocks)}")
    print(f"train_accuracy {acc:.4f}")
    return 0


def cmd_predict(cfg: RunConfig, frame: str) -> int:
    model = load_model(_require(cfg.model, "--model"))
    image = load_grayscale(frame)
    grid, labels, votes = predict_frame(model, image)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["block_index", "x", "y", "w", "h", "label"]
               + [f"votes_{c.title}" for c in model.classes])
    for k, (b, lab, v) in enumerate(zip(grid.blocks, labels, votes)):
        w.writerow([k, b.x, b.y, b.w, b.h, lab.title] + [int(n) for n in v])
    if cfg.overlay:
        save_overlay(overlay_labels(image, grid, labels), cfg.overlay)
        log.info("overlay written to %s", cfg.overlay)
    return 0


def cmd_evaluate(cfg: RunConfig) -> int:
    model = load_model(_require(cfg.model, "--model"))
    manifest = load_manifest(_require(cfg.manifest, "--manifest"))
    config = model_feature_config(model)
    blocks = manifest_features(manifest, config, resolve_jobs(cfg.jobs))
    if len(blocks) == 0:
        raise Empty(f"manifest {cfg.manifest} has no annotated blocks")
    pred, _ = model.predict_many(blocks.X)
    cm = confusion(pred, blocks.labels)
    if cfg.sanity:
        print("# sanity mode: scoring the training manifest, not a held-out set")
    print(cm.to_table())
    print(f"accuracy {accuracy(cm):.4f}")
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "confusion.csv").write_text(cm.to_csv(), encoding="utf-8")
    return 0


def cmd_sweep(cfg: RunConfig) -> int:
    manifest = load_manifest(_require(cfg.manifest, "--manifest"))
    sizes = _require(cfg.sizes, "--sizes")
    base = cfg.feature_config(manifest.block_size)
    reports = []
    for descriptor in cfg.descriptors or DESCRIPTORS:
        reports.append(sweep_block_sizes(manifest, sizes, descriptor, cfg.svm_settings(),
                                         cfg.seed, base, jobs=resolve_jobs(cfg.jobs)))
    text = reports_to_csv(reports)
    sys.stdout.write(text)
    for rep in reports:
        print(rep.to_table(), file=sys.stderr)
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "sweep.csv").write_text(text, encoding="utf-8")
    failed = [r for rep in reports for r in rep.rows if r.error]
    for r in failed:
        _error_line(r.error, f"{r.descriptor} at block size {r.block_size}")
    return 1 if failed else 0


def cmd_synth(cfg: RunConfig) -> int:
    out = _require(cfg.out, "--out")
    manifest = write_synth_corpus(out, cfg.per_class, cfg.size, cfg.seed)
    print(f"frames {len(manifest.entries)}")
    print(f"manifest {Path(out) / 'manifest.txt'}")
    return 0


def _error_line(code: str, detail: str) -> None:
    detail = " ".join(str(detail).split())
    print(f"ERROR {code}: {detail}", file=sys.stderr)


class _StderrHandler(logging.Handler):
    # looks up sys.stderr per record so redirected streams are honored
    def emit(self, record):
        sys.stderr.write(self.format(record) + "\n")


LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging() -> None:
    name = os.environ.get("CLBP_LOG", "error").strip().lower()
    if name not in LOG_LEVELS:
        raise ConfigError(f"CLBP_LOG must be one of error, info, debug; got {name!r}")
    log.setLevel(LOG_LEVELS[name])
    if not any(isinstance(h, _StderrHandler) for h in log.handlers):
        handler = _StderrHandler()
        handler.setFormatter(logging.Formatter("[%(levelname)s] %(name)s: %(message)s"))
        log.addHandler(handler)
        log.propagate = False


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _setup_logging()
        cfg = resolve_config(args)
        echo = {k: v for k, v in asdict(cfg).items()}
        print(f"# config {json.dumps(echo, sort_keys=True)}", file=sys.stderr)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "predict":
            return cmd_predict(cfg, args.frame)
        if args.command == "evaluate":
            return cmd_evaluate(cfg)
        if args.command == "sweep":
            return cmd_sweep(cfg)
        return cmd_synth(cfg)
    except ClbpError as exc:
        _error_line(exc.code, exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
