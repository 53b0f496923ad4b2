"""Soft-margin kernel SVM trained by SMO, one-vs-one multiclass voting, grid search, model files.

Binary training solves the dual

    max  sum(a) - 1/2 sum_ij a_i a_j y_i y_j K(x_i, x_j)
    s.t. 0 <= a_i <= C,  sum_i a_i y_i = 0

two coordinates at a time. Each step picks the maximal violating pair
(largest KKT violation on each side) and solves the pair analytically, so
the dual objective never decreases. Training stops once the violation gap
drops below ``tol``, which bounds every sample's KKT residual by ``tol``.
"""

from __future__ import annotations

import json
import logging
import struct
import warnings
import zlib
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from .dataset import DensityLabel
from .errors import (
    ChecksumMismatch,
    DimensionMismatch,
    InsufficientSamples,
    ModelIOError,
    NoConvergenceWarning,
    SingleClass,
    VersionMismatch,
)

log = logging.getLogger(__name__)

MAGIC = b"CLBPSVM"
FORMAT_VERSION = 1
DEFAULT_C_GRID = (0.1, 1.0, 10.0, 100.0)
DEFAULT_GAMMA_GRID = (0.01, 0.1, 1.0, 10.0)
TAU = 1e-12


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "rbf"
    gamma: float = 1.0

    def __post_init__(self):
        if self.kind not in ("rbf", "linear"):
            raise ValueError(f"kernel must be 'rbf' or 'linear', got {self.kind!r}")
        if self.kind == "rbf" and not (np.isfinite(self.gamma) and self.gamma > 0):
            raise ValueError(f"rbf gamma must be finite and positive, got {self.gamma}")

    def matrix(self, A, B) -> np.ndarray:
        A = np.atleast_2d(np.asarray(A, dtype=np.float64))
        B = np.atleast_2d(np.asarray(B, dtype=np.float64))
        if A.shape[1] != B.shape[1]:
            raise DimensionMismatch(f"feature lengths differ: {A.shape[1]} vs {B.shape[1]}")
        if self.kind == "linear":
            return A @ B.T
        return np.exp(-self.gamma * squared_distances(A, B))

    def from_sqdist(self, d2: np.ndarray) -> np.ndarray:
        return np.exp(-self.gamma * d2)


def squared_distances(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    aa = np.einsum("ij,ij->i", A, A)[:, None]
    bb = np.einsum("ij,ij->i", B, B)[None, :]
    return np.maximum(aa + bb - 2.0 * (A @ B.T), 0.0)


def _vector(x) -> np.ndarray:
    return np.asarray(getattr(x, "values", x), dtype=np.float64).ravel()


def kernel_eval(a, b, spec: KernelSpec) -> float:
    a, b = _vector(a), _vector(b)
    if a.shape != b.shape:
        raise DimensionMismatch(f"feature lengths differ: {a.size} vs {b.size}")
    if spec.kind == "linear":
        return float(a @ b)
    d = a - b
    return float(np.exp(-spec.gamma * (d @ d)))


@dataclass(eq=False)
class BinaryModel:
    """Decision function ``sum_i coef_i K(sv_i, x) + bias``; ``coef_i = y_i a_i``."""

    support_vectors: np.ndarray
    alphas: np.ndarray
    bias: float
    kernel: KernelSpec
    C: float = 1.0
    converged: bool = True
    support_index: np.ndarray | None = None
    objective_trace: list | None = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.support_vectors.shape[1]

    def decision_function(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.dim:
            raise DimensionMismatch(f"expected {self.dim} features, got {X.shape[1]}")
        if len(self.alphas) == 0:
            return np.full(X.shape[0], self.bias)
        return self.kernel.matrix(X, self.support_vectors) @ self.alphas + self.bias


def decision_value(model: BinaryModel, x) -> float:
    return float(model.decision_function(_vector(x)[None, :])[0])


def dual_objective(alpha: np.ndarray, y: np.ndarray, K: np.ndarray) -> float:
    ay = alpha * y
    return float(alpha.sum() - 0.5 * ay @ K @ ay)


@dataclass
class _SMOResult:
    alpha: np.ndarray
    bias: float
    converged: bool
    iterations: int
    trace: list | None


def _snap_box(a: float, C: float) -> float:
    eps = 1e-12 * C
    if a <= eps:
        return 0.0
    if a >= C - eps:
        return C
    return a


def _smo(K: np.ndarray, y: np.ndarray, C: float, tol: float, max_iter: int,
         seed, debug: bool = False) -> _SMOResult:
    n = len(y)
    alpha = np.zeros(n)
    err = -y.astype(np.float64)          # u_t - y_t with u the bias-free output
    # seeded scan order breaks ties between equally violating samples
    order = np.random.default_rng(seed).permutation(n)
    Ko, yo = K[np.ix_(order, order)], y[order]
    err = err[order]
    pos, neg = yo > 0, yo < 0
    trace = [0.0] if debug else None
    converged = False
    it = 0
    while True:
        at_upper = alpha >= C
        at_lower = alpha <= 0.0
        up = (pos & ~at_upper) | (neg & ~at_lower)
        low = (neg & ~at_upper) | (pos & ~at_lower)
        score = -err
        i = int(np.argmax(np.where(up, score, -np.inf)))
        j = int(np.argmin(np.where(low, score, np.inf)))
        gap = score[i] - score[j]
        if not up.any() or not low.any() or gap <= tol:
            converged = True
            break
        if it >= max_iter:
            break
        it += 1
        yi, yj = yo[i], yo[j]
        ai, aj = alpha[i], alpha[j]
        if yi != yj:
            lo, hi = max(0.0, aj - ai), min(C, C + aj - ai)
        else:
            lo, hi = max(0.0, ai + aj - C), min(C, ai + aj)
        eta = max(Ko[i, i] + Ko[j, j] - 2.0 * Ko[i, j], TAU)
        aj_new = _snap_box(min(max(aj + yj * (err[i] - err[j]) / eta, lo), hi), C)
        ai_new = _snap_box(ai + yi * yj * (aj - aj_new), C)
        alpha[i], alpha[j] = ai_new, aj_new
        err += yi * (ai_new - ai) * Ko[:, i] + yj * (aj_new - aj) * Ko[:, j]
        if debug:
            w = dual_objective(alpha, yo, Ko)
            assert w >= trace[-1] - 1e-9 * max(1.0, abs(w)), "dual objective decreased"
            trace.append(w)

    score = -err
    free = (alpha > 0.0) & (alpha < C)
    if free.any():
        bias = float(np.mean(score[free]))
    else:
        at_upper, at_lower = alpha >= C, alpha <= 0.0
        up = (pos & ~at_upper) | (neg & ~at_lower)
        low = (neg & ~at_upper) | (pos & ~at_lower)
        m = score[up].max() if up.any() else score[low].min()
        M = score[low].min() if low.any() else score[up].max()
        bias = float(0.5 * (m + M))
    out = np.empty(n)
    out[order] = alpha
    return _SMOResult(out, bias, converged, it, trace)


def _as_pm1(labels) -> np.ndarray:
    y = np.asarray(labels, dtype=np.float64).ravel()
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("binary labels must be -1 or +1")
    if not ((y > 0).any() and (y < 0).any()):
        raise SingleClass("binary training needs at least one sample of each label")
    return y


def train_binary(samples, labels, C: float = 1.0, spec: KernelSpec = KernelSpec(),
                 tol: float = 1e-3, max_passes: int = 100, seed=0,
                 kernel_matrix: np.ndarray | None = None, debug: bool = False) -> BinaryModel:
    """Train one soft-margin SVM.

    ``max_passes`` bounds the work at ``max_passes * n`` pair updates; when
    exhausted the best-so-far model is returned with ``converged=False``
    and a ``NoConvergenceWarning`` is issued. ``kernel_matrix`` may supply a
    precomputed Gram matrix. ``debug`` asserts the dual objective after
    every update and keeps the trace on the model.
    """
    X = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    y = _as_pm1(labels)
    if X.shape[0] != y.size:
        raise DimensionMismatch(f"{X.shape[0]} samples but {y.size} labels")
    if not C > 0:
        raise ValueError("C must be positive")
    K = spec.matrix(X, X) if kernel_matrix is None else kernel_matrix
    res = _smo(K, y, C, tol, max_passes * max(len(y), 1), seed, debug)
    if not res.converged:
        warnings.warn(f"SMO stopped after {res.iterations} updates without reaching tol={tol}",
                      NoConvergenceWarning, stacklevel=2)
    sv = np.flatnonzero(res.alpha > 0.0)
    return BinaryModel(X[sv], res.alpha[sv] * y[sv], res.bias, spec, C, res.converged, sv,
                       res.trace)


def kkt_residuals(model: BinaryModel, X, y, alpha_full: np.ndarray | None = None) -> np.ndarray:
    """Per-sample KKT violation in units of ``y * f(x)``.

    Zero-alpha samples need ``y f >= 1``, free ones ``y f == 1`` and bound
    ones ``y f <= 1``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if alpha_full is None:
        alpha_full = np.zeros(len(y))
        alpha_full[model.support_index] = np.abs(model.alphas)
    yf = y * model.decision_function(X)
    res = np.zeros(len(y))
    zero = alpha_full <= 0.0
    bound = alpha_full >= model.C
    free = ~zero & ~bound
    res[zero] = np.maximum(0.0, 1.0 - yf[zero])
    res[free] = np.abs(1.0 - yf[free])
    res[bound] = np.maximum(0.0, yf[bound] - 1.0)
    return res


@dataclass(eq=False)
class MulticlassModel:
    """One-vs-one ensemble. Pair ``(a, b)`` with ``a < b`` votes ``a`` when its decision is >= 0."""

    classes: tuple[DensityLabel, ...]
    pairwise: dict
    C: float
    kernel: KernelSpec
    meta: dict = field(default_factory=dict)
    feature_mean: np.ndarray | None = None
    feature_scale: np.ndarray | None = None
    format_version: int = FORMAT_VERSION

    @property
    def dim(self) -> int:
        return next(iter(self.pairwise.values())).dim

    def transform(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.dim:
            raise DimensionMismatch(f"model expects {self.dim} features, got {X.shape[1]}")
        if self.feature_mean is not None:
            X = (X - self.feature_mean) / self.feature_scale
        return X

    def votes(self, X) -> np.ndarray:
        """``(n, k)`` vote counts in ``classes`` order."""
        X = self.transform(X)
        index = {c: k for k, c in enumerate(self.classes)}
        votes = np.zeros((X.shape[0], len(self.classes)), dtype=np.int64)
        for (a, b), model in self.pairwise.items():
            f = model.decision_function(X)
            votes[f >= 0, index[a]] += 1
            votes[f < 0, index[b]] += 1
        return votes

    def predict_many(self, X) -> tuple[list[DensityLabel], np.ndarray]:
        votes = self.votes(X)
        # argmax returns the first maximum, i.e. the lowest class on ties
        winners = np.argmax(votes, axis=1)
        return [self.classes[w] for w in winners], votes


def predict(model: MulticlassModel, x) -> tuple[DensityLabel, tuple[int, ...]]:
    labels, votes = model.predict_many(_vector(x)[None, :])
    return labels[0], tuple(int(v) for v in votes[0])


def vote_winner(votes, classes=tuple(DensityLabel)) -> DensityLabel:
    """Argmax of vote counts, ties going to the earliest class."""
    return classes[int(np.argmax(np.asarray(votes)))]


def zscore_params(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale < 1e-12] = 1.0
    return mean, scale


def _fit_pairs(K: np.ndarray, labels: np.ndarray, classes, C: float, tol: float,
               max_passes: int, seed) -> dict:
    """Train every class pair on rows/cols of a precomputed Gram matrix."""
    out = {}
    for index, (a, b) in enumerate(combinations(classes, 2)):
        idx = np.flatnonzero((labels == a) | (labels == b))
        y = np.where(labels[idx] == a, 1.0, -1.0)
        res = _smo(K[np.ix_(idx, idx)], y, C, tol, max_passes * len(idx),
                   [*_seed_seq(seed), index])
        if not res.converged:
            warnings.warn(f"pair {a}/{b}: SMO hit its update budget", NoConvergenceWarning,
                          stacklevel=2)
        sv = np.flatnonzero(res.alpha > 0.0)
        out[(a, b)] = (idx[sv], res.alpha[sv] * y[sv], res.bias, res.converged)
    return out


def _seed_seq(seed) -> list:
    return [seed] if np.isscalar(seed) else list(seed)


def _check_labels(labels) -> tuple[np.ndarray, tuple[DensityLabel, ...]]:
    labels = np.asarray([int(v) for v in labels], dtype=np.int64)
    classes = tuple(DensityLabel(c) for c in sorted(set(labels.tolist())))
    if len(classes) < 2:
        raise SingleClass(f"need at least 2 classes, got {[c.title for c in classes]}")
    return labels, classes


def train_multiclass(features, labels, C: float = 1.0, spec: KernelSpec = KernelSpec(),
                     tol: float = 1e-3, seed: int = 0, max_passes: int = 100,
                     scale: str = "none", meta: dict | None = None) -> MulticlassModel:
    """One binary SVM per class pair, each trained on that pair's samples only."""
    X = np.atleast_2d(np.asarray([_vector(f) for f in features], dtype=np.float64))
    labels, classes = _check_labels(labels)
    if X.shape[0] != labels.size:
        raise DimensionMismatch(f"{X.shape[0]} samples but {labels.size} labels")
    mean = std = None
    if scale == "zscore":
        mean, std = zscore_params(X)
        X = (X - mean) / std
    elif scale != "none":
        raise ValueError(f"scale must be 'none' or 'zscore', got {scale!r}")
    K = spec.matrix(X, X)
    pairs = {}
    for (a, b), (sv, coef, bias, ok) in _fit_pairs(K, labels, classes, C, tol, max_passes,
                                                   seed).items():
        pairs[(a, b)] = BinaryModel(X[sv], coef, bias, spec, C, ok, sv)
    return MulticlassModel(classes, pairs, C, spec, dict(meta or {}), mean, std)


def stratified_folds(labels, k_folds: int, seed: int) -> np.ndarray:
    """Fold index per sample; each class is spread round-robin over a seeded shuffle."""
    labels = np.asarray([int(v) for v in labels])
    folds = np.empty(labels.size, dtype=np.int64)
    for c in sorted(set(labels.tolist())):
        idx = np.flatnonzero(labels == c)
        if idx.size < k_folds:
            raise InsufficientSamples(
                f"class {DensityLabel(c).title} has {idx.size} samples, fewer than {k_folds} folds")
        perm = np.random.default_rng([*_seed_seq(seed), c]).permutation(idx.size)
        folds[idx[perm]] = np.arange(idx.size) % k_folds
    return folds


def _predict_from_kernel(Kx: np.ndarray, pairs: dict, classes) -> np.ndarray:
    index = {c: k for k, c in enumerate(classes)}
    votes = np.zeros((Kx.shape[0], len(classes)), dtype=np.int64)
    for (a, b), (sv, coef, bias, _) in pairs.items():
        f = Kx[:, sv] @ coef + bias
        votes[f >= 0, index[a]] += 1
        votes[f < 0, index[b]] += 1
    return np.asarray(classes)[np.argmax(votes, axis=1)]


@dataclass
class GridSearchResult:
    best_C: float
    best_gamma: float
    scores: dict            # (C, gamma) -> list of fold accuracies

    def mean(self, C: float, gamma: float) -> float:
        return float(np.mean(self.scores[(C, gamma)]))

    def __iter__(self):
        return iter((self.best_C, self.best_gamma, self.scores))


def grid_search_cv(features, labels, C_grid=DEFAULT_C_GRID, gamma_grid=DEFAULT_GAMMA_GRID,
                   k_folds: int = 5, seed: int = 0, kernel: str = "rbf", tol: float = 1e-3,
                   max_passes: int = 100, scale: str = "none") -> GridSearchResult:
    """Stratified k-fold search; best mean accuracy wins, ties go to smaller C then gamma."""
    if k_folds < 2:
        raise ValueError("k_folds must be >= 2")
    X = np.atleast_2d(np.asarray([_vector(f) for f in features], dtype=np.float64))
    labels, classes = _check_labels(labels)
    folds = stratified_folds(labels, k_folds, seed)
    gammas = list(gamma_grid) if kernel == "rbf" else [0.0]
    fold_data = []
    for k in range(k_folds):
        tr, va = np.flatnonzero(folds != k), np.flatnonzero(folds == k)
        Xtr, Xva = X[tr], X[va]
        if scale == "zscore":
            mean, std = zscore_params(Xtr)
            Xtr, Xva = (Xtr - mean) / std, (Xva - mean) / std
        if kernel == "rbf":
            d_tr, d_va = squared_distances(Xtr, Xtr), squared_distances(Xva, Xtr)
        else:
            d_tr, d_va = Xtr @ Xtr.T, Xva @ Xtr.T
        fold_data.append((tr, va, d_tr, d_va))
    scores = {}
    for gamma in gammas:
        for C in C_grid:
            if (C, gamma) in scores:
                continue
            accs = []
            for k, (tr, va, d_tr, d_va) in enumerate(fold_data):
                if kernel == "rbf":
                    K_tr, K_va = np.exp(-gamma * d_tr), np.exp(-gamma * d_va)
                else:
                    K_tr, K_va = d_tr, d_va
                pairs = _fit_pairs(K_tr, labels[tr], classes, C, tol, max_passes,
                                   [*_seed_seq(seed), k])
                pred = _predict_from_kernel(K_va, pairs, classes)
                accs.append(float(np.mean(pred == labels[va])))
            scores[(C, gamma)] = accs
            log.debug("grid C=%g gamma=%g mean acc=%.4f", C, gamma, np.mean(accs))
    best = min(scores, key=lambda cg: (-np.mean(scores[cg]), cg[0], cg[1]))
    return GridSearchResult(best[0], best[1], scores)


# -- model files -------------------------------------------------------------

def _pack_array(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def model_to_bytes(model: MulticlassModel) -> bytes:
    header = {
        "classes": [int(c) for c in model.classes],
        "C": model.C,
        "kernel": {"kind": model.kernel.kind, "gamma": model.kernel.gamma},
        "meta": model.meta,
    }
    meta = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out = bytearray(MAGIC)
    out += struct.pack("<H", model.format_version)
    out += struct.pack("<I", len(meta)) + meta
    if model.feature_mean is None:
        out += struct.pack("<I", 0)
    else:
        out += struct.pack("<I", model.feature_mean.size)
        out += _pack_array(model.feature_mean) + _pack_array(model.feature_scale)
    out += struct.pack("<I", len(model.pairwise))
    for (a, b), m in model.pairwise.items():
        n_sv, dim = m.support_vectors.shape
        out += struct.pack("<BBBdII", int(a), int(b), int(m.converged), m.bias, n_sv, dim)
        out += _pack_array(m.alphas) + _pack_array(m.support_vectors)
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes, pos: int):
        self.data, self.pos = data, pos

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise ChecksumMismatch("model file is truncated")
        vals = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return vals

    def array(self, count: int, shape=None) -> np.ndarray:
        nbytes = 8 * count
        if self.pos + nbytes > len(self.data):
            raise ChecksumMismatch("model file is truncated")
        arr = np.frombuffer(self.data, dtype="<f8", count=count, offset=self.pos).astype(np.float64)
        self.pos += nbytes
        return arr.reshape(shape) if shape is not None else arr


def model_from_bytes(data: bytes) -> MulticlassModel:
    if not data.startswith(MAGIC):
        raise ChecksumMismatch("missing CLBPSVM magic; not a model file")
    if len(data) < len(MAGIC) + 2:
        raise ChecksumMismatch("model file is truncated")
    (version,) = struct.unpack_from("<H", data, len(MAGIC))
    if version != FORMAT_VERSION:
        raise VersionMismatch(
            f"model format_version {version} is not supported (this build reads {FORMAT_VERSION})")
    if len(data) < len(MAGIC) + 6:
        raise ChecksumMismatch("model file is truncated")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise ChecksumMismatch("model file CRC32 does not match its contents")
    r = _Reader(body, len(MAGIC) + 2)
    (meta_len,) = r.take("<I")
    header = json.loads(body[r.pos:r.pos + meta_len].decode("utf-8"))
    r.pos += meta_len
    (scaler_dim,) = r.take("<I")
    mean = scale = None
    if scaler_dim:
        mean, scale = r.array(scaler_dim), r.array(scaler_dim)
    kernel = KernelSpec(header["kernel"]["kind"], header["kernel"]["gamma"])
    (n_pairs,) = r.take("<I")
    pairs = {}
    for _ in range(n_pairs):
        a, b, ok, bias, n_sv, dim = r.take("<BBBdII")
        coef = r.array(n_sv)
        sv = r.array(n_sv * dim, (n_sv, dim))
        pairs[(DensityLabel(a), DensityLabel(b))] = BinaryModel(
            sv, coef, bias, kernel, header["C"], bool(ok))
    return MulticlassModel(tuple(DensityLabel(c) for c in header["classes"]), pairs,
                           header["C"], kernel, header["meta"], mean, scale, version)


def save_model(model: MulticlassModel, path) -> None:
    try:
        Path(path).write_bytes(model_to_bytes(model))
    except OSError as exc:
        raise ModelIOError(f"cannot write model {path}: {exc}") from exc


def load_model(path) -> MulticlassModel:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ModelIOError(f"cannot read model {path}: {exc}") from exc
    return model_from_bytes(data)
