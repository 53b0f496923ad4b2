import warnings

import numpy as np
import pytest

from clbpcrowd.dataset import DensityLabel, synth_crowd_texture
from clbpcrowd.errors import (
    ChecksumMismatch,
    DimensionMismatch,
    InsufficientSamples,
    NoConvergenceWarning,
    SingleClass,
    VersionMismatch,
)
from clbpcrowd.features import FeatureConfig, block_features
from clbpcrowd.imaging import Rect
from clbpcrowd.svm import (
    FORMAT_VERSION,
    MAGIC,
    KernelSpec,
    decision_value,
    dual_objective,
    grid_search_cv,
    kernel_eval,
    kkt_residuals,
    load_model,
    model_from_bytes,
    model_to_bytes,
    predict,
    save_model,
    stratified_folds,
    train_binary,
    train_multiclass,
    vote_winner,
)

import oracles
from problems import SIGN_BAND, probe_grid, random_problem, tiny_problems

VL, L, M, H = DensityLabel


def clusters(per_class=15, spread=0.3, seed=0, classes=(0, 1, 2, 3)):
    rng = np.random.default_rng(seed)
    centers = {0: (0, 0), 1: (3, 0), 2: (0, 3), 3: (3, 3)}
    X = np.vstack([rng.normal(centers[c], spread, size=(per_class, 2)) for c in classes])
    y = np.repeat(classes, per_class)
    return X, y


def test_kernel_examples():
    assert kernel_eval([1.5, -2], [1.5, -2], KernelSpec("rbf", 3.7)) == 1.0
    assert kernel_eval([0], [1], KernelSpec("rbf", 1.0)) == pytest.approx(0.367879, abs=1e-6)
    assert kernel_eval([1, 2], [3, 4], KernelSpec("linear")) == 11
    with pytest.raises(DimensionMismatch):
        kernel_eval([1, 2], [1], KernelSpec("linear"))
    with pytest.raises(ValueError):
        KernelSpec("rbf", 0.0)


def test_two_point_max_margin():
    m = train_binary([[0.0], [1.0]], [-1, 1], C=1e3, spec=KernelSpec("linear"), tol=1e-9)
    assert decision_value(m, [0.5]) == pytest.approx(0.0, abs=1e-9)
    assert decision_value(m, [0.0]) == pytest.approx(-1.0, abs=1e-9)
    assert decision_value(m, [1.0]) == pytest.approx(1.0, abs=1e-9)


def test_xor_with_rbf():
    X = [[0, 0], [1, 1], [0, 1], [1, 0]]
    y = [-1, -1, 1, 1]
    m = train_binary(X, y, C=10, spec=KernelSpec("rbf", 1.0))
    assert np.array_equal(np.sign(m.decision_function(X)), y)
    assert m.converged


def test_duplicated_samples_same_decisions():
    X, y = clusters(per_class=6, classes=(0, 3))
    y = np.where(y == 0, 1.0, -1.0)
    spec = KernelSpec("rbf", 0.5)
    a = train_binary(X, y, C=1e3, spec=spec, tol=1e-6)
    b = train_binary(np.vstack([X, X]), np.concatenate([y, y]), C=1e3, spec=spec, tol=1e-6)
    P = probe_grid(-1, 4)
    fa, fb = a.decision_function(P), b.decision_function(P)
    clear = np.abs(fa) > 1e-3
    assert np.array_equal(np.sign(fa[clear]), np.sign(fb[clear]))


def test_free_support_vectors_sit_on_margin():
    rng = np.random.default_rng(5)
    X, y = random_problem(rng)
    m = train_binary(X, y, C=2.0, spec=KernelSpec("rbf", 0.5), tol=1e-4)
    free = np.abs(m.alphas) < m.C
    assert free.any()
    f = m.decision_function(m.support_vectors[free])
    labels = np.sign(m.alphas[free])
    np.testing.assert_allclose(f, labels, atol=1e-4)


def test_far_probe_returns_bias():
    X, y = clusters(per_class=5, classes=(0, 3))
    m = train_binary(X, np.where(y == 0, 1, -1), C=1, spec=KernelSpec("rbf", 1.0))
    assert decision_value(m, [1e3, -1e3]) == pytest.approx(m.bias, abs=1e-12)


@pytest.mark.parametrize("problem", tiny_problems(seed=1, count=9),
                         ids=lambda p: f"n{len(p[1])}-{p[3]}-C{p[2]}")
def test_agrees_with_brute_force_dual(problem):
    X, y, C, kind, gamma = problem
    alpha, b = oracles.brute_force_dual(X, y, C, kind, gamma)
    m = train_binary(X, y, C, KernelSpec(kind, gamma), tol=1e-6)
    K = np.array([[oracles.kernel(p, q, kind, gamma) for q in X] for p in X])
    ours = np.zeros(len(y))
    ours[m.support_index] = np.abs(m.alphas)
    # the exact optimum can only beat a grid point
    assert dual_objective(ours, y, K) >= dual_objective(alpha, y, K) - 1e-9
    P = probe_grid()
    ref = np.array([oracles.dual_decision(X, y, alpha, b, p, kind, gamma) for p in P])
    clear = np.abs(ref) > SIGN_BAND * np.abs(ref).max()
    assert np.array_equal(np.sign(m.decision_function(P))[clear], np.sign(ref)[clear])


def test_kkt_residuals_within_tol():
    rng = np.random.default_rng(8)
    for _ in range(5):
        X, y = random_problem(rng)
        m = train_binary(X, y, C=1.0, spec=KernelSpec("rbf", 0.3), tol=1e-3)
        assert m.converged
        assert kkt_residuals(m, X, y).max() <= 1e-3


def test_debug_mode_objective_never_decreases():
    rng = np.random.default_rng(2)
    X, y = random_problem(rng, 40)
    m = train_binary(X, y, C=3.0, spec=KernelSpec("rbf", 1.0), debug=True)
    trace = np.array(m.objective_trace)
    assert len(trace) > 2 and np.all(np.diff(trace) >= -1e-9)


def test_budget_exhaustion_warns():
    rng = np.random.default_rng(3)
    X, y = random_problem(rng, 60)
    with pytest.warns(NoConvergenceWarning):
        m = train_binary(X, y, C=10.0, spec=KernelSpec("rbf", 1.0), tol=1e-9, max_passes=0)
    assert not m.converged


def test_binary_errors():
    with pytest.raises(SingleClass):
        train_binary([[0], [1]], [1, 1])
    with pytest.raises(ValueError):
        train_binary([[0], [1]], [0, 1])
    with pytest.raises(DimensionMismatch):
        train_binary([[0], [1], [2]], [1, -1])
    m = train_binary([[0], [1]], [1, -1], spec=KernelSpec("linear"))
    with pytest.raises(DimensionMismatch):
        m.decision_function([[1, 2]])


def test_pair_counts():
    X, y = clusters(classes=(0, 2))
    assert len(train_multiclass(X, y, 1.0).pairwise) == 1
    X, y = clusters()
    model = train_multiclass(X, y, 1.0)
    assert len(model.pairwise) == 6
    assert list(model.pairwise) == [(VL, L), (VL, M), (VL, H), (L, M), (L, H), (M, H)]


def test_multiclass_on_synthetic_textures():
    config = FeatureConfig("clbp", block_size=64)
    feats, labels = [], []
    for label in DensityLabel:
        for k in range(12):
            img = synth_crowd_texture(label, 64, (5, k))
            feats.append(block_features(img, [Rect(0, 0, 64, 64)], config)[0])
            labels.append(label)
    model = train_multiclass(feats, labels, C=10.0, spec=KernelSpec("rbf", 10.0))
    pred, _ = model.predict_many(np.array(feats))
    assert np.mean(np.array(pred) == np.array(labels)) >= 0.95


def test_vote_winner():
    assert vote_winner((3, 2, 1, 0)) == VL
    assert vote_winner((2, 2, 1, 1)) == VL
    assert vote_winner((0, 1, 3, 3)) == M


def test_support_vectors_get_their_own_label():
    X, y = clusters(spread=0.2)
    model = train_multiclass(X, y, C=100.0, spec=KernelSpec("rbf", 1.0))
    for (a, b), m in model.pairwise.items():
        for sv, coef in zip(m.support_vectors, m.alphas):
            label, votes = predict(model, sv)
            assert label == (a if coef > 0 else b)
            assert sum(votes) == 6


def test_multiclass_errors():
    X, y = clusters(classes=(1,))
    with pytest.raises(SingleClass):
        train_multiclass(X, y)
    X, y = clusters()
    with pytest.raises(DimensionMismatch):
        train_multiclass(X, y[:-1])
    model = train_multiclass(X, y)
    with pytest.raises(DimensionMismatch):
        model.predict_many(np.zeros((2, 3)))


def test_stratified_folds_balanced():
    y = np.repeat([0, 1, 2, 3], 10)
    folds = stratified_folds(y, 5, seed=1)
    for c in range(4):
        assert np.bincount(folds[y == c], minlength=5).tolist() == [2] * 5
    assert np.array_equal(folds, stratified_folds(y, 5, seed=1))
    with pytest.raises(InsufficientSamples):
        stratified_folds(np.repeat([0, 1], [3, 10]), 5, 0)


def test_grid_search_single_and_duplicate_points():
    X, y = clusters(per_class=10)
    res = grid_search_cv(X, y, C_grid=(1.0,), gamma_grid=(0.5,), k_folds=5)
    assert (res.best_C, res.best_gamma) == (1.0, 0.5)
    dup = grid_search_cv(X, y, C_grid=(1.0, 1.0), gamma_grid=(0.5, 0.5), k_folds=5)
    assert dup.scores == res.scores


def test_grid_search_finds_perfect_point_on_separable_data():
    X, y = clusters(per_class=10, spread=0.2)
    res = grid_search_cv(X, y, k_folds=5, seed=3)
    assert res.mean(res.best_C, res.best_gamma) == 1.0
    assert grid_search_cv(X, y, k_folds=5, seed=3).scores == res.scores


def test_grid_search_linear_kernel():
    X, y = clusters(per_class=10, spread=0.2)
    res = grid_search_cv(X, y, C_grid=(0.1, 10.0), kernel="linear", k_folds=5)
    assert res.best_gamma == 0.0 and res.mean(res.best_C, 0.0) >= 0.9


def test_zscore_model_round_trip(tmp_path):
    X, y = clusters(per_class=10, spread=0.8)
    X = X * [1.0, 50.0]
    model = train_multiclass(X, y, 1.0, scale="zscore", meta={"note": "x"})
    path = tmp_path / "m.bin"
    save_model(model, path)
    back = load_model(path)
    probes = np.random.default_rng(0).normal(1.5, 2.0, size=(100, 2)) * [1.0, 50.0]
    a, va = model.predict_many(probes)
    b, vb = back.predict_many(probes)
    assert a == b and np.array_equal(va, vb)
    assert back.meta == {"note": "x"} and back.format_version == FORMAT_VERSION
    assert model_to_bytes(back) == path.read_bytes()


def test_corrupt_model_files(tmp_path):
    X, y = clusters(per_class=5)
    data = model_to_bytes(train_multiclass(X, y, 1.0))
    with pytest.raises(ChecksumMismatch):
        model_from_bytes(data[:-10])
    with pytest.raises(ChecksumMismatch):
        model_from_bytes(data[:5])
    flipped = bytearray(data)
    flipped[40] ^= 0x01
    with pytest.raises(ChecksumMismatch):
        model_from_bytes(bytes(flipped))
    with pytest.raises(ChecksumMismatch):
        model_from_bytes(b"NOTAMODEL" + data[9:])
    future = bytearray(data)
    future[len(MAGIC):len(MAGIC) + 2] = (7).to_bytes(2, "little")
    with pytest.raises(VersionMismatch, match="7"):
        model_from_bytes(bytes(future))


def test_training_is_deterministic():
    X, y = clusters(per_class=8, spread=1.0)
    a = model_to_bytes(train_multiclass(X, y, 1.0, seed=4))
    b = model_to_bytes(train_multiclass(X, y, 1.0, seed=4))
    assert a == b
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        train_multiclass(X, y, 1.0, seed=5)
