import numpy as np
import pytest
from hypothesis import given, strategies as st

from clbpcrowd.dataset import ALL_LABELS, DensityLabel, load_manifest, write_synth_corpus
from clbpcrowd.errors import CountMismatch, Empty, LengthMismatch
from clbpcrowd.evaluation import (
    LABEL_COLORS,
    accuracy,
    confusion,
    overlay_labels,
    reports_to_csv,
    save_overlay,
    sweep_block_sizes,
)
from clbpcrowd.imaging import GrayImage, partition_blocks
from clbpcrowd.pipeline import SVMSettings

VL, L, M, H = DensityLabel
FAST = SVMSettings(C=10.0, gamma=10.0)


def counts_to_pairs(counts):
    pred, truth = [], []
    for t, row in enumerate(counts):
        for p, n in enumerate(row):
            pred += [p] * n
            truth += [t] * n
    return pred, truth


def test_perfect_predictions():
    cm = confusion([0, 1, 2, 3, 3], [0, 1, 2, 3, 3])
    np.testing.assert_array_equal(cm.row_percentages, np.eye(4) * 100)
    assert accuracy(cm) == 1.0


def test_single_sample():
    cm = confusion([M], [M])
    assert cm.row_percentages[2, 2] == 100.0 and cm.row_percentages.sum() == 100.0


def test_uniform_confusion_is_chance():
    pred, truth = counts_to_pairs(np.full((4, 4), 5))
    assert accuracy(confusion(pred, truth)) == 0.25


def test_reported_matrix_round_trip():
    rows = [(89.4, 10.5, 0, 0), (4.5, 95.5, 0, 0), (0, 5.2, 94.7, 0), (0, 0, 5.5, 94.4)]
    counts = np.rint(np.array(rows) * 10).astype(int)
    cm = confusion(*counts_to_pairs(counts))
    # published rows sum to 99.9, so renormalizing moves entries by < 0.1
    np.testing.assert_allclose(cm.row_percentages, rows, atol=0.1)
    assert accuracy(cm) == pytest.approx(0.935, abs=1e-3)
    assert np.mean(np.diag(cm.row_percentages)) == pytest.approx(93.5, abs=0.1)


def test_confusion_errors():
    with pytest.raises(LengthMismatch):
        confusion([0, 1], [0])
    with pytest.raises(Empty):
        confusion([], [])


def test_table_layout_and_csv():
    cm = confusion([0, 1, 1, 3], [0, 1, 2, 3])
    lines = cm.to_table().splitlines()
    assert lines[0].split() == ["Very", "Low", "Low", "Medium", "High"]
    assert lines[3].startswith("Medium") and lines[3].split()[-4:] == ["0.0%", "100.0%", "0.0%", "0.0%"]
    csv_lines = cm.to_csv().splitlines()
    assert csv_lines[0].startswith("truth\\pred,VeryLow,Low,Medium,High")
    assert csv_lines[3] == "Medium,0,1,0,0,0.0,100.0,0.0,0.0"


@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=200))
def test_rows_sum_to_hundred(pairs):
    pred, truth = zip(*pairs)
    cm = confusion(pred, truth)
    sums = cm.row_percentages.sum(axis=1)
    present = cm.counts.sum(axis=1) > 0
    assert np.all(np.abs(sums[present] - 100.0) <= 0.1)
    assert np.all(sums[~present] == 0)
    assert cm.total == len(pairs)


def test_overlay_single_block():
    img = GrayImage(np.full((64, 64), 128))
    grid = partition_blocks(img, 64)
    rgb = overlay_labels(img, grid, [H])
    assert rgb.shape == (64, 64, 3)
    assert tuple(rgb[0, 30]) == LABEL_COLORS[H]
    assert tuple(rgb[40, 40]) == (128, 128, 128)


def test_overlay_pets_sized_frame(tmp_path):
    pix = np.random.default_rng(0).integers(0, 256, size=(576, 768))
    img = GrayImage(pix)
    grid = partition_blocks(img, 96)
    labels = [ALL_LABELS[k % 4] for k in range(48)]
    rgb = overlay_labels(img, grid, labels)
    for block, label in zip(grid, labels):
        assert tuple(rgb[block.y + 50, block.x]) == LABEL_COLORS[label]
    np.testing.assert_array_equal(img.pixels, pix)
    save_overlay(rgb, tmp_path / "o.png")
    assert (tmp_path / "o.png").stat().st_size > 0


def test_overlay_count_mismatch():
    img = GrayImage(np.zeros((64, 128)))
    with pytest.raises(CountMismatch):
        overlay_labels(img, partition_blocks(img, 64), [VL])


@pytest.fixture(scope="module")
def tiny_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    write_synth_corpus(out, per_class=6, size=64, seed=3)
    return load_manifest(out / "manifest.txt")


def test_sweep_single_size_and_determinism(tiny_corpus):
    a = sweep_block_sizes(tiny_corpus, [64], "lbp", FAST, seed=2)
    b = sweep_block_sizes(tiny_corpus, [64], "lbp", FAST, seed=2)
    assert len(a.rows) == 1 and a.ok
    assert a.accuracies == b.accuracies
    assert 0.0 <= a.rows[0].accuracy <= 1.0


def test_sweep_error_row(tiny_corpus):
    rep = sweep_block_sizes(tiny_corpus, [32, 200], "glcm", FAST, seed=2)
    assert [r.error for r in rep.rows] == [None, "BlockTooLarge"]
    assert not rep.ok
    text = reports_to_csv([rep])
    assert text.splitlines()[0] == "descriptor,block_size,accuracy,seconds"
    assert text.splitlines()[2].startswith("glcm,200,ERROR:BlockTooLarge,")
