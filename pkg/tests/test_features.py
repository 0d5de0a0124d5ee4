import numpy as np
import pytest

from bci_hand.core.config import FeatureConfig
from bci_hand.core.errors import MissingClass, WindowOutOfBounds
from bci_hand.models.schemas import ClassLabel
from bci_hand.utils.features import (FeatureGrid, band_masks, band_power_features, bhattacharyya,
                                     bhattacharyya_scores, build_feature_matrix, parseval_bound,
                                     select_top_k, sliding_windows)

from conftest import make_matrix, make_meta

FS = 200.0
GRID = FeatureGrid()


def labels(n_wrist, n_finger):
    return [ClassLabel.WRIST] * n_wrist + [ClassLabel.FINGER] * n_finger


def test_grid_has_28_windows_and_7_bands():
    assert GRID.n_windows == 28
    assert GRID.n_bands == 7
    assert GRID.features_per_component == 196
    assert GRID.bands[0] == (8.0, 11.0)
    assert GRID.bands[-1] == (26.0, 29.0)


def test_grid_from_config_matches_default():
    assert FeatureGrid.from_config(FeatureConfig()) == GRID


def test_window_positions():
    windows = sliding_windows(GRID, FS)
    assert len(windows) == 28
    assert windows[0] == (400, 460)
    assert windows[27] == (940, 1000)
    assert all(b - a == 60 for a, b in windows)
    assert all(w2[0] - w1[0] == 20 for w1, w2 in zip(windows, windows[1:]))


def test_band_masks_are_half_open():
    masks = band_masks(GRID, FS)
    freqs = np.fft.rfftfreq(256, d=1.0 / FS)
    assert masks.shape == (129, 7)
    assert masks.sum(axis=1).max() == 1.0
    assert not masks[freqs >= 29.0].any()
    assert not masks[freqs < 8.0].any()


@pytest.mark.parametrize("n_components, length", [(8, 1568), (12, 2352)])
def test_feature_length(n_components, length):
    trial = np.zeros((12, 1400))
    features = band_power_features(trial, list(range(n_components)), GRID, FS)
    assert features.shape == (length,)
    assert not features.any()


def test_ten_hz_lands_in_the_first_band():
    t = np.arange(1400) / FS
    trial = np.sin(2 * np.pi * 10.0 * t)[None, :]
    per_window = band_power_features(trial, [0], GRID, FS).reshape(28, 7)
    assert np.all(per_window.argmax(axis=1) == 0)
    # The 300 ms Hann window spreads 10 Hz across roughly 3 Hz either side
    share = per_window[:, 0] / per_window.sum(axis=1)
    assert share.min() >= 0.6


def test_feature_order_is_component_window_band(rng):
    trial = rng.standard_normal((3, 1400))
    both = band_power_features(trial, [2, 0], GRID, FS)
    np.testing.assert_allclose(both[:196], band_power_features(trial, [2], GRID, FS), rtol=1e-12)
    np.testing.assert_allclose(both[196:], band_power_features(trial, [0], GRID, FS), rtol=1e-12)


def test_band_powers_respect_parseval(rng):
    trial = rng.standard_normal((1, 1400))
    per_window = band_power_features(trial, [0], GRID, FS).reshape(28, 7)
    for i, (start, end) in enumerate(sliding_windows(GRID, FS)):
        assert per_window[i].sum() <= parseval_bound(trial[0, start:end])


def test_short_trial_is_out_of_bounds():
    with pytest.raises(WindowOutOfBounds):
        band_power_features(np.zeros((1, 900)), [0], GRID, FS)


def test_feature_matrix_provenance(rng):
    trials = [rng.standard_normal((4, 1400)) for _ in range(3)]
    metas = [make_meta(i) for i in range(3)]
    matrix = build_feature_matrix(trials, metas, [3, 1], GRID, FS)
    assert matrix.values.shape == (3, 392)
    assert matrix.columns[0] == (3, 0, 0)
    assert matrix.columns[196] == (1, 0, 0)
    assert matrix.columns[-1] == (1, 27, 6)
    assert matrix.labels == [ClassLabel.WRIST] * 3
    assert np.all(matrix.values >= 0)


def test_log_power_features(rng):
    trials = [rng.standard_normal((1, 1400))]
    raw = build_feature_matrix(trials, [make_meta()], [0], GRID, FS)
    logged = build_feature_matrix(trials, [make_meta()], [0], GRID, FS, log_power=True)
    np.testing.assert_allclose(logged.values, np.log(raw.values + 1e-30))


def test_bhattacharyya_mean_shift():
    column = np.array([-1.0, 0.0, 1.0, 1.0, 2.0, 3.0])
    assert bhattacharyya(column, labels(3, 3)) == pytest.approx(0.5, abs=1e-12)


def test_bhattacharyya_variance_ratio():
    column = np.array([-1.0, 0.0, 1.0, -2.0, 0.0, 2.0])
    assert bhattacharyya(column, labels(3, 3)) == pytest.approx(0.5 * np.log(1.25), abs=1e-12)


def test_bhattacharyya_identical_and_constant():
    column = np.array([1.0, 2.0, 3.0, 1.0, 2.0, 3.0])
    assert bhattacharyya(column, labels(3, 3)) == pytest.approx(0.0, abs=1e-12)
    assert bhattacharyya(np.full(6, 4.2), labels(3, 3)) == 0.0


def test_bhattacharyya_symmetry_and_affine_invariance(rng):
    column = rng.standard_normal(30) + np.r_[np.zeros(12), np.ones(18)]
    lab = labels(12, 18)
    flipped = [ClassLabel.FINGER if x is ClassLabel.WRIST else ClassLabel.WRIST for x in lab]
    base = bhattacharyya(column, lab)
    assert bhattacharyya(column, flipped) == pytest.approx(base, abs=1e-9)
    assert bhattacharyya(-3.0 * column + 11.0, lab) == pytest.approx(base, abs=1e-9)


def test_zero_class_variance_is_floored():
    column = np.array([1.0, 1.0, 1.0, 2.0, 3.0, 4.0])
    assert np.isfinite(bhattacharyya(column, labels(3, 3)))


def test_missing_class():
    with pytest.raises(MissingClass):
        bhattacharyya_scores(np.ones((4, 2)), labels(4, 0))


def test_top_k_prefers_separable_and_breaks_ties_low(rng):
    n = 20
    separable = np.r_[np.zeros(10), np.ones(10) * 5.0] + rng.standard_normal(n) * 0.1
    values = np.column_stack([np.ones(n), separable, separable, rng.standard_normal(n)])
    selection = select_top_k(make_matrix(values, n_wrist=10), k=2)
    assert selection.selected_columns == [1, 2]
    assert selection.bd_scores[0] == 0.0


def test_planted_columns_are_found():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        values = rng.standard_normal((100, 1568))
        planted = rng.choice(1568, size=18, replace=False)
        values[:40, planted] += 2.0
        selection = select_top_k(make_matrix(values, n_wrist=40), k=18)
        assert len(set(selection.selected_columns) & set(planted.tolist())) >= 16


def test_top_k_ignores_row_order(two_clusters, rng):
    order = rng.permutation(100)
    a = select_top_k(two_clusters, k=5).selected_columns
    b = select_top_k(two_clusters.take_rows(order), k=5).selected_columns
    assert a == b


def test_top_k_needs_enough_columns(two_clusters):
    with pytest.raises(ValueError):
        select_top_k(two_clusters, k=19)
