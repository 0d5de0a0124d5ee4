import numpy as np
import pytest

from bci_hand.core.errors import (DimensionMismatch, EmptyClass, InsufficientTrials,
                                  SingularCovariance, TrainingDiverged)
from bci_hand.models.recording import ClassStats
from bci_hand.models.schemas import ClassLabel, ConfusionCounts
from bci_hand.utils.classify import (MlpParams, class_stats, confusion_counts, evaluate_cell,
                                     init_mlp, mahalanobis_sq, md_loo_classify, md_loo_incremental,
                                     md_loo_nested, md_outlier_filter, mlp_forward, mlp_loss_and_grad,
                                     mlp_train, pack_params, ssa, stratified_split, sweep_hidden_nodes,
                                     train_mlp, unpack_params)

from conftest import make_matrix

FAST_MLP = MlpParams(epochs=300, seed=1)


def stats(mean, cov):
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    return ClassStats(mean=mean, cov=cov, cov_inv=np.linalg.inv(cov), n=10)


def flip(label):
    return ClassLabel.FINGER if label is ClassLabel.WRIST else ClassLabel.WRIST


# Distances and accuracy
def test_mahalanobis_examples():
    assert mahalanobis_sq([1.0, 2.0], stats([1.0, 2.0], np.eye(2))) == 0.0
    assert mahalanobis_sq([3.0, 4.0], stats([0.0, 0.0], np.eye(2))) == pytest.approx(25.0, rel=1e-12)
    value = mahalanobis_sq([2.0, 1.0], stats([1.0, 0.0], [[2.0, 0.0], [0.0, 0.5]]))
    assert value == pytest.approx(2.5, rel=1e-12)
    with pytest.raises(DimensionMismatch):
        mahalanobis_sq([1.0, 2.0, 3.0], stats([0.0, 0.0], np.eye(2)))


def test_ssa_examples():
    assert ssa(ConfusionCounts(t_w=8, f_w=2, t_f=6, f_f=4)) == pytest.approx(0.7, rel=1e-12)
    assert ssa(ConfusionCounts(t_w=40, f_w=0, t_f=0, f_f=60)) == 0.5
    assert ssa(ConfusionCounts(t_w=40, f_w=0, t_f=60, f_f=0)) == 1.0
    assert ssa(ConfusionCounts(t_w=6, f_w=4, t_f=8, f_f=2)) == ssa(
        ConfusionCounts(t_w=8, f_w=2, t_f=6, f_f=4))
    with pytest.raises(EmptyClass):
        ssa(ConfusionCounts(t_f=3, f_f=1))


def test_confusion_counts():
    true = [ClassLabel.WRIST, ClassLabel.WRIST, ClassLabel.FINGER, ClassLabel.FINGER]
    predicted = [ClassLabel.WRIST, ClassLabel.FINGER, ClassLabel.FINGER, ClassLabel.WRIST]
    assert confusion_counts(true, predicted) == ConfusionCounts(t_w=1, f_w=1, t_f=1, f_f=1)


def test_shrunk_inverse_is_symmetric(two_clusters):
    s = class_stats(two_clusters.values[:40], shrinkage=0.1)
    np.testing.assert_array_equal(s.cov_inv, s.cov_inv.T)
    assert s.n == 40


def test_singular_covariance_without_shrinkage(rng):
    with pytest.raises(SingularCovariance):
        class_stats(rng.standard_normal((10, 18)), shrinkage=0.0)
    with pytest.raises(SingularCovariance):
        class_stats(rng.standard_normal((1, 18)))


# Mahalanobis leave-one-out
def test_far_clusters_are_perfect(rng):
    values = np.vstack([rng.standard_normal((40, 18)), rng.standard_normal((60, 18)) + 10.0])
    _, confusion = md_loo_classify(make_matrix(values, n_wrist=40))
    assert ssa(confusion) == 1.0


def test_shuffled_labels_score_at_chance(rng):
    matrix = make_matrix(rng.standard_normal((100, 18)), n_wrist=40)
    scores = []
    for seed in range(100):
        order = np.random.default_rng(seed).permutation(100)
        _, confusion = md_loo_classify(matrix.with_labels([matrix.labels[i] for i in order]), 0.1)
        scores.append(ssa(confusion))
    scores = np.array(scores)
    assert scores.mean() == pytest.approx(0.5, abs=0.03)
    assert scores.min() >= 0.3 and scores.max() <= 0.7


def test_incremental_matches_brute_force(two_clusters):
    brute, brute_conf = md_loo_classify(two_clusters, shrinkage=0.1)
    fast, fast_conf = md_loo_incremental(two_clusters, shrinkage=0.1)
    assert fast == brute
    assert fast_conf == brute_conf


def test_own_label_does_not_leak(two_clusters):
    predictions, _ = md_loo_classify(two_clusters)
    for i in (0, 17, 39, 40, 77, 99):
        labels = list(two_clusters.labels)
        labels[i] = flip(labels[i])
        flipped, _ = md_loo_classify(two_clusters.with_labels(labels))
        assert flipped[i] is predictions[i]


def test_affine_invariance_without_shrinkage(two_clusters, rng):
    q, _ = np.linalg.qr(rng.standard_normal((18, 18)))
    transform = q @ np.diag(np.linspace(0.5, 3.0, 18))
    moved = two_clusters.values @ transform + rng.standard_normal(18)
    base, _ = md_loo_classify(two_clusters, shrinkage=0.0)
    affine, _ = md_loo_classify(make_matrix(moved, n_wrist=40), shrinkage=0.0)
    assert affine == base


def test_nested_loo_runs_selection_per_fold(two_clusters):
    predictions, confusion = md_loo_nested(two_clusters, k=5)
    assert len(predictions) == 100
    assert confusion.n_wrist == 40 and confusion.n_finger == 60


def test_outlier_filter_drops_planted_outlier(rng):
    # Few columns: the own-class MD^2 of a single outlier is capped near n - 1
    values = rng.standard_normal((100, 2))
    values[5] += 50.0
    kept, dropped = md_outlier_filter(make_matrix(values, n_wrist=40))
    assert 5 in dropped
    assert kept.values.shape[0] == 100 - len(dropped)


# Multilayer perceptron
def test_parameter_count():
    model = init_mlp(18, 24, seed=0)
    assert model.n_parameters == 18 * 24 + 24 + 24 + 1
    assert pack_params(model).size == model.n_parameters


def test_outputs_are_probabilities(rng):
    model = init_mlp(18, 24, seed=0)
    out = mlp_forward(model, rng.standard_normal((50, 18)) * 10)
    assert np.all((out > 0) & (out < 1))


def test_gradient_matches_finite_differences():
    eps = 1e-5
    worst = 0.0
    for draw in range(25):
        rng = np.random.default_rng(100 + draw)
        model = init_mlp(18, 24, seed=draw)
        X = rng.standard_normal((12, 18))
        y = rng.integers(0, 2, 12).astype(float)
        _, grads = mlp_loss_and_grad(model, X, y)
        analytic = np.concatenate([grads[name].ravel() for name in ("w1", "b1", "w2", "b2")])
        theta = pack_params(model)
        numeric = np.empty_like(theta)
        for j in range(theta.size):
            step = np.zeros_like(theta)
            step[j] = eps
            up, _ = mlp_loss_and_grad(unpack_params(model, theta + step), X, y)
            down, _ = mlp_loss_and_grad(unpack_params(model, theta - step), X, y)
            numeric[j] = (up - down) / (2 * eps)
        worst = max(worst, np.abs(analytic - numeric).max() / np.abs(analytic).max())
    assert worst < 1e-5


def test_separable_data_is_learned(rng):
    values = rng.standard_normal((100, 18))
    values[:40, 0] += 5.0
    _, predictions, confusion = mlp_train(make_matrix(values, n_wrist=40), MlpParams(seed=4))
    assert ssa(confusion) >= 0.95
    assert len(predictions) == 30


def test_zero_inputs_give_constant_predictor():
    matrix = make_matrix(np.zeros((100, 18)), n_wrist=40)
    model, predictions, confusion = mlp_train(matrix, FAST_MLP)
    outputs = mlp_forward(model, np.zeros((5, 18)))
    assert np.ptp(outputs) == 0.0
    assert len({label for _, label in predictions}) == 1
    assert ssa(confusion) == 0.5


def test_training_is_deterministic(two_clusters):
    a, _, _ = mlp_train(two_clusters, FAST_MLP)
    b, _, _ = mlp_train(two_clusters, FAST_MLP)
    np.testing.assert_array_equal(pack_params(a), pack_params(b))
    assert a.training_log == b.training_log


def test_training_log_decreases(two_clusters):
    model, _, _ = mlp_train(two_clusters, FAST_MLP)
    assert model.training_log[-1] < model.training_log[0]


def test_non_finite_loss_reports_epoch():
    X = np.full((4, 3), np.nan)
    with pytest.raises(TrainingDiverged) as exc:
        train_mlp(X, np.array([0.0, 1.0, 0.0, 1.0]), MlpParams(hidden=2, seed=0))
    assert exc.value.epoch == 0


def test_stratified_split_counts():
    labels = [ClassLabel.WRIST] * 40 + [ClassLabel.FINGER] * 60
    train, test = stratified_split(labels, 0.7, seed=9)
    assert len(train) == 70 and len(test) == 30
    assert sum(1 for i in train if labels[i] is ClassLabel.WRIST) == 28
    assert set(train).isdisjoint(test)
    again, _ = stratified_split(labels, 0.7, seed=9)
    np.testing.assert_array_equal(train, again)

    odd = [ClassLabel.WRIST] * 15 + [ClassLabel.FINGER] * 15
    train, _ = stratified_split(odd, 0.7, seed=0)
    assert len(train) == 22


def test_mlp_needs_ten_per_class(rng):
    with pytest.raises(InsufficientTrials):
        mlp_train(make_matrix(rng.standard_normal((25, 18)), n_wrist=9), FAST_MLP)


def test_hidden_node_sweep(rng):
    values = rng.standard_normal((60, 4))
    values[:25, 0] += 4.0
    best, errors = sweep_hidden_nodes(make_matrix(values, n_wrist=25), [2, 8],
                                      MlpParams(epochs=200), seeds=[0, 1])
    assert best in (2, 8)
    assert set(errors) == {2, 8}
    assert errors[best] == min(errors.values())


# Per-cell evaluation
def test_evaluate_cell(rng):
    values = rng.standard_normal((100, 60))
    values[:40, :3] += 3.0
    matrix = make_matrix(values, n_wrist=40)
    result = evaluate_cell(matrix, k=18, shrinkage=0.1, mlp_params=FAST_MLP)
    assert len(result.selection.selected_columns) == 18
    assert {0, 1, 2} <= set(result.selection.selected_columns)
    assert ssa(result.md_confusion) >= 0.9

    nested = evaluate_cell(matrix, k=18, shrinkage=0.1, mlp_params=FAST_MLP, nested=True,
                           outlier_filter=True)
    assert nested.selection is None
    assert "nested selection" in nested.notes
    assert len(nested.ann_selected_columns) == 18
