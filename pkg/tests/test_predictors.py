"""Tests for the native predictors, evaluation and model files."""
import json

import numpy as np
import pytest

from conftest import toy_windows
from wildxai.exceptions import (
    DegenerateTrainingError,
    DivergenceError,
    EmptyInputError,
    ModelFormatError,
    ShapeMismatchError,
    WindowValidationError,
)
from wildxai.models.predictor import TreeEnsembleConfig
from wildxai.services.predictors import (
    LogisticPredictor,
    evaluate_accuracy,
    load_model,
    predict_proba,
    save_model,
    train_gradient_boosting,
    train_logistic,
    train_random_forest,
)
from wildxai.services.trees import Tree


def forest(dataset, threads=1, seed=0, num_trees=100):
    cfg = TreeEnsembleConfig.forest(num_trees=num_trees, seed=seed)
    return train_random_forest(dataset.split("train"), cfg, dataset.window_schema.feature_names, threads=threads)


@pytest.mark.slow
def test_forest_separates_synthetic_data(synthetic_dataset):
    handle = forest(synthetic_dataset)
    assert handle.config.num_trees == 100
    assert handle.config.min_split == 2 and handle.config.max_depth is None
    test = synthetic_dataset.split("test")
    assert evaluate_accuracy(handle, test).accuracy >= 0.95
    again = forest(synthetic_dataset)
    assert again.id == handle.id
    assert np.array_equal(again.predict_proba(test), handle.predict_proba(test))


@pytest.mark.slow
def test_boosting_separates_synthetic_data(synthetic_dataset):
    cfg = TreeEnsembleConfig.boosting()
    handle = train_gradient_boosting(synthetic_dataset.split("train"), cfg)
    assert (handle.config.num_trees, handle.config.max_depth, handle.config.learning_rate) == (100, 6, 0.3)
    test = synthetic_dataset.split("test")
    assert evaluate_accuracy(handle, test).accuracy >= 0.95
    again = train_gradient_boosting(synthetic_dataset.split("train"), cfg)
    assert np.array_equal(again.predict_proba(test), handle.predict_proba(test))


def test_forest_is_reproducible_across_runs_and_threads(synthetic_dataset):
    test = synthetic_dataset.split("test")
    one = forest(synthetic_dataset, threads=1, num_trees=12)
    two = forest(synthetic_dataset, threads=4, num_trees=12)
    assert one.id == two.id
    assert np.array_equal(one.predict_proba(test), two.predict_proba(test))
    other_seed = forest(synthetic_dataset, seed=1, num_trees=12)
    assert other_seed.id != one.id


def test_forest_probability_is_a_vote_share(synthetic_dataset):
    handle = forest(synthetic_dataset, num_trees=8)
    p = handle.predict_proba(synthetic_dataset.split("test"))
    assert np.all(np.isin(np.round(p * 8), np.arange(9)))


def test_boosting_probabilities_stay_inside_unit_interval(synthetic_dataset):
    cfg = TreeEnsembleConfig.boosting(num_trees=100, learning_rate=1.0)
    handle = train_gradient_boosting(synthetic_dataset.split("train"), cfg)
    p = handle.predict_proba(synthetic_dataset.split("train"))
    assert np.all((p > 0) & (p < 1))


def test_logistic_learns_signal():
    train = toy_windows(8, 8)
    handle = train_logistic(train, epochs=200)
    assert evaluate_accuracy(handle, toy_windows(10, 5)).accuracy == 1.0
    assert handle.raw_coef[0] > 0


def test_zero_weight_logistic_predicts_one_half():
    handle = LogisticPredictor.from_weights(np.zeros(6), input_shape=(3, 2))
    windows = np.random.default_rng(0).normal(scale=10.0, size=(25, 3, 2))
    assert np.all(handle.predict_proba(windows) == 0.5)


def test_duplicated_column_gets_equal_weights():
    base = toy_windows(8, 8, window_length=1)
    values = np.array(base.values)
    values[:, 1, :] = values[:, 0, :]
    handle = train_logistic(base.with_values(values), epochs=300)
    assert handle.coef[0] > 0
    assert abs(handle.coef[0] - handle.coef[1]) <= 1e-6


def test_logistic_divergence_names_the_epoch():
    train = toy_windows(4, 4)
    with pytest.raises(DivergenceError) as excinfo:
        train_logistic(train, step_size=1e300, epochs=5)
    assert "epoch" in str(excinfo.value)


def test_single_class_training_is_rejected():
    train = toy_windows(5, 0)
    with pytest.raises(DegenerateTrainingError):
        train_random_forest(train, TreeEnsembleConfig.forest(num_trees=2))
    with pytest.raises(DegenerateTrainingError):
        train_gradient_boosting(train.take([]), TreeEnsembleConfig.boosting(num_trees=2))


def test_missing_cells_are_rejected():
    train = toy_windows(3, 3)
    values = np.array(train.values)
    values[0, 0, 0] = np.nan
    with pytest.raises(WindowValidationError):
        train_logistic(train.with_values(values))


def test_predict_proba_shapes(perfect_model):
    windows = toy_windows(2, 1).values
    assert predict_proba(perfect_model, windows).shape == (3,)
    assert perfect_model.predict_proba(list(windows)).shape == (3,)
    assert perfect_model.predict_proba(windows[0]).shape == (1,)
    assert perfect_model.predict_proba([]).shape == (0,)
    with pytest.raises(ShapeMismatchError):
        perfect_model.predict_proba(np.zeros((2, 3, 2)))


def test_order_is_preserved(perfect_model):
    windows = toy_windows(2, 2).values
    forward = perfect_model.predict_proba(windows)
    backward = perfect_model.predict_proba(windows[::-1])
    assert np.array_equal(forward, backward[::-1])


def test_accuracy_threshold_ties_predict_positive():
    handle = LogisticPredictor.from_weights([0.0], input_shape=(1, 1))
    split = toy_windows(1, 1, window_length=1).with_values(np.zeros((2, 1, 1)))
    report = evaluate_accuracy(handle, split)
    assert list(report.predictions) == [1, 1]
    assert report.accuracy == 0.5
    with pytest.raises(EmptyInputError):
        evaluate_accuracy(handle, split.take([]))


@pytest.mark.parametrize("kind", ["forest", "boosting", "logistic"])
def test_saved_models_predict_identically(tmp_path, synthetic_dataset, kind):
    train = synthetic_dataset.split("train")
    if kind == "forest":
        handle = forest(synthetic_dataset, num_trees=5)
    elif kind == "boosting":
        handle = train_gradient_boosting(train, TreeEnsembleConfig.boosting(num_trees=5))
    else:
        handle = train_logistic(train, epochs=50)
    loaded = load_model(save_model(handle, tmp_path / "model.json"))
    assert loaded.id == handle.id
    assert loaded.feature_names == handle.feature_names
    test = synthetic_dataset.split("test")
    assert np.array_equal(loaded.predict_proba(test), handle.predict_proba(test))


def test_model_file_validation(tmp_path, perfect_model):
    with pytest.raises(ModelFormatError):
        load_model(tmp_path / "absent.json")
    path = save_model(perfect_model, tmp_path / "model.json")
    doc = json.loads(path.read_text())
    doc["version"] = 99
    path.write_text(json.dumps(doc))
    with pytest.raises(ModelFormatError):
        load_model(path)


def test_tree_routes_ties_left():
    tree = Tree.stump(0, 1.0, -1.0, 1.0)
    X = np.array([[0.5], [1.0], [1.5]])
    assert tree.predict(X).tolist() == [-1.0, -1.0, 1.0]
