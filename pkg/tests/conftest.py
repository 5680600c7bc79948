"""Shared fixtures: synthetic windows, small datasets and hand-built predictors."""
from datetime import date
from pathlib import Path
from typing import List, Optional

import numpy as np
import pytest

from wildxai.models.dataset import FeatureKind, FeatureSpec, SampleSet, WindowSchema
from wildxai.models.predictor import TreeEnsembleConfig
from wildxai.services.data_pipeline import assign_splits, build_dataset
from wildxai.services.predictors import GradientBoostingPredictor, LogisticPredictor
from wildxai.services.trees import Tree

ROOT = Path(__file__).resolve().parent.parent


def make_schema(names: List[str], window_length: int, static: Optional[List[str]] = None) -> WindowSchema:
    static = set(static or [])
    return WindowSchema(
        features=tuple(
            FeatureSpec(name=n, kind=FeatureKind.STATIC if n in static else FeatureKind.DYNAMIC) for n in names
        ),
        window_length=window_length,
    )


def informative_windows(n: int, n_informative: int = 3, n_noise: int = 7, window_length: int = 3, seed: int = 0):
    """
    Windows whose label is the majority sign of the informative features.

    Every feature holds a per-sample level plus small daily jitter, so the
    informative rows fully determine the label and the noise rows carry
    nothing.
    """
    rng = np.random.default_rng(seed)
    N = n_informative + n_noise
    level = rng.normal(size=(n, N, 1))
    level[:, :n_informative] += np.sign(level[:, :n_informative]) * 0.3
    values = level + 0.02 * rng.normal(size=(n, N, window_length))
    votes = np.sign(level[:, :n_informative, 0]).sum(axis=1)
    labels = (votes > 0).astype(np.int64)
    names = [f"inf{i}" for i in range(n_informative)] + [f"noise{i}" for i in range(n_noise)]
    schema = make_schema(names, window_length)
    samples = SampleSet(
        sample_ids=np.arange(1, n + 1),
        values=values,
        labels=labels,
        event_dates=tuple(date(2021, 1 + i % 12, 15) for i in range(n)),
    )
    return schema, samples


@pytest.fixture
def synthetic():
    """(schema, samples) with 3 informative and 7 noise features."""
    return informative_windows(400)


@pytest.fixture
def synthetic_dataset(synthetic):
    schema, samples = synthetic
    splits = assign_splits(samples, seed=0, val_fraction=0.0, test_fraction=0.25)
    return build_dataset(splits, schema, source="synthetic")


@pytest.fixture
def large_synthetic_dataset():
    """1,000 synthetic samples split 750 / 250."""
    schema, samples = informative_windows(1000, seed=1)
    splits = assign_splits(samples, seed=0, val_fraction=0.0, test_fraction=0.25)
    return build_dataset(splits, schema, source="synthetic-1000")


def stump_model(rng: np.random.Generator, shape, n_trees: int = 6, unused_columns=()) -> GradientBoostingPredictor:
    """Additive random stumps on the flattened window; ``unused_columns`` are never split on."""
    N, L = shape
    columns = [c for c in range(N * L) if c not in set(unused_columns)]
    trees = []
    for _ in range(n_trees):
        column = int(rng.choice(columns))
        trees.append(Tree.stump(column, float(rng.normal(scale=0.5)), float(rng.normal()), float(rng.normal())))
    depth_two = Tree(
        feature=[int(rng.choice(columns)), int(rng.choice(columns)), -1, -1, -1],
        threshold=[0.0, 0.0, 0.0, 0.0, 0.0],
        left=[1, 2, -1, -1, -1],
        right=[4, 3, -1, -1, -1],
        value=[0.0, 0.0, float(rng.normal()), float(rng.normal()), float(rng.normal())],
    )
    trees.append(depth_two)
    return GradientBoostingPredictor(
        trees,
        0.0,
        TreeEnsembleConfig.boosting(learning_rate=1.0, num_trees=len(trees)),
        id="stumps",
        input_shape=(N, L),
        feature_names=[f"f{i}" for i in range(N)],
        metadata={},
    )


@pytest.fixture
def linear_model():
    """Fixed logistic model over 10 single-day features with distinct weights."""
    weights = np.array([2.0, -1.8, 1.6, -1.4, 1.2, -1.0, 0.8, -0.6, 0.4, -0.2])
    return LogisticPredictor.from_weights(
        weights, input_shape=(10, 1), feature_names=[f"w{i}" for i in range(10)]
    ), weights


def toy_windows(positives: int = 10, negatives: int = 5, window_length: int = 2, start_id: int = 1) -> SampleSet:
    """Two features; the label is the sign of ``signal``."""
    n = positives + negatives
    signal = np.array([1.0] * positives + [-1.0] * negatives)
    values = np.zeros((n, 2, window_length))
    values[:, 0, :] = signal[:, None]
    values[:, 1, :] = np.linspace(-0.5, 0.5, n)[:, None]
    return SampleSet(
        sample_ids=np.arange(start_id, start_id + n),
        values=values,
        labels=(signal > 0).astype(np.int64),
        event_dates=tuple(date(2022, 6 + (i % 4), 1) for i in range(n)),
    )


@pytest.fixture
def toy_dataset():
    """Ten positives and five negatives in test; a perfect model is ``perfect_model``."""
    schema = make_schema(["signal", "drift"], 2)
    splits = {"train": toy_windows(8, 8, start_id=100), "test": toy_windows(10, 5, start_id=1)}
    return build_dataset(splits, schema, source="toy")


@pytest.fixture
def perfect_model():
    return LogisticPredictor.from_weights(
        [5.0, 5.0, 0.0, 0.0], input_shape=(2, 2), feature_names=["signal", "drift"], id="perfect"
    )
