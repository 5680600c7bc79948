"""Native baseline models behind one probability-prediction interface."""
import hashlib
import json
import logging
import math
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError
from scipy.special import expit

from wildxai.exceptions import (
    DegenerateTrainingError,
    DivergenceError,
    EmptyInputError,
    ModelFormatError,
    ShapeMismatchError,
    WindowValidationError,
)
from wildxai.models.dataset import SampleSet
from wildxai.models.predictor import (
    AccuracyReport,
    LogisticConfig,
    ModelArtifact,
    PredictorKind,
    TreeEnsembleConfig,
)
from wildxai.services.rng import derive_rng
from wildxai.services.trees import Tree, grow_classification_tree, grow_gradient_tree

logger = logging.getLogger(__name__)

Batch = Union[np.ndarray, Sequence[np.ndarray], SampleSet]

# keeps the logistic link strictly inside (0, 1) in float64
MARGIN_LIMIT = 35.0


class PredictorHandle(ABC):
    """Uniform batch probability interface over N x L windows."""

    kind: PredictorKind

    def __init__(self, id: str, input_shape: Tuple[int, int], feature_names: List[str], metadata: Dict[str, Any]):
        self.id = id
        self.input_shape = (int(input_shape[0]), int(input_shape[1]))
        self.feature_names = list(feature_names)
        self.metadata = dict(metadata)

    @property
    def supports_concurrency(self) -> bool:
        return True

    def as_batch(self, batch: Batch) -> np.ndarray:
        """Validate a batch and return it as a (k, N, L) float array."""
        if isinstance(batch, SampleSet):
            batch = batch.values
        if not isinstance(batch, np.ndarray) and len(batch) == 0:
            return np.zeros((0,) + self.input_shape)
        arr = np.asarray(batch, dtype=np.float64)
        if arr.ndim == 2 and arr.shape == self.input_shape:
            arr = arr[None]
        if arr.ndim != 3 or arr.shape[1:] != self.input_shape:
            actual = arr.shape[1:] if arr.ndim == 3 else arr.shape
            raise ShapeMismatchError(
                f"expected windows of shape {self.input_shape}, got {tuple(actual)}",
                expected=self.input_shape,
                actual=tuple(actual),
            )
        return arr

    def predict_proba(self, batch: Batch) -> np.ndarray:
        """
        Probability of the event for every window in ``batch``.

        Args:
            batch: (k, N, L) array, list of N x L matrices, or a SampleSet

        Returns:
            np.ndarray: k probabilities in [0, 1], in input order
        """
        arr = self.as_batch(batch)
        if not len(arr):
            return np.zeros(0)
        return self.predict_flat(arr.reshape(len(arr), -1))

    @abstractmethod
    def predict_flat(self, X: np.ndarray) -> np.ndarray:
        """Probabilities for (k, N*L) flattened windows."""

    @abstractmethod
    def to_artifact(self) -> ModelArtifact:
        """Serializable form of the model."""

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()


class RandomForestPredictor(PredictorHandle):
    """Majority-vote forest: probability is the share of trees voting 1."""

    kind = PredictorKind.RANDOM_FOREST

    def __init__(self, trees: List[Tree], config: TreeEnsembleConfig, **kwargs):
        super().__init__(**kwargs)
        self.trees = trees
        self.config = config

    def votes(self, X: np.ndarray) -> np.ndarray:
        # leaf value is the positive share of the leaf; ties vote 1
        return np.sum([tree.predict(X) >= 0.5 for tree in self.trees], axis=0)

    def predict_flat(self, X: np.ndarray) -> np.ndarray:
        return self.votes(X) / len(self.trees)

    def to_artifact(self) -> ModelArtifact:
        return ModelArtifact(
            id=self.id,
            kind=self.kind,
            input_shape=self.input_shape,
            feature_names=self.feature_names,
            config=self.config.model_dump(),
            seed=self.config.seed,
            trees=[t.to_arrays() for t in self.trees],
        )


class GradientBoostingPredictor(PredictorHandle):
    """Additive logistic-loss trees with shrinkage."""

    kind = PredictorKind.GRADIENT_BOOSTING

    def __init__(self, trees: List[Tree], base_score: float, config: TreeEnsembleConfig, **kwargs):
        super().__init__(**kwargs)
        self.trees = trees
        self.base_score = float(base_score)
        self.config = config

    def margin(self, X: np.ndarray) -> np.ndarray:
        score = np.full(len(X), self.base_score)
        for tree in self.trees:
            score += self.config.learning_rate * tree.predict(X)
        return score

    def predict_flat(self, X: np.ndarray) -> np.ndarray:
        return expit(np.clip(self.margin(X), -MARGIN_LIMIT, MARGIN_LIMIT))

    def to_artifact(self) -> ModelArtifact:
        return ModelArtifact(
            id=self.id,
            kind=self.kind,
            input_shape=self.input_shape,
            feature_names=self.feature_names,
            config=self.config.model_dump(),
            seed=self.config.seed,
            trees=[t.to_arrays() for t in self.trees],
            base_score=self.base_score,
        )


class LogisticPredictor(PredictorHandle):
    """Logistic model on standardized flattened inputs."""

    kind = PredictorKind.LOGISTIC

    def __init__(self, coef, intercept: float, center, scale, config: LogisticConfig, **kwargs):
        super().__init__(**kwargs)
        self.coef = np.asarray(coef, dtype=np.float64)
        self.intercept = float(intercept)
        self.center = np.asarray(center, dtype=np.float64)
        self.scale = np.asarray(scale, dtype=np.float64)
        self.config = config

    @classmethod
    def from_weights(cls, weights, intercept: float = 0.0, input_shape: Optional[Tuple[int, int]] = None,
                     feature_names: Optional[List[str]] = None, id: str = "logistic-fixed") -> "LogisticPredictor":
        """A model with fixed raw-unit weights (no standardization)."""
        w = np.asarray(weights, dtype=np.float64).reshape(-1)
        shape = input_shape or (len(w), 1)
        return cls(
            coef=w,
            intercept=intercept,
            center=np.zeros(len(w)),
            scale=np.ones(len(w)),
            config=LogisticConfig(),
            id=id,
            input_shape=shape,
            feature_names=feature_names or [f"x{i}" for i in range(shape[0])],
            metadata={"fixed": True},
        )

    @property
    def raw_coef(self) -> np.ndarray:
        """Coefficients in input units."""
        return self.coef / self.scale

    def decision(self, X: np.ndarray) -> np.ndarray:
        return ((X - self.center) / self.scale) @ self.coef + self.intercept

    def predict_flat(self, X: np.ndarray) -> np.ndarray:
        return expit(self.decision(X))

    def to_artifact(self) -> ModelArtifact:
        return ModelArtifact(
            id=self.id,
            kind=self.kind,
            input_shape=self.input_shape,
            feature_names=self.feature_names,
            config=self.config.model_dump(),
            seed=self.config.seed,
            coef=self.coef.tolist(),
            intercept=self.intercept,
            center=self.center.tolist(),
            scale=self.scale.tolist(),
        )


# Training

def _training_matrix(train: SampleSet) -> Tuple[np.ndarray, np.ndarray]:
    if not len(train):
        raise DegenerateTrainingError("training split is empty")
    X = train.flat()
    if np.isnan(X).any():
        raise WindowValidationError("training data contains missing cells; impute before training")
    y = train.labels.astype(np.int64)
    if len(np.unique(y)) < 2:
        raise DegenerateTrainingError(f"training split has a single class (label {int(y[0])})")
    return X, y


def _model_id(kind: PredictorKind, config: Dict[str, Any], X: np.ndarray, y: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(kind.value.encode())
    h.update(json.dumps(config, sort_keys=True).encode())
    h.update(np.ascontiguousarray(X).tobytes())
    h.update(np.ascontiguousarray(y).tobytes())
    return f"{kind.value}-{h.hexdigest()[:12]}"


def train_random_forest(
    train: SampleSet,
    cfg: TreeEnsembleConfig,
    feature_names: Optional[List[str]] = None,
    threads: int = 1,
) -> RandomForestPredictor:
    """
    Train a Gini forest on bootstrap resamples.

    Every tree draws its bootstrap and split candidates from its own stream
    ``(seed, "forest", tree_index)``, so results do not depend on ``threads``.

    Args:
        train: Imputed training samples
        cfg: Ensemble hyperparameters
        feature_names: Schema feature names recorded in the model
        threads: Worker threads for tree growing

    Returns:
        RandomForestPredictor: The fitted forest
    """
    X, y = _training_matrix(train)
    n, d = X.shape
    max_features = max(1, int(math.sqrt(d)))

    def grow(index: int) -> Tree:
        rng = derive_rng(cfg.seed, "forest", index)
        rows = rng.integers(0, n, size=n)
        tree = grow_classification_tree(X[rows], y[rows], rng, max_features, cfg.min_split, cfg.max_depth)
        logger.debug(f"Grew forest tree {index} with {tree.node_count} nodes")
        return tree

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        trees = list(pool.map(grow, range(cfg.num_trees)))

    logger.info(f"Trained random forest: {cfg.num_trees} trees on {n} samples x {d} columns")
    return RandomForestPredictor(
        trees,
        cfg,
        id=_model_id(PredictorKind.RANDOM_FOREST, cfg.model_dump(), X, y),
        input_shape=train.shape,
        feature_names=feature_names or [f"f{i}" for i in range(train.shape[0])],
        metadata={"config": cfg.model_dump(), "seed": cfg.seed},
    )


def train_gradient_boosting(
    train: SampleSet,
    cfg: TreeEnsembleConfig,
    feature_names: Optional[List[str]] = None,
) -> GradientBoostingPredictor:
    """
    Train stagewise regression trees on logistic-loss gradients.

    The base score is the log-odds of the training positive rate.
    """
    X, y = _training_matrix(train)
    rate = y.mean()
    base_score = float(np.log(rate / (1 - rate)))
    max_depth = cfg.max_depth if cfg.max_depth is not None else 6

    margin = np.full(len(y), base_score)
    trees: List[Tree] = []
    for index in range(cfg.num_trees):
        p = expit(margin)
        g, h = p - y, p * (1 - p)
        tree = grow_gradient_tree(X, g, h, max_depth, cfg.min_split, cfg.reg_lambda, cfg.min_child_weight)
        margin += cfg.learning_rate * tree.predict(X)
        trees.append(tree)
        logger.debug(f"Boosting round {index}: {tree.node_count} nodes")

    logger.info(f"Trained gradient boosting: {cfg.num_trees} rounds on {X.shape[0]} samples x {X.shape[1]} columns")
    return GradientBoostingPredictor(
        trees,
        base_score,
        cfg,
        id=_model_id(PredictorKind.GRADIENT_BOOSTING, cfg.model_dump(), X, y),
        input_shape=train.shape,
        feature_names=feature_names or [f"f{i}" for i in range(train.shape[0])],
        metadata={"config": cfg.model_dump(), "seed": cfg.seed},
    )


def train_logistic(
    train: SampleSet,
    l2: float = 1e-3,
    epochs: int = 500,
    seed: int = 0,
    step_size: float = 0.5,
    feature_names: Optional[List[str]] = None,
) -> LogisticPredictor:
    """
    Full-batch gradient descent on standardized inputs, weights start at zero.

    Raises:
        DivergenceError: When the loss stops being finite (names the epoch)
    """
    cfg = LogisticConfig(l2=l2, epochs=epochs, seed=seed, step_size=step_size)
    X, y = _training_matrix(train)
    center = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    Z = (X - center) / scale

    n = len(y)
    w = np.zeros(Z.shape[1])
    b = 0.0
    for epoch in range(1, cfg.epochs + 1):
        z = Z @ w + b
        loss = float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * cfg.l2 * (w @ w))
        if not np.isfinite(loss):
            raise DivergenceError(f"logistic loss became non-finite at epoch {epoch}", epoch=epoch)
        residual = expit(z) - y
        w -= cfg.step_size * (Z.T @ residual / n + cfg.l2 * w)
        b -= cfg.step_size * float(residual.mean())

    logger.info(f"Trained logistic model: {cfg.epochs} epochs, final loss {loss:.6f}")
    return LogisticPredictor(
        w,
        b,
        center,
        scale,
        cfg,
        id=_model_id(PredictorKind.LOGISTIC, cfg.model_dump(), X, y),
        input_shape=train.shape,
        feature_names=feature_names or [f"f{i}" for i in range(train.shape[0])],
        metadata={"config": cfg.model_dump(), "seed": seed, "final_loss": loss},
    )


# Prediction and evaluation

def predict_proba(handle: PredictorHandle, batch: Batch) -> np.ndarray:
    """Order-preserving batch probabilities from any handle."""
    return handle.predict_proba(batch)


def evaluate_accuracy(handle: PredictorHandle, split: SampleSet) -> AccuracyReport:
    """
    Accuracy with the 0.5 threshold (ties predict 1).

    Returns:
        AccuracyReport: Accuracy plus per-sample correctness flags
    """
    if not len(split):
        raise EmptyInputError("cannot evaluate on an empty split")
    probabilities = handle.predict_proba(split.values)
    correct = (probabilities >= 0.5).astype(np.int64) == split.labels
    return AccuracyReport(
        accuracy=float(correct.mean()),
        sample_ids=split.sample_ids.copy(),
        probabilities=probabilities,
        correct=correct,
        labels=split.labels.copy(),
    )


# Serialization

def save_model(handle: PredictorHandle, path: Union[str, Path]) -> Path:
    """Write a native model as one self-describing JSON document."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(handle.to_artifact().model_dump_json())
    logger.info(f"Saved {handle.kind.value} model {handle.id} to {path}")
    return path


def model_from_artifact(artifact: ModelArtifact) -> PredictorHandle:
    common = dict(
        id=artifact.id,
        input_shape=artifact.input_shape,
        feature_names=artifact.feature_names,
        metadata={"config": artifact.config, "seed": artifact.seed},
    )
    if artifact.kind == PredictorKind.RANDOM_FOREST:
        return RandomForestPredictor(
            [Tree.from_arrays(t) for t in artifact.trees], TreeEnsembleConfig(**artifact.config), **common
        )
    if artifact.kind == PredictorKind.GRADIENT_BOOSTING:
        return GradientBoostingPredictor(
            [Tree.from_arrays(t) for t in artifact.trees],
            artifact.base_score,
            TreeEnsembleConfig(**artifact.config),
            **common,
        )
    if artifact.kind == PredictorKind.LOGISTIC:
        return LogisticPredictor(
            artifact.coef, artifact.intercept, artifact.center, artifact.scale,
            LogisticConfig(**artifact.config), **common,
        )
    raise ModelFormatError(f"model kind {artifact.kind.value!r} cannot be loaded natively")


def load_model(path: Union[str, Path]) -> PredictorHandle:
    """Read a model written by ``save_model``."""
    path = Path(path)
    if not path.is_file():
        raise ModelFormatError(f"model file not found: {path}")
    try:
        artifact = ModelArtifact.model_validate_json(path.read_text())
    except ValidationError as e:
        raise ModelFormatError(f"{path} is not a wildxai model: {e}") from e
    return model_from_artifact(artifact)
