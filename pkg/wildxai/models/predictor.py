"""Predictor configuration and serialized model formats."""
from enum import Enum
from typing import Any, Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

MODEL_FORMAT = "wildxai-model"
MODEL_FORMAT_VERSION = 1


class PredictorKind(str, Enum):
    RANDOM_FOREST = "random_forest"
    GRADIENT_BOOSTING = "gradient_boosting"
    LOGISTIC = "logistic"
    EXTERNAL = "external"


class TreeEnsembleConfig(BaseModel):
    """Hyperparameters shared by the forest and the boosted ensemble."""

    model_config = ConfigDict(frozen=True)

    num_trees: int = Field(100, ge=1)
    criterion: Literal["gini", "logistic"] = "gini"
    min_split: int = Field(2, ge=2)
    max_depth: Optional[int] = Field(None, ge=1)
    learning_rate: float = Field(0.3, gt=0)
    reg_lambda: float = Field(1.0, ge=0)
    min_child_weight: float = Field(1.0, ge=0)
    seed: int = 0

    @classmethod
    def forest(cls, **overrides: Any) -> "TreeEnsembleConfig":
        return cls(**{"criterion": "gini", "max_depth": None, **overrides})

    @classmethod
    def boosting(cls, **overrides: Any) -> "TreeEnsembleConfig":
        return cls(**{"criterion": "logistic", "max_depth": 6, "learning_rate": 0.3, **overrides})


class LogisticConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    l2: float = Field(1e-3, ge=0)
    epochs: int = Field(500, ge=1)
    step_size: float = Field(0.5, gt=0)
    seed: int = 0


class TreeArrays(BaseModel):
    """Flat node arrays; ``feature == -1`` marks a leaf."""

    feature: List[int]
    threshold: List[float]
    left: List[int]
    right: List[int]
    value: List[float]


class ModelArtifact(BaseModel):
    """Versioned single-file model document."""

    format: Literal["wildxai-model"] = MODEL_FORMAT
    version: Literal[1] = MODEL_FORMAT_VERSION
    id: str
    kind: PredictorKind
    input_shape: Tuple[int, int]
    feature_names: List[str]
    config: Dict[str, Any]
    seed: int
    trees: List[TreeArrays] = []
    base_score: float = 0.0
    coef: List[float] = []
    intercept: float = 0.0
    center: List[float] = []
    scale: List[float] = []


class AccuracyReport(BaseModel):
    """Accuracy of a predictor on a labeled split, with per-sample flags."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    accuracy: float
    sample_ids: np.ndarray
    probabilities: np.ndarray
    correct: np.ndarray
    labels: np.ndarray

    @property
    def predictions(self) -> np.ndarray:
        return (self.probabilities >= 0.5).astype(np.int64)
