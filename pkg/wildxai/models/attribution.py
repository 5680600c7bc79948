"""Attribution data models: players, backgrounds, explanations, summaries and rankings."""
import hashlib
from enum import Enum
from functools import cached_property
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

ATTRIBUTION_FORMAT_VERSION = 1

Direction = Literal["most", "least"]


class ExplainerKind(str, Enum):
    EXACT_SHAPLEY = "exact_shapley"
    KERNEL_SHAP = "kernel_shap"
    LIME = "lime"
    PERMUTATION = "permutation"


class PlayerScheme(BaseModel):
    """Partition of the N x L cells into attribution players.

    ``players[j]`` lists the flat (feature-major) cell indices owned by player j.
    """

    model_config = ConfigDict(frozen=True)

    granularity: Literal["cell", "feature"]
    shape: Tuple[int, int]
    players: Tuple[Tuple[int, ...], ...]
    labels: Tuple[str, ...]
    fused_groups: Tuple[str, ...] = ()

    @model_validator(mode="after")
    def _partition(self) -> "PlayerScheme":
        if len(self.players) != len(self.labels):
            raise ValueError("one label per player required")
        cells = [c for player in self.players for c in player]
        if sorted(cells) != list(range(self.shape[0] * self.shape[1])):
            raise ValueError("players must partition every cell exactly once")
        return self

    @property
    def M(self) -> int:
        return len(self.players)

    @cached_property
    def incidence(self) -> np.ndarray:
        """(M, N*L) boolean matrix: player j owns cell c."""
        out = np.zeros((self.M, self.shape[0] * self.shape[1]), dtype=bool)
        for j, cells in enumerate(self.players):
            out[j, list(cells)] = True
        return out

    def cell_masks(self, coalitions: np.ndarray) -> np.ndarray:
        """Map (k, M) coalition indicators to (k, N*L) cell masks."""
        return (np.asarray(coalitions, dtype=np.float64) @ self.incidence.astype(np.float64)) > 0.5

    def expand(self, player_values: np.ndarray) -> np.ndarray:
        """Spread player values over their cells in equal shares (sums preserved)."""
        grid = np.zeros(self.shape[0] * self.shape[1])
        for value, cells in zip(player_values, self.players):
            grid[list(cells)] = value / len(cells)
        return grid.reshape(self.shape)


class BackgroundSet(BaseModel):
    """Reference windows defining the coalition value function."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    values: np.ndarray
    seed: int
    mode: Literal["sample", "mean"] = "sample"
    sample_ids: Tuple[int, ...] = ()

    @field_validator("values", mode="before")
    @classmethod
    def _values(cls, v):
        return np.array(v, dtype=np.float64)

    @model_validator(mode="after")
    def _check(self) -> "BackgroundSet":
        if self.values.ndim != 3 or len(self.values) < 1:
            raise ValueError("background needs at least one N x L window")
        if np.isnan(self.values).any():
            raise ValueError("background windows must be imputed")
        self.values.setflags(write=False)
        return self

    @property
    def size(self) -> int:
        return len(self.values)

    @property
    def mean(self) -> np.ndarray:
        return self.values.mean(axis=0)

    def digest(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.values).tobytes()).hexdigest()


class AttributionDiagnostics(BaseModel):
    coalitions_evaluated: int
    residual: float
    prediction: float


class Attribution(BaseModel):
    """Signed attribution of one sample's prediction from one explainer.

    ``values`` is the N x L display grid; ``player_values`` keeps the raw
    per-player result when the explainer produced it.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    explainer: ExplainerKind
    base_value: float
    values: np.ndarray
    feature_names: Tuple[str, ...]
    sample_id: int
    seed: int = 0
    player_values: Optional[np.ndarray] = None
    diagnostics: Optional[AttributionDiagnostics] = None

    @field_validator("values", mode="before")
    @classmethod
    def _grid(cls, v):
        return np.array(v, dtype=np.float64)

    @model_validator(mode="after")
    def _check(self) -> "Attribution":
        if self.values.ndim != 2 or self.values.shape[0] != len(self.feature_names):
            raise ValueError(f"values must be N x L with N = {len(self.feature_names)}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"non-finite attribution values for sample {self.sample_id}")
        self.values.setflags(write=False)
        return self

    @property
    def total(self) -> float:
        return float(self.values.sum())


class AttributionSummary(BaseModel):
    """Mean attribution grid over a cohort.

    ``abs_values`` is the cell-wise mean of |value| over the same cohort and
    feeds the ranking score.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    explainer: ExplainerKind
    values: np.ndarray
    abs_values: np.ndarray
    base_value: float
    count: int = Field(ge=1)
    feature_names: Tuple[str, ...]
    selection: str = "correct_positive"
    group_key: str = "all"
    sample_ids: Tuple[int, ...] = ()

    @field_validator("values", "abs_values", mode="before")
    @classmethod
    def _grid(cls, v):
        return np.array(v, dtype=np.float64)

    @model_validator(mode="after")
    def _check(self) -> "AttributionSummary":
        if self.values.shape != self.abs_values.shape or self.values.shape[0] != len(self.feature_names):
            raise ValueError("summary grids must both be N x L")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("summary values must be finite")
        self.values.setflags(write=False)
        self.abs_values.setflags(write=False)
        return self

    @property
    def window_length(self) -> int:
        return self.values.shape[1]

    def row(self, feature: str) -> np.ndarray:
        return self.values[self.feature_names.index(feature)]


class RankingEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    feature: str
    score: float
    mean_value: float


class FeatureRanking(BaseModel):
    """Features ordered by mean |attribution| (ties alphabetical)."""

    model_config = ConfigDict(frozen=True)

    entries: Tuple[RankingEntry, ...]
    direction: Direction = "most"
    source: str = ""

    @property
    def features(self) -> List[str]:
        return [e.feature for e in self.entries]

    @property
    def scores(self) -> Dict[str, float]:
        return {e.feature: e.score for e in self.entries}

    def __len__(self) -> int:
        return len(self.entries)


class Agreement(BaseModel):
    spearman_rho: float
    sign_match_rate: float
    k: int
    compared: Tuple[str, ...]


class GroupedSummaries(BaseModel):
    """Per-group summaries, keyed in calendar order, with the groups that had no samples."""

    by: Literal["month", "season"]
    summaries: Dict[str, AttributionSummary]
    empty_groups: List[str]


class PermutationScore(BaseModel):
    model_config = ConfigDict(frozen=True)

    feature: str
    score: float
    std: float


class PermutationImportance(BaseModel):
    """Accuracy drop per feature after shuffling its whole row across samples."""

    model_config = ConfigDict(frozen=True)

    baseline_accuracy: float
    repeats: int
    seed: int
    scores: Tuple[PermutationScore, ...]

    def to_ranking(self) -> FeatureRanking:
        ordered = sorted(self.scores, key=lambda s: (-s.score, s.feature))
        return FeatureRanking(
            entries=tuple(RankingEntry(feature=s.feature, score=s.score, mean_value=s.score) for s in ordered),
            source=ExplainerKind.PERMUTATION.value,
        )
