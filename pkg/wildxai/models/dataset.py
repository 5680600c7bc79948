"""Dataset data models: window schemas, samples, imputation and the archive tables."""
from datetime import date, datetime
from enum import Enum
from fractions import Fraction
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from sqlmodel import Field as SQLField
from sqlmodel import SQLModel

DATASET_FORMAT_VERSION = 1

Season = Literal["winter", "spring", "summer", "fall"]


class FeatureKind(str, Enum):
    STATIC = "static"
    DYNAMIC = "dynamic"


class Derivation(str, Enum):
    DIFFERENCE = "difference"
    RATIO = "ratio"


class FeatureSpec(BaseModel):
    """One input feature of a window."""

    model_config = ConfigDict(frozen=True)

    name: str = Field(min_length=1)
    kind: FeatureKind = FeatureKind.DYNAMIC
    group: Optional[str] = None
    derived_from: Optional[Tuple[str, str]] = None
    derivation: Optional[Derivation] = None

    @model_validator(mode="after")
    def _derivation_pair(self) -> "FeatureSpec":
        if (self.derived_from is None) != (self.derivation is None):
            raise ValueError(f"feature {self.name}: derived_from and derivation go together")
        return self


class WindowSchema(BaseModel):
    """Ordered features (N) over a window of L days."""

    model_config = ConfigDict(frozen=True)

    features: Tuple[FeatureSpec, ...]
    window_length: int
    positive_label_meaning: Literal["event occurs on day L+1"] = "event occurs on day L+1"

    @model_validator(mode="after")
    def _check(self) -> "WindowSchema":
        if len(self.features) < 1:
            raise ValueError("schema needs at least one feature")
        if self.window_length < 1:
            raise ValueError("window_length must be >= 1")
        names = [f.name for f in self.features]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise ValueError(f"duplicate feature names: {', '.join(dupes)}")
        for group, members in self.groups.items():
            kinds = {self.features[i].kind for i in members}
            if len(kinds) > 1:
                raise ValueError(f"one-hot group {group!r} mixes static and dynamic members")
        for feat in self.features:
            if feat.derived_from:
                missing = [p for p in feat.derived_from if p not in names]
                if missing:
                    raise ValueError(f"feature {feat.name}: unknown parents {missing}")
        return self

    @property
    def n_features(self) -> int:
        return len(self.features)

    @property
    def feature_names(self) -> List[str]:
        return [f.name for f in self.features]

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.n_features, self.window_length)

    @property
    def groups(self) -> Dict[str, List[int]]:
        """One-hot groups mapped to member feature indices (schema order)."""
        out: Dict[str, List[int]] = {}
        for i, feat in enumerate(self.features):
            if feat.group:
                out.setdefault(feat.group, []).append(i)
        return out

    @property
    def column_names(self) -> List[str]:
        """Flattened ``feature@day`` names, feature-major."""
        return [f"{f.name}@{t}" for f in self.features for t in range(1, self.window_length + 1)]

    def index_of(self, name: str) -> int:
        for i, feat in enumerate(self.features):
            if feat.name == name:
                return i
        raise KeyError(name)

    def subset(self, names: List[str]) -> "WindowSchema":
        """Schema restricted to ``names``; schema order is kept."""
        keep = set(names)
        features = []
        for feat in self.features:
            if feat.name not in keep:
                continue
            if feat.derived_from and not set(feat.derived_from) <= keep:
                feat = feat.model_copy(update={"derived_from": None, "derivation": None})
            features.append(feat)
        return WindowSchema(features=tuple(features), window_length=self.window_length)


class WindowedSample(BaseModel):
    """A single N x L window with its label."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    values: np.ndarray
    label: int
    event_date: Optional[date] = None
    sample_id: int


class SampleSet(BaseModel):
    """Column-oriented batch of windows sharing one schema.

    ``values`` has shape (n, N, L); missing cells are NaN. Arrays are made
    read-only on construction.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    sample_ids: np.ndarray
    values: np.ndarray
    labels: np.ndarray
    event_dates: Tuple[Optional[date], ...]

    @field_validator("sample_ids", mode="before")
    @classmethod
    def _ids(cls, v):
        return np.array(v, dtype=np.int64).reshape(-1)

    @field_validator("values", mode="before")
    @classmethod
    def _values(cls, v):
        return np.array(v, dtype=np.float64)

    @field_validator("labels", mode="before")
    @classmethod
    def _labels(cls, v):
        return np.array(v, dtype=np.int64).reshape(-1)

    @model_validator(mode="after")
    def _check(self) -> "SampleSet":
        n = len(self.sample_ids)
        if self.values.ndim != 3 or self.values.shape[0] != n:
            raise ValueError(f"values must have shape (n, N, L) with n={n}, got {self.values.shape}")
        if len(self.labels) != n or len(self.event_dates) != n:
            raise ValueError("labels and event_dates must align with sample_ids")
        if n and not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")
        if len(np.unique(self.sample_ids)) != n:
            raise ValueError("sample_ids must be unique")
        for arr in (self.sample_ids, self.values, self.labels):
            arr.setflags(write=False)
        return self

    def __len__(self) -> int:
        return len(self.sample_ids)

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.values.shape[1], self.values.shape[2])

    def sample(self, i: int) -> WindowedSample:
        return WindowedSample(
            values=self.values[i],
            label=int(self.labels[i]),
            event_date=self.event_dates[i],
            sample_id=int(self.sample_ids[i]),
        )

    def samples(self) -> List[WindowedSample]:
        return [self.sample(i) for i in range(len(self))]

    def take(self, indices) -> "SampleSet":
        idx = np.asarray(indices, dtype=np.int64)
        return SampleSet(
            sample_ids=self.sample_ids[idx],
            values=self.values[idx],
            labels=self.labels[idx],
            event_dates=tuple(self.event_dates[i] for i in idx),
        )

    def with_values(self, values: np.ndarray) -> "SampleSet":
        return SampleSet(
            sample_ids=self.sample_ids, values=values, labels=self.labels, event_dates=self.event_dates
        )

    def position_of(self, sample_id: int) -> int:
        hits = np.flatnonzero(self.sample_ids == sample_id)
        if not len(hits):
            raise KeyError(sample_id)
        return int(hits[0])

    def flat(self) -> np.ndarray:
        """(n, N*L) matrix with ``feature@day`` columns."""
        n, N, L = self.values.shape
        return self.values.reshape(n, N * L)

    @classmethod
    def concat(cls, parts: List["SampleSet"]) -> "SampleSet":
        return cls(
            sample_ids=np.concatenate([p.sample_ids for p in parts]),
            values=np.concatenate([p.values for p in parts]),
            labels=np.concatenate([p.labels for p in parts]),
            event_dates=tuple(d for p in parts for d in p.event_dates),
        )


class ImputationStats(BaseModel):
    """Training-split statistics used to fill missing cells."""

    model_config = ConfigDict(frozen=True)

    feature_names: Tuple[str, ...]
    means: Dict[str, float]
    missing_counts: Dict[str, int]
    total_counts: Dict[str, int]
    # active member per one-hot group; None means "no member active"
    group_modes: Dict[str, Optional[str]] = {}

    def missing_fraction(self, feature: str) -> Fraction:
        return Fraction(self.missing_counts[feature], self.total_counts[feature])


class MissingnessRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    feature: str
    missing_count: int
    total_count: int

    @property
    def fraction(self) -> Fraction:
        return Fraction(self.missing_count, self.total_count)

    @property
    def observed_count(self) -> int:
        return self.total_count - self.missing_count

    @property
    def percent(self) -> float:
        return round(float(self.fraction * 100), 2)


class MissingnessReport(BaseModel):
    """Per-feature missing-cell table, sorted by missing share (descending)."""

    model_config = ConfigDict(frozen=True)

    rows: Tuple[MissingnessRow, ...]

    def percentages(self) -> Dict[str, float]:
        return {row.feature: row.percent for row in self.rows}


class CalendarGroup(BaseModel):
    model_config = ConfigDict(frozen=True)

    month: int = Field(ge=1, le=12)
    season: Season


class Provenance(BaseModel):
    model_config = ConfigDict(frozen=True)

    source: str
    ingested_at: datetime


class Dataset(BaseModel):
    """Schema, named splits and the imputation fitted on ``train``."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    window_schema: WindowSchema
    splits: Dict[str, SampleSet]
    imputation: ImputationStats
    provenance: Provenance

    @model_validator(mode="after")
    def _check(self) -> "Dataset":
        for required in ("train", "test"):
            if required not in self.splits:
                raise ValueError(f"dataset needs a {required!r} split")
        unknown = set(self.splits) - {"train", "val", "test"}
        if unknown:
            raise ValueError(f"unknown split names: {sorted(unknown)}")
        seen: Dict[int, str] = {}
        for name, split in self.splits.items():
            if len(split) and split.shape != self.window_schema.shape:
                raise ValueError(f"split {name} has shape {split.shape}, schema says {self.window_schema.shape}")
            for sid in split.sample_ids.tolist():
                if sid in seen:
                    raise ValueError(f"sample {sid} appears in both {seen[sid]} and {name}")
                seen[sid] = name
        return self

    def split(self, name: str) -> SampleSet:
        try:
            return self.splits[name]
        except KeyError:
            raise KeyError(f"dataset has no {name!r} split") from None


# Archive tables

class DatasetRecord(SQLModel, table=True):
    """Dataset header row of an archive file."""

    __tablename__ = "datasets"

    id: Optional[int] = SQLField(default=None, primary_key=True)
    format_version: int = SQLField(default=DATASET_FORMAT_VERSION, nullable=False)
    schema_json: str = SQLField(nullable=False)
    imputation_json: str = SQLField(nullable=False)
    source: str = SQLField(nullable=False)
    ingested_at: datetime = SQLField(nullable=False)


class SampleRecord(SQLModel, table=True):
    """One imputed window of an archive file."""

    __tablename__ = "samples"

    id: Optional[int] = SQLField(default=None, primary_key=True)
    dataset_id: int = SQLField(foreign_key="datasets.id", index=True)
    sample_id: int = SQLField(index=True)
    split: str = SQLField(max_length=8, index=True)
    position: int = SQLField(nullable=False)
    label: int = SQLField(nullable=False)
    event_date: Optional[date] = SQLField(default=None, nullable=True)
    values_json: str = SQLField(nullable=False)
