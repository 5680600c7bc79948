"""Study report models."""
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field


class StudyRow(BaseModel):
    """One trained-and-evaluated configuration."""

    model_config = ConfigDict(frozen=True)

    configuration: str
    model_kind: str
    k: Optional[int] = None
    direction: Optional[Literal["most", "least", "all"]] = None
    features: Tuple[str, ...] = ()
    accuracy: Optional[float] = Field(None, ge=0, le=100)
    train_seconds: Optional[float] = None
    seed: int
    config_hash: str
    reproducible: bool = True
    error: Optional[str] = None


class StudyReport(BaseModel):
    """Rows of one study plus the digests needed to regenerate them."""

    study: Literal["model_comparison", "feature_selection"]
    rows: List[StudyRow]
    dataset_hash: str
    config_hash: str
    seed: int
    parameters: Dict[str, str] = {}

    def row(self, configuration: str) -> StudyRow:
        for r in self.rows:
            if r.configuration == configuration:
                return r
        raise KeyError(configuration)


class ExplanationRun(BaseModel):
    """Result of an end-to-end explanation run."""

    out_dir: str
    explainer: str
    cohort_size: int
    files: List[str]
    manifest: str
