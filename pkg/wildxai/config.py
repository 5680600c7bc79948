"""Application configuration settings."""
import json
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, Iterable, List, Literal, Mapping, Optional

from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from wildxai.exceptions import ConfigError


class Settings(BaseSettings):
    """Process-level settings read from the environment or ``.env``."""

    # Logging
    LOG_LEVEL: str = "INFO"

    # Output
    OUT_DIR: Path = Path("runs")

    model_config = SettingsConfigDict(env_file=".env", env_prefix="WILDXAI_", case_sensitive=True)


@lru_cache()
def get_settings() -> Settings:
    """
    Get application settings.

    Returns:
        Settings: Application settings
    """
    return Settings()


class _Section(BaseModel):
    """Base for config sections: unknown keys are rejected."""

    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    @model_validator(mode="before")
    @classmethod
    def _none_literals(cls, data: Any) -> Any:
        if isinstance(data, dict):
            return {
                k: (None if isinstance(v, str) and v.strip().lower() in ("none", "") else v)
                for k, v in data.items()
            }
        return data


def _split_list(value: Any) -> Any:
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


class RunSection(_Section):
    seed: int = 0
    threads: int = 1


class DatasetSection(_Section):
    schema_ref: str = "mesogeos"
    layout: Literal["long", "wide"] = "long"
    val_fraction: float = 0.1
    test_fraction: float = 0.2


class ModelSection(_Section):
    kind: Literal["random_forest", "gradient_boosting", "logistic", "external"] = "random_forest"
    num_trees: int = 100
    min_split: int = 2
    max_depth: Optional[int] = None
    learning_rate: float = 0.3
    reg_lambda: float = 1.0
    min_child_weight: float = 1.0
    l2: float = 1e-3
    epochs: int = 500
    step_size: float = 0.5
    external_command: Optional[str] = None


class ExplainerSection(_Section):
    method: Literal["exact_shapley", "kernel_shap", "lime", "permutation"] = "kernel_shap"
    granularity: Literal["cell", "feature"] = "cell"
    fuse_groups: bool = True
    background_size: int = 100
    background_mode: Literal["sample", "mean"] = "sample"
    num_coalitions: Optional[int] = None
    num_perturbations: Optional[int] = None
    kernel_width: Optional[float] = None
    ridge_alpha: float = 1.0
    top_k: Optional[int] = None
    permutation_repeats: int = 10
    split: str = "test"


class RenderSection(_Section):
    r_min: float = 2.0
    r_max: float = 10.0
    cell_size: float = 24.0
    vmax: Optional[float] = None
    min_score: float = 0.0
    font_family: str = "Helvetica, Arial, sans-serif"
    font_size: int = 11
    curve_top: int = 5
    histogram_bins: int = 30


class StudySection(_Section):
    ks: List[int] = [5, 10, 20]
    directions: List[Literal["most", "least"]] = ["most", "least"]
    timing_repeats: int = 3
    parallel: bool = False
    agreement_k: int = 5

    @field_validator("ks", "directions", mode="before")
    @classmethod
    def _comma_lists(cls, value: Any) -> Any:
        return _split_list(value)


class RunConfig(BaseModel):
    """Fully resolved run configuration."""

    model_config = ConfigDict(extra="forbid")

    run: RunSection = RunSection()
    dataset: DatasetSection = DatasetSection()
    model: ModelSection = ModelSection()
    explainer: ExplainerSection = ExplainerSection()
    render: RenderSection = RenderSection()
    study: StudySection = StudySection()

    def to_lines(self) -> List[str]:
        """Render as ``section.key = value`` lines in declaration order."""
        lines = []
        for section_name in type(self).model_fields:
            section = getattr(self, section_name)
            for key in type(section).model_fields:
                lines.append(f"{section_name}.{key} = {_format_value(getattr(section, key))}")
        return lines

    def to_text(self) -> str:
        return "\n".join(self.to_lines()) + "\n"


def _format_value(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(str(v) for v in value)
    return str(value)


def parse_config_lines(lines: Iterable[str], origin: str = "<config>") -> Dict[str, Dict[str, str]]:
    """Parse ``section.key = value`` lines into nested raw strings."""
    raw: Dict[str, Dict[str, str]] = {}
    for number, line in enumerate(lines, start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        if "=" not in text:
            raise ConfigError(f"{origin}:{number}: expected 'section.key = value', got {text!r}")
        key, value = (part.strip() for part in text.split("=", 1))
        if key.count(".") != 1:
            raise ConfigError(f"{origin}:{number}: key {key!r} must look like section.key")
        section, name = key.split(".")
        raw.setdefault(section, {})[name] = value
    return raw


def config_lines(path: Path) -> List[str]:
    """Config lines of a plain config file, or the ``resolved_config`` echoed into a run manifest."""
    text = path.read_text()
    if path.suffix == ".json":
        try:
            lines = json.loads(text)["resolved_config"]
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise ConfigError(f"{path} is not a run manifest with a resolved_config") from e
        return [str(line) for line in lines]
    return text.splitlines()


def build_run_config(raw: Mapping[str, Mapping[str, Any]]) -> RunConfig:
    """Validate raw nested values; unknown sections or keys are fatal."""
    try:
        return RunConfig.model_validate({k: dict(v) for k, v in raw.items()})
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()
        )
        raise ConfigError(f"invalid configuration: {problems}") from e


def load_run_config(path: Optional[Path] = None, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """
    Load a run configuration file and apply flag overrides.

    Args:
        path: Optional ``section.key = value`` file
        overrides: Mapping of ``section.key`` to values, applied last

    Returns:
        RunConfig: The resolved configuration
    """
    raw: Dict[str, Dict[str, Any]] = {}
    if path is not None:
        if not Path(path).is_file():
            raise ConfigError(f"config file not found: {path}")
        raw = parse_config_lines(config_lines(Path(path)), origin=str(path))
    for key, value in (overrides or {}).items():
        if key.count(".") != 1:
            raise ConfigError(f"override {key!r} must look like section.key")
        section, name = key.split(".")
        raw.setdefault(section, {})[name] = value
    return build_run_config(raw)
