"""Built-in window schemas and schema-file loading."""
import json
import logging
from pathlib import Path
from typing import Dict, Union

from pydantic import ValidationError

from wildxai.exceptions import SchemaError
from wildxai.models.dataset import Derivation, FeatureKind, FeatureSpec, WindowSchema

logger = logging.getLogger(__name__)

MESOGEOS_STATIC = (
    "population", "slope", "dem", "roads_distance",
    "lc_wetland", "lc_shrubland", "lc_grassland", "lc_water_bodies",
    "lc_forest", "lc_sparse_vegetation", "lc_settlement", "lc_agriculture",
)
MESOGEOS_DYNAMIC = (
    "wind_speed", "ssrd", "tp", "sp", "rh",
    "t2m", "d2m", "lst_night", "lst_day",
    "smi", "lai", "ndvi",
)

# Features read as "temperature family" when checking rankings.
TEMPERATURE_FAMILY = ("t2m", "lst_day", "lst_night", "d2m", "max_temp", "min_temp", "temp_range")


def mesogeos_schema() -> WindowSchema:
    features = [FeatureSpec(name=n, kind=FeatureKind.STATIC) for n in MESOGEOS_STATIC]
    features += [FeatureSpec(name=n, kind=FeatureKind.DYNAMIC) for n in MESOGEOS_DYNAMIC]
    return WindowSchema(features=tuple(features), window_length=30)


def california_schema() -> WindowSchema:
    dyn = FeatureKind.DYNAMIC
    features = (
        FeatureSpec(name="precipitation", kind=dyn),
        FeatureSpec(name="lagged_precipitation", kind=dyn),
        FeatureSpec(name="max_temp", kind=dyn),
        FeatureSpec(name="min_temp", kind=dyn),
        FeatureSpec(
            name="temp_range", kind=dyn,
            derived_from=("max_temp", "min_temp"), derivation=Derivation.DIFFERENCE,
        ),
        FeatureSpec(name="avg_wind_speed", kind=dyn),
        FeatureSpec(
            name="wind_temp_ratio", kind=dyn,
            derived_from=("avg_wind_speed", "max_temp"), derivation=Derivation.RATIO,
        ),
        FeatureSpec(name="lagged_avg_wind_speed", kind=dyn),
        # fall is encoded as all three indicators off
        FeatureSpec(name="season_winter", kind=dyn, group="season"),
        FeatureSpec(name="season_spring", kind=dyn, group="season"),
        FeatureSpec(name="season_summer", kind=dyn, group="season"),
    )
    return WindowSchema(features=features, window_length=11)


PRESETS = {
    "mesogeos": mesogeos_schema,
    "california": california_schema,
}


def load_schema(ref: Union[str, Path]) -> WindowSchema:
    """
    Resolve a schema reference.

    Args:
        ref: A preset name (``mesogeos``, ``california``) or a JSON file path

    Returns:
        WindowSchema: The validated schema
    """
    if str(ref) in PRESETS:
        return PRESETS[str(ref)]()

    path = Path(ref)
    if not path.is_file():
        raise SchemaError(f"schema {ref!r} is neither a preset ({', '.join(PRESETS)}) nor a file")
    try:
        data = json.loads(path.read_text())
        schema = WindowSchema.model_validate(data)
    except (json.JSONDecodeError, ValidationError) as e:
        raise SchemaError(f"invalid schema file {path}: {e}") from e

    logger.debug(f"Loaded schema from {path}: N={schema.n_features}, L={schema.window_length}")
    return schema


def dump_schema(schema: WindowSchema) -> Dict:
    return schema.model_dump(mode="json")
