"""Columnar attribution, summary and ranking files plus run manifests."""
import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Sequence, Union

import numpy as np
import pandas as pd

from wildxai.exceptions import ModelFormatError
from wildxai.models.attribution import (
    ATTRIBUTION_FORMAT_VERSION,
    Attribution,
    AttributionSummary,
    ExplainerKind,
    FeatureRanking,
    PermutationImportance,
    RankingEntry,
)

logger = logging.getLogger(__name__)

ATTRIBUTION_COLUMNS = ["sample_id", "explainer", "base_value", "feature", "day", "value"]
SUMMARY_COLUMNS = ["group_key", "count", "selection", "explainer", "base_value", "feature", "day", "value", "abs_value"]
RANKING_COLUMNS = ["rank", "feature", "score", "mean_value"]

PathLike = Union[str, Path]


def _header(kind: str) -> str:
    return f"# wildxai-{kind} {ATTRIBUTION_FORMAT_VERSION}\n"


def _write(frame: pd.DataFrame, path: PathLike, kind: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(_header(kind))
        frame.to_csv(fh, index=False, lineterminator="\n")
    logger.info(f"Wrote {len(frame)} {kind} rows to {path}")
    return path


def _read(path: PathLike, kind: str, columns: List[str]) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise ModelFormatError(f"{kind} file not found: {path}")
    with path.open(encoding="utf-8") as fh:
        first = fh.readline()
    if first != _header(kind):
        raise ModelFormatError(f"{path} is not a wildxai {kind} file (version {ATTRIBUTION_FORMAT_VERSION})")
    frame = pd.read_csv(path, skiprows=1, keep_default_na=False, float_precision="round_trip")
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise ModelFormatError(f"{path}: missing columns {', '.join(missing)}")
    return frame


def _grid_rows(feature_names: Sequence[str], values: np.ndarray) -> Dict[str, list]:
    N, L = values.shape
    return {
        "feature": [f for f in feature_names for _ in range(L)],
        "day": [t + 1 for _ in range(N) for t in range(L)],
        "value": values.reshape(-1).tolist(),
    }


def _to_grid(group: pd.DataFrame) -> tuple:
    features = list(dict.fromkeys(group["feature"]))
    L = int(group["day"].max())
    grid = np.zeros((len(features), L))
    rows = {f: i for i, f in enumerate(features)}
    for feature, day, value in zip(group["feature"], group["day"], group["value"]):
        grid[rows[feature], int(day) - 1] = float(value)
    return tuple(features), grid


def write_attributions(attributions: Sequence[Attribution], path: PathLike) -> Path:
    """One row per (sample, feature, day), samples in input order."""
    parts = []
    for a in attributions:
        cells = _grid_rows(a.feature_names, a.values)
        n = len(cells["value"])
        parts.append(pd.DataFrame({
            "sample_id": [a.sample_id] * n,
            "explainer": [a.explainer.value] * n,
            "base_value": [a.base_value] * n,
            **cells,
        }))
    frame = pd.concat(parts, ignore_index=True) if parts else pd.DataFrame(columns=ATTRIBUTION_COLUMNS)
    return _write(frame[ATTRIBUTION_COLUMNS], path, "attributions")


def read_attributions(path: PathLike, seed: int = 0) -> List[Attribution]:
    frame = _read(path, "attributions", ATTRIBUTION_COLUMNS)
    out = []
    for sample_id, group in frame.groupby("sample_id", sort=False):
        features, grid = _to_grid(group)
        out.append(Attribution(
            explainer=ExplainerKind(group["explainer"].iloc[0]),
            base_value=float(group["base_value"].iloc[0]),
            values=grid,
            feature_names=features,
            sample_id=int(sample_id),
            seed=seed,
        ))
    return out


def write_summaries(summaries: Sequence[AttributionSummary], path: PathLike) -> Path:
    """Summary grids in the attribution layout plus group_key and count columns."""
    parts = []
    for s in summaries:
        cells = _grid_rows(s.feature_names, s.values)
        n = len(cells["value"])
        parts.append(pd.DataFrame({
            "group_key": [s.group_key] * n,
            "count": [s.count] * n,
            "selection": [s.selection] * n,
            "explainer": [s.explainer.value] * n,
            "base_value": [s.base_value] * n,
            **cells,
            "abs_value": s.abs_values.reshape(-1).tolist(),
        }))
    frame = pd.concat(parts, ignore_index=True) if parts else pd.DataFrame(columns=SUMMARY_COLUMNS)
    return _write(frame[SUMMARY_COLUMNS], path, "summaries")


def read_summaries(path: PathLike) -> List[AttributionSummary]:
    frame = _read(path, "summaries", SUMMARY_COLUMNS)
    out = []
    for group_key, group in frame.groupby("group_key", sort=False):
        features, grid = _to_grid(group)
        _, abs_grid = _to_grid(group.assign(value=group["abs_value"]))
        out.append(AttributionSummary(
            explainer=ExplainerKind(group["explainer"].iloc[0]),
            values=grid,
            abs_values=abs_grid,
            base_value=float(group["base_value"].iloc[0]),
            count=int(group["count"].iloc[0]),
            feature_names=features,
            selection=str(group["selection"].iloc[0]),
            group_key=str(group_key),
        ))
    return out


def write_ranking(ranking: FeatureRanking, path: PathLike) -> Path:
    frame = pd.DataFrame({
        "rank": list(range(1, len(ranking) + 1)),
        "feature": ranking.features,
        "score": [e.score for e in ranking.entries],
        "mean_value": [e.mean_value for e in ranking.entries],
    })
    return _write(frame, path, "ranking")


def read_ranking(path: PathLike, source: str = "") -> FeatureRanking:
    frame = _read(path, "ranking", RANKING_COLUMNS).sort_values("rank", kind="stable")
    entries = tuple(
        RankingEntry(feature=str(f), score=float(s), mean_value=float(m))
        for f, s, m in zip(frame["feature"], frame["score"], frame["mean_value"])
    )
    return FeatureRanking(entries=entries, source=source)


def write_permutation(importance: PermutationImportance, path: PathLike) -> Path:
    frame = pd.DataFrame({
        "feature": [s.feature for s in importance.scores],
        "score": [s.score for s in importance.scores],
        "std": [s.std for s in importance.scores],
        "baseline_accuracy": [importance.baseline_accuracy] * len(importance.scores),
        "repeats": [importance.repeats] * len(importance.scores),
    })
    return _write(frame, path, "permutation")


def file_digest(path: PathLike) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(manifest: Dict[str, Any], path: PathLike) -> Path:
    """Run manifest as sorted, indented JSON (no timestamps)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def read_manifest(path: PathLike) -> Dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise ModelFormatError(f"manifest not found: {path}")
    return json.loads(path.read_text(encoding="utf-8"))
