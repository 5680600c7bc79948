"""Ingestion, validation and imputation of event-aligned CSV windows."""
import logging
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Dict, Iterable, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from sklearn.model_selection import train_test_split

from wildxai.exceptions import (
    CsvParseError,
    EmptyInputError,
    MissingCalendarError,
    SchemaError,
    UnimputableFeatureError,
    WindowValidationError,
)
from wildxai.models.dataset import (
    CalendarGroup,
    Dataset,
    Derivation,
    FeatureKind,
    ImputationStats,
    MissingnessReport,
    MissingnessRow,
    Provenance,
    SampleSet,
    Season,
    WindowSchema,
)
from wildxai.services.rng import derive_rng

logger = logging.getLogger(__name__)

Layout = Literal["long", "wide"]

MISSING_TOKENS = ("", "NaN", "nan")
LONG_KEYS = ("sample_id", "day", "label", "event_date")
WIDE_KEYS = ("sample_id", "label", "event_date")
SPLIT_COLUMN = "split"
SPLIT_NAMES = ("train", "val", "test")

_SEASONS: Dict[int, Season] = {
    12: "winter", 1: "winter", 2: "winter",
    3: "spring", 4: "spring", 5: "spring",
    6: "summer", 7: "summer", 8: "summer",
    9: "fall", 10: "fall", 11: "fall",
}


def empty_sample_set(schema: WindowSchema) -> SampleSet:
    return SampleSet(
        sample_ids=np.zeros(0, dtype=np.int64),
        values=np.zeros((0,) + schema.shape),
        labels=np.zeros(0, dtype=np.int64),
        event_dates=(),
    )


# Parsing helpers

def _line(index: int) -> int:
    """CSV line number of a data row (header is line 1)."""
    return int(index) + 2


def _parse_numeric(frame: pd.DataFrame, column: str) -> np.ndarray:
    raw = frame[column].str.strip()
    missing = raw.isin(MISSING_TOKENS)
    parsed = pd.to_numeric(raw.mask(missing), errors="coerce").to_numpy(dtype=np.float64)
    bad = ~missing.to_numpy() & ~np.isfinite(parsed)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise CsvParseError(
            f"non-numeric value {frame[column].iloc[row]!r} at line {_line(row)}, column {column!r}",
            line=_line(row),
            column=column,
        )
    return parsed


def _parse_int(frame: pd.DataFrame, column: str) -> np.ndarray:
    raw = frame[column].str.strip()
    parsed = pd.to_numeric(raw, errors="coerce")
    bad = parsed.isna() | (parsed != parsed.round())
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise CsvParseError(
            f"expected an integer, got {frame[column].iloc[row]!r} at line {_line(row)}, column {column!r}",
            line=_line(row),
            column=column,
        )
    return parsed.to_numpy().astype(np.int64)


def _parse_dates(frame: pd.DataFrame) -> List[Optional[date]]:
    if "event_date" not in frame.columns:
        return [None] * len(frame)
    out: List[Optional[date]] = []
    cache: Dict[str, Optional[date]] = {}
    for row, text in enumerate(frame["event_date"].str.strip()):
        if text not in cache:
            if text in MISSING_TOKENS:
                cache[text] = None
            else:
                try:
                    cache[text] = date.fromisoformat(text)
                except ValueError:
                    raise CsvParseError(
                        f"invalid event_date {text!r} at line {_line(row)}", line=_line(row), column="event_date"
                    ) from None
        out.append(cache[text])
    return out


def _check_header(columns: Iterable[str], expected: List[str], required: Tuple[str, ...]) -> None:
    allowed = set(expected) | set(required) | {"event_date", SPLIT_COLUMN}
    for column in columns:
        if column not in allowed:
            raise SchemaError(f"unknown column {column!r} not in schema", column=column)
    present = set(columns)
    for column in list(required) + expected:
        if column not in present:
            raise SchemaError(f"missing column {column!r}", column=column)


def _check_agreement(frame: pd.DataFrame, column: str, parsed: Optional[Sequence] = None) -> None:
    """Every row of a sample must carry the same value; ``parsed`` compares values, not spellings."""
    if column not in frame.columns:
        return
    values = pd.Series(list(parsed) if parsed is not None else frame[column].str.strip().tolist(), index=frame.index)
    distinct = values.groupby(frame["sample_id"], sort=False).nunique(dropna=False)
    offenders = distinct[distinct > 1]
    if len(offenders):
        raise WindowValidationError(
            f"{column} differs between rows of sample_id {offenders.index[0]}",
            sample_id=int(offenders.index[0]),
        )


def _check_static(values: np.ndarray, sample_ids: np.ndarray, schema: WindowSchema) -> None:
    for i, feat in enumerate(schema.features):
        if feat.kind != FeatureKind.STATIC:
            continue
        window = values[:, i, :]
        missing = np.isnan(window)
        highs = np.where(missing, -np.inf, window).max(axis=1)
        lows = np.where(missing, np.inf, window).min(axis=1)
        varying = np.flatnonzero(highs > lows)
        if len(varying):
            sid = int(sample_ids[varying[0]])
            raise WindowValidationError(
                f"static feature {feat.name!r} varies within the window of sample_id {sid}",
                sample_id=sid,
                feature=feat.name,
            )


def _read_frame(path: Union[str, Path]) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise CsvParseError(f"file not found: {path}")
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, na_filter=False)
    frame.columns = [c.strip() for c in frame.columns]
    return frame


def _long_to_samples(frame: pd.DataFrame, schema: WindowSchema) -> Tuple[SampleSet, Optional[Dict[int, str]]]:
    N, L = schema.shape
    _check_header(frame.columns, schema.feature_names, ("sample_id", "day", "label"))
    if not len(frame):
        return empty_sample_set(schema), None

    frame = frame.copy()
    frame["sample_id"] = _parse_int(frame, "sample_id")
    days = _parse_int(frame, "day")
    labels = _parse_int(frame, "label")
    bad_day = np.flatnonzero((days < 1) | (days > L))
    if len(bad_day):
        row = int(bad_day[0])
        raise WindowValidationError(f"day {days[row]} outside 1..{L} at line {_line(row)}", line=_line(row))

    row_dates = _parse_dates(frame)
    _check_agreement(frame, "label", labels)
    _check_agreement(frame, "event_date", row_dates)
    _check_agreement(frame, SPLIT_COLUMN)

    ids = frame["sample_id"].to_numpy()
    uniq, first, inverse = np.unique(ids, return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    pos = rank[inverse.reshape(-1)]
    sample_ids = uniq[order]

    counts = np.zeros((len(sample_ids), L), dtype=np.int64)
    np.add.at(counts, (pos, days - 1), 1)
    incomplete = np.flatnonzero((counts != 1).any(axis=1))
    if len(incomplete):
        sid = int(sample_ids[incomplete[0]])
        raise WindowValidationError(
            f"sample_id {sid} must have exactly one row for each day 1..{L}", sample_id=sid
        )

    values = np.full((len(sample_ids), N, L), np.nan)
    for i, name in enumerate(schema.feature_names):
        values[pos, i, days - 1] = _parse_numeric(frame, name)

    sample_labels = np.zeros(len(sample_ids), dtype=np.int64)
    sample_labels[pos] = labels
    dates: List[Optional[date]] = [None] * len(sample_ids)
    for row in first[order]:
        dates[pos[row]] = row_dates[row]

    split_map = None
    if SPLIT_COLUMN in frame.columns:
        split_map = {int(ids[row]): frame[SPLIT_COLUMN].iloc[row].strip() for row in first[order]}
    return _finish(sample_ids, values, sample_labels, dates, schema), split_map


def _wide_to_samples(frame: pd.DataFrame, schema: WindowSchema) -> Tuple[SampleSet, Optional[Dict[int, str]]]:
    N, L = schema.shape
    _check_header(frame.columns, schema.column_names, ("sample_id", "label"))
    if not len(frame):
        return empty_sample_set(schema), None

    sample_ids = _parse_int(frame, "sample_id")
    dupes = pd.Series(sample_ids).duplicated()
    if dupes.any():
        sid = int(sample_ids[dupes.to_numpy()][0])
        raise WindowValidationError(f"sample_id {sid} appears on more than one row", sample_id=sid)

    values = np.full((len(frame), N, L), np.nan)
    for i, name in enumerate(schema.feature_names):
        for t in range(L):
            values[:, i, t] = _parse_numeric(frame, f"{name}@{t + 1}")

    split_map = None
    if SPLIT_COLUMN in frame.columns:
        split_map = dict(zip(sample_ids.tolist(), frame[SPLIT_COLUMN].str.strip()))
    return _finish(sample_ids, values, _parse_int(frame, "label"), _parse_dates(frame), schema), split_map


def _finish(sample_ids, values, labels, dates, schema: WindowSchema) -> SampleSet:
    bad = np.flatnonzero(~np.isin(labels, (0, 1)))
    if len(bad):
        sid = int(sample_ids[bad[0]])
        raise WindowValidationError(f"label of sample_id {sid} must be 0 or 1", sample_id=sid)
    _check_static(values, sample_ids, schema)
    return SampleSet(sample_ids=sample_ids, values=values, labels=labels, event_dates=tuple(dates))


def _ingest(path, schema: WindowSchema, layout: Layout) -> Tuple[SampleSet, Optional[Dict[int, str]]]:
    frame = _read_frame(path)
    if layout == "long":
        samples, split_map = _long_to_samples(frame, schema)
    elif layout == "wide":
        samples, split_map = _wide_to_samples(frame, schema)
    else:
        raise SchemaError(f"unknown layout {layout!r}; expected 'long' or 'wide'")

    if "event_date" not in frame.columns:
        logger.warning(f"{path}: no event_date column; calendar grouping will be unavailable")
    logger.info(f"Ingested {len(samples)} samples ({len(frame)} rows) from {path}")
    return samples, split_map


def ingest_csv(path: Union[str, Path], schema: WindowSchema, layout: Layout = "long") -> SampleSet:
    """
    Read prepared windows from CSV.

    Args:
        path: CSV file in ``long`` (one row per sample and day) or ``wide``
            (one row per sample, ``feature@day`` columns) layout
        schema: Expected features and window length
        layout: ``long`` or ``wide``

    Returns:
        SampleSet: Raw samples; missing cells are NaN
    """
    samples, _ = _ingest(path, schema, layout)
    return samples


def write_csv(samples: SampleSet, schema: WindowSchema, path: Union[str, Path], layout: Layout = "long") -> Path:
    """Serialize samples back to CSV; missing cells are written empty."""
    N, L = schema.shape
    dates = [d.isoformat() if d else "" for d in samples.event_dates]
    if layout == "long":
        n = len(samples)
        frame = pd.DataFrame({
            "sample_id": np.repeat(samples.sample_ids, L),
            "day": np.tile(np.arange(1, L + 1), n),
            "label": np.repeat(samples.labels, L),
            "event_date": np.repeat(np.asarray(dates, dtype=object), L),
        })
        cells = samples.values.transpose(0, 2, 1).reshape(n * L, N)
        for i, name in enumerate(schema.feature_names):
            frame[name] = cells[:, i]
    else:
        frame = pd.DataFrame({"sample_id": samples.sample_ids, "label": samples.labels, "event_date": dates})
        cells = pd.DataFrame(samples.flat(), columns=schema.column_names)
        frame = pd.concat([frame, cells], axis=1)
    path = Path(path)
    frame.to_csv(path, index=False, na_rep="")
    return path


# Imputation

def fit_imputer(train: SampleSet, schema: WindowSchema) -> ImputationStats:
    """
    Fit mean imputation on the training split only.

    Args:
        train: Training samples (raw, with NaN for missing cells)
        schema: Window schema

    Returns:
        ImputationStats: Per-feature means, missing counts and one-hot group modes
    """
    if not len(train):
        raise EmptyInputError("cannot fit imputation on an empty training split")
    if train.shape != schema.shape:
        raise SchemaError(f"training samples have shape {train.shape}, schema says {schema.shape}")

    means: Dict[str, float] = {}
    missing_counts: Dict[str, int] = {}
    total_counts: Dict[str, int] = {}
    unimputable: List[str] = []
    for i, name in enumerate(schema.feature_names):
        cells = train.values[:, i, :]
        observed = ~np.isnan(cells)
        total_counts[name] = int(cells.size)
        missing_counts[name] = int(cells.size - observed.sum())
        if not observed.any():
            unimputable.append(name)
            continue
        means[name] = float(cells[observed].mean())
    if unimputable:
        raise UnimputableFeatureError(
            f"features with no observed value in the training split: {', '.join(unimputable)}",
            features=unimputable,
        )

    group_modes: Dict[str, Optional[str]] = {}
    for group, members in schema.groups.items():
        block = train.values[:, members, :]
        complete = ~np.isnan(block).any(axis=1)
        if not complete.any():
            raise UnimputableFeatureError(f"one-hot group {group!r} has no fully observed cell in training")
        active = block == 1
        candidates: List[Tuple[int, Optional[str]]] = [
            (int((active[:, j, :] & complete).sum()), schema.feature_names[m]) for j, m in enumerate(members)
        ]
        candidates.append((int((~active.any(axis=1) & complete).sum()), None))
        best = max(count for count, _ in candidates)
        group_modes[group] = next(name for count, name in candidates if count == best)

    logger.debug(f"Fitted imputation on {len(train)} training samples")
    return ImputationStats(
        feature_names=tuple(schema.feature_names),
        means=means,
        missing_counts=missing_counts,
        total_counts=total_counts,
        group_modes=group_modes,
    )


def apply_imputation(samples: SampleSet, stats: ImputationStats, schema: WindowSchema) -> SampleSet:
    """
    Fill every missing cell.

    Order: static features take their window's observed value, derived
    features are recomputed from observed parents, missing one-hot members
    are 0 when a sibling is observed as 1 and otherwise follow the training
    mode, and everything left takes the training mean. Observed cells are
    never changed.
    """
    if tuple(schema.feature_names) != stats.feature_names:
        raise SchemaError("imputation statistics were fitted on a different schema")
    if len(samples) and samples.shape != schema.shape:
        raise SchemaError(f"samples have shape {samples.shape}, schema says {schema.shape}")

    raw = samples.values
    missing = np.isnan(raw)
    if not missing.any():
        return samples

    values = raw.copy()
    grouped = {m for members in schema.groups.values() for m in members}

    for i, feat in enumerate(schema.features):
        if feat.kind == FeatureKind.STATIC and i not in grouped and missing[:, i, :].any():
            window_value = np.fmax.reduce(raw[:, i, :], axis=1)
            values[:, i, :] = np.where(missing[:, i, :], window_value[:, None], raw[:, i, :])

    for i, feat in enumerate(schema.features):
        if not feat.derived_from:
            continue
        a, b = (schema.index_of(p) for p in feat.derived_from)
        fill = missing[:, i, :] & ~missing[:, a, :] & ~missing[:, b, :]
        if feat.derivation == Derivation.RATIO:
            fill &= raw[:, b, :] != 0
        if not fill.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            derived = raw[:, a, :] - raw[:, b, :] if feat.derivation == Derivation.DIFFERENCE else raw[:, a, :] / raw[:, b, :]
        values[:, i, :] = np.where(fill, derived, values[:, i, :])

    for group, members in schema.groups.items():
        holes = missing[:, members, :]
        if not holes.any():
            continue
        # an observed 1 already decides the day; its missing siblings are 0
        decided = (raw[:, members, :] == 1).any(axis=1)
        mode = stats.group_modes[group]
        for j, m in enumerate(members):
            indicator = 1.0 if schema.feature_names[m] == mode else 0.0
            fill = np.where(decided, 0.0, indicator)
            values[:, m, :] = np.where(holes[:, j, :], fill, values[:, m, :])

    for i, name in enumerate(schema.feature_names):
        if i in grouped:
            continue
        holes = np.isnan(values[:, i, :])
        if holes.any():
            values[:, i, :][holes] = stats.means[name]

    logger.debug(f"Imputed {int(missing.sum())} cells across {len(samples)} samples")
    return samples.with_values(values)


def missingness_report(samples: SampleSet, schema: WindowSchema) -> MissingnessReport:
    """
    Per-feature share of missing cells, sorted descending.

    Args:
        samples: Raw samples of one schema

    Returns:
        MissingnessReport: Rows keep exact counts; ``percent`` rounds to 2 decimals
    """
    if not len(samples):
        raise EmptyInputError("missingness report needs at least one sample")
    missing = np.isnan(samples.values).sum(axis=(0, 2))
    total = len(samples) * schema.window_length
    rows = [
        MissingnessRow(feature=name, missing_count=int(missing[i]), total_count=total)
        for i, name in enumerate(schema.feature_names)
    ]
    rows.sort(key=lambda r: r.fraction, reverse=True)
    return MissingnessReport(rows=tuple(rows))


def missingness_frame(report: MissingnessReport) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "feature": [r.feature for r in report.rows],
            "missing_pct": [f"{r.percent:.2f}" for r in report.rows],
            "observed_count": [r.observed_count for r in report.rows],
        }
    )


def format_missingness(report: MissingnessReport) -> str:
    """Aligned plain-text rendering of a missingness report."""
    return missingness_frame(report).to_string(index=False) + "\n"


def write_missingness(report: MissingnessReport, out_dir: Path) -> Tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "missingness.csv"
    txt_path = out_dir / "missingness.txt"
    missingness_frame(report).to_csv(csv_path, index=False)
    txt_path.write_text(format_missingness(report))
    return csv_path, txt_path


# Calendar

def season_of(month: int) -> Season:
    return _SEASONS[month]


def derive_calendar_groups(samples: SampleSet) -> Dict[int, CalendarGroup]:
    """
    Month and meteorological season of each sample's event date.

    Raises:
        MissingCalendarError: Listing every sample_id without an event_date
    """
    absent = [int(sid) for sid, d in zip(samples.sample_ids, samples.event_dates) if d is None]
    if absent:
        shown = ", ".join(str(s) for s in absent[:20])
        more = f" (+{len(absent) - 20} more)" if len(absent) > 20 else ""
        raise MissingCalendarError(f"samples without event_date: {shown}{more}", sample_ids=absent)
    return {
        int(sid): CalendarGroup(month=d.month, season=season_of(d.month))
        for sid, d in zip(samples.sample_ids, samples.event_dates)
    }


# Splits and dataset assembly

def assign_splits(
    samples: SampleSet,
    split_map: Optional[Dict[int, str]] = None,
    seed: int = 0,
    val_fraction: float = 0.1,
    test_fraction: float = 0.2,
) -> Dict[str, SampleSet]:
    """
    Partition samples into train/val/test.

    An explicit ``split`` column wins; otherwise a seeded split, stratified by
    label when both classes have at least two members.
    """
    positions = np.arange(len(samples))
    if split_map is not None:
        names = np.asarray([split_map[int(sid)] for sid in samples.sample_ids], dtype=object)
        unknown = sorted(set(names) - set(SPLIT_NAMES))
        if unknown:
            raise WindowValidationError(f"unknown split names {unknown}; expected {SPLIT_NAMES}")
        return {name: samples.take(positions[names == name]) for name in SPLIT_NAMES if (names == name).any()}

    if not 0 < test_fraction < 1 or not 0 <= val_fraction < 1 or val_fraction + test_fraction >= 1:
        raise WindowValidationError("split fractions must satisfy 0 < test, 0 <= val, val + test < 1")

    def stratify(idx: np.ndarray) -> Optional[np.ndarray]:
        labels = samples.labels[idx]
        counts = np.bincount(labels, minlength=2)
        return labels if (counts >= 2).all() else None

    rng = derive_rng(seed, "splits")
    state = int(rng.integers(0, 2**31 - 1))
    rest, test = train_test_split(positions, test_size=test_fraction, random_state=state, stratify=stratify(positions))
    splits = {"test": test}
    if val_fraction > 0:
        relative = val_fraction / (1 - test_fraction)
        rest, val = train_test_split(rest, test_size=relative, random_state=state, stratify=stratify(rest))
        splits["val"] = val
    splits["train"] = rest
    return {name: samples.take(np.sort(splits[name])) for name in SPLIT_NAMES if name in splits}


def build_dataset(splits: Dict[str, SampleSet], schema: WindowSchema, source: str) -> Dataset:
    """
    Fit imputation on ``train`` and apply it to every split.

    Returns:
        Dataset: Immutable, fully imputed dataset
    """
    if "train" not in splits:
        raise WindowValidationError("dataset needs a train split")
    stats = fit_imputer(splits["train"], schema)
    imputed = {name: apply_imputation(split, stats, schema) for name, split in splits.items()}
    if "test" not in imputed:
        imputed["test"] = empty_sample_set(schema)
    try:
        return Dataset(
            window_schema=schema,
            splits=imputed,
            imputation=stats,
            provenance=Provenance(source=source, ingested_at=datetime.now(timezone.utc)),
        )
    except ValueError as e:
        raise WindowValidationError(str(e)) from e


def ingest_dataset(
    path: Union[str, Path],
    schema: WindowSchema,
    layout: Layout = "long",
    seed: int = 0,
    val_fraction: float = 0.1,
    test_fraction: float = 0.2,
) -> Tuple[Dataset, MissingnessReport]:
    """Ingest a CSV, split it, impute it and report raw missingness."""
    samples, split_map = _ingest(path, schema, layout)
    report = missingness_report(samples, schema)
    splits = assign_splits(samples, split_map, seed=seed, val_fraction=val_fraction, test_fraction=test_fraction)
    dataset = build_dataset(splits, schema, source=str(path))
    sizes = ", ".join(f"{name}={len(split)}" for name, split in dataset.splits.items())
    logger.info(f"Built dataset from {path}: {sizes}")
    return dataset, report


def restrict_features(samples: SampleSet, schema: WindowSchema, features: List[str]) -> Tuple[SampleSet, WindowSchema]:
    """Keep whole feature rows for ``features`` (schema order preserved)."""
    unknown = [f for f in features if f not in schema.feature_names]
    if unknown:
        raise SchemaError(f"unknown features: {', '.join(unknown)}")
    sub = schema.subset(features)
    rows = [schema.index_of(name) for name in sub.feature_names]
    return samples.with_values(samples.values[:, rows, :]), sub


def feature_values(samples: SampleSet, schema: WindowSchema, feature: str) -> np.ndarray:
    """Observed cells of one feature, flattened."""
    cells = samples.values[:, schema.index_of(feature), :].reshape(-1)
    return cells[~np.isnan(cells)]
