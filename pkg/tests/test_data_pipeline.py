"""Tests for CSV ingestion, imputation, missingness and splits."""
from datetime import date

import numpy as np
import pytest

from conftest import informative_windows, make_schema
from wildxai.exceptions import (
    CsvParseError,
    EmptyInputError,
    MissingCalendarError,
    SchemaError,
    UnimputableFeatureError,
    WindowValidationError,
)
from wildxai.models.dataset import SampleSet
from wildxai.services.data_pipeline import (
    apply_imputation,
    assign_splits,
    build_dataset,
    derive_calendar_groups,
    feature_values,
    fit_imputer,
    format_missingness,
    ingest_csv,
    ingest_dataset,
    missingness_report,
    restrict_features,
    write_csv,
)
from wildxai.services.schemas import california_schema, load_schema, mesogeos_schema


def write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


LONG_CSV = (
    "sample_id,day,label,event_date,slope,t2m\n"
    "1,1,1,2021-07-04,3.0,20.0\n"
    "1,2,1,2021-07-04,3.0,\n"
    "2,1,0,2021-01-10,,10.0\n"
    "2,2,0,2021-01-10,5.0,12.0\n"
)


@pytest.fixture
def small_schema():
    return make_schema(["slope", "t2m"], 2, static=["slope"])


def test_ingest_long_layout(tmp_path, small_schema):
    samples = ingest_csv(write(tmp_path, LONG_CSV), small_schema)
    assert list(samples.sample_ids) == [1, 2]
    assert list(samples.labels) == [1, 0]
    assert samples.values.shape == (2, 2, 2)
    assert samples.values[0, 1, 0] == 20.0
    assert np.isnan(samples.values[0, 1, 1])
    assert samples.event_dates == (date(2021, 7, 4), date(2021, 1, 10))


def test_ingest_wide_layout(tmp_path, small_schema):
    text = (
        "sample_id,label,slope@1,slope@2,t2m@1,t2m@2\n"
        "4,1,2.0,2.0,1.5,NaN\n"
    )
    samples = ingest_csv(write(tmp_path, text), small_schema, layout="wide")
    assert samples.values.shape == (1, 2, 2)
    assert np.isnan(samples.values[0, 1, 1])
    assert samples.event_dates == (None,)


def test_unknown_column_is_named(tmp_path, small_schema):
    text = LONG_CSV.replace("t2m", "temperature")
    with pytest.raises(SchemaError) as excinfo:
        ingest_csv(write(tmp_path, text), small_schema)
    assert "temperature" in str(excinfo.value)


def test_missing_column_is_named(tmp_path, small_schema):
    text = "sample_id,day,label,slope\n1,1,1,2.0\n1,2,1,2.0\n"
    with pytest.raises(SchemaError) as excinfo:
        ingest_csv(write(tmp_path, text), small_schema)
    assert "t2m" in str(excinfo.value)


def test_non_numeric_cell_cites_line(tmp_path, small_schema):
    text = LONG_CSV.replace("2,2,0,2021-01-10,5.0,12.0", "2,2,0,2021-01-10,5.0,warm")
    with pytest.raises(CsvParseError) as excinfo:
        ingest_csv(write(tmp_path, text), small_schema)
    assert "line 5" in str(excinfo.value)


@pytest.mark.parametrize(
    "bad_row",
    [
        "2,3,0,2021-01-10,5.0,12.0",  # day outside 1..L
        "2,1,0,2021-01-10,5.0,12.0",  # duplicate day
        "2,2,1,2021-01-10,5.0,12.0",  # label disagrees
    ],
)
def test_invalid_windows(tmp_path, small_schema, bad_row):
    text = LONG_CSV.replace("2,2,0,2021-01-10,5.0,12.0", bad_row)
    with pytest.raises(WindowValidationError):
        ingest_csv(write(tmp_path, text), small_schema)


def test_static_feature_must_not_vary(tmp_path, small_schema):
    text = LONG_CSV.replace("1,2,1,2021-07-04,3.0,", "1,2,1,2021-07-04,4.0,")
    with pytest.raises(WindowValidationError) as excinfo:
        ingest_csv(write(tmp_path, text), small_schema)
    assert "slope" in str(excinfo.value)


def test_empty_csv_gives_empty_set(tmp_path, small_schema):
    samples = ingest_csv(write(tmp_path, "sample_id,day,label,slope,t2m\n"), small_schema)
    assert len(samples) == 0


def test_imputation_uses_training_statistics(tmp_path, small_schema):
    samples = ingest_csv(write(tmp_path, LONG_CSV), small_schema)
    stats = fit_imputer(samples, small_schema)
    assert stats.means["t2m"] == pytest.approx(14.0)
    filled = apply_imputation(samples, stats, small_schema)
    assert not np.isnan(filled.values).any()
    # static cells take the window's own value before the mean
    assert filled.values[1, 0, 0] == 5.0
    assert filled.values[0, 1, 1] == pytest.approx(14.0)
    # observed cells are untouched
    assert filled.values[0, 1, 0] == 20.0


def test_unimputable_feature(tmp_path, small_schema):
    text = "sample_id,day,label,slope,t2m\n1,1,1,1.0,\n1,2,1,1.0,\n"
    samples = ingest_csv(write(tmp_path, text), small_schema)
    with pytest.raises(UnimputableFeatureError) as excinfo:
        fit_imputer(samples, small_schema)
    assert "t2m" in str(excinfo.value)


def test_derived_and_one_hot_imputation():
    schema = california_schema()
    N, L = schema.shape
    values = np.ones((3, N, L))
    idx = {name: i for i, name in enumerate(schema.feature_names)}
    values[:, idx["max_temp"]] = 30.0
    values[:, idx["min_temp"]] = 10.0
    values[:, idx["temp_range"]] = 20.0
    values[:, idx["season_winter"]] = 0.0
    values[:, idx["season_spring"]] = 0.0
    values[:, idx["season_summer"]] = 1.0
    values[2, idx["temp_range"], 0] = np.nan
    values[2, idx["season_summer"], 1] = np.nan
    samples = SampleSet(sample_ids=[1, 2, 3], values=values, labels=[0, 1, 0], event_dates=(None,) * 3)
    stats = fit_imputer(samples, schema)
    filled = apply_imputation(samples, stats, schema).values
    assert filled[2, idx["temp_range"], 0] == 20.0
    assert filled[2, idx["season_summer"], 1] == 1.0
    assert filled[2, idx["season_winter"], 1] == 0.0


def test_missingness_report_sorted_descending(tmp_path, small_schema):
    samples = ingest_csv(write(tmp_path, LONG_CSV), small_schema)
    report = missingness_report(samples, small_schema)
    assert report.percentages() == {"slope": 25.0, "t2m": 25.0}
    assert [r.missing_count for r in report.rows] == [1, 1]
    assert "slope" in format_missingness(report)


def test_missingness_of_nothing():
    schema, samples = informative_windows(4)
    with pytest.raises(EmptyInputError):
        missingness_report(samples.take([]), schema)


def test_calendar_groups_and_seasons():
    schema, samples = informative_windows(12)
    groups = derive_calendar_groups(samples)
    assert groups[1].month == 1 and groups[1].season == "winter"
    assert groups[4].season == "spring"
    assert groups[7].season == "summer"
    assert groups[10].season == "fall"
    assert groups[12].season == "winter"


def test_calendar_requires_dates(tmp_path, small_schema):
    text = "sample_id,day,label,slope,t2m\n1,1,1,1.0,2.0\n1,2,1,1.0,2.0\n"
    samples = ingest_csv(write(tmp_path, text), small_schema)
    with pytest.raises(MissingCalendarError):
        derive_calendar_groups(samples)


def test_seeded_splits_are_reproducible_and_disjoint(synthetic):
    schema, samples = synthetic
    first = assign_splits(samples, seed=3)
    second = assign_splits(samples, seed=3)
    assert set(first) == {"train", "val", "test"}
    for name in first:
        assert list(first[name].sample_ids) == list(second[name].sample_ids)
    ids = np.concatenate([s.sample_ids for s in first.values()])
    assert len(ids) == len(set(ids.tolist())) == len(samples)


def test_explicit_split_column(tmp_path, small_schema):
    text = (
        "sample_id,day,label,split,slope,t2m\n"
        "1,1,1,train,1.0,2.0\n1,2,1,train,1.0,3.0\n"
        "2,1,0,train,2.0,2.0\n2,2,0,train,2.0,2.0\n"
        "3,1,1,test,1.0,5.0\n3,2,1,test,1.0,6.0\n"
    )
    dataset, _ = ingest_dataset(write(tmp_path, text), small_schema)
    assert list(dataset.split("train").sample_ids) == [1, 2]
    assert list(dataset.split("test").sample_ids) == [3]


def test_write_then_ingest_conserves_samples(tmp_path, synthetic):
    schema, samples = synthetic
    for layout in ("long", "wide"):
        path = write_csv(samples, schema, tmp_path / f"{layout}.csv", layout=layout)
        again = ingest_csv(path, schema, layout=layout)
        assert list(again.sample_ids) == list(samples.sample_ids)
        assert np.array_equal(again.values, samples.values)
        assert again.event_dates == samples.event_dates


def test_build_dataset_imputes_every_split(tmp_path, small_schema):
    samples = ingest_csv(write(tmp_path, LONG_CSV), small_schema)
    dataset = build_dataset({"train": samples.take([0]), "test": samples.take([1])}, small_schema, "x")
    assert not np.isnan(dataset.split("test").values).any()
    # train-only statistics: t2m mean comes from sample 1 alone
    assert dataset.imputation.means["t2m"] == 20.0


def test_restrict_features_keeps_schema_order(synthetic):
    schema, samples = synthetic
    restricted, sub = restrict_features(samples, schema, ["noise2", "inf0"])
    assert sub.feature_names == ["inf0", "noise2"]
    assert np.array_equal(restricted.values[:, 1], samples.values[:, schema.index_of("noise2")])
    with pytest.raises(SchemaError):
        restrict_features(samples, schema, ["nope"])


def test_feature_values_drop_missing(tmp_path, small_schema):
    samples = ingest_csv(write(tmp_path, LONG_CSV), small_schema)
    assert sorted(feature_values(samples, small_schema, "t2m").tolist()) == [10.0, 12.0, 20.0]


def test_presets_and_schema_files(tmp_path):
    meso = mesogeos_schema()
    assert meso.shape == (24, 30)
    assert load_schema("california").groups == {"season": [8, 9, 10]}
    path = tmp_path / "schema.json"
    path.write_text(meso.model_dump_json())
    assert load_schema(path) == meso
    with pytest.raises(SchemaError):
        load_schema(tmp_path / "missing.json")


def california_windows(n: int, seed: int = 0, missing_share: float = 0.2):
    """Random California-shaped windows with valid season indicators and scattered holes."""
    schema = california_schema()
    N, L = schema.shape
    rng = np.random.default_rng(seed)
    values = rng.uniform(1.0, 30.0, size=(n, N, L))
    season = [schema.index_of(f"season_{s}") for s in ("winter", "spring", "summer")]
    which = rng.integers(0, 4, size=(n, L))  # 3 is fall: every indicator off
    values[:, season, :] = 0.0
    for j, m in enumerate(season):
        values[:, m, :][which == j] = 1.0
    holes = rng.random(size=values.shape) < missing_share
    values[holes] = np.nan
    samples = SampleSet(
        sample_ids=np.arange(1, n + 1), values=values, labels=rng.integers(0, 2, size=n), event_dates=(None,) * n
    )
    return schema, samples, holes


def test_one_hot_fill_keeps_observed_members():
    schema = california_schema()
    N, L = schema.shape
    idx = {name: i for i, name in enumerate(schema.feature_names)}
    values = np.ones((3, N, L))
    values[:, idx["season_winter"]] = 0.0
    values[:, idx["season_spring"]] = 0.0
    values[:, idx["season_summer"]] = 1.0
    # sample 3, day 2: winter observed active, summer missing
    values[2, idx["season_winter"], 1] = 1.0
    values[2, idx["season_summer"], 1] = np.nan
    # sample 3, day 3: the whole group missing
    values[2, [idx["season_winter"], idx["season_spring"], idx["season_summer"]], 2] = np.nan
    samples = SampleSet(sample_ids=[1, 2, 3], values=values, labels=[0, 1, 0], event_dates=(None,) * 3)
    stats = fit_imputer(samples, schema)
    assert stats.group_modes["season"] == "season_summer"

    filled = apply_imputation(samples, stats, schema).values
    assert filled[2, idx["season_winter"], 1] == 1.0
    assert filled[2, idx["season_spring"], 1] == 0.0
    assert filled[2, idx["season_summer"], 1] == 0.0
    assert [filled[2, idx[f"season_{s}"], 2] for s in ("winter", "spring", "summer")] == [0.0, 0.0, 1.0]


def test_imputation_is_idempotent_and_keeps_observed_cells():
    schema, samples, holes = california_windows(40)
    stats = fit_imputer(samples, schema)
    once = apply_imputation(samples, stats, schema)
    twice = apply_imputation(once, stats, schema)
    assert np.array_equal(once.values, twice.values)
    assert not np.isnan(once.values).any()
    assert np.array_equal(once.values[~holes], samples.values[~holes])
    season = [schema.index_of(f"season_{s}") for s in ("winter", "spring", "summer")]
    block = once.values[:, season, :]
    assert set(np.unique(block).tolist()) <= {0.0, 1.0}
    assert block.sum(axis=1).max() <= 1.0


def test_test_split_cells_never_reach_the_statistics():
    schema, samples, _ = california_windows(60, seed=3)
    train, test = samples.take(np.arange(40)), samples.take(np.arange(40, 60))
    reference = build_dataset({"train": train, "test": test}, schema, "x").imputation

    rng = np.random.default_rng(9)
    shaken = test.values.copy()
    shaken[rng.random(size=shaken.shape) < 0.5] = np.nan
    shaken[~np.isnan(shaken)] *= 1000.0
    perturbed = build_dataset({"train": train, "test": test.with_values(shaken)}, schema, "x").imputation
    assert perturbed.model_dump() == reference.model_dump()


def test_label_agreement_compares_numbers_not_spellings(tmp_path, small_schema):
    text = LONG_CSV.replace("1,2,1,2021-07-04,3.0,", "1,2,1.0,2021-07-04,3.0,")
    samples = ingest_csv(write(tmp_path, text), small_schema)
    assert list(samples.labels) == [1, 0]
