"""Dataset archive persistence."""
import hashlib
import json
import logging
from pathlib import Path
from typing import Dict, List, Union

import numpy as np
from sqlmodel import select

from wildxai.database import close_db, get_engine, get_session, init_db
from wildxai.exceptions import ModelFormatError
from wildxai.models.dataset import (
    DATASET_FORMAT_VERSION,
    Dataset,
    DatasetRecord,
    ImputationStats,
    Provenance,
    SampleRecord,
    SampleSet,
    WindowSchema,
)

logger = logging.getLogger(__name__)


def save_dataset(dataset: Dataset, path: Union[str, Path]) -> Path:
    """
    Write a dataset to a single-file archive, replacing any existing file.

    Args:
        dataset: Imputed dataset
        path: Archive file path

    Returns:
        Path: The archive path
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.exists():
        path.unlink()

    engine = get_engine(path)
    try:
        init_db(engine)
        with get_session(engine) as session:
            header = DatasetRecord(
                format_version=DATASET_FORMAT_VERSION,
                schema_json=dataset.window_schema.model_dump_json(),
                imputation_json=dataset.imputation.model_dump_json(),
                source=dataset.provenance.source,
                ingested_at=dataset.provenance.ingested_at,
            )
            session.add(header)
            session.flush()
            for split_name, split in dataset.splits.items():
                session.add_all(
                    SampleRecord(
                        dataset_id=header.id,
                        sample_id=int(split.sample_ids[i]),
                        split=split_name,
                        position=i,
                        label=int(split.labels[i]),
                        event_date=split.event_dates[i],
                        values_json=json.dumps(split.values[i].tolist()),
                    )
                    for i in range(len(split))
                )
    finally:
        close_db(engine)

    logger.info(f"Saved dataset archive to {path}")
    return path


def load_dataset(path: Union[str, Path]) -> Dataset:
    """Read a dataset archive written by ``save_dataset``."""
    path = Path(path)
    if not path.is_file():
        raise ModelFormatError(f"dataset archive not found: {path}")

    engine = get_engine(path)
    try:
        with get_session(engine) as session:
            header = session.exec(select(DatasetRecord)).first()
            if header is None:
                raise ModelFormatError(f"{path} holds no dataset")
            if header.format_version != DATASET_FORMAT_VERSION:
                raise ModelFormatError(
                    f"{path}: archive format {header.format_version}, expected {DATASET_FORMAT_VERSION}"
                )
            records = session.exec(
                select(SampleRecord)
                .where(SampleRecord.dataset_id == header.id)
                .order_by(SampleRecord.split, SampleRecord.position)
            ).all()
    finally:
        close_db(engine)

    schema = WindowSchema.model_validate_json(header.schema_json)
    grouped: Dict[str, List[SampleRecord]] = {}
    for record in records:
        grouped.setdefault(record.split, []).append(record)

    splits = {}
    for name, rows in grouped.items():
        splits[name] = SampleSet(
            sample_ids=[r.sample_id for r in rows],
            values=np.asarray([json.loads(r.values_json) for r in rows], dtype=np.float64).reshape(
                (len(rows),) + schema.shape
            ),
            labels=[r.label for r in rows],
            event_dates=tuple(r.event_date for r in rows),
        )
    for name in ("train", "test"):
        if name not in splits:
            splits[name] = SampleSet(
                sample_ids=[], values=np.zeros((0,) + schema.shape), labels=[], event_dates=()
            )

    return Dataset(
        window_schema=schema,
        splits=splits,
        imputation=ImputationStats.model_validate_json(header.imputation_json),
        provenance=Provenance(source=header.source, ingested_at=header.ingested_at),
    )


def dataset_digest(dataset: Dataset) -> str:
    """Content hash over schema and split contents (provenance excluded)."""
    h = hashlib.sha256()
    h.update(dataset.window_schema.model_dump_json().encode())
    for name in sorted(dataset.splits):
        split = dataset.splits[name]
        h.update(name.encode())
        h.update(split.sample_ids.tobytes())
        h.update(split.labels.tobytes())
        h.update(split.values.tobytes())
        h.update("|".join(d.isoformat() if d else "" for d in split.event_dates).encode())
    return h.hexdigest()
