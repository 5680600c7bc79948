"""Archive database connection and session management."""
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Union

from sqlalchemy.engine import Engine
from sqlalchemy.pool import NullPool
from sqlmodel import Session, SQLModel, create_engine


def get_engine(path: Union[str, Path]) -> Engine:
    """Create an engine for a single-file SQLite archive."""
    return create_engine(
        f"sqlite:///{Path(path)}",
        echo=False,
        poolclass=NullPool,
    )


@contextmanager
def get_session(engine: Engine) -> Iterator[Session]:
    """
    Yield a session that commits on success and rolls back on error.

    Yields:
        Session: Database session
    """
    with Session(engine, expire_on_commit=False, autoflush=False) as session:
        try:
            yield session
            session.commit()
        except Exception:
            session.rollback()
            raise


def init_db(engine: Engine) -> None:
    """Create archive tables."""
    from wildxai.models.dataset import DatasetRecord, SampleRecord  # noqa: F401

    SQLModel.metadata.create_all(engine)


def close_db(engine: Engine) -> None:
    """Close database connections."""
    if engine:
        engine.dispose()
