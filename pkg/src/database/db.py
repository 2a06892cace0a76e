"""
Database module for managing icon store connections and sessions.

The icon store is a SQLite file; every command opens its own store by path.

Classes:
    DatabaseSessionManager: Creates the schema and hands out sessions for one store.

Functions:
    store_url: SQLAlchemy URL of a store file.
"""
import contextlib
from pathlib import Path

from loguru import logger
from sqlalchemy import Engine, create_engine
from sqlalchemy.orm import Session, sessionmaker

from src.entity.models import Base


def store_url(path: str | Path) -> str:
    return f"sqlite:///{Path(path).as_posix()}"


class DatabaseSessionManager:
    """
    A class for managing sessions of one icon store.

    Attributes:
        _engine (Engine | None): The engine bound to the store file.
        _session_maker (sessionmaker): The session factory.
    """
    def __init__(self, url: str):
        self._engine: Engine | None = create_engine(url)
        self._session_maker: sessionmaker = sessionmaker(autoflush=False, autocommit=False, bind=self._engine)
        Base.metadata.create_all(self._engine)

    @classmethod
    def for_path(cls, path: str | Path) -> "DatabaseSessionManager":
        return cls(store_url(path))

    @contextlib.contextmanager
    def session(self):
        """
        Context manager for acquiring a session.

        Yields:
            Session: A database session, rolled back if the block raises.

        Raises:
            Exception: If session is not initialized.
        """
        if self._session_maker is None:
            raise Exception("Session is not initialized")
        session: Session = self._session_maker()
        try:
            yield session
        except Exception as err:
            logger.error(f"icon store session failed: {err}")
            session.rollback()
            raise
        finally:
            session.close()

    def close(self) -> None:
        if self._engine is not None:
            self._engine.dispose()
            self._engine = None
