"""
Database models module containing the SQLAlchemy model of the icon store.

Classes:
    IconRecord: Represents the 'icons' table.
"""
from sqlalchemy import Integer, LargeBinary, String
from sqlalchemy.orm import DeclarativeBase, Mapped, mapped_column


class Base(DeclarativeBase):
    pass


class IconRecord(Base):
    """
    Represents the primary icon of one input file.

    Attributes:
        key (str): SHA-256 of the input file, the join key of every stage.
        icon_sha256 (str): Content hash of the decoded raster.
        width (int): Icon width in pixels.
        height (int): Icon height in pixels.
        pixels (bytes): Raw row-major RGBA.
        source (str): File name the icon came from.
        kind (str): ``pe`` or ``ico``.
    """
    __tablename__ = "icons"
    key: Mapped[str] = mapped_column(String(64), primary_key=True, index=True)
    icon_sha256: Mapped[str] = mapped_column(String(64), index=True)
    width: Mapped[int] = mapped_column(Integer)
    height: Mapped[int] = mapped_column(Integer)
    pixels: Mapped[bytes] = mapped_column(LargeBinary)
    source: Mapped[str] = mapped_column(String, nullable=True)
    kind: Mapped[str] = mapped_column(String(8), default="pe")
