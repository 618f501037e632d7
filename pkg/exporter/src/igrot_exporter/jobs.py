"""Export jobs: batch-embed inputs and write engine store files."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoders import get_encoder
from .ueb import ExportError, write_ueb

log = logging.getLogger(__name__)

NULL_TEXT_ID = "<null>"


@dataclass
class ExportJob:
    encoder_tag: str
    out_dir: Path
    batch_size: int = 8
    on_unreadable: str = "abort"  # or "skip" (logged)
    text_feature: str = "projection"
    _encoder: object = field(init=False, repr=False, default=None)

    def __post_init__(self) -> None:
        self.out_dir = Path(self.out_dir)
        if self.batch_size < 1:
            raise ExportError("batch_size must be >= 1")
        if self.on_unreadable not in ("abort", "skip"):
            raise ExportError("on_unreadable must be 'abort' or 'skip'")

    @property
    def encoder(self):
        if self._encoder is None:
            self._encoder = get_encoder(self.encoder_tag, self.text_feature)
        return self._encoder


def load_listing(path: str | Path) -> list[tuple[str, str]]:
    """TSV rows ``id<TAB>path`` (images) or ``id<TAB>text`` (captions)."""
    rows = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t", 1)
        if len(parts) != 2 or not parts[0]:
            raise ExportError(f"{path}:{lineno}: expected 'id<TAB>value'")
        rows.append((parts[0], parts[1]))
    if len({r[0] for r in rows}) != len(rows):
        raise ExportError(f"{path}: duplicate ids in listing")
    return rows


def export_images(job: ExportJob, listing: list[tuple[str, str]]) -> Path:
    """One encoder feature row per readable image; write images.ueb."""
    if not listing:
        raise ExportError("image listing is empty")
    usable: list[tuple[str, Path]] = []
    for id_, path in listing:
        p = Path(path)
        if p.is_file():
            usable.append((id_, p))
        elif job.on_unreadable == "skip":
            log.warning("skipping unreadable image %s (%s)", id_, path)
        else:
            raise ExportError(f"unreadable image file {path!r} for id {id_!r}")
    if not usable:
        raise ExportError("no readable images in listing")
    chunks = [
        job.encoder.embed_images([p for _, p in usable[lo : lo + job.batch_size]])
        for lo in range(0, len(usable), job.batch_size)
    ]
    out = job.out_dir / "images.ueb"
    job.out_dir.mkdir(parents=True, exist_ok=True)
    write_ueb([id_ for id_, _ in usable], np.concatenate(chunks, axis=0), out)
    return out


def export_texts(job: ExportJob, table: list[tuple[str, str]]) -> Path:
    """One pooled text feature per caption; write texts.ueb."""
    if not table:
        raise ExportError("caption table is empty")
    for id_, text in table:
        if text == "":
            raise ExportError(
                f"caption {id_!r} is empty; the empty string is reserved for the null-text export"
            )
    chunks = [
        job.encoder.embed_texts([t for _, t in table[lo : lo + job.batch_size]])
        for lo in range(0, len(table), job.batch_size)
    ]
    out = job.out_dir / "texts.ueb"
    job.out_dir.mkdir(parents=True, exist_ok=True)
    write_ueb([id_ for id_, _ in table], np.concatenate(chunks, axis=0), out)
    return out


def export_null_text(job: ExportJob) -> Path:
    """Embed the empty string; write the single-row null.ueb."""
    features = job.encoder.embed_texts([""])
    out = job.out_dir / "null.ueb"
    job.out_dir.mkdir(parents=True, exist_ok=True)
    write_ueb([NULL_TEXT_ID], features, out)
    return out
