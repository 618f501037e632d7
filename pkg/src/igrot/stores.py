"""Embedding stores, triplet manifests, relevance judgments, synthetic data.

File formats (all little-endian, see README):

* ``.ueb`` embedding store: magic ``UEBS`` | version u32=1 | dim u32 |
  count u64 | dtype u8=1 (f32) | 7 zero bytes | count*dim f32 row-major |
  id table of count entries, each a u16 byte length followed by UTF-8 bytes.
* triplet manifest: JSON Lines with keys ``query_image``, ``caption``
  (string or null) and ``target_image``.
* qrels: TSV ``query_id<TAB>target_id``, one relevant pair per row.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError

MAGIC = b"UEBS"
VERSION = 1
DTYPE_F32 = 1
MAX_DIM = 65_535
MAX_COUNT = 1 << 48

_HEADER = struct.Struct("<4sIIQB7x")  # magic, version, dim, count, dtype, pad


@dataclass
class EmbeddingStore:
    """Immutable id-addressable matrix of D-dimensional f32 vectors."""

    ids: list[str]
    vectors: np.ndarray  # (count, dim) float32
    _index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.vectors = np.asarray(self.vectors, dtype=np.float32)
        if self.vectors.ndim != 2:
            raise ValidationError("vectors must be a 2-D matrix")
        if self.vectors.shape[0] != len(self.ids):
            raise ValidationError(
                f"{len(self.ids)} ids but {self.vectors.shape[0]} vector rows"
            )
        if self.dim < 1:
            raise ValidationError("dim must be >= 1")
        if self.dim > MAX_DIM:
            raise ValidationError(f"dim {self.dim} exceeds maximum {MAX_DIM}")
        if not np.isfinite(self.vectors).all():
            raise ValidationError("store contains non-finite values")
        self._index = {}
        for row, id_ in enumerate(self.ids):
            if id_ in self._index:
                raise ValidationError(f"duplicate id {id_!r}")
            self._index[id_] = row

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    def __contains__(self, id_: str) -> bool:
        return id_ in self._index

    def row(self, id_: str) -> int:
        try:
            return self._index[id_]
        except KeyError:
            raise ValidationError(f"id {id_!r} not found in store") from None

    def vector(self, id_: str) -> np.ndarray:
        return self.vectors[self.row(id_)]


@dataclass(frozen=True)
class TripletRecord:
    """One training example: reference image, optional caption, target image."""

    query_image_id: str
    caption_id: str | None
    target_image_id: str


@dataclass(frozen=True)
class NullTextEmbedding:
    """Embedding of the empty string, shared by all caption-less queries."""

    vector: np.ndarray
    source_tag: str

    def __post_init__(self) -> None:
        v = np.asarray(self.vector, dtype=np.float32)
        if v.ndim != 1 or not np.isfinite(v).all():
            raise ValidationError("null-text vector must be a finite 1-D vector")
        object.__setattr__(self, "vector", v)

    @property
    def dim(self) -> int:
        return self.vector.shape[0]


NULL_TEXT_ID = "<null>"

Qrels = dict[str, set[str]]
TripletSet = list[TripletRecord]


def write_store(ids: list[str], vectors: np.ndarray, path: str | Path) -> None:
    """Write an embedding store in the .ueb format (bit-exact round trip)."""
    store = EmbeddingStore(list(ids), np.asarray(vectors, dtype=np.float32))
    if store.count > MAX_COUNT:
        raise ValidationError(f"count {store.count} exceeds maximum {MAX_COUNT}")
    id_blobs = []
    for id_ in store.ids:
        raw = id_.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValidationError(f"id longer than 65535 bytes: {id_[:32]!r}...")
        id_blobs.append(struct.pack("<H", len(raw)) + raw)
    header = _HEADER.pack(MAGIC, VERSION, store.dim, store.count, DTYPE_F32)
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(np.ascontiguousarray(store.vectors, dtype="<f4").tobytes())
            fh.write(b"".join(id_blobs))
    except OSError as exc:
        raise FormatError(f"cannot write store {path}: {exc}") from exc


def read_store(path: str | Path) -> EmbeddingStore:
    """Read and validate a .ueb embedding store."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read store {path}: {exc}") from exc
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path}: file shorter than the store header")
    magic, version, dim, count, dtype = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if dtype != DTYPE_F32:
        raise FormatError(f"{path}: unsupported dtype code {dtype}")
    if dim < 1 or dim > MAX_DIM:
        raise FormatError(f"{path}: dim {dim} out of range")
    if count > MAX_COUNT:
        raise FormatError(f"{path}: count {count} out of range")
    payload_bytes = 4 * dim * count
    offset = _HEADER.size
    if len(blob) < offset + payload_bytes:
        raise FormatError(f"{path}: truncated payload ({count} rows declared)")
    vectors = np.frombuffer(
        blob, dtype="<f4", count=dim * count, offset=offset
    ).reshape(count, dim)
    offset += payload_bytes
    ids = []
    for i in range(count):
        if len(blob) < offset + 2:
            raise FormatError(f"{path}: truncated id table at entry {i}")
        (n,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        if len(blob) < offset + n:
            raise FormatError(f"{path}: truncated id table at entry {i}")
        try:
            ids.append(blob[offset : offset + n].decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise FormatError(f"{path}: id entry {i} is not UTF-8") from exc
        offset += n
    if offset != len(blob):
        raise FormatError(f"{path}: {len(blob) - offset} trailing bytes")
    if not np.isfinite(vectors).all():
        raise FormatError(f"{path}: payload contains NaN or Inf")
    try:
        return EmbeddingStore(ids, vectors.copy())
    except ValidationError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def load_null_text(path: str | Path, source_tag: str | None = None) -> NullTextEmbedding:
    """Load a single-row store holding the null-text vector."""
    store = read_store(path)
    if store.count != 1:
        raise FormatError(f"{path}: null-text store must hold exactly 1 row")
    if source_tag is None:
        id_ = store.ids[0]
        source_tag = id_ if id_ != NULL_TEXT_ID else Path(path).stem
    return NullTextEmbedding(store.vectors[0], source_tag)


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Scale a vector to unit L2 norm (float64 result)."""
    v = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise ValidationError("cannot normalize a zero vector")
    return v / norm


def load_triplets(
    path: str | Path, images: EmbeddingStore, texts: EmbeddingStore
) -> TripletSet:
    """Load a JSONL triplet manifest, validating every id against the stores.

    Any bad line aborts the whole load; there are no partial results.
    """
    records: TripletSet = []
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise FormatError(f"cannot read triplets {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}:{lineno}: malformed JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise FormatError(f"{path}:{lineno}: expected a JSON object")
        missing = {"query_image", "caption", "target_image"} - obj.keys()
        if missing:
            raise FormatError(f"{path}:{lineno}: missing keys {sorted(missing)}")
        query, caption, target = obj["query_image"], obj["caption"], obj["target_image"]
        if query not in images:
            raise FormatError(f"{path}:{lineno}: unresolved image id {query!r}")
        if target not in images:
            raise FormatError(f"{path}:{lineno}: unresolved image id {target!r}")
        if caption is not None and caption not in texts:
            raise FormatError(f"{path}:{lineno}: unresolved caption id {caption!r}")
        records.append(TripletRecord(query, caption, target))
    return records


def load_qrels(path: str | Path) -> Qrels:
    """Load a TSV qrels file into query -> set-of-relevant-ids."""
    qrels: Qrels = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise FormatError(f"cannot read qrels {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise FormatError(f"{path}:{lineno}: expected 'query<TAB>target'")
        qrels.setdefault(parts[0], set()).add(parts[1])
    return qrels


def write_qrels(qrels: Qrels, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for query in sorted(qrels):
            for target in sorted(qrels[query]):
                fh.write(f"{query}\t{target}\n")


def write_triplets(records: TripletSet, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(
                json.dumps(
                    {
                        "query_image": rec.query_image_id,
                        "caption": rec.caption_id,
                        "target_image": rec.target_image_id,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def synth_dataset(
    seed: int, n_queries: int, pool_size: int, dim: int, noise: float
) -> tuple[EmbeddingStore, EmbeddingStore, NullTextEmbedding, TripletSet, Qrels]:
    """Generate a deterministic, learnable desk-scale dataset.

    Reference and caption vectors are random unit vectors.  Target i is the
    reference rotated halfway toward its caption (the angular bisector of the
    two unit vectors) plus Gaussian noise of scale ``noise``, so a fusion
    module that blends the two query parts can solve the task.  The image
    store holds the pool of ``pool_size`` candidates followed by the
    ``n_queries`` reference images; qrels map query i to candidate i.
    """
    if n_queries < 1 or pool_size < 1 or n_queries > pool_size:
        raise ValidationError("require 1 <= n_queries <= pool_size")
    if dim < 2:
        raise ValidationError("dim must be >= 2")
    if noise < 0:
        raise ValidationError("noise must be >= 0")

    rng = np.random.default_rng(seed)

    def unit_rows(n: int) -> np.ndarray:
        m = rng.standard_normal((n, dim))
        return (m / np.linalg.norm(m, axis=1, keepdims=True)).astype(np.float32)

    refs = unit_rows(n_queries)
    caps = unit_rows(n_queries)
    null_vec = unit_rows(1)[0]

    # Combination built from the f32-rounded vectors, so the construction is
    # reproducible bit-for-bit from the stored stores.
    r64 = refs.astype(np.float64)
    c64 = caps.astype(np.float64)
    bisector = r64 / np.linalg.norm(r64, axis=1, keepdims=True)
    bisector += c64 / np.linalg.norm(c64, axis=1, keepdims=True)
    bisector /= np.linalg.norm(bisector, axis=1, keepdims=True)
    targets = (bisector + noise * rng.standard_normal((n_queries, dim))).astype(np.float32)
    distractors = unit_rows(pool_size - n_queries)

    pool = np.concatenate([targets, distractors], axis=0)
    image_ids = [f"img{i:04d}" for i in range(pool_size)]
    ref_ids = [f"ref{i:04d}" for i in range(n_queries)]
    cap_ids = [f"cap{i:04d}" for i in range(n_queries)]

    images = EmbeddingStore(
        image_ids + ref_ids,
        np.concatenate([pool, refs], axis=0).astype(np.float32),
    )
    texts = EmbeddingStore(cap_ids, caps.astype(np.float32))
    null_text = NullTextEmbedding(null_vec.astype(np.float32), "synthetic")
    triplets = [
        TripletRecord(ref_ids[i], cap_ids[i], image_ids[i]) for i in range(n_queries)
    ]
    qrels: Qrels = {ref_ids[i]: {image_ids[i]} for i in range(n_queries)}
    return images, texts, null_text, triplets, qrels
