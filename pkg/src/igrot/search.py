"""Exact cosine-similarity indexing and top-k search.

The index holds mode-transformed, L2-normalized candidate features; queries
are scored against every row (brute force) and ties are broken by ascending
candidate id so rankings are reproducible across platforms and thread counts.

Run file: TSV ``query_id<TAB>rank<TAB>candidate_id<TAB>score`` with rank
starting at 1 and the score printed with exactly 6 decimals.
On disk an index is a .ueb store of the transformed features plus a
``<path>.meta.json`` sidecar carrying the mode and provenance.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError
from .network import ModelConfig, ModelParams, check_mode, checkpoint_hash, target_features
from .stores import EmbeddingStore, NullTextEmbedding, read_store, write_store

_CHUNK = 4096  # bounds peak memory of the target transform


@dataclass
class Index:
    mode: str
    ids: list[str]
    features: np.ndarray  # (count, dim) float64, unit rows
    provenance: dict[str, str]

    def __post_init__(self) -> None:
        if self.features.ndim != 2 or self.features.shape[0] != len(self.ids):
            raise ValidationError("index features must be one row per id")
        if len(self.ids) < 1:
            raise ValidationError("index must hold at least one candidate")
        if len(set(self.ids)) != len(self.ids):
            raise ValidationError("index ids must be unique")
        norms = np.linalg.norm(self.features, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-6):
            raise ValidationError("index rows must be unit-norm")

    @property
    def count(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass
class RankedList:
    query_id: str
    items: list[tuple[str, float]]  # (candidate id, score), scores non-increasing


@dataclass
class RetrievalRun:
    queries: list[RankedList]

    def __iter__(self):
        return iter(self.queries)

    def __len__(self) -> int:
        return len(self.queries)


def build_index(
    images: EmbeddingStore,
    null_text: NullTextEmbedding,
    mode: str,
    params: ModelParams,
    model_cfg: ModelConfig,
) -> Index:
    """Transform every candidate under the mode and L2-normalize the rows."""
    check_mode(mode)
    if images.dim != model_cfg.dim or null_text.dim != model_cfg.dim:
        raise ValidationError(
            f"store dim {images.dim} / null dim {null_text.dim} != model dim {model_cfg.dim}"
        )
    eta = null_text.vector.astype(np.float64)
    rows = []
    for lo in range(0, images.count, _CHUNK):
        chunk = images.vectors[lo : lo + _CHUNK].astype(np.float64)
        rows.append(target_features(mode, chunk, eta, params, model_cfg).data)
    features = np.concatenate(rows, axis=0)
    norms = np.linalg.norm(features, axis=1, keepdims=True)
    zero = np.flatnonzero(norms.squeeze(1) == 0.0)
    if zero.size:
        raise ValidationError(f"zero-norm transformed feature for id {images.ids[zero[0]]!r}")
    return Index(
        mode=mode,
        ids=list(images.ids),
        features=features / norms,
        provenance={
            "checkpoint_sha256": checkpoint_hash(params, model_cfg),
            "null_text_tag": null_text.source_tag,
        },
    )


def search(index: Index, query_feature: np.ndarray, k: int) -> RankedList:
    """Exact top-k by cosine score; ties broken by ascending candidate id."""
    ranked = _rank(index, np.asarray(query_feature, dtype=np.float64), k)
    return RankedList("", ranked)


def _rank(index: Index, query: np.ndarray, k: int) -> list[tuple[str, float]]:
    if not 1 <= k <= index.count:
        raise ValidationError(f"k={k} out of range [1, {index.count}]")
    if query.shape != (index.dim,):
        raise ValidationError(f"query shape {query.shape} != ({index.dim},)")
    norm = np.linalg.norm(query)
    if norm == 0.0:
        raise ValidationError("zero query vector")
    scores = np.clip(index.features @ (query / norm), -1.0, 1.0)
    order = np.lexsort((np.asarray(index.ids), -scores))[:k]
    return [(index.ids[i], float(scores[i])) for i in order]


def batch_search(
    index: Index,
    queries: list[tuple[str, np.ndarray]],
    k: int,
    threads: int = 1,
) -> RetrievalRun:
    """Search many queries; output order follows input order regardless of threads."""
    if threads < 1:
        raise ValidationError("threads must be >= 1")
    if threads == 1:
        ranked = [_rank(index, np.asarray(q, dtype=np.float64), k) for _, q in queries]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            ranked = list(
                pool.map(lambda q: _rank(index, np.asarray(q, dtype=np.float64), k), [q for _, q in queries])
            )
    return RetrievalRun([RankedList(qid, items) for (qid, _), items in zip(queries, ranked)])


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def save_index(index: Index, path: str | Path) -> None:
    write_store(index.ids, index.features.astype(np.float32), path)
    meta = {"mode": index.mode, "provenance": index.provenance}
    Path(str(path) + ".meta.json").write_text(
        json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_index(path: str | Path) -> Index:
    meta_path = Path(str(path) + ".meta.json")
    if not meta_path.exists():
        raise FormatError(f"missing index sidecar {meta_path}")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"bad index sidecar {meta_path}: {exc}") from exc
    store = read_store(path)
    features = store.vectors.astype(np.float64)
    norms = np.linalg.norm(features, axis=1, keepdims=True)
    if (norms == 0.0).any():
        raise FormatError(f"{path}: zero-norm index row")
    return Index(
        mode=check_mode(meta.get("mode", "")),
        ids=list(store.ids),
        features=features / norms,  # re-normalize away f32 storage rounding
        provenance=dict(meta.get("provenance", {})),
    )


def write_run(run: RetrievalRun, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for entry in run:
            for rank, (cid, score) in enumerate(entry.items, start=1):
                fh.write(f"{entry.query_id}\t{rank}\t{cid}\t{score:.6f}\n")


def read_run(path: str | Path) -> RetrievalRun:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise FormatError(f"cannot read run {path}: {exc}") from exc
    by_query: dict[str, list[tuple[int, str, float]]] = {}
    order: list[str] = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise FormatError(f"{path}:{lineno}: expected 4 tab-separated fields")
        qid, rank_s, cid, score_s = parts
        try:
            rank, score = int(rank_s), float(score_s)
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: bad rank or score: {exc}") from exc
        if qid not in by_query:
            by_query[qid] = []
            order.append(qid)
        by_query[qid].append((rank, cid, score))
    queries = []
    for qid in order:
        rows = by_query[qid]
        if [r for r, _, _ in rows] != list(range(1, len(rows) + 1)):
            raise FormatError(f"{path}: ranks for query {qid!r} are not contiguous from 1")
        queries.append(RankedList(qid, [(cid, score) for _, cid, score in rows]))
    return RetrievalRun(queries)
