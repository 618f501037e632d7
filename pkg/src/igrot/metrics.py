"""Ranked-retrieval metrics over a run against relevance judgments.

Recall@K, Prec@K, AP@K/mAP@K are reported as percentages; median rank (MdR)
stays in rank units.  The per-ground-truth-number mAP variant cuts each
query's ranking at its own number of relevant ids, so with a single ground
truth per query it coincides with Recall@1.
"""
from __future__ import annotations

import csv
import json
import statistics
from dataclasses import dataclass
from pathlib import Path

from .errors import ValidationError
from .search import RetrievalRun
from .stores import Qrels

_KINDS_WITH_K = ("recall", "precision", "map")
_KINDS_BARE = ("mdr", "map_gtn")


@dataclass(frozen=True)
class MetricSpec:
    kind: str
    k: int | None = None

    def __post_init__(self) -> None:
        if self.kind in _KINDS_WITH_K:
            if self.k is None or self.k < 1:
                raise ValidationError(f"{self.kind} requires k >= 1")
        elif self.kind in _KINDS_BARE:
            if self.k is not None:
                raise ValidationError(f"{self.kind} takes no cutoff")
        else:
            raise ValidationError(f"unknown metric kind {self.kind!r}")

    @property
    def label(self) -> str:
        if self.kind == "map_gtn":
            return "map-gtn"
        if self.kind == "precision":
            return f"prec@{self.k}"
        return self.kind if self.k is None else f"{self.kind}@{self.k}"

    @staticmethod
    def parse(text: str) -> "MetricSpec":
        text = text.strip().lower()
        if text == "mdr":
            return MetricSpec("mdr")
        if text in ("map-gtn", "map_gtn"):
            return MetricSpec("map_gtn")
        if "@" in text:
            name, _, k_s = text.partition("@")
            name = {"prec": "precision", "r": "recall", "p": "precision"}.get(name, name)
            try:
                return MetricSpec(name, int(k_s))
            except ValueError:
                raise ValidationError(f"bad metric cutoff in {text!r}") from None
        raise ValidationError(f"cannot parse metric spec {text!r}")


@dataclass
class MetricReport:
    metrics: dict[str, float]
    per_query: dict[str, dict[str, float]]  # metric label -> query id -> value
    num_queries: int


def recall_at_k(ranking: list[str], relevant: set[str], k: int) -> int:
    _check_cutoff(ranking, k)
    return int(any(cid in relevant for cid in ranking[:k]))


def precision_at_k(ranking: list[str], relevant: set[str], k: int) -> float:
    _check_cutoff(ranking, k)
    return sum(cid in relevant for cid in ranking[:k]) / k


def ap_at_k(ranking: list[str], relevant: set[str], k: int) -> float:
    """AP@k = (1/min(|relevant|, k)) * sum_i rel(i) * Prec@i over i <= k."""
    _check_cutoff(ranking, k)
    if not relevant:
        raise ValidationError("average precision needs a non-empty relevant set")
    hits = 0
    total = 0.0
    for i, cid in enumerate(ranking[:k], start=1):
        if cid in relevant:
            hits += 1
            total += hits / i
    return total / min(len(relevant), k)


def map_at_k(run: RetrievalRun, qrels: Qrels, k: int) -> float:
    values = [ap_at_k(_ranking(e), _relevant(qrels, e.query_id), k) for e in run]
    return 100.0 * sum(values) / len(values)


def median_rank(run: RetrievalRun, qrels: Qrels) -> float:
    """Median over queries of the best rank of any relevant id (even counts averaged)."""
    best_ranks = []
    for entry in run:
        relevant = _relevant(qrels, entry.query_id)
        positions = {cid: i for i, cid in enumerate(_ranking(entry), start=1)}
        missing = relevant - positions.keys()
        if missing:
            raise ValidationError(
                f"relevant id {sorted(missing)[0]!r} absent from ranking of "
                f"{entry.query_id!r} (truncated run?)"
            )
        best_ranks.append(min(positions[cid] for cid in relevant))
    return float(statistics.median(best_ranks))


def map_per_gtn(run: RetrievalRun, qrels: Qrels) -> float:
    """mAP with each query's cutoff set to its own number of ground truths."""
    values = []
    for entry in run:
        relevant = _relevant(qrels, entry.query_id)
        ranking = _ranking(entry)
        if len(ranking) < len(relevant):
            raise ValidationError(
                f"ranking of {entry.query_id!r} shorter than its {len(relevant)} ground truths"
            )
        values.append(ap_at_k(ranking, relevant, len(relevant)))
    return 100.0 * sum(values) / len(values)


def evaluate(run: RetrievalRun, qrels: Qrels, specs: list[MetricSpec]) -> MetricReport:
    """Compute the requested metrics plus per-query breakdowns."""
    if not len(run):
        raise ValidationError("empty run")
    metrics: dict[str, float] = {}
    per_query: dict[str, dict[str, float]] = {}
    for spec in specs:
        values: dict[str, float] = {}
        for entry in run:
            relevant = _relevant(qrels, entry.query_id)
            ranking = _ranking(entry)
            if spec.kind == "recall":
                values[entry.query_id] = 100.0 * recall_at_k(ranking, relevant, spec.k)
            elif spec.kind == "precision":
                values[entry.query_id] = 100.0 * precision_at_k(ranking, relevant, spec.k)
            elif spec.kind == "map":
                values[entry.query_id] = 100.0 * ap_at_k(ranking, relevant, spec.k)
        if spec.kind == "mdr":
            metrics[spec.label] = median_rank(run, qrels)
        elif spec.kind == "map_gtn":
            metrics[spec.label] = map_per_gtn(run, qrels)
            for entry in run:
                relevant = _relevant(qrels, entry.query_id)
                values[entry.query_id] = 100.0 * ap_at_k(
                    _ranking(entry), relevant, len(relevant)
                )
        else:
            metrics[spec.label] = sum(values.values()) / len(values)
        if values:
            per_query[spec.label] = values
    return MetricReport(metrics, per_query, len(run))


@dataclass(frozen=True)
class GroupedReport:
    key: str  # e.g. "<backbone_tag>/<mode>"
    metrics: dict[str, float]


def emit_report(groups: list[GroupedReport], csv_path: str | Path, json_path: str | Path | None = None) -> None:
    """Write grouped metrics as CSV rows plus an average row per group, with a JSON mirror."""
    if not groups:
        raise ValidationError("no reports to emit")
    metric_names = list(groups[0].metrics)
    for g in groups:
        if list(g.metrics) != metric_names:
            raise ValidationError(
                f"group {g.key!r} reports metrics {list(g.metrics)}, expected {metric_names}"
            )
    csv_path = Path(csv_path)
    if json_path is None:
        json_path = csv_path.with_suffix(".json")
    payload = {"groups": []}
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["group", "metric", "value"])
        for g in groups:
            average = sum(g.metrics.values()) / len(g.metrics)
            for name, value in g.metrics.items():
                writer.writerow([g.key, name, f"{value:.6f}"])
            writer.writerow([g.key, "average", f"{average:.6f}"])
            payload["groups"].append({"key": g.key, "metrics": g.metrics, "average": average})
    Path(json_path).write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")


def _check_cutoff(ranking: list[str], k: int) -> None:
    if not 1 <= k <= len(ranking):
        raise ValidationError(f"cutoff k={k} out of range for ranking of {len(ranking)}")


def _ranking(entry) -> list[str]:
    return [cid for cid, _ in entry.items]


def _relevant(qrels: Qrels, query_id: str) -> set[str]:
    try:
        relevant = qrels[query_id]
    except KeyError:
        raise ValidationError(f"query {query_id!r} missing from qrels") from None
    if not relevant:
        raise ValidationError(f"empty relevance set for query {query_id!r}")
    return relevant
