"""Metrics against independent definition-level brute-force implementations."""
import csv
import json

import numpy as np
import pytest

from igrot import (
    MetricSpec,
    ValidationError,
    ap_at_k,
    evaluate,
    map_at_k,
    map_per_gtn,
    median_rank,
    precision_at_k,
    recall_at_k,
)
from igrot.metrics import GroupedReport, emit_report
from igrot.search import RankedList, RetrievalRun


# ---------------------------------------------------------------------------
# brute-force oracles, written directly from the definitions
# ---------------------------------------------------------------------------


def oracle_recall(ranking, relevant, k):
    return 1 if set(ranking[:k]) & relevant else 0


def oracle_precision(ranking, relevant, k):
    return len(set(ranking[:k]) & relevant) / k


def oracle_ap(ranking, relevant, k):
    total = 0.0
    for i in range(1, k + 1):
        if ranking[i - 1] in relevant:
            total += len(set(ranking[:i]) & relevant) / i
    return total / min(len(relevant), k)


def oracle_map(run, qrels, k):
    return 100.0 * np.mean([oracle_ap([c for c, _ in e.items], qrels[e.query_id], k) for e in run])


def oracle_mdr(run, qrels):
    best = []
    for e in run:
        ranking = [c for c, _ in e.items]
        best.append(min(ranking.index(cid) + 1 for cid in qrels[e.query_id]))
    best.sort()
    n = len(best)
    return float(best[n // 2]) if n % 2 else (best[n // 2 - 1] + best[n // 2]) / 2.0


def oracle_map_gtn(run, qrels):
    return 100.0 * np.mean(
        [
            oracle_ap([c for c, _ in e.items], qrels[e.query_id], len(qrels[e.query_id]))
            for e in run
        ]
    )


def _random_instance(rng, single_gt=False):
    pool = [f"d{i:03d}" for i in range(int(rng.integers(4, 25)))]
    n_queries = int(rng.integers(1, 7))
    queries = []
    qrels = {}
    for q in range(n_queries):
        qid = f"q{q}"
        ranking = list(rng.permutation(pool))
        n_rel = 1 if single_gt else int(rng.integers(1, min(6, len(pool)) + 1))
        qrels[qid] = set(rng.choice(pool, size=n_rel, replace=False).tolist())
        queries.append(RankedList(qid, [(cid, 1.0 - i * 1e-3) for i, cid in enumerate(ranking)]))
    return RetrievalRun(queries), qrels, len(pool)


def test_oracle_equivalence_1000_instances():
    rng = np.random.default_rng(123)
    for _ in range(1000):
        run, qrels, pool_size = _random_instance(rng)
        k = int(rng.integers(1, pool_size + 1))
        for entry in run:
            ranking = [c for c, _ in entry.items]
            relevant = qrels[entry.query_id]
            assert recall_at_k(ranking, relevant, k) == oracle_recall(ranking, relevant, k)
            assert abs(precision_at_k(ranking, relevant, k) - oracle_precision(ranking, relevant, k)) <= 1e-9
            assert abs(ap_at_k(ranking, relevant, k) - oracle_ap(ranking, relevant, k)) <= 1e-9
        assert abs(map_at_k(run, qrels, k) - oracle_map(run, qrels, k)) <= 1e-9
        assert abs(median_rank(run, qrels) - oracle_mdr(run, qrels)) <= 1e-9
        assert abs(map_per_gtn(run, qrels) - oracle_map_gtn(run, qrels)) <= 1e-9


def test_single_gt_map_gtn_equals_recall_at_1():
    rng = np.random.default_rng(321)
    for _ in range(200):
        run, qrels, _ = _random_instance(rng, single_gt=True)
        report = evaluate(run, qrels, [MetricSpec("recall", 1), MetricSpec("map_gtn")])
        assert report.metrics["map-gtn"] == report.metrics["recall@1"]


def test_recall_trivials():
    assert recall_at_k(["a", "b"], {"a"}, 1) == 1
    assert recall_at_k(["b", "a"], {"a"}, 1) == 0
    assert recall_at_k(["b", "a"], {"a"}, 2) == 1


def test_precision_trivials():
    assert precision_at_k(["a", "b", "c"], {"a", "b", "c"}, 3) == 1.0
    assert precision_at_k(["a", "b", "c"], {"z"}, 3) == 0.0


def test_ap_trivials():
    assert ap_at_k(["a", "b", "c"], {"a"}, 3) == 1.0
    assert ap_at_k(["b", "a", "c"], {"a"}, 3) == 0.5
    assert ap_at_k(["a", "b", "c"], {"a", "b", "c"}, 3) == 1.0


def test_ap_two_gt_interleaved():
    # ranking [GT, non-GT, GT] cut at the 2 ground truths: (1/1) / 2 = 0.5
    assert ap_at_k(["g1", "x", "g2"], {"g1", "g2"}, 2) == 0.5


def test_ap_requires_relevant():
    with pytest.raises(ValidationError):
        ap_at_k(["a"], set(), 1)


def test_map_trivials():
    run = RetrievalRun(
        [
            RankedList("q0", [("a", 0.9), ("b", 0.8)]),
            RankedList("q1", [("b", 0.9), ("a", 0.8)]),
        ]
    )
    qrels = {"q0": {"a"}, "q1": {"a"}}
    assert map_at_k(run, qrels, 1) == 50.0
    perfect = {"q0": {"a"}, "q1": {"b"}}
    assert map_at_k(run, perfect, 1) == 100.0


def test_map_missing_query_errors():
    run = RetrievalRun([RankedList("q9", [("a", 1.0)])])
    with pytest.raises(ValidationError, match="q9"):
        map_at_k(run, {"q0": {"a"}}, 1)


def test_mdr_conventions():
    def run_with_best_ranks(ranks):
        queries = []
        for q, r in enumerate(ranks):
            pool = [f"x{i}" for i in range(10)]
            pool[r - 1] = f"gt{q}"
            queries.append(RankedList(f"q{q}", [(c, 1.0 - i * 0.01) for i, c in enumerate(pool)]))
        return RetrievalRun(queries), {f"q{q}": {f"gt{q}"} for q in range(len(ranks))}

    run, qrels = run_with_best_ranks([1, 3, 5])
    assert median_rank(run, qrels) == 3.0
    run, qrels = run_with_best_ranks([2, 4])
    assert median_rank(run, qrels) == 3.0
    run, qrels = run_with_best_ranks([1, 1, 1])
    assert median_rank(run, qrels) == 1.0


def test_mdr_multi_gt_uses_best_rank():
    run = RetrievalRun([RankedList("q0", [("a", 0.9), ("b", 0.8), ("c", 0.7)])])
    assert median_rank(run, {"q0": {"b", "c"}}) == 2.0


def test_mdr_permutation_invariant():
    rng = np.random.default_rng(55)
    run, qrels, _ = _random_instance(rng)
    base = median_rank(run, qrels)
    shuffled = RetrievalRun(list(reversed(run.queries)))
    assert median_rank(shuffled, qrels) == base


def test_mdr_detects_truncated_run():
    run = RetrievalRun([RankedList("q0", [("a", 0.9)])])
    with pytest.raises(ValidationError, match="truncated"):
        median_rank(run, {"q0": {"zz"}})


def test_map_gtn_trivials():
    run = RetrievalRun([RankedList("q0", [("a", 0.9), ("b", 0.8), ("c", 0.7)])])
    assert map_per_gtn(run, {"q0": {"a", "b", "c"}}) == 100.0
    with pytest.raises(ValidationError, match="shorter"):
        map_per_gtn(RetrievalRun([RankedList("q0", [("a", 1.0)])]), {"q0": {"a", "b"}})


def test_metric_spec_parsing():
    assert MetricSpec.parse("recall@10") == MetricSpec("recall", 10)
    assert MetricSpec.parse("prec@5") == MetricSpec("precision", 5)
    assert MetricSpec.parse("map@50") == MetricSpec("map", 50)
    assert MetricSpec.parse("mdr") == MetricSpec("mdr")
    assert MetricSpec.parse("map-gtn") == MetricSpec("map_gtn")
    assert MetricSpec.parse("MAP-GTN").label == "map-gtn"
    with pytest.raises(ValidationError):
        MetricSpec.parse("recall")
    with pytest.raises(ValidationError):
        MetricSpec.parse("recall@zero")
    with pytest.raises(ValidationError):
        MetricSpec("recall", 0)


def test_evaluate_reports_requested_metrics():
    rng = np.random.default_rng(77)
    run, qrels, pool = _random_instance(rng)
    specs = [MetricSpec("recall", 1), MetricSpec("mdr"), MetricSpec("map_gtn")]
    report = evaluate(run, qrels, specs)
    assert list(report.metrics) == ["recall@1", "mdr", "map-gtn"]
    assert report.num_queries == len(run)
    assert set(report.per_query["recall@1"]) == {e.query_id for e in run}


def test_emit_report_single_group(tmp_path):
    path = tmp_path / "report.csv"
    emit_report([GroupedReport("clip/original", {"recall@1": 50.0, "map@10": 70.0})], path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["group", "metric", "value"]
    assert ["clip/original", "recall@1", "50.000000"] in rows
    assert ["clip/original", "average", "60.000000"] in rows
    mirror = json.loads((tmp_path / "report.json").read_text())
    assert mirror["groups"][0]["average"] == 60.0


def test_emit_report_grid_has_six_average_rows(tmp_path):
    groups = [
        GroupedReport(f"{backbone}/{mode}", {"recall@1": 10.0 * i, "mdr": 2.0})
        for i, (backbone, mode) in enumerate(
            (b, m) for b in ("clip-b", "blip") for m in ("original", "sum", "union")
        )
    ]
    path = tmp_path / "grid.csv"
    emit_report(groups, path)
    rows = list(csv.reader(path.open()))
    assert sum(1 for r in rows if r[1] == "average") == 6


def test_emit_report_rejects_inconsistent_metrics(tmp_path):
    with pytest.raises(ValidationError, match="metrics"):
        emit_report(
            [
                GroupedReport("a/x", {"recall@1": 1.0}),
                GroupedReport("b/x", {"map@10": 1.0}),
            ],
            tmp_path / "bad.csv",
        )


def test_cutoff_out_of_range():
    with pytest.raises(ValidationError):
        recall_at_k(["a"], {"a"}, 2)
