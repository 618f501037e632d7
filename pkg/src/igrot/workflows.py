"""File-level workflows behind the service endpoints and the CLI.

Every function takes plain paths/values, performs the work through the core
modules, writes its outputs, and returns a JSON-serializable summary.
Identical arguments always produce byte-identical output files.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import gradchecks
from .errors import FormatError, ValidationError
from .losses import LossConfig
from .metrics import GroupedReport, MetricSpec, emit_report, evaluate
from .network import (
    ModelConfig,
    checkpoint_hash,
    fuse_queries,
    load_checkpoint,
    save_checkpoint,
)
from .search import batch_search, build_index, load_index, read_run, save_index, write_run
from .stores import (
    NULL_TEXT_ID,
    load_null_text,
    load_qrels,
    load_triplets,
    read_store,
    synth_dataset,
    write_qrels,
    write_store,
    write_triplets,
)
from .training import TrainConfig, train

_FUSE_CHUNK = 4096


def run_synth(seed: int, n_queries: int, pool_size: int, dim: int, noise: float, out_dir: str) -> dict:
    images, texts, null_text, triplets, qrels = synth_dataset(seed, n_queries, pool_size, dim, noise)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "images": str(out / "images.ueb"),
        "texts": str(out / "texts.ueb"),
        "null_text": str(out / "null.ueb"),
        "triplets": str(out / "triplets.jsonl"),
        "qrels": str(out / "qrels.tsv"),
    }
    write_store(images.ids, images.vectors, files["images"])
    write_store(texts.ids, texts.vectors, files["texts"])
    write_store([NULL_TEXT_ID], null_text.vector[None, :], files["null_text"])
    write_triplets(triplets, files["triplets"])
    write_qrels(qrels, files["qrels"])
    return {"files": files, "n_queries": n_queries, "pool_size": pool_size, "dim": dim}


def resolve_model_config(
    dim: int,
    union_layers: int = 2,
    union_heads: int | None = None,
    head_dim: int | None = None,
    fusion_layers: int = 2,
    fusion_heads: int = 8,
    ffn_mult: int = 4,
    pool: str = "mean",
    tau: float = 0.01,
    seed: int = 0,
) -> ModelConfig:
    """Fill head geometry from the store dim when not given explicitly."""
    if union_heads is None:
        union_heads = 12 if dim == 768 else 8
    if head_dim is None:
        if dim % union_heads != 0:
            raise ValidationError(f"union_heads {union_heads} must divide dim {dim}")
        head_dim = dim // union_heads
    return ModelConfig(
        dim=dim,
        union_layers=union_layers,
        union_heads=union_heads,
        head_dim=head_dim,
        fusion_layers=fusion_layers,
        fusion_heads=fusion_heads,
        ffn_mult=ffn_mult,
        pool=pool,
        tau=tau,
        seed=seed,
    )


def run_train(
    triplets: str,
    images: str,
    texts: str,
    null_text: str,
    out: str,
    log: str | None = None,
    mode: str = "union",
    epochs: int = 2,
    batch_size: int = 32,
    lr: float = 1e-4,
    weight_decay: float = 1e-2,
    tau: float = 0.01,
    seed: int = 0,
    union_layers: int = 2,
    union_heads: int | None = None,
    head_dim: int | None = None,
    fusion_layers: int = 2,
    fusion_heads: int = 8,
    ffn_mult: int = 4,
    pool: str = "mean",
) -> dict:
    image_store = read_store(images)
    text_store = read_store(texts)
    null = load_null_text(null_text)
    records = load_triplets(triplets, image_store, text_store)
    model_cfg = resolve_model_config(
        image_store.dim, union_layers, union_heads, head_dim,
        fusion_layers, fusion_heads, ffn_mult, pool, tau, seed,
    )
    train_cfg = TrainConfig(
        epochs=epochs, batch_size=batch_size, lr=lr, weight_decay=weight_decay,
        seed=seed, mode=mode,
    )
    params, log_lines = train(records, image_store, text_store, null, model_cfg, train_cfg)
    save_checkpoint(params, model_cfg, out)
    log_path = log if log is not None else str(out) + ".log.jsonl"
    with open(log_path, "w", encoding="utf-8", newline="\n") as fh:
        for line in log_lines:
            fh.write(json.dumps(line, sort_keys=True) + "\n")
    batch_losses = [line["loss"] for line in log_lines if "loss" in line]
    return {
        "checkpoint": str(out),
        "log": log_path,
        "steps": log_lines[-1]["steps"],
        "final_loss": batch_losses[-1] if batch_losses else None,
        "param_count": params.count(),
        "checkpoint_sha256": checkpoint_hash(params, model_cfg),
    }


def run_build_index(checkpoint: str, images: str, null_text: str, mode: str, out: str) -> dict:
    params, model_cfg = load_checkpoint(checkpoint)
    image_store = read_store(images)
    null = load_null_text(null_text)
    index = build_index(image_store, null, mode, params, model_cfg)
    save_index(index, out)
    return {
        "index": str(out),
        "meta": str(out) + ".meta.json",
        "count": index.count,
        "dim": index.dim,
        "mode": index.mode,
    }


def run_search(
    index: str,
    checkpoint: str,
    triplets: str,
    images: str,
    texts: str,
    null_text: str,
    out: str,
    k: int | None = None,
    threads: int = 1,
) -> dict:
    idx = load_index(index)
    params, model_cfg = load_checkpoint(checkpoint)
    expected = idx.provenance.get("checkpoint_sha256")
    actual = checkpoint_hash(params, model_cfg)
    if expected is not None and expected != actual:
        raise ValidationError("index was built from a different checkpoint")
    image_store = read_store(images)
    text_store = read_store(texts)
    null = load_null_text(null_text)
    records = load_triplets(triplets, image_store, text_store)
    eta = null.vector.astype(np.float64)
    queries: list[tuple[str, np.ndarray]] = []
    for lo in range(0, len(records), _FUSE_CHUNK):
        chunk = records[lo : lo + _FUSE_CHUNK]
        e_r = np.stack([image_store.vector(r.query_image_id) for r in chunk]).astype(np.float64)
        e_c = np.stack(
            [
                eta if r.caption_id is None else text_store.vector(r.caption_id).astype(np.float64)
                for r in chunk
            ]
        )
        fused = fuse_queries(e_r, e_c, params, model_cfg).data
        queries.extend((r.query_image_id, fused[i]) for i, r in enumerate(chunk))
    k_eff = idx.count if k is None else k
    run = batch_search(idx, queries, k_eff, threads=threads)
    write_run(run, out)
    return {"run": str(out), "queries": len(run), "k": k_eff}


def run_eval(run: str, qrels: str, metrics: list[str], out: str) -> dict:
    specs = [MetricSpec.parse(m) for m in metrics]
    if not specs:
        raise ValidationError("no metrics requested")
    report = evaluate(read_run(run), load_qrels(qrels), specs)
    payload = {"metrics": report.metrics, "num_queries": report.num_queries}
    Path(out).write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")
    return {"out": str(out), **payload}


def run_gradcheck(seed: int = 0, tol: float = 1e-4, eps: float = 1e-5) -> dict:
    results = gradchecks.run_suite(seed=seed, eps=eps, tol=tol)
    checks = [
        {"name": name, "max_rel_err": report.max_rel_err, "passed": report.passed}
        for name, report in results
    ]
    return {"passed": all(c["passed"] for c in checks), "checks": checks}


def run_report(inputs: list[dict], out: str) -> dict:
    """Aggregate eval JSONs into the grouped CSV + JSON report."""
    if not inputs:
        raise ValidationError("report needs at least one eval input")
    groups = []
    for item in inputs:
        try:
            payload = json.loads(Path(item["path"]).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise FormatError(f"cannot read eval report {item['path']}: {exc}") from exc
        groups.append(
            GroupedReport(key=f"{item['backbone_tag']}/{item['mode']}", metrics=payload["metrics"])
        )
    csv_path = Path(out)
    json_path = csv_path.with_suffix(".json")
    emit_report(groups, csv_path, json_path)
    return {"csv": str(csv_path), "json": str(json_path), "groups": len(groups)}
