"""Pydantic request/response models for the retrieval service."""
from __future__ import annotations

from pydantic import BaseModel, Field


class SynthRequest(BaseModel):
    seed: int = 7
    n_queries: int = Field(32, ge=1)
    pool_size: int = Field(64, ge=1)
    dim: int = Field(16, ge=2)
    noise: float = Field(0.05, ge=0.0)
    out_dir: str


class SynthResponse(BaseModel):
    files: dict[str, str]
    n_queries: int
    pool_size: int
    dim: int


class TrainRequest(BaseModel):
    triplets: str
    images: str
    texts: str
    null_text: str
    out: str
    log: str | None = None
    mode: str = "union"
    epochs: int = 2
    batch_size: int = 32
    lr: float = 1e-4
    weight_decay: float = 1e-2
    tau: float = 0.01
    seed: int = 0
    union_layers: int = 2
    union_heads: int | None = None
    head_dim: int | None = None
    fusion_layers: int = 2
    fusion_heads: int = 8
    ffn_mult: int = 4
    pool: str = "mean"


class TrainResponse(BaseModel):
    checkpoint: str
    log: str
    steps: int
    final_loss: float | None
    param_count: int
    checkpoint_sha256: str


class IndexRequest(BaseModel):
    checkpoint: str
    images: str
    null_text: str
    mode: str
    out: str


class IndexResponse(BaseModel):
    index: str
    meta: str
    count: int
    dim: int
    mode: str


class SearchRequest(BaseModel):
    index: str
    checkpoint: str
    triplets: str
    images: str
    texts: str
    null_text: str
    out: str
    k: int | None = None
    threads: int = Field(1, ge=1)


class SearchResponse(BaseModel):
    run: str
    queries: int
    k: int


class EvalRequest(BaseModel):
    run: str
    qrels: str
    metrics: list[str]
    out: str


class EvalResponse(BaseModel):
    out: str
    metrics: dict[str, float]
    num_queries: int


class GradcheckRequest(BaseModel):
    seed: int = 0
    tol: float = 1e-4
    eps: float = 1e-5


class GradcheckEntry(BaseModel):
    name: str
    max_rel_err: float
    passed: bool


class GradcheckResponse(BaseModel):
    passed: bool
    checks: list[GradcheckEntry]


class ReportInput(BaseModel):
    path: str
    backbone_tag: str
    mode: str


class ReportRequest(BaseModel):
    inputs: list[ReportInput]
    out: str


class ReportResponse(BaseModel):
    csv: str
    json_mirror: str
    groups: int


class HealthResponse(BaseModel):
    status: str
    version: str
