"""Retrieval engine for image-guided queries with optional text.

Trains a query-fusion transformer together with a gated target representation
that interpolates each candidate image embedding with the null-text embedding,
ranks candidates by cosine similarity under three target-feature modes, and
evaluates runs with standard ranked-retrieval metrics.
"""

__version__ = "0.1.0"

from .errors import FormatError, IgrotError, ValidationError
from .stores import (
    EmbeddingStore,
    NullTextEmbedding,
    TripletRecord,
    l2_normalize,
    load_null_text,
    load_qrels,
    load_triplets,
    read_store,
    synth_dataset,
    write_store,
)
from .network import (
    ModelConfig,
    ModelParams,
    fuse_query,
    init_params,
    load_checkpoint,
    save_checkpoint,
    target_feature,
    union_forward,
)
from .losses import LossConfig, bbc_loss, cosine_sim
from .training import OptimizerState, TrainConfig, adamw_step, train
from .search import Index, RankedList, RetrievalRun, batch_search, build_index, search
from .metrics import (
    MetricReport,
    MetricSpec,
    ap_at_k,
    emit_report,
    evaluate,
    map_at_k,
    map_per_gtn,
    median_rank,
    precision_at_k,
    recall_at_k,
)

__all__ = [
    "EmbeddingStore",
    "FormatError",
    "IgrotError",
    "Index",
    "LossConfig",
    "MetricReport",
    "MetricSpec",
    "ModelConfig",
    "ModelParams",
    "NullTextEmbedding",
    "OptimizerState",
    "RankedList",
    "RetrievalRun",
    "TrainConfig",
    "TripletRecord",
    "ValidationError",
    "adamw_step",
    "ap_at_k",
    "batch_search",
    "bbc_loss",
    "build_index",
    "cosine_sim",
    "emit_report",
    "evaluate",
    "fuse_query",
    "init_params",
    "l2_normalize",
    "load_checkpoint",
    "load_null_text",
    "load_qrels",
    "load_triplets",
    "map_at_k",
    "map_per_gtn",
    "median_rank",
    "precision_at_k",
    "read_store",
    "recall_at_k",
    "save_checkpoint",
    "search",
    "synth_dataset",
    "target_feature",
    "train",
    "union_forward",
    "write_store",
]
