"""Query-fusion and target-interpolation networks built from autodiff ops.

Both encoders are stacks of pre-norm transformer blocks over a fixed-length
2-token sequence (image slot, text slot) distinguished by learned token-type
embeddings.  The target network additionally feeds the pooled sequence through
a gating MLP whose sigmoid output blends, per dimension, the target image
vector with the null-text vector.

Checkpoint file: magic ``UNCK`` | version u32=1 | u32 JSON-config length |
JSON config | all parameters as little-endian f64 in ``ModelParams.named``
order (fusion layers, union layers, token-type tables, gate MLP).
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Iterator, Literal

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import FormatError, ValidationError

CKPT_MAGIC = b"UNCK"
CKPT_VERSION = 1
LN_EPS = 1e-5

TargetMode = Literal["original", "sum", "union"]
TARGET_MODES = ("original", "sum", "union")


def check_mode(mode: str) -> str:
    if mode not in TARGET_MODES:
        raise ValidationError(f"unknown target mode {mode!r}; expected one of {TARGET_MODES}")
    return mode


@dataclass
class ModelConfig:
    dim: int
    union_layers: int = 2
    union_heads: int | None = None  # resolved to 12 when dim == 768, else 8
    head_dim: int = 64
    fusion_layers: int = 2
    fusion_heads: int = 8
    ffn_mult: int = 4
    pool: str = "mean"
    tau: float = 0.01
    seed: int = 0

    def __post_init__(self) -> None:
        if self.union_heads is None:
            self.union_heads = 12 if self.dim == 768 else 8
        if self.dim < 2:
            raise ValidationError("dim must be >= 2")
        if min(self.union_layers, self.fusion_layers, self.ffn_mult) < 1:
            raise ValidationError("layer counts and ffn_mult must be >= 1")
        if self.union_heads * self.head_dim != self.dim:
            raise ValidationError(
                f"union_heads * head_dim must equal dim "
                f"({self.union_heads} x {self.head_dim} != {self.dim})"
            )
        if self.dim % self.fusion_heads != 0:
            raise ValidationError(
                f"fusion_heads {self.fusion_heads} must divide dim {self.dim}"
            )
        if self.tau <= 0:
            raise ValidationError("tau must be > 0")
        if self.pool not in ("mean", "first"):
            raise ValidationError(f"pool must be 'mean' or 'first', got {self.pool!r}")


@dataclass
class LayerParams:
    ln1_gamma: Tensor
    ln1_beta: Tensor
    attn_q: Tensor
    attn_k: Tensor
    attn_v: Tensor
    attn_o: Tensor
    ln2_gamma: Tensor
    ln2_beta: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor

    FIELDS = (
        "ln1_gamma", "ln1_beta", "attn_q", "attn_k", "attn_v", "attn_o",
        "ln2_gamma", "ln2_beta", "ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2",
    )


@dataclass
class ModelParams:
    fusion: list[LayerParams]
    union: list[LayerParams]
    fusion_tokens: Tensor  # (2, D)
    union_tokens: Tensor  # (2, D)
    gate_w1: Tensor
    gate_b1: Tensor
    gate_w2: Tensor
    gate_b2: Tensor

    def named(self) -> Iterator[tuple[str, Tensor]]:
        """All parameters in the fixed checkpoint order."""
        for stack, layers in (("fusion", self.fusion), ("union", self.union)):
            for i, layer in enumerate(layers):
                for name in LayerParams.FIELDS:
                    yield f"{stack}.{i}.{name}", getattr(layer, name)
        yield "fusion_tokens", self.fusion_tokens
        yield "union_tokens", self.union_tokens
        for name in ("gate_w1", "gate_b1", "gate_w2", "gate_b2"):
            yield name, getattr(self, name)

    def count(self) -> int:
        return sum(t.data.size for _, t in self.named())

    def zero_grads(self) -> None:
        for _, t in self.named():
            t.zero_grad()


def _layer_shapes(dim: int, ffn_mult: int) -> list[tuple[str, tuple[int, ...], int]]:
    """(field name, shape, fan_in) per layer; fan_in 0 marks gain/bias init."""
    hidden = ffn_mult * dim
    return [
        ("ln1_gamma", (dim,), -1),  # ones
        ("ln1_beta", (dim,), 0),  # zeros
        ("attn_q", (dim, dim), dim),
        ("attn_k", (dim, dim), dim),
        ("attn_v", (dim, dim), dim),
        ("attn_o", (dim, dim), dim),
        ("ln2_gamma", (dim,), -1),
        ("ln2_beta", (dim,), 0),
        ("ffn_w1", (dim, hidden), dim),
        ("ffn_b1", (hidden,), 0),
        ("ffn_w2", (hidden, dim), hidden),
        ("ffn_b2", (dim,), 0),
    ]


def init_params(config: ModelConfig) -> ModelParams:
    """Seeded init: weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)), gains 1, biases 0."""
    rng = np.random.default_rng(config.seed)

    def draw(shape: tuple[int, ...], fan_in: int, name: str) -> Tensor:
        if fan_in == -1:
            data = np.ones(shape)
        elif fan_in == 0:
            data = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(fan_in)
            data = rng.uniform(-bound, bound, size=shape)
        return Tensor(data, requires_grad=True, name=name)

    def layer_stack(tag: str, n_layers: int) -> list[LayerParams]:
        layers = []
        for i in range(n_layers):
            fields = {
                name: draw(shape, fan_in, f"{tag}.{i}.{name}")
                for name, shape, fan_in in _layer_shapes(config.dim, config.ffn_mult)
            }
            layers.append(LayerParams(**fields))
        return layers

    d = config.dim
    return ModelParams(
        fusion=layer_stack("fusion", config.fusion_layers),
        union=layer_stack("union", config.union_layers),
        fusion_tokens=draw((2, d), d, "fusion_tokens"),
        union_tokens=draw((2, d), d, "union_tokens"),
        gate_w1=draw((d, d), d, "gate_w1"),
        gate_b1=draw((d,), 0, "gate_b1"),
        gate_w2=draw((d, d), d, "gate_w2"),
        gate_b2=draw((d,), 0, "gate_b2"),
    )


def _attention(x: Tensor, layer: LayerParams, heads: int, head_dim: int) -> Tensor:
    q = ad.matmul(x, layer.attn_q)
    k = ad.matmul(x, layer.attn_k)
    v = ad.matmul(x, layer.attn_v)
    inv = 1.0 / np.sqrt(head_dim)
    outputs = []
    for h in range(heads):
        lo, hi = h * head_dim, (h + 1) * head_dim
        qh = ad.slice_lastdim(q, lo, hi)
        kh = ad.slice_lastdim(k, lo, hi)
        vh = ad.slice_lastdim(v, lo, hi)
        weights = ad.softmax_lastdim(ad.scale(ad.matmul(qh, ad.transpose_last2(kh)), inv))
        outputs.append(ad.matmul(weights, vh))
    merged = outputs[0] if heads == 1 else ad.concat_lastdim(outputs)
    return ad.matmul(merged, layer.attn_o)


def transformer_block(x: Tensor, layer: LayerParams, heads: int, head_dim: int) -> Tensor:
    """Pre-norm block: x + MHA(LN(x)), then + FFN(LN(.)) with GELU."""
    attended = ad.add(x, _attention(ad.layer_norm(x, layer.ln1_gamma, layer.ln1_beta, LN_EPS), layer, heads, head_dim))
    h = ad.layer_norm(attended, layer.ln2_gamma, layer.ln2_beta, LN_EPS)
    h = ad.gelu(ad.add(ad.matmul(h, layer.ffn_w1), layer.ffn_b1))
    h = ad.add(ad.matmul(h, layer.ffn_w2), layer.ffn_b2)
    return ad.add(attended, h)


def _encode_pairs(
    slot0: np.ndarray,
    slot1: np.ndarray,
    layers: list[LayerParams],
    token_table: Tensor,
    heads: int,
    head_dim: int,
    pool: str,
) -> Tensor:
    """Run (B, 2, D) sequences through the blocks and pool to (B, D)."""
    x = ad.add(Tensor(np.stack([slot0, slot1], axis=1)), token_table)
    for layer in layers:
        x = transformer_block(x, layer, heads, head_dim)
    return ad.reduce_mean(x, axis=1) if pool == "mean" else ad.take_token(x, 0)


def fuse_queries(
    e_r: np.ndarray, e_c: np.ndarray, params: ModelParams, config: ModelConfig
) -> Tensor:
    """Fused query vectors for a batch of (reference, caption) embedding pairs."""
    e_r = np.asarray(e_r, dtype=np.float64)
    e_c = np.asarray(e_c, dtype=np.float64)
    if e_r.shape != e_c.shape or e_r.ndim != 2 or e_r.shape[1] != config.dim:
        raise ValidationError(
            f"expected matching (B, {config.dim}) query inputs, got {e_r.shape} and {e_c.shape}"
        )
    return _encode_pairs(
        e_r, e_c, params.fusion, params.fusion_tokens,
        config.fusion_heads, config.dim // config.fusion_heads, config.pool,
    )


def fuse_query(
    e_r: np.ndarray, e_c: np.ndarray, params: ModelParams, config: ModelConfig
) -> np.ndarray:
    """Single-query convenience wrapper around :func:`fuse_queries`."""
    out = fuse_queries(np.asarray(e_r)[None, :], np.asarray(e_c)[None, :], params, config)
    return out.data[0]


def union_batch(
    e_t: np.ndarray, e_eta: np.ndarray, params: ModelParams, config: ModelConfig
) -> tuple[Tensor, Tensor]:
    """Gated interpolation features for a batch of target vectors.

    Returns (U, w_t): U[i] = e_eta + w_t[i] * (e_t[i] - e_eta), with
    w_t in (0,1) per dimension from the sigmoid gate.  The difference form
    makes U exactly equal e_t when e_t == e_eta.
    """
    e_t = np.asarray(e_t, dtype=np.float64)
    e_eta = np.asarray(e_eta, dtype=np.float64)
    if e_t.ndim != 2 or e_t.shape[1] != config.dim or e_eta.shape != (config.dim,):
        raise ValidationError(
            f"expected (B, {config.dim}) targets and ({config.dim},) null text, "
            f"got {e_t.shape} and {e_eta.shape}"
        )
    eta_rows = np.repeat(e_eta[None, :], e_t.shape[0], axis=0)
    pooled = _encode_pairs(
        e_t, eta_rows, params.union, params.union_tokens,
        config.union_heads, config.head_dim, config.pool,
    )
    hidden = ad.gelu(ad.add(ad.matmul(pooled, params.gate_w1), params.gate_b1))
    w_t = ad.sigmoid(ad.add(ad.matmul(hidden, params.gate_w2), params.gate_b2))
    fused = ad.add(Tensor(eta_rows), ad.mul(w_t, Tensor(e_t - e_eta)))
    return fused, w_t


def union_forward(
    e_t: np.ndarray, e_eta: np.ndarray, params: ModelParams, config: ModelConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Single-vector wrapper: returns (U, w_t) for one target embedding."""
    u, w = union_batch(np.asarray(e_t)[None, :], e_eta, params, config)
    return u.data[0], w.data[0]


def target_features(
    mode: str, e_t: np.ndarray, e_eta: np.ndarray, params: ModelParams, config: ModelConfig
) -> Tensor:
    """Batch of target-side features under the chosen mode."""
    check_mode(mode)
    e_t = np.asarray(e_t, dtype=np.float64)
    e_eta = np.asarray(e_eta, dtype=np.float64)
    if e_t.ndim != 2 or e_t.shape[1] != config.dim or e_eta.shape != (config.dim,):
        raise ValidationError(
            f"expected (B, {config.dim}) targets and ({config.dim},) null text, "
            f"got {e_t.shape} and {e_eta.shape}"
        )
    if mode == "original":
        return Tensor(e_t)
    if mode == "sum":
        return Tensor(e_t + e_eta)
    return union_batch(e_t, e_eta, params, config)[0]


def target_feature(
    mode: str, e_t: np.ndarray, e_eta: np.ndarray, params: ModelParams, config: ModelConfig
) -> np.ndarray:
    return target_features(mode, np.asarray(e_t)[None, :], e_eta, params, config).data[0]


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def checkpoint_bytes(params: ModelParams, config: ModelConfig) -> bytes:
    cfg_blob = json.dumps(asdict(config), sort_keys=True).encode("utf-8")
    chunks = [CKPT_MAGIC, struct.pack("<I", CKPT_VERSION), struct.pack("<I", len(cfg_blob)), cfg_blob]
    for _, tensor in params.named():
        chunks.append(np.ascontiguousarray(tensor.data, dtype="<f8").tobytes())
    return b"".join(chunks)


def checkpoint_hash(params: ModelParams, config: ModelConfig) -> str:
    return hashlib.sha256(checkpoint_bytes(params, config)).hexdigest()


def save_checkpoint(params: ModelParams, config: ModelConfig, path: str | Path) -> None:
    try:
        Path(path).write_bytes(checkpoint_bytes(params, config))
    except OSError as exc:
        raise FormatError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path: str | Path) -> tuple[ModelParams, ModelConfig]:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(blob) < 12 or blob[:4] != CKPT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    (cfg_len,) = struct.unpack_from("<I", blob, 8)
    if len(blob) < 12 + cfg_len:
        raise FormatError(f"{path}: truncated config blob")
    try:
        cfg_dict = json.loads(blob[12 : 12 + cfg_len].decode("utf-8"))
        config = ModelConfig(**cfg_dict)
    except (ValueError, TypeError, ValidationError) as exc:
        raise FormatError(f"{path}: bad config blob: {exc}") from exc

    reference = init_params(config)  # shape template; values overwritten below
    offset = 12 + cfg_len
    for name, tensor in reference.named():
        nbytes = tensor.data.size * 8
        if len(blob) < offset + nbytes:
            raise FormatError(f"{path}: parameter blob truncated at {name}")
        tensor.data = (
            np.frombuffer(blob, dtype="<f8", count=tensor.data.size, offset=offset)
            .reshape(tensor.data.shape)
            .copy()
        )
        offset += nbytes
    if offset != len(blob):
        raise FormatError(f"{path}: {len(blob) - offset} unexpected trailing bytes")
    return reference, config
