"""Image/text encoders behind a common embed interface.

Two families:

* ``hash-<dim>``: a deterministic synthetic encoder (thumbnail pixels or
  byte trigrams through a fixed seeded projection).  No model downloads, no
  GPU, byte-identical re-runs; meant for tests and plumbing validation.
* ``clip-b32`` / ``clip-l14``: contrastive vision-language models loaded
  through ``transformers``; optional dependency, resolved lazily.
"""
from __future__ import annotations

import zlib
from pathlib import Path

import numpy as np
from PIL import Image

from .ueb import ExportError

_THUMB = 16  # hash encoder image thumbnail side
_TEXT_BINS = 1024


class HashEncoder:
    """Deterministic projection encoder; tag ``hash-<dim>``."""

    def __init__(self, dim: int):
        if dim < 2:
            raise ExportError("hash encoder dim must be >= 2")
        self.tag = f"hash-{dim}"
        self.dim = dim
        pixels = _THUMB * _THUMB * 3 + 1  # +1 bias keeps all-zero inputs nonzero
        self._image_proj = np.random.default_rng(dim).standard_normal((pixels, dim)) / np.sqrt(pixels)
        self._text_proj = np.random.default_rng(dim + 1).standard_normal(
            (_TEXT_BINS + 1, dim)
        ) / np.sqrt(_TEXT_BINS)

    def embed_images(self, paths: list[Path]) -> np.ndarray:
        rows = []
        for path in paths:
            with Image.open(path) as img:
                pixels = np.asarray(
                    img.convert("RGB").resize((_THUMB, _THUMB), Image.BILINEAR),
                    dtype=np.float64,
                )
            feat = np.append(pixels.reshape(-1) / 255.0 - 0.5, 1.0)
            rows.append(feat @ self._image_proj)
        return _unit_rows(np.stack(rows))

    def embed_texts(self, texts: list[str]) -> np.ndarray:
        rows = []
        for text in texts:
            counts = np.zeros(_TEXT_BINS + 1)
            raw = text.encode("utf-8")
            for i in range(len(raw) - 2):
                counts[zlib.crc32(raw[i : i + 3]) % _TEXT_BINS] += 1.0
            counts[-1] = 1.0  # bias: the empty string still embeds
            rows.append(counts @ self._text_proj)
        return _unit_rows(np.stack(rows))


class ClipEncoder:
    """Contrastive image-text model via transformers (lazy heavyweight import)."""

    MODELS = {
        "clip-b32": "openai/clip-vit-base-patch32",
        "clip-l14": "openai/clip-vit-large-patch14",
    }

    def __init__(self, tag: str, text_feature: str = "projection"):
        if text_feature not in ("projection", "pooled"):
            raise ExportError(f"unknown text feature kind {text_feature!r}")
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:  # pragma: no cover - optional dependency
            raise ExportError("clip encoders need the [clip] extra installed") from exc
        self._torch = torch
        self.tag = tag
        self.text_feature = text_feature
        name = self.MODELS[tag]
        self._model = CLIPModel.from_pretrained(name).eval()
        self._processor = CLIPProcessor.from_pretrained(name)
        self.dim = (
            self._model.config.projection_dim
            if text_feature == "projection"
            else self._model.config.text_config.hidden_size
        )

    def embed_images(self, paths: list[Path]) -> np.ndarray:
        images = [Image.open(p).convert("RGB") for p in paths]
        inputs = self._processor(images=images, return_tensors="pt")
        with self._torch.no_grad():
            feats = self._model.get_image_features(**inputs)
        return feats.numpy().astype(np.float32)

    def embed_texts(self, texts: list[str]) -> np.ndarray:
        inputs = self._processor(text=texts, return_tensors="pt", padding=True, truncation=True)
        with self._torch.no_grad():
            if self.text_feature == "projection":
                feats = self._model.get_text_features(**inputs)
            else:
                feats = self._model.text_model(**inputs).pooler_output
        return feats.numpy().astype(np.float32)


def _unit_rows(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    if (norms == 0.0).any():
        raise ExportError("encoder produced a zero feature")
    return (m / norms).astype(np.float32)


def get_encoder(tag: str, text_feature: str = "projection"):
    if tag.startswith("hash-"):
        try:
            return HashEncoder(int(tag.removeprefix("hash-")))
        except ValueError:
            raise ExportError(f"bad hash encoder tag {tag!r}") from None
    if tag in ClipEncoder.MODELS:
        return ClipEncoder(tag, text_feature)
    raise ExportError(f"unknown encoder tag {tag!r}")
