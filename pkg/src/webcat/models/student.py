"""A trained student bound to its tokenizer, with batched prediction."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .. import tensor as T
from ..categories import Category
from ..corpus import normalize_url
from ..tokenize import CharVocab, SubwordVocab, encode_chars_batch, encode_subwords, pad_batch
from .expose import ExposeConfig, expose_forward
from .transformer import TinyTransformerConfig, transformer_forward

EXPOSE = "expose"
TRANSFORMER = "transformer"
INIT_STD = 0.02


def init_params(config, seed: int, dtype=np.float32) -> dict[str, np.ndarray]:
    """Normal(0, 0.02) weights and embeddings, zero biases, unit layer-norm gains."""
    rng = np.random.default_rng(seed)
    out = {}
    for name, shape in config.param_shapes().items():
        if name.endswith(".g"):
            out[name] = np.ones(shape, dtype=dtype)
        elif name.endswith(".b"):
            out[name] = np.zeros(shape, dtype=dtype)
        else:
            out[name] = (rng.standard_normal(shape) * INIT_STD).astype(dtype)
    return out


@dataclass
class StudentModel:
    kind: str
    config: ExposeConfig | TinyTransformerConfig
    params: dict[str, np.ndarray]
    tokenizer: CharVocab | SubwordVocab
    provenance: dict = field(default_factory=dict)

    @property
    def model_id(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name]).tobytes())
        return f"{self.kind}-{h.hexdigest()[:12]}"

    def param_count(self) -> int:
        return sum(int(p.size) for p in self.params.values())

    def encode(self, urls: Sequence[str]) -> list[np.ndarray] | np.ndarray:
        if self.kind == EXPOSE:
            return encode_chars_batch(self.tokenizer, urls)
        return [np.asarray(encode_subwords(self.tokenizer, u), dtype=np.int64) for u in urls]

    def batch_ids(self, encoded, rows: Sequence[int] | slice) -> np.ndarray:
        if self.kind == EXPOSE:
            return encoded[rows]
        seqs = encoded[rows] if isinstance(rows, slice) else [encoded[i] for i in rows]
        return pad_batch(seqs, self.tokenizer.pad_id)

    def forward(self, params: Mapping[str, T.Tensor], ids: np.ndarray, *, training=False, rng_for=None) -> T.Tensor:
        if self.kind == EXPOSE:
            rng = rng_for(0) if training else None
            return expose_forward(self.config, params, ids, training=training, rng=rng)
        return transformer_forward(
            self.config, params, ids, pad_id=self.tokenizer.pad_id, training=training, rng_for=rng_for
        )

    def frozen_params(self) -> dict[str, T.Tensor]:
        return {k: T.Tensor(v) for k, v in self.params.items()}

    def logits_for_encoded(self, encoded, batch_size: int = 256) -> np.ndarray:
        params = self.frozen_params()
        n = len(encoded)
        out = np.zeros((n, self.config.num_classes), dtype=np.float32)
        for start in range(0, n, batch_size):
            rows = slice(start, min(n, start + batch_size))
            out[rows] = self.forward(params, self.batch_ids(encoded, rows)).data
        return out

    def logits(self, urls: Sequence[str], batch_size: int = 256) -> np.ndarray:
        return self.logits_for_encoded(self.encode([normalize_url(u) for u in urls]), batch_size)


def predict(model: StudentModel, urls: Sequence[str], batch_size: int = 256) -> list[tuple[Category, np.ndarray]]:
    """Argmax category and logit row per URL, in input order.

    ``np.argmax`` returns the first maximum, so ties go to the lowest
    category index.
    """
    if not urls:
        return []
    logits = model.logits(urls, batch_size)
    idx = logits.argmax(axis=1)
    return [(Category.from_index(int(i)), row) for i, row in zip(idx, logits)]
