"""Character-level CNN student in the eXpose style."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .. import tensor as T
from ..categories import NUM_CLASSES
from ..errors import ShapeMismatch
from ..tokenize import MAX_LEN


@dataclass(frozen=True)
class ExposeConfig:
    vocab_chars: int = 76
    embed_dim: int = 32
    filters: int = 128
    kernel_widths: tuple[int, ...] = (2, 3, 4, 5)
    dropout: float = 0.05
    num_classes: int = NUM_CLASSES
    max_len: int = MAX_LEN

    def __post_init__(self):
        object.__setattr__(self, "kernel_widths", tuple(self.kernel_widths))
        if self.num_classes != NUM_CLASSES:
            raise ValueError("the classifier head must emit 30 logits")
        if min(self.vocab_chars, self.embed_dim, self.filters, self.max_len, *self.kernel_widths) <= 0:
            raise ValueError("all sizes must be positive")

    @property
    def pooled_dim(self) -> int:
        return self.filters * len(self.kernel_widths)

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes: dict[str, tuple[int, ...]] = {"embed": (self.vocab_chars + 2, self.embed_dim)}
        for k in self.kernel_widths:
            shapes[f"conv{k}.w"] = (k, self.embed_dim, self.filters)
            shapes[f"conv{k}.b"] = (self.filters,)
        shapes["head.w"] = (self.pooled_dim, self.num_classes)
        shapes["head.b"] = (self.num_classes,)
        return shapes

    def param_count(self) -> int:
        e, f, c = self.embed_dim, self.filters, self.num_classes
        convs = sum(k * e * f + f for k in self.kernel_widths)
        return (self.vocab_chars + 2) * e + convs + self.pooled_dim * c + c


def expose_features(config: ExposeConfig, params: Mapping[str, T.Tensor], ids: np.ndarray) -> T.Tensor:
    """Pooled convolutional features, [B, filters * len(kernel_widths)]."""
    ids = np.asarray(ids)
    if ids.ndim == 1:
        ids = ids[None, :]
    if ids.shape[1] != config.max_len:
        raise ShapeMismatch(f"expose expects {config.max_len} character ids per row, got {ids.shape[1]}")
    x = T.embed_lookup(params["embed"], ids)
    pooled = []
    for k in config.kernel_widths:
        h = T.relu(T.conv1d(x, params[f"conv{k}.w"], params[f"conv{k}.b"]))
        pooled.append(T.max_pool_over_time(h))
    return T.concat(pooled, axis=-1)


def expose_forward(
    config: ExposeConfig,
    params: Mapping[str, T.Tensor],
    ids: np.ndarray,
    *,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> T.Tensor:
    feats = expose_features(config, params, ids)
    feats = T.dropout(feats, config.dropout, rng, training)
    return T.dense(feats, params["head.w"], params["head.b"])
