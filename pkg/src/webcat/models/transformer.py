"""BERTiny-shaped transformer encoder student, trained from scratch."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .. import tensor as T
from ..categories import NUM_CLASSES
from ..errors import SequenceTooLong
from ..tokenize import MAX_LEN


@dataclass(frozen=True)
class TinyTransformerConfig:
    vocab_size: int
    hidden: int = 128
    layers: int = 2
    heads: int = 2
    intermediate: int = 512
    max_positions: int = 512
    dropout: float = 0.1
    attention_dropout: float = 0.1
    activation: str = "gelu"
    num_classes: int = NUM_CLASSES
    max_len: int = MAX_LEN

    def __post_init__(self):
        if self.hidden % self.heads:
            raise ValueError("hidden size must be divisible by the head count")
        if self.max_len > self.max_positions:
            raise ValueError("max_len exceeds max_positions")
        if self.activation != "gelu":
            raise ValueError("only gelu is supported")
        if self.num_classes != NUM_CLASSES:
            raise ValueError("the classifier head must emit 30 logits")

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        h, i = self.hidden, self.intermediate
        shapes: dict[str, tuple[int, ...]] = {
            "tok_embed": (self.vocab_size, h),
            "pos_embed": (self.max_positions, h),
            "embed_ln.g": (h,),
            "embed_ln.b": (h,),
        }
        for n in range(self.layers):
            p = f"layer{n}"
            for proj in ("q", "k", "v", "o"):
                shapes[f"{p}.attn.{proj}.w"] = (h, h)
                shapes[f"{p}.attn.{proj}.b"] = (h,)
            shapes[f"{p}.ln1.g"] = (h,)
            shapes[f"{p}.ln1.b"] = (h,)
            shapes[f"{p}.ffn.in.w"] = (h, i)
            shapes[f"{p}.ffn.in.b"] = (i,)
            shapes[f"{p}.ffn.out.w"] = (i, h)
            shapes[f"{p}.ffn.out.b"] = (h,)
            shapes[f"{p}.ln2.g"] = (h,)
            shapes[f"{p}.ln2.b"] = (h,)
        shapes["head.w"] = (h, self.num_classes)
        shapes["head.b"] = (self.num_classes,)
        return shapes

    def param_count(self) -> int:
        h, i, c = self.hidden, self.intermediate, self.num_classes
        per_layer = 4 * (h * h + h) + (h * i + i) + (i * h + h) + 4 * h
        return (self.vocab_size + self.max_positions) * h + 2 * h + self.layers * per_layer + h * c + c


DropoutRng = Callable[[int], np.random.Generator]


def transformer_forward(
    config: TinyTransformerConfig,
    params: Mapping[str, T.Tensor],
    ids: np.ndarray,
    *,
    pad_id: int = 0,
    training: bool = False,
    rng_for: DropoutRng | None = None,
    attention_sink: list | None = None,
) -> T.Tensor:
    """Logits [B, 30] for a padded id batch [B, L] whose first column is CLS.

    ``rng_for(site)`` supplies the generator for dropout site ``site`` when
    training. Attention probabilities are appended to ``attention_sink``
    when given.
    """
    ids = np.asarray(ids)
    if ids.ndim == 1:
        ids = ids[None, :]
    bsz, length = ids.shape
    if length > config.max_len or length < 1:
        raise SequenceTooLong(f"sequence length {length} outside [1, {config.max_len}]")
    key_mask = ids != pad_id
    site = iter(range(1 << 30))

    def drop(x: T.Tensor, p: float) -> T.Tensor:
        n = next(site)
        return T.dropout(x, p, rng_for(n) if training else None, training)

    positions = np.broadcast_to(np.arange(length), (bsz, length))
    x = T.add(T.embed_lookup(params["tok_embed"], ids), T.embed_lookup(params["pos_embed"], positions))
    x = drop(T.layer_norm(x, params["embed_ln.g"], params["embed_ln.b"]), config.dropout)
    for n in range(config.layers):
        p = f"layer{n}."
        q = T.dense(x, params[p + "attn.q.w"], params[p + "attn.q.b"])
        k = T.dense(x, params[p + "attn.k.w"], params[p + "attn.k.b"])
        v = T.dense(x, params[p + "attn.v.w"], params[p + "attn.v.b"])
        att_drop = None
        site_id = next(site)
        if training and config.attention_dropout > 0:
            att_drop = T.dropout_mask(
                (bsz, config.heads, length, length), config.attention_dropout, rng_for(site_id), x.dtype
            )
        ctx, probs = T.scaled_dot_attention(q, k, v, config.heads, key_mask, att_drop)
        if attention_sink is not None:
            attention_sink.append(probs)
        a = drop(T.dense(ctx, params[p + "attn.o.w"], params[p + "attn.o.b"]), config.dropout)
        x = T.layer_norm(T.add(x, a), params[p + "ln1.g"], params[p + "ln1.b"])
        f = T.gelu(T.dense(x, params[p + "ffn.in.w"], params[p + "ffn.in.b"]))
        f = drop(T.dense(f, params[p + "ffn.out.w"], params[p + "ffn.out.b"]), config.dropout)
        x = T.layer_norm(T.add(x, f), params[p + "ln2.g"], params[p + "ln2.b"])
    cls = drop(T.select_first(x), config.dropout)
    return T.dense(cls, params["head.w"], params["head.b"])
