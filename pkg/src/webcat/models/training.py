"""Mini-batch Adam training with early stopping on validation accuracy."""

from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .. import tensor as T
from ..corpus import UrlRecord
from ..errors import EmptyDataset
from ..tokenize import CharVocab, SubwordVocab
from .expose import ExposeConfig
from .student import EXPOSE, TRANSFORMER, StudentModel, init_params
from .transformer import TinyTransformerConfig

log = logging.getLogger(__name__)


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val_accuracy: float = float("-inf")
    seconds: float = 0.0


def data_hash(records: Sequence[UrlRecord]) -> str:
    h = hashlib.sha256()
    for r in records:
        h.update(r.normalized_url.encode("utf-8"))
        h.update(b"\t")
        h.update((r.label.text if r.label else "").encode())
        h.update(b"\n")
    return h.hexdigest()


def dropout_generator(seed: int, step: int, site: int) -> np.random.Generator:
    """Counter-based stream keyed by (seed, step, site)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, step, site])))


def default_config(kind: str, tokenizer):
    if kind == EXPOSE:
        return ExposeConfig(vocab_chars=len(tokenizer.chars))
    if kind == TRANSFORMER:
        return TinyTransformerConfig(vocab_size=tokenizer.size)
    raise ValueError(f"unknown model kind {kind!r}")


def accuracy(model: StudentModel, encoded, truth: np.ndarray, batch_size: int = 512) -> float:
    if len(truth) == 0:
        return 0.0
    pred = model.logits_for_encoded(encoded, batch_size).argmax(axis=1)
    return float((pred == truth).mean())


def train(
    kind: str,
    train_records: Sequence[UrlRecord],
    validation_records: Sequence[UrlRecord] = (),
    *,
    tokenizer: CharVocab | SubwordVocab,
    config: ExposeConfig | TinyTransformerConfig | None = None,
    epochs: int = 20,
    batch_size: int = 256,
    learning_rate: float = 1e-3,
    seed: int = 0,
    patience: int | None = 3,
    dtype=np.float32,
) -> tuple[StudentModel, TrainHistory]:
    """Fit a student by minimizing mean cross-entropy with Adam.

    Training targets come only from ``label``; validation scores use
    ``truth``. With a validation set, the parameters of the best epoch are
    returned (a later epoch must strictly improve to replace it) and
    training stops after ``patience`` epochs without improvement.
    """
    records = [r for r in train_records if r.label is not None]
    if not records:
        raise EmptyDataset("no labeled training records")
    config = config or default_config(kind, tokenizer)
    model = StudentModel(kind, config, init_params(config, seed, dtype), tokenizer)
    params = {k: T.Tensor(v, requires_grad=True, name=k) for k, v in model.params.items()}
    model.params = {k: p.data for k, p in params.items()}
    adam = T.AdamState(params, learning_rate=learning_rate)

    encoded = model.encode([r.normalized_url for r in records])
    targets = np.array([r.label.index for r in records], dtype=np.int64)
    val = [r for r in validation_records if r.truth is not None]
    val_encoded = model.encode([r.normalized_url for r in val]) if val else None
    val_truth = np.array([r.truth.index for r in val], dtype=np.int64)

    history = TrainHistory()
    best = None
    stale = 0
    step = 0
    started = time.perf_counter()
    for epoch in range(epochs):
        order = np.random.default_rng([seed, epoch]).permutation(len(records))
        losses = []
        for start in range(0, len(order), batch_size):
            rows = order[start : start + batch_size]
            ids = model.batch_ids(encoded, rows)
            logits = model.forward(params, ids, training=True, rng_for=lambda site: dropout_generator(seed, step, site))
            loss = T.cross_entropy_loss(logits, targets[rows])
            T.zero_grad(params.values())
            T.backward(loss)
            T.adam_step(adam, params, {k: p.grad for k, p in params.items() if p.grad is not None})
            losses.append(float(loss.data))
            step += 1
        history.train_loss.append(float(np.mean(losses)))
        if val:
            acc = accuracy(model, val_encoded, val_truth)
            history.val_accuracy.append(acc)
            log.info("epoch %d loss %.4f val_acc %.4f", epoch, history.train_loss[-1], acc)
            if acc > history.best_val_accuracy:
                history.best_val_accuracy = acc
                history.best_epoch = epoch
                best = {k: v.copy() for k, v in model.params.items()}
                stale = 0
            else:
                stale += 1
                if patience is not None and stale >= patience:
                    break
        else:
            history.best_epoch = epoch
    history.seconds = time.perf_counter() - started

    final = best if best is not None else {k: v.copy() for k, v in model.params.items()}
    trained = StudentModel(
        kind,
        config,
        final,
        tokenizer,
        provenance={
            "seed": seed,
            "data_sha256": data_hash(records),
            "epochs_run": len(history.train_loss),
            "best_epoch": history.best_epoch,
            "best_val_accuracy": None if not val else history.best_val_accuracy,
            "learning_rate": learning_rate,
            "batch_size": batch_size,
            "train_size": len(records),
        },
    )
    return trained, history
