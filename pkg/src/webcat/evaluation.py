"""Classification metrics with the OOV rule, confusion matrices, and token drift."""

from __future__ import annotations

import csv
import json
import math
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .categories import NUM_CLASSES, OOV, Category
from .errors import EmptyInput, LengthMismatch
from .tokenize import SubwordVocab, TokenHistogram, content_tokens, token_histogram

DEFAULT_KL_EPS = 1e-9


@dataclass(frozen=True)
class ClassMetrics:
    category: Category
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class EvalReport:
    accuracy: float
    macro_f1: float
    macro_recall: float
    macro_precision: float
    weighted_f1: float
    weighted_recall: float
    weighted_precision: float
    per_class: list[ClassMetrics]
    confusion: np.ndarray  # [30 true, 31 predicted]; last column is OOV
    metadata: dict = field(default_factory=dict)

    @property
    def sample_count(self) -> int:
        return int(self.confusion.sum())

    def summary(self) -> dict[str, float]:
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "macro_recall": self.macro_recall,
            "macro_precision": self.macro_precision,
            "weighted_f1": self.weighted_f1,
            "weighted_recall": self.weighted_recall,
            "weighted_precision": self.weighted_precision,
        }

    def to_json(self) -> dict:
        return {
            **self.summary(),
            "sample_count": self.sample_count,
            "per_class": [
                {"category": c.category.text, "precision": c.precision, "recall": c.recall, "f1": c.f1, "support": c.support}
                for c in self.per_class
            ],
            "confusion": {
                "rows": [c.text for c in Category],
                "columns": [c.text for c in Category] + [OOV.text],
                "counts": self.confusion.tolist(),
            },
            "metadata": self.metadata,
        }

    def write(self, json_path: str | Path, csv_path: str | Path | None = None) -> None:
        Path(json_path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        if csv_path is not None:
            with Path(csv_path).open("w", encoding="utf-8", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["category", "precision", "recall", "f1", "support"])
                for c in self.per_class:
                    w.writerow([c.category.text, repr(c.precision), repr(c.recall), repr(c.f1), c.support])


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def _validate(truth: Sequence, predicted: Sequence) -> None:
    if len(truth) != len(predicted):
        raise LengthMismatch(f"{len(truth)} truths vs {len(predicted)} predictions")
    if not truth:
        raise EmptyInput("no samples to score")


def _confusion_counts(truth: Sequence[Category], predicted: Sequence) -> np.ndarray:
    t = np.fromiter((c.index for c in truth), dtype=np.int64, count=len(truth))
    if np.any(t >= NUM_CLASSES):
        raise ValueError("OOV is not a valid ground-truth label")
    p = np.fromiter((c.index for c in predicted), dtype=np.int64, count=len(predicted))
    m = np.zeros((NUM_CLASSES, NUM_CLASSES + 1), dtype=np.int64)
    np.add.at(m, (t, p), 1)
    return m


def compute_metrics(truth: Sequence[Category], predicted: Sequence, metadata: Mapping | None = None) -> EvalReport:
    """Score predictions over the 30 classes.

    An OOV prediction is a false negative for its true class and a false
    positive for no class. Precision of a never-predicted class is 0; macro
    averages run over all 30 classes, weighted ones by support. Sums are
    exactly rounded (``math.fsum``) so results do not depend on order.
    """
    _validate(truth, predicted)
    m = _confusion_counts(truth, predicted)
    total = int(m.sum())
    tp = np.diag(m[:, :NUM_CLASSES])
    predicted_as = m[:, :NUM_CLASSES].sum(axis=0)
    support = m.sum(axis=1)
    per_class = []
    for i, cat in enumerate(Category):
        prec = _ratio(int(tp[i]), int(predicted_as[i]))
        rec = _ratio(int(tp[i]), int(support[i]))
        f1 = 2 * prec * rec / (prec + rec) if prec + rec > 0 else 0.0
        per_class.append(ClassMetrics(cat, prec, rec, f1, int(support[i])))
    macro = {k: math.fsum(getattr(c, k) for c in per_class) / NUM_CLASSES for k in ("precision", "recall", "f1")}
    weighted = {k: math.fsum(c.support * getattr(c, k) for c in per_class) / total for k in ("precision", "recall", "f1")}
    return EvalReport(
        accuracy=int(tp.sum()) / total,
        macro_f1=macro["f1"],
        macro_recall=macro["recall"],
        macro_precision=macro["precision"],
        weighted_f1=weighted["f1"],
        weighted_recall=weighted["recall"],
        weighted_precision=weighted["precision"],
        per_class=per_class,
        confusion=m,
        metadata=dict(metadata or {}),
    )


def confusion_matrix(truth: Sequence[Category], predicted: Sequence, normalize: str | None = None) -> np.ndarray:
    """[30, 31] counts, or row-normalized rates with ``normalize="true"``."""
    _validate(truth, predicted)
    m = _confusion_counts(truth, predicted)
    if normalize is None:
        return m
    if normalize != "true":
        raise ValueError(f"unknown normalization {normalize!r}")
    rows = m.sum(axis=1, keepdims=True)
    return np.divide(m, rows, out=np.zeros(m.shape, dtype=np.float64), where=rows > 0)


# ---------------------------------------------------------------------------
# drift


def kl_divergence(p: TokenHistogram | Mapping[int, float], q: TokenHistogram | Mapping[int, float], eps: float = DEFAULT_KL_EPS) -> float:
    """Natural-log D(p || q~), with q~ the reference smoothed by +eps over the
    union of both supports and renormalized."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    pp = p.probs if isinstance(p, TokenHistogram) else p
    qq = q.probs if isinstance(q, TokenHistogram) else q
    union = len(qq) + sum(1 for t in pp if t not in qq)
    z = math.fsum(qq.values()) + eps * union
    terms = []
    for t, pt in pp.items():
        if pt > 0:
            terms.append(pt * math.log(pt * z / (qq.get(t, 0.0) + eps)))
    return max(math.fsum(terms), 0.0)


@dataclass
class DriftReport:
    values: list[float]
    mean: float
    median: float
    density: list[float]
    bin_edges: list[float]
    skipped: int = 0
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "mean": self.mean,
            "median": self.median,
            "density": self.density,
            "bin_edges": self.bin_edges,
            "skipped": self.skipped,
            "count": len(self.values),
            "metadata": self.metadata,
        }


def drift_report(
    vocab: SubwordVocab,
    reference_urls: Sequence[str],
    probe_urls: Sequence[str],
    eps: float = DEFAULT_KL_EPS,
    bins: int = 50,
) -> DriftReport:
    """Per-URL KL divergence of each probe's token histogram from the
    pooled reference histogram.

    Probes that emit no content tokens are counted in ``skipped``.
    """
    if not reference_urls or not probe_urls:
        raise EmptyInput("drift needs reference and probe urls")
    ref = token_histogram(vocab, reference_urls)
    values, skipped = [], 0
    for url in probe_urls:
        toks = content_tokens(vocab, url)
        if not toks:
            skipped += 1
            continue
        counts: dict[int, int] = {}
        for t in toks:
            counts[t] = counts.get(t, 0) + 1
        values.append(kl_divergence(TokenHistogram.from_counts(counts), ref, eps))
    if values:
        density, edges = np.histogram(values, bins=bins, density=True)
        mean, median = float(np.mean(values)), float(statistics.median(values))
    else:
        density, edges, mean, median = np.zeros(0), np.zeros(0), 0.0, 0.0
    return DriftReport(
        values=values,
        mean=mean,
        median=median,
        density=density.tolist(),
        bin_edges=edges.tolist(),
        skipped=skipped,
        metadata={"log_base": "e", "smoothing_eps": eps, "reference_size": len(reference_urls), "vocab_sha256": vocab.digest()},
    )


def write_drift_csv(report: DriftReport, probe_urls: Sequence[str], path: str | Path, vocab: SubwordVocab) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["url", "kl"])
        it = iter(report.values)
        for url in probe_urls:
            if content_tokens(vocab, url):
                w.writerow([url, repr(next(it))])
