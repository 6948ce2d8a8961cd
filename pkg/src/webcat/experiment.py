"""End-to-end synthetic long-tail experiment.

Generates a corpus, builds both split kinds over the same time windows,
labels the training window's unlabeled pool with a noisy keyword teacher,
trains one student per mixing ratio, and measures accuracy, token drift and
the gap between the two test partitions.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from datetime import timedelta
from typing import Sequence

from .categories import parse_prediction
from .corpus import DEFAULT_KEYWORDS, SyntheticSpec, UrlRecord, generate_synthetic
from .distill import LocalOracle, RatioResult, distillation_run, label_unlabeled
from .evaluation import DriftReport, EvalReport, compute_metrics, drift_report
from .models import TRANSFORMER, predict
from .splits import DatasetSplit, SplitConfig, SplitMode, build_split
from .tokenize import CharVocab, train_subword_vocab

log = logging.getLogger(__name__)


def window_config(
    records: Sequence[UrlRecord],
    mode: SplitMode,
    train_fraction: float = 0.6,
    val_fraction: float = 0.2,
    max_urls_per_domain: int = 5,
) -> SplitConfig:
    """Split boundaries at fixed fractions of the corpus time span."""
    if not records:
        raise ValueError("no records")
    lo = min(r.url_first_seen for r in records)
    hi = max(r.url_first_seen for r in records)
    span = hi - lo
    return SplitConfig(
        train_end=lo + span * train_fraction,
        val_end=lo + span * (train_fraction + val_fraction),
        test_end=hi + timedelta(microseconds=1),
        mode=mode,
        max_urls_per_domain=max_urls_per_domain,
    )


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    n_records: int = 50_000
    head_domain_count: int = 25
    tail_domain_count: int = 100_000
    keywordless_fraction: float = 0.1
    teacher_noise: float = 0.05
    student: str = TRANSFORMER
    vocab_size: int = 8192
    ratios: tuple[float, ...] = (0.0, 1.0)
    mix_total: int | None = 5000
    epochs: int = 8
    patience: int = 2
    batch_size: int = 256
    learning_rate: float = 1e-3


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    domain_time: DatasetSplit
    time_split: DatasetSplit
    teacher_report: EvalReport
    ratios: list[RatioResult]
    drift_domain_time: DriftReport
    drift_time: DriftReport
    gap_reports: dict[str, EvalReport] = field(default_factory=dict)
    seconds: dict[str, float] = field(default_factory=dict)

    def accuracy_at(self, ratio: float) -> float:
        return next(r.report.accuracy for r in self.ratios if r.ratio == ratio)


def synthetic_corpus(cfg: ExperimentConfig) -> list[UrlRecord]:
    return generate_synthetic(
        SyntheticSpec(
            category_keyword_map=DEFAULT_KEYWORDS,
            head_domain_count=cfg.head_domain_count,
            tail_domain_count=cfg.tail_domain_count,
            keywordless_fraction=cfg.keywordless_fraction,
            seed=cfg.seed,
            n_records=cfg.n_records,
        )
    )


def teacher_report(teacher: LocalOracle, records: Sequence[UrlRecord]) -> EvalReport:
    """Score the teacher's own answers; OOV answers count as errors."""
    answers = teacher.label([r.normalized_url for r in records])
    return compute_metrics([r.truth for r in records], [parse_prediction(raw) for raw, _ in answers])


def run_experiment(cfg: ExperimentConfig, *, drift_only: bool = False) -> ExperimentResult:
    clock = {}
    t0 = time.perf_counter()
    records = synthetic_corpus(cfg)
    dt = build_split(records, window_config(records, SplitMode.DOMAIN_AND_TIME))
    ts = build_split(records, window_config(records, SplitMode.TIME))
    clock["corpus_and_splits"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    train_urls = [r.normalized_url for r in dt.train]
    vocab = train_subword_vocab(train_urls, cfg.vocab_size)
    drift_dt = drift_report(vocab, train_urls, [r.normalized_url for r in dt.test])
    drift_ts = drift_report(vocab, train_urls, [r.normalized_url for r in ts.test])
    clock["vocab_and_drift"] = time.perf_counter() - t0

    teacher = LocalOracle(DEFAULT_KEYWORDS, cfg.teacher_noise, cfg.seed)
    t_report = teacher_report(teacher, dt.test)
    result = ExperimentResult(cfg, dt, ts, t_report, [], drift_dt, drift_ts, seconds=clock)
    if drift_only:
        return result

    t0 = time.perf_counter()
    base = [r for r in dt.train if r.label is not None]
    pool = [r for r in dt.train if r.label is None]
    labels = label_unlabeled(teacher, pool)
    tokenizer = vocab if cfg.student == TRANSFORMER else CharVocab()
    result.ratios = distillation_run(
        labels,
        base,
        pool,
        cfg.student,
        list(cfg.ratios),
        dt,
        tokenizer=tokenizer,
        total=cfg.mix_total,
        seed=cfg.seed,
        epochs=cfg.epochs,
        patience=cfg.patience,
        batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate,
    )
    clock["distillation"] = time.perf_counter() - t0

    # the signature-only student, scored on both test partitions
    if result.ratios:
        student = min(result.ratios, key=lambda r: r.ratio).model
        for name, split in (("time", ts), ("domain-and-time", dt)):
            pred = [c for c, _ in predict(student, [r.normalized_url for r in split.test])]
            result.gap_reports[name] = compute_metrics([r.truth for r in split.test], pred, {"model_id": student.model_id, "split": name})
    return result
