"""Time and domain-and-time evaluation splits, plus the sample-size schedule."""

from __future__ import annotations

import enum
import json
import random
from collections import defaultdict
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Sequence

from .categories import Category
from .corpus import UrlRecord, corpus_stats, format_timestamp, load_corpus, parse_timestamp, write_corpus
from .errors import EmptyWindow

PARTITIONS = ("train", "validation", "test")


class SplitMode(enum.Enum):
    TIME = "time"
    DOMAIN_AND_TIME = "domain-and-time"


@dataclass(frozen=True)
class SplitConfig:
    train_end: datetime
    val_end: datetime
    test_end: datetime
    mode: SplitMode = SplitMode.DOMAIN_AND_TIME
    max_urls_per_domain: int = 5

    def __post_init__(self):
        if not self.train_end < self.val_end < self.test_end:
            raise ValueError("split boundaries must satisfy train_end < val_end < test_end")
        if self.max_urls_per_domain < 1:
            raise ValueError("max_urls_per_domain must be at least 1")

    def window(self, ts: datetime) -> int | None:
        """Index of the half-open window containing ``ts``; None past test_end."""
        if ts < self.train_end:
            return 0
        if ts < self.val_end:
            return 1
        if ts < self.test_end:
            return 2
        return None

    def to_json(self) -> dict:
        return {
            "train_end": format_timestamp(self.train_end),
            "val_end": format_timestamp(self.val_end),
            "test_end": format_timestamp(self.test_end),
            "mode": self.mode.value,
            "max_urls_per_domain": self.max_urls_per_domain,
        }

    @classmethod
    def from_json(cls, data: dict) -> SplitConfig:
        return cls(
            train_end=parse_timestamp(data["train_end"]),
            val_end=parse_timestamp(data["val_end"]),
            test_end=parse_timestamp(data["test_end"]),
            mode=SplitMode(data.get("mode", "domain-and-time")),
            max_urls_per_domain=int(data.get("max_urls_per_domain", 5)),
        )


@dataclass(frozen=True)
class DatasetSplit:
    train: list[UrlRecord]
    validation: list[UrlRecord]
    test: list[UrlRecord]
    provenance: SplitConfig

    def partitions(self) -> dict[str, list[UrlRecord]]:
        return {"train": self.train, "validation": self.validation, "test": self.test}


def _cap_earliest(records: list[UrlRecord], cap: int) -> list[UrlRecord]:
    by_domain: dict[str, list[UrlRecord]] = defaultdict(list)
    for r in records:
        by_domain[r.domain].append(r)
    keep = set()
    for rs in by_domain.values():
        rs.sort(key=lambda r: (r.url_first_seen, r.normalized_url))
        keep.update(id(r) for r in rs[:cap])
    return [r for r in records if id(r) in keep]


def build_split(records: Sequence[UrlRecord], config: SplitConfig) -> DatasetSplit:
    """Partition records into train/validation/test windows.

    Time mode buckets by ``url_first_seen`` alone. Domain-and-time mode
    assigns each domain wholly to the window holding its ``domain_first_seen``,
    drops URLs observed in any other window, and keeps only the earliest
    ``max_urls_per_domain`` URLs per domain in validation and test.
    """
    parts: list[list[UrlRecord]] = [[], [], []]
    if config.mode is SplitMode.TIME:
        for r in records:
            w = config.window(r.url_first_seen)
            if w is not None:
                parts[w].append(r)
    else:
        for r in records:
            w = config.window(r.domain_first_seen)
            if w is not None and config.window(r.url_first_seen) == w:
                parts[w].append(r)
        parts[1] = _cap_earliest(parts[1], config.max_urls_per_domain)
        parts[2] = _cap_earliest(parts[2], config.max_urls_per_domain)
    for name, part in zip(PARTITIONS, parts):
        if not part:
            raise EmptyWindow(f"{name} partition is empty")
    return DatasetSplit(parts[0], parts[1], parts[2], config)


def sample_schedule(train: Sequence[UrlRecord], n: int, seed: int) -> list[UrlRecord]:
    """Draw min(n, available) records per category, uniformly without replacement.

    Output keeps the input's relative order.
    """
    by_cat: dict[Category, list[int]] = defaultdict(list)
    for i, r in enumerate(train):
        if r.label is None:
            raise ValueError(f"unlabeled record in schedule input: {r.normalized_url}")
        by_cat[r.label].append(i)
    rng = random.Random(seed)
    chosen: list[int] = []
    for cat in Category:
        idx = by_cat.get(cat, [])
        chosen.extend(idx if n >= len(idx) else rng.sample(idx, n))
    return [train[i] for i in sorted(chosen)]


def scaling_steps(total_max: int = 5_000_000, start_per_category: int = 10) -> list[int]:
    """Per-category targets growing tenfold from ``start_per_category`` up to ``total_max``."""
    steps = []
    n = start_per_category
    while n <= total_max:
        steps.append(n)
        n *= 10
    return steps


def split_frequency_report(split: DatasetSplit, top_k: int = 10) -> dict[str, list[tuple[str, float]]]:
    return {
        name: [(d, pct) for d, _, pct in corpus_stats(part, top_k).top_domains]
        for name, part in split.partitions().items()
    }


def write_split(split: DatasetSplit, out_dir: str | Path, *, seed: int | None = None, extra: dict | None = None) -> Path:
    """Emit ``train/validation/test.jsonl`` and a ``provenance.json`` sidecar."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, part in split.partitions().items():
        write_corpus(part, out / f"{name}.jsonl", "jsonl")
    prov = {"split_config": split.provenance.to_json(), "seed": seed, "counts": {k: len(v) for k, v in split.partitions().items()}}
    if extra:
        prov.update(extra)
    path = out / "provenance.json"
    path.write_text(json.dumps(prov, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_split(split_dir: str | Path) -> DatasetSplit:
    d = Path(split_dir)
    prov = json.loads((d / "provenance.json").read_text(encoding="utf-8"))
    parts = [load_corpus(d / f"{name}.jsonl", "jsonl") for name in PARTITIONS]
    return DatasetSplit(*parts, provenance=SplitConfig.from_json(prov["split_config"]))
