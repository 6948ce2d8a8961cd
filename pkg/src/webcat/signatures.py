"""Analyst signature store: domain and URL-prefix rules with label propagation."""

from __future__ import annotations

import enum
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .categories import Category, parse_category
from .corpus import CorpusStats, LabelSource, UrlRecord, normalize_url
from .errors import ParseError, UnknownCategory


class MatchKind(enum.Enum):
    PREFIX = "Prefix"
    DOMAIN = "Domain"


@dataclass(frozen=True)
class SignatureDb:
    domain_rules: Mapping[str, Category] = field(default_factory=dict)
    prefix_rules: Mapping[str, Category] = field(default_factory=dict)

    def __post_init__(self):
        # keys are canonicalised once so lookups stay plain dict probes
        object.__setattr__(self, "domain_rules", {d.lower().strip("."): c for d, c in self.domain_rules.items()})
        prefixes = {}
        for p, c in self.prefix_rules.items():
            norm = normalize_url(p)
            host, sep, rest = norm.partition("/")
            prefixes[host.lower() + sep + rest] = c
        object.__setattr__(self, "prefix_rules", dict(sorted(prefixes.items())))
        object.__setattr__(self, "_prefix_lengths", sorted({len(p) for p in prefixes}, reverse=True))

    def __len__(self) -> int:
        return len(self.domain_rules) + len(self.prefix_rules)

    @classmethod
    def from_labeled_records(cls, records: Iterable[UrlRecord]) -> SignatureDb:
        """Domain rules from signature-labeled records (majority label per domain)."""
        votes: dict[str, Counter] = {}
        for r in records:
            if r.label is not None and r.label_source is LabelSource.SIGNATURE:
                votes.setdefault(r.domain, Counter())[r.label] += 1
        rules = {d: min(c.items(), key=lambda kv: (-kv[1], kv[0].index))[0] for d, c in votes.items()}
        return cls(domain_rules=rules)


def lookup(db: SignatureDb, normalized_url: str) -> tuple[Category, MatchKind] | None:
    """Resolve a URL against the rules.

    Precedence: longest matching prefix rule, then the exact host, then the
    closest parent domain (``a.b.example.com`` inherits ``example.com``).
    """
    host, sep, rest = normalized_url.partition("/")
    host = host.lower()
    if db.prefix_rules:
        url = host + sep + rest
        for n in db._prefix_lengths:
            if n <= len(url):
                cat = db.prefix_rules.get(url[:n])
                if cat is not None:
                    return cat, MatchKind.PREFIX
    if db.domain_rules:
        labels = host.split(".")
        for i in range(len(labels)):
            cat = db.domain_rules.get(".".join(labels[i:]))
            if cat is not None:
                return cat, MatchKind.DOMAIN
    return None


def apply_signatures(db: SignatureDb, records: Sequence[UrlRecord]) -> tuple[list[UrlRecord], list[UrlRecord]]:
    labeled, unlabeled = [], []
    for r in records:
        hit = lookup(db, r.normalized_url)
        if hit is None:
            unlabeled.append(r)
        else:
            labeled.append(r.with_label(hit[0], LabelSource.SIGNATURE))
    return labeled, unlabeled


def load_signatures(path: str | Path) -> SignatureDb:
    """Read a ``pattern<TAB>CATEGORY`` file; patterns containing "/" are prefixes."""
    domains: dict[str, Category] = {}
    prefixes: dict[str, Category] = {}
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.rstrip("\r\n")
            if not text.strip() or text.lstrip().startswith("#"):
                continue
            parts = text.split("\t")
            if len(parts) != 2 or not parts[0].strip():
                raise ParseError("expected pattern<TAB>category", lineno)
            pattern, cat_text = parts[0].strip(), parts[1]
            cat = parse_category(cat_text)
            if cat is None:
                raise UnknownCategory(f"line {lineno}: unknown category {cat_text!r}")
            target = prefixes if "/" in pattern else domains
            key = pattern if "/" in pattern else pattern.lower()
            if key in target:
                raise ParseError(f"duplicate pattern {pattern!r}", lineno)
            target[key] = cat
    return SignatureDb(domain_rules=domains, prefix_rules=prefixes)


def save_signatures(db: SignatureDb, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("# pattern\tcategory\n")
        for d in sorted(db.domain_rules):
            fh.write(f"{d}\t{db.domain_rules[d].text}\n")
        for p, c in db.prefix_rules.items():
            fh.write(f"{p}\t{c.text}\n")


@dataclass(frozen=True)
class CoverageBin:
    low: float  # inclusive frequency bound
    high: float  # exclusive
    exponent: int
    labeled_proportion: float
    domain_count: int


@dataclass(frozen=True)
class CoverageReport:
    bin_base: float
    bins: list[CoverageBin]


def coverage_by_popularity(db: SignatureDb, stats: CorpusStats, bin_base: float = 10.0) -> CoverageReport:
    """Share of signature-covered domains per log-scale popularity bin.

    Every exponent between the least and most popular domain gets a bin, so
    the bins tile the observed frequency range; empty bins report 0 domains.
    """
    if bin_base <= 1:
        raise ValueError("bin_base must exceed 1")
    if not stats.domain_frequency:
        raise ValueError("coverage needs non-empty corpus stats")
    totals: Counter = Counter()
    labeled: Counter = Counter()
    for domain, freq in stats.domain_frequency.items():
        k = _log_floor(freq, bin_base)
        totals[k] += 1
        if lookup(db, domain) is not None:
            labeled[k] += 1
    bins = []
    for k in range(min(totals), max(totals) + 1):
        n = totals.get(k, 0)
        bins.append(CoverageBin(bin_base**k, bin_base ** (k + 1), k, labeled[k] / n if n else 0.0, n))
    return CoverageReport(bin_base, bins)


def _log_floor(n: int, base: float) -> int:
    k = math.floor(math.log(n, base))
    # guard float error at exact powers
    while base ** (k + 1) <= n:
        k += 1
    while base**k > n:
        k -= 1
    return k


def lookup_url(db: SignatureDb, url: str) -> tuple[Category, MatchKind] | None:
    """Normalize ``url`` first, then :func:`lookup`."""
    return lookup(db, normalize_url(url))


__all__ = [
    "CoverageBin",
    "CoverageReport",
    "MatchKind",
    "SignatureDb",
    "apply_signatures",
    "coverage_by_popularity",
    "load_signatures",
    "lookup",
    "lookup_url",
    "save_signatures",
]
