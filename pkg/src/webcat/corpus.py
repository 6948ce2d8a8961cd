"""URL telemetry records, dataset file I/O, and the synthetic long-tail corpus."""

from __future__ import annotations

import bisect
import csv
import enum
import json
import random
from collections import Counter
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .categories import Category, parse_category
from .errors import InvalidUrl, ParseError, UnknownCategory

MAX_URL_CHARS = 128
_SCHEMES = ("http://", "https://")


class LabelSource(enum.Enum):
    SIGNATURE = "signature"
    TEACHER = "teacher"
    MANUAL = "manual"
    NONE = "none"


@dataclass(frozen=True)
class UrlRecord:
    raw_url: str
    normalized_url: str
    domain: str
    url_first_seen: datetime
    domain_first_seen: datetime
    label: Category | None = None
    label_source: LabelSource = LabelSource.NONE
    # ground truth for evaluation only; training code never reads it
    hidden_label: Category | None = field(default=None, compare=False)

    def __post_init__(self):
        if (self.label is None) != (self.label_source is LabelSource.NONE):
            raise ValueError(f"label {self.label!r} inconsistent with source {self.label_source}")
        if self.domain_first_seen > self.url_first_seen:
            raise ValueError(f"domain first seen after url for {self.normalized_url!r}")

    @property
    def truth(self) -> Category | None:
        """Best available ground truth: the hidden label, else the visible one."""
        return self.hidden_label if self.hidden_label is not None else self.label

    def with_label(self, label: Category | None, source: LabelSource) -> UrlRecord:
        return replace(self, label=label, label_source=source)


def normalize_url(raw: str) -> str:
    """Strip the scheme, drop the query, and truncate to 128 characters."""
    if not raw:
        raise InvalidUrl("empty url")
    url = raw
    while url[:8].lower().startswith(_SCHEMES):
        url = url[url.index("//") + 2 :]
    url = url.split("?", 1)[0][:MAX_URL_CHARS]
    if not url:
        raise InvalidUrl(f"url {raw!r} is empty after normalization")
    return url


def extract_domain(normalized: str) -> str:
    return normalized.split("/", 1)[0].lower()


def make_record(
    raw_url: str,
    first_seen: datetime,
    *,
    label: Category | None = None,
    label_source: LabelSource | None = None,
    hidden_label: Category | None = None,
    domain_first_seen: datetime | None = None,
) -> UrlRecord:
    norm = normalize_url(raw_url)
    if label_source is None:
        label_source = LabelSource.NONE if label is None else LabelSource.MANUAL
    return UrlRecord(
        raw_url=raw_url,
        normalized_url=norm,
        domain=extract_domain(norm),
        url_first_seen=first_seen,
        domain_first_seen=first_seen if domain_first_seen is None else domain_first_seen,
        label=label,
        label_source=label_source,
        hidden_label=hidden_label,
    )


def with_domain_first_seen(records: Iterable[UrlRecord]) -> list[UrlRecord]:
    """Set each record's domain_first_seen to the earliest url_first_seen of its domain."""
    records = list(records)
    first: dict[str, datetime] = {}
    for r in records:
        cur = first.get(r.domain)
        if cur is None or r.url_first_seen < cur:
            first[r.domain] = r.url_first_seen
    return [replace(r, domain_first_seen=first[r.domain]) for r in records]


# ---------------------------------------------------------------------------
# file I/O


def parse_timestamp(text: str) -> datetime:
    text = text.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).isoformat().replace("+00:00", "Z")


def _category_field(row: Mapping, key: str, line: int) -> Category | None:
    text = row.get(key)
    if text is None or text == "":
        return None
    if not isinstance(text, str):
        raise ParseError(f"{key} must be text", line)
    cat = parse_category(text)
    if cat is None:
        raise UnknownCategory(f"line {line}: unknown category {text!r}")
    return cat


def _record_from_row(row: Mapping, line: int) -> tuple[UrlRecord, bool]:
    url = row.get("url")
    if not isinstance(url, str) or not url:
        raise ParseError("missing url", line)
    ts_text = row.get("first_seen")
    if not isinstance(ts_text, str) or not ts_text:
        raise ParseError("missing first_seen", line)
    try:
        ts = parse_timestamp(ts_text)
        dfs_text = row.get("domain_first_seen") or None
        dfs = parse_timestamp(dfs_text) if dfs_text else None
    except (ValueError, TypeError) as exc:
        raise ParseError(f"bad timestamp: {exc}", line) from None
    label = _category_field(row, "label", line)
    hidden = _category_field(row, "hidden_label", line)
    src_text = row.get("label_source") or None
    if src_text is None:
        source = None
    else:
        try:
            source = LabelSource(str(src_text).strip().lower())
        except ValueError:
            raise ParseError(f"unknown label_source {src_text!r}", line) from None
        if (source is LabelSource.NONE) != (label is None):
            raise ParseError(f"label_source {src_text!r} inconsistent with label", line)
    if dfs is not None and dfs > ts:
        raise ParseError("domain_first_seen is after first_seen", line)
    try:
        rec = make_record(
            url, ts, label=label, label_source=source, hidden_label=hidden, domain_first_seen=dfs
        )
    except InvalidUrl as exc:
        raise ParseError(str(exc), line) from None
    return rec, dfs is not None


def load_corpus(path: str | Path, format: str | None = None) -> list[UrlRecord]:
    """Load a JSONL or CSV dataset, normalizing every URL.

    ``format`` is ``"jsonl"`` or ``"csv"``; when omitted it is inferred from the
    file suffix. Records without an explicit ``domain_first_seen`` get the
    minimum ``first_seen`` over their domain within the file.
    """
    path = Path(path)
    fmt = (format or ("csv" if path.suffix.lower() == ".csv" else "jsonl")).lower()
    parsed: list[tuple[UrlRecord, bool]] = []
    with path.open(encoding="utf-8", newline="") as fh:
        if fmt == "jsonl":
            for lineno, text in enumerate(fh, 1):
                if not text.strip():
                    continue
                try:
                    row = json.loads(text)
                except json.JSONDecodeError as exc:
                    raise ParseError(f"invalid JSON: {exc.msg}", lineno) from None
                if not isinstance(row, dict):
                    raise ParseError("row is not an object", lineno)
                parsed.append(_record_from_row(row, lineno))
        elif fmt == "csv":
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                return []
            if "url" not in reader.fieldnames or "first_seen" not in reader.fieldnames:
                raise ParseError("header must include url and first_seen", 1)
            for row in reader:
                if None in row:
                    raise ParseError("too many fields", reader.line_num)
                parsed.append(_record_from_row(row, reader.line_num))
        else:
            raise ValueError(f"unknown corpus format {format!r}")

    computed = {r.domain: r.url_first_seen for r, _ in parsed}
    for r, _ in parsed:
        if r.url_first_seen < computed[r.domain]:
            computed[r.domain] = r.url_first_seen
    return [r if explicit else replace(r, domain_first_seen=computed[r.domain]) for r, explicit in parsed]


CORPUS_COLUMNS = ("url", "first_seen", "domain_first_seen", "label", "label_source", "hidden_label")


def record_to_row(r: UrlRecord) -> dict:
    return {
        "url": r.raw_url,
        "first_seen": format_timestamp(r.url_first_seen),
        "domain_first_seen": format_timestamp(r.domain_first_seen),
        "label": r.label.text if r.label else None,
        "label_source": r.label_source.value if r.label else None,
        "hidden_label": r.hidden_label.text if r.hidden_label else None,
    }


def write_corpus(records: Iterable[UrlRecord], path: str | Path, format: str | None = None) -> None:
    path = Path(path)
    fmt = (format or ("csv" if path.suffix.lower() == ".csv" else "jsonl")).lower()
    with path.open("w", encoding="utf-8", newline="") as fh:
        if fmt == "jsonl":
            for r in records:
                fh.write(json.dumps(record_to_row(r), ensure_ascii=False) + "\n")
        else:
            writer = csv.DictWriter(fh, fieldnames=CORPUS_COLUMNS, lineterminator="\n")
            writer.writeheader()
            for r in records:
                writer.writerow({k: ("" if v is None else v) for k, v in record_to_row(r).items()})


# ---------------------------------------------------------------------------
# statistics


@dataclass(frozen=True)
class CorpusStats:
    domain_frequency: dict[str, int]
    top_domains: list[tuple[str, int, float]]  # (domain, count, percent)
    total_records: int


def corpus_stats(records: Sequence[UrlRecord], top_k: int = 10) -> CorpusStats:
    freq = Counter(r.domain for r in records)
    total = len(records)
    ranked = sorted(freq.items(), key=lambda kv: (-kv[1], kv[0]))[:top_k]
    top = [(d, n, 100.0 * n / total) for d, n in ranked]
    return CorpusStats(dict(freq), top, total)


# ---------------------------------------------------------------------------
# synthetic long-tail corpus

DEFAULT_KEYWORDS: dict[Category, tuple[str, ...]] = {
    Category.CHAT: ("chat", "messenger", "chatroom", "talk", "whisper", "irc", "palbox", "convo"),
    Category.GAMES: ("games", "arcade", "puzzle", "rpg", "gamer", "esports", "minecraft", "steam"),
    Category.SHOPPING: ("shop", "cart", "checkout", "deals", "store", "coupon", "outlet", "mall"),
    Category.SPORTS: ("football", "soccer", "tennis", "league", "nba", "scores", "cricket", "rugby"),
    Category.NEWS: ("news", "headlines", "politics", "breaking", "gazette", "tribune", "journal", "daily"),
    Category.JOB_SEARCH: ("jobs", "careers", "resume", "hiring", "vacancy", "recruit", "cv", "employ"),
    Category.SEARCH_ENGINES: ("search", "query", "lookup", "results", "find", "seek", "engine", "websearch"),
    Category.ALCOHOL: ("wine", "beer", "whisky", "vodka", "brewery", "liquor", "cocktail", "winery"),
    Category.GAMBLING: ("casino", "poker", "betting", "slots", "jackpot", "roulette", "lottery", "bookie"),
    Category.WEAPONS: ("guns", "glock", "armaments", "rifle", "ammo", "pistol", "firearms", "holster"),
    Category.PORN: ("porn", "xxx", "nsfw", "adult", "erotic", "camgirls", "nude", "sexy"),
    Category.BANKING: ("bank", "banking", "loan", "mortgage", "credit", "savings", "finance", "atm"),
    Category.BUSINESS: ("business", "consulting", "enterprise", "corporate", "invest", "b2b", "logistics", "agency"),
    Category.EDUCATION: ("school", "university", "course", "college", "learn", "tutor", "campus", "edu"),
    Category.ENTERTAINMENT: ("celebrity", "movies", "tv", "gossip", "showbiz", "cinema", "comedy", "theatre"),
    Category.FOOD_AND_DINING: ("recipes", "restaurant", "menu", "pizza", "bakery", "cooking", "dining", "cafe"),
    Category.GOVERNMENT: ("gov", "ministry", "council", "passport", "tax", "senate", "municipal", "federal"),
    Category.HEALTH_AND_MEDICINE: ("health", "clinic", "medicine", "pharmacy", "doctor", "hospital", "dental", "neurosurgery"),
    Category.MOTOR_VEHICLES: ("cars", "auto", "motors", "dealer", "truck", "motorbike", "tires", "garage"),
    Category.PEER_TO_PEER: ("torrent", "p2p", "magnet", "seeders", "filesharing", "emule", "leech", "peers"),
    Category.REAL_ESTATE: ("realestate", "homes", "apartments", "rent", "property", "realtor", "condo", "housing"),
    Category.RELIGION: ("church", "bible", "faith", "prayer", "mosque", "temple", "gospel", "worship"),
    Category.TRAVEL: ("travel", "hotel", "flights", "booking", "vacation", "tours", "resort", "airline"),
    Category.TRANSLATORS: ("translate", "translator", "dictionary", "linguee", "interpreter", "glossary", "lingo", "babel"),
    Category.COMPUTER_AND_INTERNET: ("software", "cloud", "hosting", "linux", "dev", "api", "download", "server"),
    Category.HUNTING_AND_FISHING: ("hunting", "fishing", "angler", "bait", "archery", "deer", "tackle", "fly"),
    Category.MARIJUANA: ("cannabis", "weed", "marijuana", "hemp", "cbd", "dispensary", "kush", "thc"),
    Category.RADIO_AND_AUDIO_HOSTING: ("radio", "podcast", "fm", "audio", "stream", "soundcloud", "mixtape", "dj"),
    Category.SOCIAL_NETWORKING: ("social", "friends", "profile", "followers", "feed", "community", "forum", "network"),
    Category.VIDEO_HOSTING: ("video", "watch", "clips", "vlog", "tube", "channel", "livestream", "upload"),
}

_FILLERS = (
    "index", "home", "page", "view", "item", "post", "article", "list", "about", "info", "main",
    "default", "en", "de", "fr", "static", "content", "detail", "overview", "section", "new", "top",
)
_ONSETS = ("b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "tr", "gl", "sk", "pl", "dr")
_VOWELS = ("a", "e", "i", "o", "u", "ai", "ou")
_CODAS = ("", "", "", "n", "r", "s", "x", "m", "l")
_TLDS = ("com", "com", "com", "net", "org", "io", "de", "co", "info", "at")


@dataclass(frozen=True)
class SyntheticSpec:
    category_keyword_map: Mapping[Category, Sequence[str]] = field(default_factory=lambda: dict(DEFAULT_KEYWORDS))
    head_domain_count: int = 25
    tail_domain_count: int = 20000
    zipf_exponent: float = 1.1
    keywordless_fraction: float = 0.1
    seed: int = 0
    n_records: int = 10000
    start: datetime = datetime(2022, 7, 1, tzinfo=timezone.utc)
    span_days: float = 175.0
    head_keywords_per_domain: int = 2

    def __post_init__(self):
        missing = [c for c in Category if not self.category_keyword_map.get(c)]
        if missing:
            raise ValueError(f"categories without keywords: {[c.text for c in missing]}")
        if not 0.0 <= self.keywordless_fraction < 1.0:
            raise ValueError("keywordless_fraction must be in [0, 1)")
        if self.zipf_exponent <= 0:
            raise ValueError("zipf_exponent must be positive")
        if self.head_domain_count < 0 or self.tail_domain_count < 0 or self.head_domain_count + self.tail_domain_count == 0:
            raise ValueError("need at least one domain")


def _domain_name(rng: random.Random) -> str:
    n = 2 + int(rng.random() * 3)
    parts = []
    for _ in range(n):
        parts.append(_ONSETS[int(rng.random() * len(_ONSETS))])
        parts.append(_VOWELS[int(rng.random() * len(_VOWELS))])
    parts.append(_CODAS[int(rng.random() * len(_CODAS))])
    return "".join(parts) + "." + _TLDS[int(rng.random() * len(_TLDS))]


def keyword_index(keyword_map: Mapping[Category, Sequence[str]]) -> dict[str, Category]:
    """Map every keyword to its category; the first category listing a keyword wins."""
    index: dict[str, Category] = {}
    for cat in Category:
        for kw in keyword_map.get(cat, ()):
            index.setdefault(kw.lower(), cat)
    return index


def generate_synthetic(spec: SyntheticSpec) -> list[UrlRecord]:
    """Generate a seeded corpus with Zipf-skewed domain traffic.

    Domains are ranked and drawn with probability proportional to
    ``rank ** -zipf_exponent``; the first ``head_domain_count`` ranks are the
    head. Head records are signature-labeled and reuse a small per-domain
    keyword set; tail records are unlabeled but keep their true category in
    ``hidden_label``. Only ``random.Random.random`` is used so the output is
    identical across platforms.
    """
    rng = random.Random(spec.seed)
    cats = list(Category)
    kw_index = keyword_index(spec.category_keyword_map)
    n_domains = spec.head_domain_count + spec.tail_domain_count

    names: list[str] = []
    seen: set[str] = set()
    while len(names) < n_domains:
        name = _domain_name(rng)
        if name in seen or name.split(".")[0] in kw_index:
            continue
        seen.add(name)
        names.append(name)

    domain_cat = [cats[int(rng.random() * len(cats))] for _ in range(n_domains)]
    domain_kws: list[tuple[str, ...]] = []
    for i in range(n_domains):
        kws = tuple(spec.category_keyword_map[domain_cat[i]])
        if i < spec.head_domain_count:
            k = min(spec.head_keywords_per_domain, len(kws))
            pool = list(kws)
            chosen = []
            for _ in range(k):
                chosen.append(pool.pop(int(rng.random() * len(pool))))
            kws = tuple(chosen)
        domain_kws.append(kws)

    span = spec.span_days * 86400.0
    # head domains exist from the start; tail domains appear uniformly over time
    birth = [0.0 if i < spec.head_domain_count else rng.random() * span for i in range(n_domains)]

    cum: list[float] = []
    acc = 0.0
    for rank in range(1, n_domains + 1):
        acc += rank ** -spec.zipf_exponent
        cum.append(acc)

    urls: set[str] = set()
    rows: list[tuple[float, str, int]] = []
    for _ in range(spec.n_records):
        d = min(bisect.bisect_left(cum, rng.random() * acc), n_domains - 1)
        t = birth[d] + rng.random() * (span - birth[d])
        for attempt in range(20):
            path = _synthetic_path(rng, domain_kws[d], spec.keywordless_fraction)
            if attempt >= 10:
                path += f"/{int(rng.random() * 1e9)}"
            url = names[d] + path
            if url not in urls:
                break
        urls.add(url)
        scheme = "https://" if rng.random() < 0.7 else "http://"
        rows.append((t, scheme + url, d))

    rows.sort(key=lambda row: (row[0], row[1]))
    records = []
    for t, url, d in rows:
        ts = spec.start + timedelta(seconds=round(t, 3))
        cat = domain_cat[d]
        if d < spec.head_domain_count:
            rec = make_record(url, ts, label=cat, label_source=LabelSource.SIGNATURE, hidden_label=cat)
        else:
            rec = make_record(url, ts, hidden_label=cat)
        records.append(rec)
    return with_domain_first_seen(records)


def _synthetic_path(rng: random.Random, keywords: Sequence[str], keywordless_fraction: float) -> str:
    def pick(seq):
        return seq[int(rng.random() * len(seq))]

    num = str(int(rng.random() * 100000))
    if rng.random() < keywordless_fraction:
        shape = int(rng.random() * 3)
        if shape == 0:
            return f"/{pick(_FILLERS)}/{num}"
        if shape == 1:
            return f"/{pick(_FILLERS)}-{pick(_FILLERS)}"
        return f"/{pick(_FILLERS)}/{pick(_FILLERS)}/{num}"
    kw = pick(keywords)
    shape = int(rng.random() * 5)
    if shape == 0:
        return f"/{kw}/{num}"
    if shape == 1:
        return f"/{pick(_FILLERS)}/{kw}"
    if shape == 2:
        return f"/{kw}/{pick(_FILLERS)}/{num}"
    if shape == 3:
        return f"/{kw}-{pick(_FILLERS)}"
    return f"/{pick(_FILLERS)}/{kw}/{num}"
