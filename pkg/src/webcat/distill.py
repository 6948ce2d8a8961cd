"""Hard-label distillation: teacher adapters, pool labeling, and ratio mixing."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import httpx

from .categories import OOV, Category, _Oov, parse_prediction
from .corpus import LabelSource, UrlRecord, keyword_index, normalize_url
from .errors import InsufficientPool, PartialResult, TeacherUnavailable

log = logging.getLogger(__name__)

# (raw label text, optional confidence)
TeacherResponse = tuple[str, "float | None"]

UNKNOWN_TEXT = "UNKNOWN"
_TOKEN_RE = re.compile(r"[a-z0-9]+")


class TeacherClient(Protocol):
    @property
    def teacher_id(self) -> str: ...

    def label(self, urls: Sequence[str]) -> list[TeacherResponse]: ...


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def _unit(*parts) -> float:
    """Deterministic uniform draw in [0, 1) keyed by ``parts``."""
    h = hashlib.sha256("\x1f".join(map(str, parts)).encode()).digest()
    return int.from_bytes(h[:8], "big") / 2**64


class LocalOracle:
    """Keyword-map teacher.

    A URL gets the category of its first token that is a known keyword;
    URLs without one get ``UNKNOWN_TEXT`` (an OOV answer). With probability
    ``noise_rate`` (decided per URL by a hash, so reruns agree) the answer
    is replaced by a different category.
    """

    def __init__(self, keyword_map: Mapping[Category, Sequence[str]], noise_rate: float = 0.0, seed: int = 0):
        if not 0.0 <= noise_rate <= 1.0:
            raise ValueError("noise_rate must be in [0, 1]")
        self._index = keyword_index(keyword_map)
        self.noise_rate = noise_rate
        self.seed = seed
        self.calls = 0
        keywords = sorted((k, v.text) for k, v in self._index.items())
        self._id = "local-" + _digest({"keywords": keywords, "noise": noise_rate, "seed": seed})

    @property
    def teacher_id(self) -> str:
        return self._id

    def classify(self, url: str) -> str:
        norm = normalize_url(url)
        cat = next((self._index[t] for t in _TOKEN_RE.findall(norm.lower()) if t in self._index), None)
        if cat is None:
            return UNKNOWN_TEXT
        if self.noise_rate and _unit("noise", self.seed, norm) < self.noise_rate:
            others = [c for c in Category if c is not cat]
            cat = others[int(_unit("swap", self.seed, norm) * len(others))]
        return cat.text

    def label(self, urls: Sequence[str]) -> list[TeacherResponse]:
        self.calls += 1
        return [(self.classify(u), None) for u in urls]


@dataclass
class RemoteCompletion:
    """HTTP completion teacher with greedy, label-constrained decoding.

    The wire contract is ``POST {"prompt", "stop", "temperature", "allowed_labels"}``
    answering ``{"text"}``. The bearer token is read from the environment
    variable named by ``token_env`` and is never part of the teacher id.
    """

    endpoint: str
    model: str = ""
    token_env: str = "WEBCAT_TEACHER_TOKEN"
    stop: str = "\n"
    temperature: float = 0.0
    logit_bias: float = 100.0
    max_retries: int = 4
    backoff_seconds: float = 0.5
    timeout_seconds: float = 30.0
    max_parallel: int = 4
    client: httpx.Client | None = None
    calls: int = field(default=0, init=False)

    def __post_init__(self):
        self._lock = threading.Lock()

    @property
    def teacher_id(self) -> str:
        return "remote-" + _digest(
            {"endpoint": self.endpoint, "model": self.model, "stop": self.stop,
             "temperature": self.temperature, "logit_bias": self.logit_bias}
        )

    def payload(self, url: str) -> dict:
        body = {
            "prompt": url,
            "stop": self.stop,
            "temperature": self.temperature,
            "allowed_labels": [c.text for c in Category],
            "logit_bias": self.logit_bias,
        }
        if self.model:
            body["model"] = self.model
        return body

    def _headers(self) -> dict:
        token = os.environ.get(self.token_env)
        return {"Authorization": f"Bearer {token}"} if token else {}

    def _one(self, client: httpx.Client, url: str) -> TeacherResponse:
        delay = self.backoff_seconds
        last: Exception | None = None
        for attempt in range(self.max_retries + 1):
            with self._lock:
                self.calls += 1
            try:
                resp = client.post(self.endpoint, json=self.payload(url), headers=self._headers(), timeout=self.timeout_seconds)
                if resp.status_code < 500 and resp.status_code != 429:
                    resp.raise_for_status()
                    data = resp.json()
                    return str(data["text"]), data.get("confidence")
                last = httpx.HTTPStatusError(f"status {resp.status_code}", request=resp.request, response=resp)
            except (httpx.TransportError, httpx.HTTPStatusError, ValueError, KeyError) as exc:
                last = exc
            if attempt < self.max_retries:
                time.sleep(delay)
                delay *= 2
        raise TeacherUnavailable(f"{self.endpoint}: {last}")

    def label(self, urls: Sequence[str]) -> list[TeacherResponse]:
        client = self.client or httpx.Client()
        try:
            with ThreadPoolExecutor(max_workers=max(1, self.max_parallel)) as pool:
                # map preserves input order
                return list(pool.map(lambda u: self._one(client, u), urls))
        finally:
            if self.client is None:
                client.close()


class CachedTeacher:
    """Wrap a teacher with an append-only JSONL response cache.

    Entries are keyed by (normalized URL, teacher id). Misses are forwarded
    to the wrapped teacher in one call and appended in input order.
    """

    def __init__(self, inner: TeacherClient, path: str | Path):
        self.inner = inner
        self.path = Path(path)
        self.hits = 0
        self.misses = 0
        self._entries: dict[tuple[str, str], TeacherResponse] = {}
        if self.path.exists():
            with self.path.open(encoding="utf-8") as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    row = json.loads(line)
                    self._entries[(row["url"], row["teacher_id"])] = (row["raw"], row.get("confidence"))

    @property
    def teacher_id(self) -> str:
        return self.inner.teacher_id

    def __len__(self) -> int:
        return len(self._entries)

    def label(self, urls: Sequence[str]) -> list[TeacherResponse]:
        tid = self.teacher_id
        keys = [normalize_url(u) for u in urls]
        missing = list(dict.fromkeys(k for k in keys if (k, tid) not in self._entries))
        self.hits += sum(1 for k in keys if (k, tid) in self._entries)
        if missing:
            self.misses += len(missing)
            answers = self.inner.label(missing)
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as fh:
                for url, (raw, conf) in zip(missing, answers):
                    self._entries[(url, tid)] = (raw, conf)
                    row = {"url": url, "teacher_id": tid, "raw": raw, "parsed": parse_prediction(raw).text}
                    if conf is not None:
                        row["confidence"] = conf
                    fh.write(json.dumps(row, ensure_ascii=False) + "\n")
        return [self._entries[(k, tid)] for k in keys]


# ---------------------------------------------------------------------------
# labeling the pool


@dataclass(frozen=True)
class TeacherLabel:
    record: UrlRecord
    parsed: Category | _Oov
    raw: str
    confidence: float | None = None


@dataclass
class TeacherLabelSet:
    entries: list[TeacherLabel]
    teacher_id: str = ""

    @property
    def oov_excluded(self) -> int:
        return sum(1 for e in self.entries if e.parsed is OOV)

    def records(self) -> list[UrlRecord]:
        """Teacher-labeled records, OOV answers dropped."""
        return [e.record.with_label(e.parsed, LabelSource.TEACHER) for e in self.entries if e.parsed is not OOV]


def label_unlabeled(teacher: TeacherClient, unlabeled: Sequence[UrlRecord], batch_size: int = 256) -> TeacherLabelSet:
    """Ask the teacher for every record, one batch at a time.

    Raises ``PartialResult`` holding the labeled prefix when the teacher
    fails part way; with a ``CachedTeacher`` that prefix is already on disk.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    out = TeacherLabelSet([], teacher.teacher_id)
    for start in range(0, len(unlabeled), batch_size):
        batch = unlabeled[start : start + batch_size]
        try:
            answers = teacher.label([r.normalized_url for r in batch])
        except TeacherUnavailable as exc:
            if not out.entries:
                raise
            raise PartialResult(out, exc) from exc
        for rec, (raw, conf) in zip(batch, answers):
            out.entries.append(TeacherLabel(rec, parse_prediction(raw), raw, conf))
    return out


# ---------------------------------------------------------------------------
# mixing


@dataclass(frozen=True)
class MixSpec:
    total: int
    ratio: float
    seed: int = 0

    def __post_init__(self):
        if self.total < 0:
            raise ValueError("total must be non-negative")
        if not 0.0 <= self.ratio <= 1.0:
            raise ValueError("ratio must be in [0, 1]")

    @property
    def teacher_count(self) -> int:
        return round(self.ratio * self.total)  # round-half-to-even

    @property
    def base_count(self) -> int:
        return self.total - self.teacher_count


def teacher_pool(base: Sequence[UrlRecord], teacher_set: TeacherLabelSet) -> list[UrlRecord]:
    """Teacher records not shadowed by a base record with the same normalized URL."""
    seen = {r.normalized_url for r in base}
    pool = []
    for r in teacher_set.records():
        if r.normalized_url not in seen:
            seen.add(r.normalized_url)
            pool.append(r)
    return pool


def build_mixed_set(base: Sequence[UrlRecord], teacher_set: TeacherLabelSet, spec: MixSpec) -> list[UrlRecord]:
    """Draw ``round(r*T)`` teacher and ``T - round(r*T)`` base records
    uniformly without replacement, then shuffle under ``spec.seed``."""
    base = [r for r in base if r.label is not None]
    pool = teacher_pool(base, teacher_set)
    if len(base) < spec.base_count:
        raise InsufficientPool("base", spec.base_count, len(base))
    if len(pool) < spec.teacher_count:
        raise InsufficientPool("teacher", spec.teacher_count, len(pool))
    rng = random.Random(spec.seed)
    mixed = rng.sample(base, spec.base_count) + rng.sample(pool, spec.teacher_count)
    rng.shuffle(mixed)
    return mixed


# ---------------------------------------------------------------------------
# ratio sweep


@dataclass
class RatioResult:
    ratio: float
    report: object  # EvalReport
    model: object  # StudentModel
    train_size: int


def distillation_run(
    teacher: TeacherClient | TeacherLabelSet,
    base: Sequence[UrlRecord],
    unlabeled: Sequence[UrlRecord],
    student_kind: str,
    ratios: Sequence[float],
    split,
    *,
    tokenizer,
    total: int | None = None,
    seed: int = 0,
    batch_size: int = 256,
    **train_kwargs,
) -> list[RatioResult]:
    """Train and score one student per mixing ratio on ``split.test``.

    ``teacher`` may be an already computed ``TeacherLabelSet`` so a sweep
    can reuse one labeling pass. ``total`` defaults to the largest size both
    pools can supply at every requested ratio.
    """
    from .evaluation import compute_metrics
    from .models import predict, train

    if not ratios:
        return []
    labels = teacher if isinstance(teacher, TeacherLabelSet) else label_unlabeled(teacher, unlabeled, batch_size)
    base = [r for r in base if r.label is not None]
    if total is None:
        total = _max_total(len(base), len(teacher_pool(base, labels)), ratios)
    truth = [r.truth for r in split.test]
    results = []
    for ratio in ratios:
        spec = MixSpec(total, ratio, seed)
        mixed = build_mixed_set(base, labels, spec)
        model, history = train(student_kind, mixed, split.validation, tokenizer=tokenizer, seed=seed, **train_kwargs)
        pred = [c for c, _ in predict(model, [r.normalized_url for r in split.test])]
        report = compute_metrics(
            truth,
            pred,
            {"ratio": ratio, "total": total, "seed": seed, "model_id": model.model_id, "split": "test",
             "epochs_run": len(history.train_loss), "best_epoch": history.best_epoch},
        )
        log.info("ratio %.2f accuracy %.4f", ratio, report.accuracy)
        results.append(RatioResult(ratio, report, model, len(mixed)))
    return results


def _max_total(n_base: int, n_teacher: int, ratios: Sequence[float]) -> int:
    """Largest T such that every ratio's realized counts fit both pools."""
    def fits(t: int) -> bool:
        return all(t - round(r * t) <= n_base and round(r * t) <= n_teacher for r in ratios)

    t = n_base + n_teacher
    while t > 0 and not fits(t):
        t -= 1
    return t


def accuracy_curve(results: Sequence[RatioResult]) -> list[tuple[float, float]]:
    return [(r.ratio, r.report.accuracy) for r in results]
