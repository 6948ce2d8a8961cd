"""Character and subword URL tokenizers, and token histograms for drift analysis."""

from __future__ import annotations

import hashlib
import heapq
import re
import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ParseError, TargetTooSmall

MAX_LEN = 128

# The 76 symbols of the character model. Lower-case ASCII letters, digits,
# the 32 ASCII punctuation marks and space make 69; seven lower-case Latin-1
# letters common in European hosts complete the table. Order fixes the ids.
CHAR_TABLE = string.ascii_lowercase + string.digits + string.punctuation + " " + "äöüßéèñ"
assert len(CHAR_TABLE) == 76 and len(set(CHAR_TABLE)) == 76

PAD_ID = 0
UNK_ID = 1


@dataclass(frozen=True)
class CharVocab:
    chars: str = CHAR_TABLE
    max_len: int = MAX_LEN

    def __post_init__(self):
        object.__setattr__(self, "_ids", {c: i + 2 for i, c in enumerate(self.chars)})

    @property
    def size(self) -> int:
        """Embedding rows: the table plus PAD and UNK."""
        return len(self.chars) + 2

    def to_text(self) -> str:
        return f"#webcat-charvocab v1 pad={PAD_ID} unk={UNK_ID} max_len={self.max_len}\n{self.chars}\n"


def encode_chars(vocab: CharVocab, url: str) -> list[int]:
    ids = [vocab._ids.get(c, UNK_ID) for c in url.lower()[: vocab.max_len]]
    return ids + [PAD_ID] * (vocab.max_len - len(ids))


def encode_chars_batch(vocab: CharVocab, urls: Sequence[str]) -> np.ndarray:
    return np.array([encode_chars(vocab, u) for u in urls], dtype=np.int64).reshape(len(urls), vocab.max_len)


# ---------------------------------------------------------------------------
# subword vocabulary

SPECIALS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]")
CONT = "##"
_WORD_RE = re.compile(r"[^\W_]+|.", re.S)
_HEADER = "#webcat-subword v1"


def pretokenize(text: str) -> list[str]:
    """Split into alphanumeric runs; every other character stands alone."""
    return _WORD_RE.findall(text.lower())


@dataclass(frozen=True)
class SubwordVocab:
    pieces: tuple[str, ...]
    max_len: int = MAX_LEN
    _ids: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if tuple(self.pieces[: len(SPECIALS)]) != SPECIALS:
            raise ValueError("vocabulary must start with the special tokens")
        ids = {p: i for i, p in enumerate(self.pieces)}
        if len(ids) != len(self.pieces):
            raise ValueError("duplicate pieces in vocabulary")
        object.__setattr__(self, "_ids", ids)
        object.__setattr__(self, "_max_piece", max(len(p) for p in self.pieces))

    pad_id = 0
    unk_id = 1
    cls_id = 2
    sep_id = 3

    @property
    def size(self) -> int:
        return len(self.pieces)

    def __contains__(self, piece: str) -> bool:
        return piece in self._ids

    def id_of(self, piece: str) -> int:
        return self._ids[piece]

    def to_text(self) -> str:
        head = f"{_HEADER} pad=0 unk=1 cls=2 sep=3 max_len={self.max_len}"
        return head + "\n" + "\n".join(self.pieces) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    @classmethod
    def from_text(cls, text: str) -> SubwordVocab:
        lines = text.split("\n")
        if not lines or not lines[0].startswith(_HEADER):
            raise ParseError("not a subword vocabulary file", 1)
        meta = dict(kv.split("=", 1) for kv in lines[0][len(_HEADER) :].split())
        if lines[-1] == "":
            lines = lines[:-1]
        return cls(tuple(lines[1:]), max_len=int(meta.get("max_len", MAX_LEN)))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> SubwordVocab:
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def _alphabet(words: Iterable[str]) -> set[str]:
    symbols = set()
    for w in words:
        if w in ("\n", "\r"):
            continue
        if len(w) == 1 and not w.isalnum():
            symbols.add(w)
            continue
        for c in w:
            symbols.add(c)
            symbols.add(CONT + c)
    return symbols


def train_subword_vocab(corpus: Sequence[str], target_size: int = 8192, max_len: int = MAX_LEN) -> SubwordVocab:
    """Learn a WordPiece-style vocabulary by greedy most-frequent pair merging.

    Every alphanumeric character of the corpus is kept in both word-initial
    and ``##`` continuation form, so any text over the training alphabet can
    be segmented. Ties between equally frequent pairs go to the
    lexicographically smallest pair.
    """
    if not corpus:
        raise ValueError("empty training corpus")
    word_freq: Counter = Counter()
    for text in corpus:
        word_freq.update(pretokenize(text))
    alphabet = _alphabet(word_freq)
    base = len(SPECIALS) + len(alphabet)
    if target_size < base:
        raise TargetTooSmall(f"target_size {target_size} below alphabet+specials {base}")
    pieces = list(SPECIALS) + sorted(alphabet)
    known = set(pieces)

    words: list[list[str]] = []
    freqs: list[int] = []
    for w in sorted(word_freq):
        if len(w) < 2:
            continue
        words.append([w[0]] + [CONT + c for c in w[1:]])
        freqs.append(word_freq[w])

    pair_count: Counter = Counter()
    where: dict[tuple[str, str], set[int]] = {}
    for i, syms in enumerate(words):
        for pair in zip(syms, syms[1:]):
            pair_count[pair] += freqs[i]
            where.setdefault(pair, set()).add(i)
    heap = [(-n, a, b) for (a, b), n in pair_count.items()]
    heapq.heapify(heap)

    while len(pieces) < target_size and heap:
        neg, a, b = heapq.heappop(heap)
        pair = (a, b)
        if pair_count.get(pair, 0) != -neg or -neg <= 0:
            continue
        merged = a + b[len(CONT) :]
        if merged not in known:
            known.add(merged)
            pieces.append(merged)
        touched: set[tuple[str, str]] = set()
        for i in sorted(where.pop(pair, ())):
            syms, f = words[i], freqs[i]
            for p in zip(syms, syms[1:]):
                pair_count[p] -= f
                touched.add(p)
                where.get(p, set()).discard(i)
            out, j = [], 0
            while j < len(syms):
                if j + 1 < len(syms) and syms[j] == a and syms[j + 1] == b:
                    out.append(merged)
                    j += 2
                else:
                    out.append(syms[j])
                    j += 1
            words[i] = out
            for p in zip(out, out[1:]):
                pair_count[p] += f
                touched.add(p)
                where.setdefault(p, set()).add(i)
        for p in touched:
            n = pair_count.get(p, 0)
            if n > 0:
                heapq.heappush(heap, (-n, p[0], p[1]))
            else:
                pair_count.pop(p, None)
                where.pop(p, None)
    return SubwordVocab(tuple(pieces), max_len=max_len)


def segment_word(vocab: SubwordVocab, word: str) -> list[int]:
    """Greedy longest-match-first; characters with no piece become UNK."""
    ids = []
    start, n = 0, len(word)
    limit = vocab._max_piece
    while start < n:
        prefix = CONT if start > 0 else ""
        found = None
        for end in range(min(n, start + limit), start, -1):
            pid = vocab._ids.get(prefix + word[start:end])
            if pid is not None:
                found = (pid, end)
                break
        if found is None:
            ids.append(vocab.unk_id)
            start += 1
        else:
            ids.append(found[0])
            start = found[1]
    return ids


def encode_subwords(vocab: SubwordVocab, url: str) -> list[int]:
    body: list[int] = []
    room = vocab.max_len - 2
    for word in pretokenize(url):
        body.extend(segment_word(vocab, word))
        if len(body) >= room:
            break
    return [vocab.cls_id] + body[:room] + [vocab.sep_id]


def decode_subwords(vocab: SubwordVocab, ids: Sequence[int]) -> str:
    out = []
    for i in ids:
        piece = vocab.pieces[i]
        if i < len(SPECIALS):
            continue
        out.append(piece[len(CONT) :] if piece.startswith(CONT) and len(piece) > len(CONT) else piece)
    return "".join(out)


def pad_batch(seqs: Sequence[Sequence[int]], pad_id: int = 0) -> np.ndarray:
    width = max((len(s) for s in seqs), default=0)
    out = np.full((len(seqs), width), pad_id, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out


# ---------------------------------------------------------------------------
# histograms


@dataclass(frozen=True)
class TokenHistogram:
    probs: dict[int, float]
    counts: dict[int, int]

    @property
    def support_size(self) -> int:
        return len(self.probs)

    @classmethod
    def from_counts(cls, counts: Counter | dict[int, int]) -> TokenHistogram:
        counts = {int(k): int(v) for k, v in sorted(counts.items()) if v > 0}
        total = sum(counts.values())
        probs = {k: v / total for k, v in counts.items()} if total else {}
        return cls(probs, counts)


def content_tokens(vocab: SubwordVocab, url: str) -> list[int]:
    return [t for t in encode_subwords(vocab, url) if t >= len(SPECIALS)]


def token_histogram(vocab: SubwordVocab, urls: Sequence[str]) -> TokenHistogram:
    """Normalized counts of all non-special tokens emitted for ``urls``."""
    if not urls:
        raise ValueError("token_histogram needs at least one url")
    counts: Counter = Counter()
    for u in urls:
        counts.update(content_tokens(vocab, u))
    return TokenHistogram.from_counts(counts)
