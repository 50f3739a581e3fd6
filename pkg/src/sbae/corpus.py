"""Corpus pipeline: sentence segmentation, filtering, splits, statistics and histograms."""

from __future__ import annotations

import csv
import io
import logging
import math
import os
import re
import tempfile
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Iterator, Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field

from .errors import ArtifactError, CorpusError

if TYPE_CHECKING:
    from .tokenizer import Tokenizer

logger = logging.getLogger(__name__)

Split = Literal["train", "test", "unassigned"]
Dimension = Literal["chars", "words", "tokens"]
DIMENSIONS: tuple[Dimension, ...] = ("chars", "words", "tokens")

DEFAULT_MAX_CHARS = 512

ABBREVIATIONS = frozenset(
    {"mr.", "mrs.", "ms.", "dr.", "prof.", "jr.", "sr.", "st.", "no.", "vs.", "etc.", "e.g.", "i.e."}
)

_TERMINATOR = re.compile(r"[.?!]+[\"'”’)\]]*(?= )")
_INITIALISM = re.compile(r"(?:[A-Za-z]\.)+")
_WORD = re.compile(r"\w+|[^\w\s]+")
_DOC_SEPARATOR = re.compile(r"\n[ \t]*\n")
_OPENERS = frozenset("\"'“‘([")


class SentenceRecord(BaseModel):
    """One corpus sentence and its lengths."""

    text: str
    char_len: int = Field(ge=0)
    word_len: int = Field(ge=0)
    token_len: int = Field(default=0, ge=0)
    doc_id: int = Field(default=0, ge=0)
    split: Split = "unassigned"

    @classmethod
    def from_text(cls, text: str, doc_id: int = 0) -> "SentenceRecord":
        return cls(text=text, char_len=len(text), word_len=count_words(text), doc_id=doc_id)

    def length(self, dimension: Dimension) -> int:
        if dimension == "chars":
            return self.char_len
        if dimension == "words":
            return self.word_len
        return self.token_len


class LengthSummary(BaseModel):
    mean: float
    stddev: float
    median: float
    q25: float
    q75: float
    iqr: float
    q95: float
    q99: float


class CorpusStats(BaseModel):
    """Document- and sentence-level statistics of a corpus."""

    n_documents: int
    n_sentences: int
    n_characters: int
    n_words: int
    n_tokens: int
    chars_per_word: float
    chars_per_token: float
    tokens_per_word: float
    chars: LengthSummary
    words: LengthSummary
    tokens: LengthSummary


class IngestResult(BaseModel):
    records: list[SentenceRecord]
    n_documents: int
    n_kept: int
    n_dropped: int


# =============================================================================
# Segmentation
# =============================================================================


def count_words(text: str) -> int:
    """Word count used for statistics: word-character runs and punctuation runs each count once.

    Approximates NLTK word counts without its tokenizer.
    """
    return len(_WORD.findall(text))


def _opens_sentence(char: str) -> bool:
    return char.isupper() or char.isdigit() or char in _OPENERS


def _is_abbreviation(segment: str, terminator: str) -> bool:
    if terminator != ".":
        return False
    word = segment.rsplit(" ", 1)[-1].lstrip("".join(_OPENERS))
    if word.lower() in ABBREVIATIONS:
        return True
    return _INITIALISM.fullmatch(word) is not None


def split_sentences(document: str, doc_id: int = 0) -> list[SentenceRecord]:
    """Split a document into sentences with a deterministic rule set.

    A boundary is a run of ``.?!`` (closing quotes and brackets attach to
    it) followed by whitespace and a character that can open a sentence:
    uppercase, digit or an opening quote. Known abbreviations and dotted
    initials suppress the boundary. Whitespace inside sentences collapses
    to single spaces.
    """
    text = " ".join(document.split())
    if not text:
        return []

    sentences: list[str] = []
    start = 0
    for match in _TERMINATOR.finditer(text):
        end = match.end()
        # the lookahead guarantees text[end] is a space
        if not _opens_sentence(text[end + 1]):
            continue
        if _is_abbreviation(text[start:end], match.group()):
            continue
        sentences.append(text[start:end])
        start = end + 1
    if start < len(text):
        sentences.append(text[start:])

    return [SentenceRecord.from_text(sentence, doc_id) for sentence in sentences]


def filter_sentences(records: Sequence[SentenceRecord], max_chars: int = DEFAULT_MAX_CHARS) -> list[SentenceRecord]:
    """Keep records strictly shorter than ``max_chars`` characters, order preserved."""
    if max_chars < 1:
        raise CorpusError(f"max_chars must be positive, got {max_chars}")
    return [record for record in records if record.char_len < max_chars]


def _split_numbered(item: tuple[int, str]) -> list[SentenceRecord]:
    doc_id, document = item
    return split_sentences(document, doc_id)


def ingest_documents(
    documents: Iterable[str],
    max_chars: int = DEFAULT_MAX_CHARS,
    workers: int = 1,
) -> IngestResult:
    """Segment and filter documents; document ids follow input order.

    With ``workers > 1`` documents are segmented in a process pool. Results
    are collected in input order, so output does not depend on worker count.
    """
    numbered = list(enumerate(documents))
    if workers > 1 and len(numbered) > 1:
        chunksize = max(1, len(numbered) // (workers * 4))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_document = list(pool.map(_split_numbered, numbered, chunksize=chunksize))
    else:
        per_document = [_split_numbered(item) for item in numbered]

    segmented = [record for records in per_document for record in records]
    kept = filter_sentences(segmented, max_chars)
    logger.info(
        "ingested %d documents: %d sentences kept, %d dropped (max_chars=%d)",
        len(numbered),
        len(kept),
        len(segmented) - len(kept),
        max_chars,
    )
    return IngestResult(
        records=kept,
        n_documents=len(numbered),
        n_kept=len(kept),
        n_dropped=len(segmented) - len(kept),
    )


def read_documents(path: Path) -> list[str]:
    """Read a text file holding one document, or several separated by blank lines."""
    try:
        content = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ArtifactError(f"cannot read {path}: {exc}") from exc
    return [chunk.strip() for chunk in _DOC_SEPARATOR.split(content) if chunk.strip()]


# =============================================================================
# Splits
# =============================================================================


def assign_splits(records: Sequence[SentenceRecord], n_test: int, seed: int) -> list[SentenceRecord]:
    """Mark exactly ``n_test`` records as test through a seeded permutation; the rest are train."""
    if n_test < 0:
        raise CorpusError(f"n_test must be non-negative, got {n_test}")
    if n_test > len(records):
        raise CorpusError("test split larger than corpus")
    rng = np.random.default_rng(seed & 0xFFFFFFFFFFFFFFFF)
    test_indices = set(rng.permutation(len(records))[:n_test].tolist())
    return [
        record.model_copy(update={"split": "test" if index in test_indices else "train"})
        for index, record in enumerate(records)
    ]


def select_split(records: Sequence[SentenceRecord], split: Split) -> list[SentenceRecord]:
    """Records of one split. A corpus that was never split counts as all-train."""
    chosen = [record for record in records if record.split == split]
    if not chosen and split == "train" and all(record.split == "unassigned" for record in records):
        logger.warning("corpus has no split assignment; training on all %d records", len(records))
        chosen = list(records)
    if not chosen:
        raise CorpusError(f"no records with split {split!r}")
    return chosen


# =============================================================================
# Statistics
# =============================================================================


def safe_ratio(numerator: int, denominator: int) -> float:
    return numerator / denominator if denominator else 0.0


def _counter_quantile(counts: Counter, total: int, percent: float) -> int:
    rank = max(1, math.ceil(percent / 100.0 * total))
    seen = 0
    for value in sorted(counts):
        seen += counts[value]
        if seen >= rank:
            return value
    raise CorpusError("empty corpus")


class StatsAccumulator:
    """Mergeable per-shard statistics.

    Holds integer sums and exact length counters, so merging shards in any
    grouping gives the same final statistics.
    """

    def __init__(self) -> None:
        self.doc_ids: set[int] = set()
        self.n_sentences = 0
        self.totals = {dim: 0 for dim in DIMENSIONS}
        self.squares = {dim: 0 for dim in DIMENSIONS}
        self.lengths = {dim: Counter() for dim in DIMENSIONS}

    def add(self, record: SentenceRecord, token_len: Optional[int] = None) -> None:
        self.doc_ids.add(record.doc_id)
        self.n_sentences += 1
        values = {
            "chars": record.char_len,
            "words": record.word_len,
            "tokens": record.token_len if token_len is None else token_len,
        }
        for dim, value in values.items():
            self.totals[dim] += value
            self.squares[dim] += value * value
            self.lengths[dim][value] += 1

    def merge(self, other: "StatsAccumulator") -> "StatsAccumulator":
        merged = StatsAccumulator()
        merged.doc_ids = self.doc_ids | other.doc_ids
        merged.n_sentences = self.n_sentences + other.n_sentences
        for dim in DIMENSIONS:
            merged.totals[dim] = self.totals[dim] + other.totals[dim]
            merged.squares[dim] = self.squares[dim] + other.squares[dim]
            merged.lengths[dim] = self.lengths[dim] + other.lengths[dim]
        return merged

    def _summary(self, dim: Dimension) -> LengthSummary:
        n = self.n_sentences
        total = self.totals[dim]
        # exact integer variance numerator: n * sum(x^2) - (sum x)^2
        spread = n * self.squares[dim] - total * total
        quantile = {p: _counter_quantile(self.lengths[dim], n, p) for p in (25, 50, 75, 95, 99)}
        return LengthSummary(
            mean=total / n,
            stddev=math.sqrt(spread) / n,
            median=quantile[50],
            q25=quantile[25],
            q75=quantile[75],
            iqr=quantile[75] - quantile[25],
            q95=quantile[95],
            q99=quantile[99],
        )

    def finalize(self) -> CorpusStats:
        if self.n_sentences == 0:
            raise CorpusError("empty corpus")
        chars, words, tokens = (self.totals[dim] for dim in DIMENSIONS)
        if tokens == 0:
            logger.warning("token lengths unknown; token statistics are zero")
        return CorpusStats(
            n_documents=len(self.doc_ids),
            n_sentences=self.n_sentences,
            n_characters=chars,
            n_words=words,
            n_tokens=tokens,
            chars_per_word=safe_ratio(chars, words),
            chars_per_token=safe_ratio(chars, tokens),
            tokens_per_word=safe_ratio(tokens, words),
            chars=self._summary("chars"),
            words=self._summary("words"),
            tokens=self._summary("tokens"),
        )


def compute_stats(
    records: Sequence[SentenceRecord],
    tokenizer: Optional["Tokenizer"] = None,
    shards: int = 1,
) -> CorpusStats:
    """Corpus statistics; token lengths come from ``tokenizer`` when given, else from the records."""
    if not records:
        raise CorpusError("empty corpus")
    shards = max(1, min(shards, len(records)))
    bounds = np.linspace(0, len(records), shards + 1).astype(int)
    accumulator = StatsAccumulator()
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        shard = StatsAccumulator()
        for record in records[lo:hi]:
            shard.add(record, tokenizer.n_tokens(record.text) if tokenizer is not None else None)
        accumulator = accumulator.merge(shard)
    return accumulator.finalize()


def with_token_lengths(records: Sequence[SentenceRecord], tokenizer: "Tokenizer") -> list[SentenceRecord]:
    return [record.model_copy(update={"token_len": tokenizer.n_tokens(record.text)}) for record in records]


def length_histogram(
    records: Sequence[SentenceRecord],
    dimension: Dimension,
    bin_width: int,
) -> list[tuple[int, int]]:
    """Contiguous ``(bin_start, count)`` pairs covering ``[0, max length]``, empty bins included."""
    if bin_width < 1:
        raise CorpusError(f"bin_width must be positive, got {bin_width}")
    if not records:
        return []
    counts: Counter = Counter(record.length(dimension) // bin_width for record in records)
    return [(index * bin_width, counts.get(index, 0)) for index in range(max(counts) + 1)]


def histogram_csv(bins: Sequence[tuple[int, int]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["bin_start", "count"])
    writer.writerows(bins)
    return buffer.getvalue()


# =============================================================================
# Persistence
# =============================================================================


def atomic_write_bytes(path: Path, payload: bytes) -> None:
    """Write through a temporary file in the target directory; no partial file survives a failure."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp_name, path)
    except OSError as exc:
        try:
            os.unlink(tmp_name)
        except FileNotFoundError:
            pass
        raise ArtifactError(f"cannot write {path}: {exc}") from exc


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_jsonl(records: Iterable[SentenceRecord], path: Path) -> None:
    atomic_write_text(path, "".join(record.model_dump_json() + "\n" for record in records))


def iter_jsonl(path: Path) -> Iterator[SentenceRecord]:
    try:
        with open(path, encoding="utf-8") as handle:
            for line in handle:
                if line.strip():
                    yield SentenceRecord.model_validate_json(line)
    except OSError as exc:
        raise ArtifactError(f"cannot read {path}: {exc}") from exc


def read_jsonl(path: Path) -> list[SentenceRecord]:
    return list(iter_jsonl(path))
