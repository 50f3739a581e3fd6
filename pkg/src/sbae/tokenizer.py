"""Uncased WordPiece tokenization compatible with BERT vocabulary files."""

from __future__ import annotations

import logging
import unicodedata
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Sequence, Union

from .errors import ArtifactError, TokenizerError

if TYPE_CHECKING:
    from .corpus import SentenceRecord

logger = logging.getLogger(__name__)

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP, MASK)
CONTINUATION = "##"
MAX_WORD_CHARS = 100


def _is_whitespace(char: str) -> bool:
    if char in " \t\n\r":
        return True
    return unicodedata.category(char) == "Zs"


def _is_control(char: str) -> bool:
    if char in "\t\n\r":
        return False
    return unicodedata.category(char).startswith("C")


def _is_punctuation(char: str) -> bool:
    cp = ord(char)
    # all non-alphanumeric ASCII counts as punctuation, "^", "$" and "`" included
    if 33 <= cp <= 47 or 58 <= cp <= 64 or 91 <= cp <= 96 or 123 <= cp <= 126:
        return True
    return unicodedata.category(char).startswith("P")


class Vocab:
    """Immutable token table: ids are dense line numbers of the vocabulary file."""

    __slots__ = ("tokens", "index")

    def __init__(self, tokens: Sequence[str]) -> None:
        self.tokens: tuple[str, ...] = tuple(tokens)
        self.index: dict[str, int] = {}
        for token_id, token in enumerate(self.tokens):
            if token in self.index:
                raise TokenizerError(f"duplicate vocabulary entry {token!r} at line {token_id}")
            if not token:
                raise TokenizerError(f"empty vocabulary entry at line {token_id}")
            self.index[token] = token_id
        missing = [special for special in SPECIAL_TOKENS if special not in self.index]
        if missing:
            raise TokenizerError(f"vocabulary lacks special tokens {missing}")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    @property
    def pad_id(self) -> int:
        return self.index[PAD]

    @property
    def unk_id(self) -> int:
        return self.index[UNK]

    @property
    def cls_id(self) -> int:
        return self.index[CLS]

    @property
    def sep_id(self) -> int:
        return self.index[SEP]

    @property
    def mask_id(self) -> int:
        return self.index[MASK]

    @property
    def special_ids(self) -> frozenset[int]:
        return frozenset(self.index[special] for special in SPECIAL_TOKENS)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Vocab":
        """Read a vocabulary file: UTF-8, one token per line, id = zero-based line number."""
        try:
            with open(path, encoding="utf-8") as handle:
                tokens = [line.rstrip("\n").rstrip("\r") for line in handle]
        except (OSError, UnicodeDecodeError) as exc:
            raise ArtifactError(f"cannot read vocabulary {path}: {exc}") from exc
        return cls(tokens)

    def dumps(self) -> str:
        return "".join(token + "\n" for token in self.tokens)

    def save(self, path: Union[str, Path]) -> None:
        from .corpus import atomic_write_text

        atomic_write_text(Path(path), self.dumps())


@dataclass(frozen=True)
class TokenSequence:
    """Token ids of one sentence wrapped in [CLS] ... [SEP]."""

    ids: tuple[int, ...]
    truncated: bool = False

    @property
    def n_content(self) -> int:
        return len(self.ids) - 2

    def __len__(self) -> int:
        return len(self.ids)


# =============================================================================
# Normalization and splitting
# =============================================================================


def normalize(text: str) -> str:
    """Lowercase, strip accents (NFD minus combining marks), drop control characters, collapse whitespace."""
    cleaned = []
    for char in text:
        if char in ("\x00", "\ufffd") or _is_control(char):
            continue
        cleaned.append(" " if _is_whitespace(char) else char)
    decomposed = unicodedata.normalize("NFD", "".join(cleaned).lower())
    stripped = "".join(char for char in decomposed if unicodedata.category(char) != "Mn")
    return " ".join(stripped.split())


def split_words(normalized: str) -> list[str]:
    """Split normalized text on whitespace; every punctuation character becomes its own word."""
    words: list[str] = []
    for chunk in normalized.split():
        current: list[str] = []
        for char in chunk:
            if _is_punctuation(char):
                if current:
                    words.append("".join(current))
                    current = []
                words.append(char)
            else:
                current.append(char)
        if current:
            words.append("".join(current))
    return words


def wordpiece(word: str, vocab: Vocab) -> list[str]:
    """Greedy longest-match-first decomposition; ``[UNK]`` when the word cannot be covered."""
    if len(word) > MAX_WORD_CHARS:
        return [UNK]
    pieces: list[str] = []
    start = 0
    while start < len(word):
        end = len(word)
        piece = None
        while start < end:
            candidate = word[start:end]
            if start > 0:
                candidate = CONTINUATION + candidate
            if candidate in vocab.index:
                piece = candidate
                break
            end -= 1
        if piece is None:
            return [UNK]
        pieces.append(piece)
        start = end
    return pieces


def tokenize(text: str, vocab: Vocab) -> TokenSequence:
    ids = [vocab.cls_id]
    for word in split_words(normalize(text)):
        ids.extend(vocab.index[piece] for piece in wordpiece(word, vocab))
    ids.append(vocab.sep_id)
    return TokenSequence(tuple(ids))


def truncate(sequence: TokenSequence, max_len: int) -> TokenSequence:
    """Drop content tokens from the end so the sequence fits ``max_len``; [SEP] stays."""
    if max_len < 2:
        raise TokenizerError(f"max_len must be at least 2, got {max_len}")
    if len(sequence.ids) <= max_len:
        return sequence
    return TokenSequence(sequence.ids[: max_len - 1] + sequence.ids[-1:], truncated=True)


def detokenize(ids: Iterable[int], vocab: Vocab) -> str:
    """Join pieces back to text: specials dropped, "##" pieces glued to their predecessor."""
    specials = vocab.special_ids
    words: list[str] = []
    for token_id in ids:
        token_id = int(token_id)
        if not 0 <= token_id < len(vocab):
            raise TokenizerError("token id out of range")
        if token_id in specials:
            continue
        piece = vocab.tokens[token_id]
        if piece.startswith(CONTINUATION) and words:
            words[-1] += piece[len(CONTINUATION):]
        else:
            words.append(piece)
    return " ".join(words)


# =============================================================================
# Vocabulary building
# =============================================================================


def build_vocab(texts: Iterable[Union[str, "SentenceRecord"]], target_size: int) -> Vocab:
    """Desk-scale vocabulary: specials, frequent whole words, then character pieces.

    Every character seen gets a word-initial and a "##" continuation piece,
    so any corpus word decomposes without [UNK]. Those pieces are always
    kept; whole words fill whatever budget remains. Ties break
    lexicographically.
    """
    if target_size < 6:
        raise TokenizerError(f"target_size must be at least 6, got {target_size}")
    counts: Counter = Counter()
    for item in texts:
        text = item if isinstance(item, str) else item.text
        counts.update(split_words(normalize(text)))

    characters = sorted({char for word in counts for char in word})
    char_pieces = characters + [CONTINUATION + char for char in characters]
    required = set(char_pieces)

    budget = target_size - len(SPECIAL_TOKENS) - len(char_pieces)
    ranked = sorted((word for word in counts if word not in required), key=lambda w: (-counts[w], w))
    words = ranked[: max(0, budget)]
    if budget < 0:
        logger.warning(
            "vocabulary needs %d character pieces; size %d exceeds target %d",
            len(char_pieces),
            len(SPECIAL_TOKENS) + len(char_pieces),
            target_size,
        )

    # single-character words keep their frequency rank among the whole words
    single = sorted((char for char in characters if char in counts), key=lambda w: (-counts[w], w))
    ordered_words = sorted(words + single, key=lambda w: (-counts[w], w))
    placed = set(ordered_words)
    tail = [piece for piece in char_pieces if piece not in placed]
    return Vocab(list(SPECIAL_TOKENS) + ordered_words + tail)


# =============================================================================
# Facade
# =============================================================================


class Tokenizer:
    """Vocabulary plus the sequence-length limit applied at batching."""

    __slots__ = ("vocab", "max_seq_len")

    def __init__(self, vocab: Vocab, max_seq_len: int = 128) -> None:
        self.vocab = vocab
        self.max_seq_len = max_seq_len

    @classmethod
    def from_file(cls, path: Union[str, Path], max_seq_len: int = 128) -> "Tokenizer":
        return cls(Vocab.load(path), max_seq_len)

    def encode(self, text: str) -> TokenSequence:
        return truncate(tokenize(text, self.vocab), self.max_seq_len)

    def decode(self, ids: Iterable[int]) -> str:
        return detokenize(ids, self.vocab)

    def pieces(self, ids: Iterable[int]) -> list[str]:
        tokens = self.vocab.tokens
        out = []
        for token_id in ids:
            token_id = int(token_id)
            if not 0 <= token_id < len(tokens):
                raise TokenizerError("token id out of range")
            out.append(tokens[token_id])
        return out

    def n_tokens(self, text: str) -> int:
        """Content-token count of the untruncated sentence."""
        return tokenize(text, self.vocab).n_content
