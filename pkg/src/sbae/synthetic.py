"""Seeded templated-grammar corpus for experiments that must run without external data."""

from __future__ import annotations

import logging
from typing import Optional

import numpy as np

logger = logging.getLogger(__name__)

NAMES = (
    "alice", "bruno", "clara", "daniel", "elena", "felix", "grace", "hugo", "irene", "jonas",
    "karla", "leon", "maria", "nina", "oscar", "paula", "quentin", "rosa", "simon", "tessa",
)
NOUNS = (
    "teacher", "doctor", "farmer", "painter", "student", "soldier", "driver", "sailor", "baker", "singer",
    "dog", "cat", "horse", "bird", "fox", "rabbit", "wolf", "goat", "mouse", "bear",
    "book", "letter", "lamp", "chair", "table", "window", "door", "basket", "bottle", "key",
    "river", "mountain", "garden", "forest", "village", "castle", "bridge", "harbor", "market", "station",
    "apple", "bread", "cheese", "coffee", "soup", "cake", "orange", "onion", "carrot", "honey",
    "song", "story", "picture", "map", "clock", "coin", "ring", "boat", "wagon", "kite",
)
ADJECTIVES = (
    "old", "young", "small", "large", "quiet", "noisy", "bright", "dark", "happy", "tired",
    "clever", "brave", "gentle", "angry", "famous", "strange", "heavy", "light", "warm", "cold",
    "red", "blue", "green", "yellow", "white", "black", "golden", "silver", "wooden", "broken",
    "rich", "poor", "busy", "lazy", "careful", "curious", "proud", "shy", "fresh", "ancient",
)
VERBS = (
    "saw", "found", "carried", "painted", "watched", "followed", "visited", "opened", "closed", "bought",
    "sold", "cleaned", "built", "broke", "fixed", "drew", "heard", "liked", "hated", "chased",
    "called", "helped", "pushed", "pulled", "touched", "moved", "washed", "cooked", "ate", "brought",
    "remembered", "forgot", "described", "admired", "ignored", "noticed", "packed", "hid", "lost", "kept",
)
ADVERBS = (
    "quickly", "slowly", "quietly", "happily", "sadly", "suddenly", "carefully", "proudly", "gladly", "often",
    "rarely", "finally", "nearly", "gently", "loudly", "bravely", "calmly", "eagerly", "politely", "secretly",
)
PREPOSITIONS = ("near", "behind", "under", "beside", "inside", "across", "beyond", "above", "below", "through")
DETERMINERS = ("the", "a", "every", "some", "this", "that", "one", "another")
TIMES = ("yesterday", "today", "tomorrow", "later", "meanwhile", "afterwards", "tonight", "recently")

TEMPLATES = (
    "{det} {adj} {noun} {verb} {det2} {noun2}",
    "{det} {noun} {verb} {det2} {adj2} {noun2} {prep} {det3} {noun3}",
    "{name} {adv} {verb} {det} {adj} {noun}",
    "{name} {verb} {det} {noun} {prep} {det2} {adj2} {noun2}",
    "{time} , {name} {verb} {det} {adj} {noun} and {det2} {noun2}",
    "{det} {adj} {noun} {prep} {det2} {noun2} {adv} {verb} {det3} {noun3}",
    "{name} and {name2} {verb} {det} {noun}",
    "{time} , {det} {noun} {adv} {verb} {name}",
)


def vocabulary() -> frozenset[str]:
    """Every word the grammar can emit."""
    groups = (NAMES, NOUNS, ADJECTIVES, VERBS, ADVERBS, PREPOSITIONS, DETERMINERS, TIMES)
    return frozenset(word for group in groups for word in group) | {"and", ","}


class SyntheticGrammar:
    """Subject-verb-object sentences drawn from fixed word lists by a seeded generator."""

    def __init__(self, seed: int = 0) -> None:
        self.rng = np.random.default_rng(seed & 0xFFFFFFFFFFFFFFFF)

    def _pick(self, words: tuple[str, ...]) -> str:
        return words[int(self.rng.integers(len(words)))]

    def sentence(self) -> str:
        template = self._pick(TEMPLATES)
        slots = {
            "det": self._pick(DETERMINERS),
            "det2": self._pick(DETERMINERS),
            "det3": self._pick(DETERMINERS),
            "adj": self._pick(ADJECTIVES),
            "adj2": self._pick(ADJECTIVES),
            "noun": self._pick(NOUNS),
            "noun2": self._pick(NOUNS),
            "noun3": self._pick(NOUNS),
            "verb": self._pick(VERBS),
            "adv": self._pick(ADVERBS),
            "prep": self._pick(PREPOSITIONS),
            "name": self._pick(NAMES),
            "name2": self._pick(NAMES),
            "time": self._pick(TIMES),
        }
        text = template.format(**slots).replace(" ,", ",")
        return text[0].upper() + text[1:] + "."

    def sentences(self, count: int) -> list[str]:
        return [self.sentence() for _ in range(count)]

    def documents(self, n_documents: int, sentences_per_document: int) -> list[str]:
        return [" ".join(self.sentences(sentences_per_document)) for _ in range(n_documents)]


def generate_documents(
    n_documents: int,
    sentences_per_document: int = 10,
    seed: int = 0,
    grammar: Optional[SyntheticGrammar] = None,
) -> list[str]:
    if n_documents < 0 or sentences_per_document < 1:
        raise ValueError("need a non-negative document count and at least one sentence per document")
    grammar = grammar or SyntheticGrammar(seed)
    documents = grammar.documents(n_documents, sentences_per_document)
    logger.info("generated %d synthetic documents (%d sentences)", n_documents, n_documents * sentences_per_document)
    return documents
