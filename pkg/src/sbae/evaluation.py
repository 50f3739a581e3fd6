"""Reconstruction accuracy, length-binned reports and sample diffs."""

from __future__ import annotations

import csv
import io
import logging
import math
from collections import defaultdict
from typing import Optional, Protocol, Sequence

import numpy as np
from pydantic import BaseModel, model_validator
from tqdm import tqdm

from .config import EvalConfig, ModelConfig
from .corpus import SentenceRecord
from .errors import CorpusError, ShapeError
from .tokenizer import Tokenizer, TokenSequence
from .train import collate, encode_records

logger = logging.getLogger(__name__)


class Predictor(Protocol):
    config: ModelConfig

    def predict(self, ids: np.ndarray, lengths: np.ndarray) -> np.ndarray: ...


def sentence_accuracy(gold: Sequence[int], predicted: Sequence[int]) -> float:
    """Share of positions where ``predicted`` equals ``gold``."""
    if len(gold) != len(predicted):
        raise ShapeError(f"gold has {len(gold)} positions, prediction has {len(predicted)}")
    if not gold:
        raise ShapeError("cannot score an empty sentence")
    return sum(int(g) == int(p) for g, p in zip(gold, predicted)) / len(gold)


class ReconDiff(BaseModel):
    original: list[str]
    reconstructed: list[str]
    matches: list[bool]

    @model_validator(mode="after")
    def _same_length(self) -> "ReconDiff":
        if not len(self.original) == len(self.reconstructed) == len(self.matches):
            raise ValueError("original, reconstructed and matches must have equal length")
        return self

    @property
    def accuracy(self) -> float:
        return sum(self.matches) / len(self.matches) if self.matches else 0.0


class LengthBin(BaseModel):
    length_bin: int
    mean_accuracy: float
    count: int
    n_tokens: int
    n_correct: int


class EvalReport(BaseModel):
    """Accuracy over a test set.

    ``mean_acc`` averages per-sentence accuracies; ``weighted_acc`` pools
    every scored token, so long sentences weigh more.
    """

    mean_acc: float
    weighted_acc: float
    n_sentences: int
    n_tokens: int
    n_correct: int
    n_truncated: int = 0
    by_length: list[LengthBin]
    samples: list[ReconDiff] = []


def scored_span(length: int, include_specials: bool) -> slice:
    """Positions of a length-n sequence that are scored: content only, or every position."""
    return slice(0, length) if include_specials else slice(1, length - 1)


def summarize(
    golds: Sequence[Sequence[int]],
    predictions: Sequence[Sequence[int]],
    bin_width: int = 5,
) -> EvalReport:
    """Aggregate already-aligned gold/prediction pairs; sentences bin by scored length."""
    if len(golds) != len(predictions):
        raise ShapeError(f"{len(golds)} gold sentences but {len(predictions)} predictions")
    if not golds:
        raise CorpusError("empty corpus")
    accuracies: list[float] = []
    n_tokens = n_correct = 0
    bins: dict[int, list[float]] = defaultdict(list)
    bin_tokens: dict[int, list[int]] = defaultdict(lambda: [0, 0])
    for gold, predicted in zip(golds, predictions):
        accuracy = sentence_accuracy(gold, predicted)
        correct = sum(int(g) == int(p) for g, p in zip(gold, predicted))
        accuracies.append(accuracy)
        n_tokens += len(gold)
        n_correct += correct
        key = (len(gold) // bin_width) * bin_width
        bins[key].append(accuracy)
        bin_tokens[key][0] += len(gold)
        bin_tokens[key][1] += correct

    by_length = [
        LengthBin(
            length_bin=key,
            mean_accuracy=math.fsum(bins[key]) / len(bins[key]),
            count=len(bins[key]),
            n_tokens=bin_tokens[key][0],
            n_correct=bin_tokens[key][1],
        )
        for key in sorted(bins)
    ]
    return EvalReport(
        mean_acc=math.fsum(accuracies) / len(accuracies),
        weighted_acc=n_correct / n_tokens,
        n_sentences=len(accuracies),
        n_tokens=n_tokens,
        n_correct=n_correct,
        by_length=by_length,
    )


def make_diff(gold: Sequence[int], predicted: Sequence[int], tokenizer: Tokenizer) -> ReconDiff:
    return ReconDiff(
        original=tokenizer.pieces(gold),
        reconstructed=tokenizer.pieces(predicted),
        matches=[int(g) == int(p) for g, p in zip(gold, predicted)],
    )


def pick_samples(
    golds: Sequence[Sequence[int]],
    predictions: Sequence[Sequence[int]],
    tokenizer: Tokenizer,
    config: EvalConfig,
) -> list[ReconDiff]:
    """Seeded draw of imperfect reconstructions whose scored length is in the configured range."""
    candidates = [
        index
        for index, (gold, predicted) in enumerate(zip(golds, predictions))
        if config.sample_min_len <= len(gold) <= config.sample_max_len
        and any(int(g) != int(p) for g, p in zip(gold, predicted))
    ]
    if not candidates or config.n_samples == 0:
        return []
    rng = np.random.default_rng(config.sample_seed & 0xFFFFFFFFFFFFFFFF)
    chosen = rng.choice(len(candidates), size=min(config.n_samples, len(candidates)), replace=False)
    return [make_diff(golds[candidates[i]], predictions[candidates[i]], tokenizer) for i in sorted(chosen.tolist())]


def predict_sequences(
    model: Predictor,
    sequences: Sequence[TokenSequence],
    pad_id: int,
    batch_size: int = 64,
    progress: bool = False,
) -> list[np.ndarray]:
    """Full-length predictions per sequence, in input order."""
    predictions: list[np.ndarray] = []
    starts = range(0, len(sequences), batch_size)
    for start in tqdm(starts, desc="eval", unit="batch", disable=not progress):
        batch = collate(sequences[start : start + batch_size], pad_id)
        predicted = model.predict(batch.ids, batch.lengths)
        predictions.extend(predicted[row, :length] for row, length in enumerate(batch.lengths))
    return predictions


def evaluate(
    model: Predictor,
    records: Sequence[SentenceRecord],
    tokenizer: Tokenizer,
    config: Optional[EvalConfig] = None,
    include_specials: Optional[bool] = None,
    progress: bool = False,
) -> EvalReport:
    """Greedy reconstruction accuracy of ``model`` on ``records``."""
    config = config or EvalConfig()
    if not records:
        raise CorpusError("empty corpus")
    if include_specials is None:
        include_specials = model.config.include_specials
    sequences = encode_records(records, tokenizer)
    predictions = predict_sequences(model, sequences, tokenizer.vocab.pad_id, config.batch_size, progress)

    golds: list[list[int]] = []
    scored: list[list[int]] = []
    skipped = 0
    for seq, predicted in zip(sequences, predictions):
        span = scored_span(len(seq), include_specials)
        if not seq.ids[span]:
            skipped += 1
            continue
        golds.append(list(seq.ids[span]))
        scored.append([int(token) for token in predicted[span]])
    if skipped:
        logger.warning("%d sentences have no scored positions and were skipped", skipped)
    if not golds:
        raise CorpusError("no sentence has scored positions")

    report = summarize(golds, scored, config.bin_width)
    report.n_truncated = sum(seq.truncated for seq in sequences)
    report.samples = pick_samples(golds, scored, tokenizer, config)
    logger.info(
        "evaluated %d sentences: mean accuracy %.4f, token accuracy %.4f",
        report.n_sentences,
        report.mean_acc,
        report.weighted_acc,
    )
    return report


# =============================================================================
# Rendering
# =============================================================================


def render_diff(diff: ReconDiff) -> str:
    """Two aligned lines; mismatched reconstructed pieces are wrapped in »«."""
    reconstructed = [piece if ok else f"»{piece}«" for piece, ok in zip(diff.reconstructed, diff.matches)]
    return f"O: {' '.join(diff.original)}\nR: {' '.join(reconstructed)}"


def accuracy_by_length_csv(report: EvalReport) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["length_bin", "mean_accuracy", "count"])
    for row in report.by_length:
        writer.writerow([row.length_bin, repr(row.mean_accuracy), row.count])
    return buffer.getvalue()
