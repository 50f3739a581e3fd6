"""Reconstruction training: batching, gradient accumulation, Adam, checkpoints and metrics."""

from __future__ import annotations

import csv
import logging
import math
import queue
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence, TextIO, TypeVar

import numpy as np
from pydantic import BaseModel
from tqdm import tqdm

from .checkpoint import save_checkpoint
from .config import TrainConfig
from .corpus import SentenceRecord
from .errors import ConfigError, CorpusError, DivergenceError
from .model import Autoencoder
from .tensor import adam_step, cross_entropy
from .tokenizer import Tokenizer, TokenSequence

logger = logging.getLogger(__name__)

IGNORE_INDEX = -100
SEED_MASK = 0xFFFFFFFFFFFFFFFF

T = TypeVar("T")


def lr_for(d: int) -> float:
    """Learning rate by width: 1e-4 below d=1024, 5e-5 from there on."""
    return 1e-4 if d < 1024 else 5e-5


# =============================================================================
# Batching
# =============================================================================


def loss_positions(lengths: np.ndarray, n_max: int, include_specials: bool = False) -> np.ndarray:
    """Boolean ``[b, n_max]`` of positions scored by the loss.

    Content tokens and the final [SEP] count; [CLS] is the encoder's
    summary slot and is excluded unless ``include_specials``. Padding
    never counts.
    """
    positions = np.arange(n_max)[None, :]
    mask = positions < np.asarray(lengths)[:, None]
    if not include_specials:
        mask &= positions > 0
    return mask


@dataclass
class Batch:
    ids: np.ndarray
    lengths: np.ndarray
    loss_mask: np.ndarray

    @property
    def size(self) -> int:
        return int(self.ids.shape[0])

    @property
    def n_positions(self) -> int:
        return int(self.loss_mask.sum())

    @property
    def targets(self) -> np.ndarray:
        return np.where(self.loss_mask, self.ids, IGNORE_INDEX)


def collate(sequences: Sequence[TokenSequence], pad_id: int, include_specials: bool = False) -> Batch:
    """Pad to the longest sequence in this batch."""
    lengths = np.array([len(seq) for seq in sequences], dtype=np.int64)
    n_max = int(lengths.max())
    ids = np.full((len(sequences), n_max), pad_id, dtype=np.int64)
    for row, seq in enumerate(sequences):
        ids[row, : len(seq)] = seq.ids
    return Batch(ids=ids, lengths=lengths, loss_mask=loss_positions(lengths, n_max, include_specials))


def encode_records(records: Sequence[SentenceRecord], tokenizer: Tokenizer) -> list[TokenSequence]:
    sequences = [tokenizer.encode(record.text) for record in records]
    truncated = sum(seq.truncated for seq in sequences)
    if truncated:
        logger.warning("%d of %d sentences truncated to %d tokens", truncated, len(sequences), tokenizer.max_seq_len)
    return sequences


def batches_from_sequences(
    sequences: Sequence[TokenSequence],
    pad_id: int,
    micro_batch: int,
    seed: int,
    epoch: int = 0,
    include_specials: bool = False,
) -> Iterator[Batch]:
    """Micro-batches in a permutation determined by ``(seed, epoch)``."""
    if not sequences:
        raise CorpusError("empty corpus")
    order = np.random.default_rng([seed & SEED_MASK, epoch]).permutation(len(sequences))
    for start in range(0, len(order), micro_batch):
        chunk = [sequences[index] for index in order[start : start + micro_batch]]
        yield collate(chunk, pad_id, include_specials)


def epoch_batches(
    sequences: Sequence[TokenSequence],
    pad_id: int,
    micro_batch: int,
    seed: int,
    epochs: int,
    include_specials: bool = False,
) -> Iterator[Batch]:
    """Micro-batches of ``epochs`` consecutive epochs, each epoch in its own seeded order."""
    for epoch in range(epochs):
        yield from batches_from_sequences(sequences, pad_id, micro_batch, seed, epoch, include_specials)


def make_batches(
    records: Sequence[SentenceRecord],
    tokenizer: Tokenizer,
    micro_batch: int,
    seed: int,
    epoch: int = 0,
    include_specials: bool = False,
) -> Iterator[Batch]:
    if not records:
        raise CorpusError("empty corpus")
    sequences = encode_records(records, tokenizer)
    return batches_from_sequences(sequences, tokenizer.vocab.pad_id, micro_batch, seed, epoch, include_specials)


def prefetch(items: Iterable[T], depth: int) -> Iterator[T]:
    """Produce ``items`` on a background thread, at most ``depth`` ahead; order is preserved."""
    if depth <= 0:
        yield from items
        return

    buffer: queue.Queue = queue.Queue(maxsize=depth)
    stop = threading.Event()
    done = object()
    failure: list[BaseException] = []

    def offer(item: object) -> bool:
        while not stop.is_set():
            try:
                buffer.put(item, timeout=0.1)
                return True
            except queue.Full:
                continue
        return False

    def produce() -> None:
        try:
            for item in items:
                if not offer(item):
                    return
        except BaseException as exc:
            failure.append(exc)
        offer(done)

    worker = threading.Thread(target=produce, name="batch-prefetch", daemon=True)
    worker.start()
    try:
        while True:
            item = buffer.get()
            if item is done:
                break
            yield item
    finally:
        stop.set()
        worker.join()
    if failure:
        raise failure[0]


# =============================================================================
# Optimization
# =============================================================================


@dataclass
class OptimizerState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    accum_steps: int = 1
    micro_steps: int = 0
    updates: int = 0
    window_positions: int = 0

    @classmethod
    def from_config(cls, config: TrainConfig, d: int) -> "OptimizerState":
        return cls(
            lr=config.lr if config.lr is not None else lr_for(d),
            beta1=config.beta1,
            beta2=config.beta2,
            eps=config.eps,
            accum_steps=config.accum_steps,
        )


def train_step(
    model: Autoencoder,
    window: Sequence[Batch],
    state: OptimizerState,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """One optimizer update from an accumulation window of micro-batches.

    Each micro-batch loss is a sum over its scored positions divided by the
    positions of the whole window, so the accumulated gradient equals the
    gradient of the mean loss over the concatenated window.
    """
    if len(window) != state.accum_steps:
        raise ValueError(f"window holds {len(window)} micro-batches, expected {state.accum_steps}")
    total_positions = sum(batch.n_positions for batch in window)
    state.window_positions = total_positions
    window_loss = 0.0
    for batch in window:
        logits = model.forward(batch.ids, batch.lengths, training=True, rng=rng)
        loss = cross_entropy(logits, batch.targets, IGNORE_INDEX, reduction="sum") * (1.0 / total_positions)
        value = loss.item()
        if not math.isfinite(value):
            model.zero_grad()
            raise DivergenceError(
                f"divergence: loss={value} at update {state.updates + 1}, micro-batch {state.micro_steps + 1} "
                f"({batch.size} sentences, {batch.ids.shape[1]} positions wide)"
            )
        loss.backward()
        logger.debug("micro-batch %d: loss %.6f over %d positions", state.micro_steps + 1, value, batch.n_positions)
        window_loss += value
        state.micro_steps += 1
    adam_step(model.parameters(), state.lr, state.beta1, state.beta2, state.eps)
    state.updates += 1
    return window_loss


def accumulation_windows(batches: Iterable[Batch], size: int) -> Iterator[list[Batch]]:
    """Group micro-batches into full windows; a trailing partial window is dropped."""
    window: list[Batch] = []
    for batch in batches:
        window.append(batch)
        if len(window) == size:
            yield window
            window = []
    if window:
        logger.warning("skipping %d trailing micro-batches that do not fill an accumulation window", len(window))


# =============================================================================
# Metrics and driver
# =============================================================================


class MetricsLog:
    """CSV of ``step,loss,sentences_per_sec,elapsed_s``, flushed per row."""

    HEADER = ("step", "loss", "sentences_per_sec", "elapsed_s")

    def __init__(self, path: Optional[Path]) -> None:
        self.path = path
        self._handle: Optional[TextIO] = None
        self._writer = None
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            self._handle = open(path, "w", encoding="utf-8", newline="")
            self._writer = csv.writer(self._handle, lineterminator="\n")
            self._writer.writerow(self.HEADER)

    def record(self, step: int, loss: float, sentences_per_sec: float, elapsed: float) -> None:
        if self._writer is None or self._handle is None:
            return
        self._writer.writerow([step, repr(loss), repr(sentences_per_sec), repr(elapsed)])
        self._handle.flush()

    def close(self) -> None:
        if self._handle is not None:
            self._handle.close()
            self._handle = None

    def __enter__(self) -> "MetricsLog":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()


class TrainResult(BaseModel):
    updates: int
    micro_batches: int
    sentences: int
    epochs: int
    lr: float
    final_loss: Optional[float]
    elapsed_s: float
    checkpoints: list[Path]
    final_checkpoint: Optional[Path]


def checkpoint_name(updates: int) -> str:
    return f"step-{updates:06d}.sbae"


def train(
    model: Autoencoder,
    records: Sequence[SentenceRecord],
    tokenizer: Tokenizer,
    config: TrainConfig,
    output_dir: Optional[Path] = None,
    metrics_path: Optional[Path] = None,
    progress: bool = False,
) -> TrainResult:
    """Train ``model`` in place on ``records`` for ``config.epochs`` epochs or ``config.max_steps`` updates.

    Accumulation windows run across epoch boundaries, so an epoch that does
    not fill its last window finishes it with the next epoch's first
    micro-batches. Checkpoints go to ``output_dir`` every ``checkpoint_every``
    updates and once more as ``final.sbae``.
    """
    if not records:
        raise CorpusError("empty corpus")
    sequences = encode_records(records, tokenizer)
    state = OptimizerState.from_config(config, model.config.d)
    dropout_rng = np.random.default_rng([config.seed & SEED_MASK, 2])
    include_specials = model.config.include_specials
    micro_per_epoch = math.ceil(len(sequences) / config.micro_batch)
    planned = micro_per_epoch * config.epochs // config.accum_steps
    if planned == 0 and config.max_steps != 0:
        raise ConfigError(
            f"corpus smaller than one effective batch: {len(sequences)} sentences make {micro_per_epoch} "
            f"micro-batches per epoch over {config.epochs} epochs, an update needs {config.accum_steps}"
        )
    if config.max_steps is not None:
        planned = min(planned, config.max_steps)
    logger.info(
        "training %d sentences: lr=%g, effective batch %d, %d updates planned",
        len(sequences),
        state.lr,
        config.effective_batch,
        planned,
    )

    checkpoints: list[Path] = []
    final_loss: Optional[float] = None
    sentences_seen = 0
    started = time.perf_counter()
    bar = tqdm(total=planned, desc="train", unit="step", disable=not progress)
    with MetricsLog(metrics_path) as metrics:
        if planned:
            batches = epoch_batches(
                sequences, tokenizer.vocab.pad_id, config.micro_batch, config.seed, config.epochs, include_specials
            )
            window_stream = prefetch(accumulation_windows(batches, config.accum_steps), config.prefetch)
            try:
                for window in window_stream:
                    final_loss = train_step(model, window, state, dropout_rng)
                    sentences_seen += sum(batch.size for batch in window)
                    elapsed = time.perf_counter() - started
                    metrics.record(state.updates, final_loss, sentences_seen / max(elapsed, 1e-9), elapsed)
                    bar.update(1)
                    bar.set_postfix(loss=f"{final_loss:.4f}")
                    if state.updates % config.log_every == 0:
                        logger.info("update %d: loss %.4f", state.updates, final_loss)
                    if output_dir is not None and config.checkpoint_every and state.updates % config.checkpoint_every == 0:
                        checkpoints.append(save_checkpoint(model, output_dir / checkpoint_name(state.updates), state.updates))
                    if state.updates >= planned:
                        break
            finally:
                window_stream.close()
    bar.close()
    leftover = micro_per_epoch * config.epochs - state.micro_steps
    if 0 < leftover < config.accum_steps:
        logger.warning("skipping %d trailing micro-batches that do not fill an accumulation window", leftover)

    final_checkpoint = None
    if output_dir is not None:
        final_checkpoint = save_checkpoint(model, output_dir / "final.sbae", state.updates)
    elapsed = time.perf_counter() - started
    logger.info("finished %d updates in %.1fs, final loss %s", state.updates, elapsed, final_loss)
    return TrainResult(
        updates=state.updates,
        micro_batches=state.micro_steps,
        sentences=sentences_seen,
        epochs=config.epochs,
        lr=state.lr,
        final_loss=final_loss,
        elapsed_s=elapsed,
        checkpoints=checkpoints,
        final_checkpoint=final_checkpoint,
    )
