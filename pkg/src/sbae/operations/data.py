"""Corpus operations: ingest, statistics, splits, vocabulary and synthetic text."""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

from ..corpus import (
    DIMENSIONS,
    DEFAULT_MAX_CHARS,
    assign_splits,
    atomic_write_text,
    compute_stats,
    histogram_csv,
    ingest_documents,
    length_histogram,
    read_documents,
    read_jsonl,
    with_token_lengths,
    write_jsonl,
)
from ..errors import CorpusError
from ..plots import save_line_chart
from ..synthetic import generate_documents
from ..tokenizer import build_vocab
from ..workspace import Workspace


def ingest(
    workspace: Workspace,
    inputs: Sequence[Path],
    output: Optional[Path] = None,
    max_chars: int = DEFAULT_MAX_CHARS,
    workers: int = 1,
) -> dict:
    """Segment raw text files into a JSONL sentence corpus.

    Returns:
        dict with keys: success, output, documents, kept, dropped, artifacts.
    """
    if max_chars < 1:
        raise CorpusError(f"max_chars must be positive, got {max_chars}")
    output = output or workspace.data_dir / "corpus.jsonl"
    documents = [document for path in inputs for document in read_documents(Path(path))]
    result = ingest_documents(documents, max_chars=max_chars, workers=workers)
    write_jsonl(result.records, output)
    return {
        "success": True,
        "output": (
            f"{result.n_documents} documents -> {result.n_kept} sentences "
            f"({result.n_dropped} dropped at {max_chars} chars) written to {output}"
        ),
        "documents": result.n_documents,
        "kept": result.n_kept,
        "dropped": result.n_dropped,
        "artifacts": [output],
    }


def stats(
    workspace: Workspace,
    corpus: Path,
    vocab: Optional[Path] = None,
    output: Optional[Path] = None,
    histogram_dir: Optional[Path] = None,
    bin_width: int = 1,
    svg: bool = False,
) -> dict:
    """Length statistics and per-dimension histograms of a corpus.

    Token lengths are filled in when a vocabulary is available, from
    ``vocab`` or the workspace default.
    """
    records = read_jsonl(corpus)
    if not records:
        raise CorpusError("empty corpus")
    if vocab is not None or workspace.configured:
        records = with_token_lengths(records, workspace.tokenizer(vocab))
    summary = compute_stats(records)
    output = output or corpus.with_name(corpus.stem + ".stats.json")
    atomic_write_text(output, summary.model_dump_json(indent=2) + "\n")
    artifacts = [output]

    histogram_dir = histogram_dir or output.parent
    for dimension in DIMENSIONS:
        if dimension == "tokens" and summary.n_tokens == 0:
            continue
        bins = length_histogram(records, dimension, bin_width)
        path = histogram_dir / f"{corpus.stem}.hist_{dimension}.csv"
        atomic_write_text(path, histogram_csv(bins))
        artifacts.append(path)
        if svg:
            chart = save_line_chart(
                path.with_suffix(".svg"),
                {dimension: [(float(start), float(count)) for start, count in bins]},
                title=f"sentence length ({dimension})",
                x_label=f"length in {dimension}",
                y_label="sentences",
            )
            artifacts.append(chart)

    lines = [
        f"documents {summary.n_documents}, sentences {summary.n_sentences}",
        f"characters {summary.n_characters}, words {summary.n_words}, tokens {summary.n_tokens}",
        f"chars/word {summary.chars_per_word:.3f}, chars/token {summary.chars_per_token:.3f}, "
        f"tokens/word {summary.tokens_per_word:.3f}",
    ]
    for dimension in DIMENSIONS:
        length = getattr(summary, dimension)
        lines.append(
            f"{dimension:<6} mean {length.mean:.2f} sd {length.stddev:.2f} median {length.median:g} "
            f"q25 {length.q25:g} q75 {length.q75:g} q95 {length.q95:g} q99 {length.q99:g}"
        )
    return {
        "success": True,
        "output": "\n".join(lines),
        "stats": summary.model_dump(),
        "artifacts": artifacts,
    }


def split(
    workspace: Workspace,
    corpus: Path,
    n_test: int,
    seed: int = 0,
    output: Optional[Path] = None,
) -> dict:
    """Mark a seeded test split of exactly ``n_test`` sentences."""
    records = assign_splits(read_jsonl(corpus), n_test, seed)
    output = output or corpus
    write_jsonl(records, output)
    return {
        "success": True,
        "output": f"{len(records) - n_test} train / {n_test} test sentences written to {output}",
        "train": len(records) - n_test,
        "test": n_test,
        "artifacts": [output],
    }


def vocab(
    workspace: Workspace,
    corpus: Path,
    size: int,
    output: Optional[Path] = None,
) -> dict:
    """Build a WordPiece-compatible vocabulary from corpus text."""
    records = read_jsonl(corpus)
    if not records:
        raise CorpusError("empty corpus")
    built = build_vocab(records, size)
    output = output or workspace.data_dir / "vocab.txt"
    built.save(output)
    warnings = [f"vocabulary has {len(built)} entries, above the requested {size}"] if len(built) > size else []
    return {
        "success": True,
        "output": f"{len(built)} tokens written to {output}",
        "size": len(built),
        "warnings": warnings,
        "artifacts": [output],
    }


def synth(
    workspace: Workspace,
    n_documents: int,
    sentences_per_document: int = 10,
    seed: int = 0,
    output: Optional[Path] = None,
) -> dict:
    """Write a synthetic raw-text corpus, one document per blank-line-separated block."""
    documents = generate_documents(n_documents, sentences_per_document, seed)
    output = output or workspace.data_dir / "synthetic.txt"
    atomic_write_text(output, "\n\n".join(documents) + "\n")
    return {
        "success": True,
        "output": f"{n_documents} documents written to {output}",
        "documents": n_documents,
        "artifacts": [output],
    }
