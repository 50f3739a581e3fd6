"""Evaluation and single-sentence reconstruction operations."""

from __future__ import annotations

from pathlib import Path
from typing import Optional

from ..config import EvalConfig
from ..corpus import Split, atomic_write_text, read_jsonl, select_split
from ..errors import CorpusError
from ..evaluation import (
    accuracy_by_length_csv,
    evaluate,
    make_diff,
    render_diff,
    scored_span,
)
from ..plots import save_line_chart
from ..workspace import Workspace


def evaluate_checkpoint(
    workspace: Workspace,
    checkpoint: Path,
    corpus: Path,
    vocab: Optional[Path] = None,
    config: Optional[EvalConfig] = None,
    split: Split = "test",
    output: Optional[Path] = None,
    svg: bool = False,
    progress: bool = False,
) -> dict:
    """Score a checkpoint's reconstructions on one split of a corpus.

    Writes the JSON report, an accuracy-by-length CSV, sample diffs and,
    with ``svg``, an accuracy-by-length chart next to ``output``.
    """
    config = config or EvalConfig()
    model, updates = workspace.model(checkpoint)
    tokenizer = workspace.tokenizer(vocab, model.config.max_seq_len)
    records = select_split(read_jsonl(corpus), split)
    report = evaluate(model, records, tokenizer, config, progress=progress)

    output = output or checkpoint.with_name(checkpoint.stem + ".eval.json")
    atomic_write_text(output, report.model_dump_json(indent=2) + "\n")
    csv_path = output.with_name(output.stem + ".by_length.csv")
    atomic_write_text(csv_path, accuracy_by_length_csv(report))
    diffs = "\n\n".join(render_diff(sample) for sample in report.samples)
    diffs_path = output.with_name(output.stem + ".samples.txt")
    atomic_write_text(diffs_path, diffs + "\n" if diffs else "")
    artifacts = [output, csv_path, diffs_path]
    if svg:
        chart = save_line_chart(
            output.with_name(output.stem + ".by_length.svg"),
            {f"ell={model.config.ell} m={model.config.m}": [(row.length_bin, row.mean_accuracy) for row in report.by_length]},
            title="reconstruction accuracy by sentence length",
            x_label="sentence length (tokens)",
            y_label="mean accuracy",
        )
        artifacts.append(chart)

    warnings = [f"{report.n_truncated} sentences truncated"] if report.n_truncated else []
    return {
        "success": True,
        "output": (
            f"{report.n_sentences} sentences, checkpoint after {updates} updates: "
            f"mean accuracy {report.mean_acc:.4f}, token accuracy {report.weighted_acc:.4f}"
        ),
        "mean_acc": report.mean_acc,
        "weighted_acc": report.weighted_acc,
        "n_sentences": report.n_sentences,
        "warnings": warnings,
        "artifacts": artifacts,
    }


def reconstruct(
    workspace: Workspace,
    checkpoint: Path,
    sentence: str,
    vocab: Optional[Path] = None,
) -> dict:
    """Encode one sentence, decode it back and show the diff."""
    if not sentence.strip():
        raise CorpusError("empty sentence")
    model, _ = workspace.model(checkpoint)
    tokenizer = workspace.tokenizer(vocab, model.config.max_seq_len)
    sequence = tokenizer.encode(sentence)
    predicted = model.reconstruct(sequence)
    span = scored_span(len(sequence), model.config.include_specials)
    if not sequence.ids[span]:
        raise CorpusError("sentence has no tokens to reconstruct")
    diff = make_diff(sequence.ids[span], predicted[span], tokenizer)
    return {
        "success": True,
        "output": f"{render_diff(diff)}\naccuracy {diff.accuracy:.4f}",
        "reconstruction": tokenizer.decode(predicted[span]),
        "accuracy": diff.accuracy,
        "warnings": ["sentence truncated"] if sequence.truncated else [],
        "artifacts": [],
    }
