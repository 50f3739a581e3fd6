"""LangChain @tool wrappers for sbae operations.

Usage:
    from sbae.langchain_tools import TOOLS

    # Or import individual tools:
    from sbae.langchain_tools import sbae_param_counts, sbae_reconstruct
"""

from __future__ import annotations

from functools import lru_cache
from pathlib import Path
from typing import Optional

from langchain_core.tools import tool
from pydantic import BaseModel, Field, ValidationError

from .config import ModelConfig
from .errors import SbaeError
from .operations import data, evaluation, sizes
from .workspace import Workspace, format_result


@lru_cache
def _get_workspace() -> Workspace:
    """Singleton Workspace configured from environment."""
    return Workspace()


def _run(operation, *args, **kwargs) -> str:
    try:
        return format_result(operation(_get_workspace(), *args, **kwargs))
    except (SbaeError, OSError, ValidationError) as exc:
        return format_result({"success": False, "error": str(exc)})


# =============================================================================
# Corpus
# =============================================================================


class IngestInput(BaseModel):
    inputs: list[str] = Field(description="Raw text files; documents are separated by blank lines")
    output: str = Field(description="Where to write the JSONL sentence corpus")
    max_chars: int = Field(default=512, description="Drop sentences of this many characters or more")


@tool(args_schema=IngestInput)
def sbae_ingest(inputs: list[str], output: str, max_chars: int = 512) -> str:
    """Split raw text files into sentences and write a JSONL corpus."""
    return _run(data.ingest, [Path(path) for path in inputs], Path(output), max_chars=max_chars)


class CorpusStatsInput(BaseModel):
    corpus: str = Field(description="JSONL corpus path")
    vocab: Optional[str] = Field(default=None, description="Vocabulary file for token lengths")


@tool(args_schema=CorpusStatsInput)
def sbae_corpus_stats(corpus: str, vocab: Optional[str] = None) -> str:
    """Sentence length statistics (characters, words, tokens) of a corpus."""
    return _run(data.stats, Path(corpus), Path(vocab) if vocab else None)


# =============================================================================
# Models
# =============================================================================


class ParamCountsInput(BaseModel):
    d: int = Field(default=768, description="Hidden size")
    ell: int = Field(default=1, description="Transformer layers per stack")
    heads: Optional[int] = Field(default=None, description="Attention heads (default follows d)")
    vocab_size: int = Field(default=30522, description="Vocabulary size")


@tool(args_schema=ParamCountsInput)
def sbae_param_counts(d: int = 768, ell: int = 1, heads: Optional[int] = None, vocab_size: int = 30522) -> str:
    """Parameter counts of an autoencoder configuration, per component."""
    try:
        config = ModelConfig(d=d, ell=ell, n_heads=heads, vocab_size=vocab_size)
    except ValueError as exc:
        return format_result({"success": False, "error": str(exc)})
    return _run(sizes.params, config)


class ReconstructInput(BaseModel):
    checkpoint: str = Field(description="Checkpoint file (.sbae)")
    sentence: str = Field(description="Sentence to encode and decode")
    vocab: Optional[str] = Field(default=None, description="Vocabulary file (default from SBAE_VOCAB_PATH)")


@tool(args_schema=ReconstructInput)
def sbae_reconstruct(checkpoint: str, sentence: str, vocab: Optional[str] = None) -> str:
    """Reconstruct a sentence through the bottleneck and show mismatched tokens."""
    return _run(evaluation.reconstruct, Path(checkpoint), sentence, vocab=Path(vocab) if vocab else None)


class EvaluateInput(BaseModel):
    checkpoint: str = Field(description="Checkpoint file (.sbae)")
    corpus: str = Field(description="JSONL corpus path")
    vocab: Optional[str] = Field(default=None, description="Vocabulary file (default from SBAE_VOCAB_PATH)")
    split: str = Field(default="test", description="Which split to score: train, test or unassigned")


@tool(args_schema=EvaluateInput)
def sbae_evaluate(checkpoint: str, corpus: str, vocab: Optional[str] = None, split: str = "test") -> str:
    """Score a checkpoint's reconstruction accuracy on a corpus split."""
    if split not in ("train", "test", "unassigned"):
        return format_result({"success": False, "error": f"unknown split {split!r}"})
    return _run(
        evaluation.evaluate_checkpoint,
        Path(checkpoint),
        Path(corpus),
        vocab=Path(vocab) if vocab else None,
        split=split,
    )


# =============================================================================
# Tool exports
# =============================================================================

TOOLS = [
    # Corpus
    sbae_ingest,
    sbae_corpus_stats,
    # Models
    sbae_param_counts,
    sbae_reconstruct,
    sbae_evaluate,
]
