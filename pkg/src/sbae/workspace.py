"""Artifact locations and cached vocabularies/checkpoints shared by the operations."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional, Union

from .checkpoint import load_checkpoint
from .config import get_settings
from .errors import ConfigError
from .model import Autoencoder
from .tokenizer import Tokenizer

PathLike = Union[str, Path]


class Workspace:
    """Resolves where artifacts live and keeps loaded ones in memory.

    Reads defaults from environment variables (SBAE_* prefix),
    .env file, or explicit constructor parameters.
    """

    def __init__(
        self,
        data_dir: Optional[PathLike] = None,
        runs_dir: Optional[PathLike] = None,
        checkpoint_dir: Optional[PathLike] = None,
        vocab_path: Optional[PathLike] = None,
    ) -> None:
        settings = get_settings()
        self.data_dir = Path(data_dir or settings.data_dir)
        self.runs_dir = Path(runs_dir or settings.runs_dir)
        self.checkpoint_dir = Path(checkpoint_dir or settings.checkpoint_dir)
        chosen_vocab = vocab_path or settings.vocab_path
        self.vocab_path = Path(chosen_vocab) if chosen_vocab else None
        self._tokenizers: dict[tuple[Path, int], Tokenizer] = {}
        self._models: dict[tuple[Path, int], tuple[Autoencoder, int]] = {}

    @property
    def configured(self) -> bool:
        """Check if a default vocabulary is set."""
        return self.vocab_path is not None

    def resolve_vocab(self, path: Optional[PathLike] = None) -> Path:
        if path:
            return Path(path)
        if self.vocab_path is None:
            raise ConfigError("no vocabulary given. Pass --vocab or set SBAE_VOCAB_PATH.")
        return self.vocab_path

    def tokenizer(self, path: Optional[PathLike] = None, max_seq_len: int = 128) -> Tokenizer:
        """Load a vocabulary once per (file, max length)."""
        resolved = self.resolve_vocab(path).resolve()
        key = (resolved, max_seq_len)
        if key not in self._tokenizers:
            self._tokenizers[key] = Tokenizer.from_file(resolved, max_seq_len)
        return self._tokenizers[key]

    def model(self, checkpoint: PathLike) -> tuple[Autoencoder, int]:
        """Load a checkpoint; reloaded when the file changes on disk."""
        resolved = Path(checkpoint).resolve()
        try:
            stamp = resolved.stat().st_mtime_ns
        except OSError:
            stamp = -1
        key = (resolved, stamp)
        if key not in self._models:
            self._models = {k: v for k, v in self._models.items() if k[0] != resolved}
            self._models[key] = load_checkpoint(resolved)
        return self._models[key]

    def close(self) -> None:
        """Drop cached artifacts."""
        self._tokenizers.clear()
        self._models.clear()


def format_result(result: dict) -> str:
    """Format operation result for human-readable output."""
    if result.get("success"):
        output = result.get("output", "")
        for warning in result.get("warnings", []):
            if output:
                output += "\n"
            output += f"WARNING: {warning}"
        if output.strip():
            return output.strip()
        data = {key: value for key, value in result.items() if key not in ("success", "output", "warnings")}
        return json.dumps(data, indent=2, default=str) if data else "Completed successfully (no output)"
    else:
        error = result.get("error", "Unknown error")
        detail = result.get("detail", "")
        return f"Error: {error}" + (f"\n{detail}" if detail else "")
