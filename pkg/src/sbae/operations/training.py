"""Training operation."""

from __future__ import annotations

from pathlib import Path
from typing import Optional

from ..config import ModelConfig, TrainConfig
from ..corpus import Split, read_jsonl, select_split
from ..model import Autoencoder
from ..tensor import precision
from ..train import train
from ..workspace import Workspace


def train_model(
    workspace: Workspace,
    corpus: Path,
    model_config: ModelConfig,
    train_config: TrainConfig,
    vocab: Optional[Path] = None,
    output_dir: Optional[Path] = None,
    split: Split = "train",
    progress: bool = False,
) -> dict:
    """Train a fresh autoencoder on one split of a corpus.

    The vocabulary size in ``model_config`` is replaced by the actual
    vocabulary's. Checkpoints and ``metrics.csv`` go to ``output_dir``.

    Returns:
        dict with keys: success, output, updates, final_loss, lr, artifacts.
    """
    tokenizer = workspace.tokenizer(vocab, model_config.max_seq_len)
    model_config = ModelConfig.model_validate(
        {**model_config.model_dump(), "vocab_size": len(tokenizer.vocab)}
    )
    records = select_split(read_jsonl(corpus), split)
    output_dir = output_dir or workspace.checkpoint_dir
    metrics_path = output_dir / "metrics.csv"

    with precision(train_config.dtype):
        model = Autoencoder(model_config, seed=train_config.seed)
        result = train(
            model,
            records,
            tokenizer,
            train_config,
            output_dir=output_dir,
            metrics_path=metrics_path,
            progress=progress,
        )

    artifacts = [result.final_checkpoint, *result.checkpoints, metrics_path]
    loss_text = f"{result.final_loss:.4f}" if result.final_loss is not None else "n/a"
    return {
        "success": True,
        "output": (
            f"{result.updates} updates over {result.sentences} sentences (lr {result.lr:g}), "
            f"final loss {loss_text}, checkpoint {result.final_checkpoint}"
        ),
        "updates": result.updates,
        "final_loss": result.final_loss,
        "lr": result.lr,
        "elapsed_s": result.elapsed_s,
        "artifacts": artifacts,
    }
