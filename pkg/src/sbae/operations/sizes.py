"""Parameter-count operation."""

from __future__ import annotations

from ..config import ModelConfig
from ..model import count_params
from ..workspace import Workspace


def params(workspace: Workspace, config: ModelConfig) -> dict:
    """Parameter counts per component, without allocating the model."""
    report = count_params(config)
    header = f"d={config.d} ell={config.ell} heads={config.n_heads} ffn={config.ffn_dim} V={config.vocab_size}"
    return {
        "success": True,
        "output": f"{header}\n{report.as_table()}",
        "counts": {row.part: row.count for row in report.rows},
        "artifacts": [],
    }
