"""sentence-bottleneck-ae: sentence autoencoders with a single-vector bottleneck, as a library, CLI and LangChain tools."""

from .config import INF, EvalConfig, ModelConfig, TrainConfig
from .model import Autoencoder, count_params
from .workspace import Workspace

__all__ = ["INF", "Autoencoder", "EvalConfig", "ModelConfig", "TrainConfig", "Workspace", "count_params"]
