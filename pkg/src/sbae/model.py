"""Transformer encoder/decoder autoencoder with a single-vector bottleneck."""

from __future__ import annotations

import logging
from typing import Callable, Iterator, Optional, Sequence

import numpy as np
from pydantic import BaseModel

from .config import INF, ModelConfig, Multiplier
from .errors import ShapeError
from .tensor import (
    Parameter,
    Tensor,
    dropout,
    embedding,
    gelu,
    get_default_dtype,
    layernorm,
    matmul,
    meta_array,
    no_grad,
    softmax,
)
from .tokenizer import TokenSequence

logger = logging.getLogger(__name__)

MASK_VALUE = -1e9


class _Initializer:
    """Draws parameter values in construction order from one seeded generator."""

    def __init__(self, seed: int, std: float, materialize: bool) -> None:
        self.rng = np.random.default_rng(seed & 0xFFFFFFFFFFFFFFFF)
        self.std = std
        self.materialize = materialize
        self.dtype = get_default_dtype()

    def normal(self, *shape: int) -> Parameter:
        if not self.materialize:
            return Parameter(meta_array(shape, self.dtype))
        return Parameter(self.rng.normal(0.0, self.std, size=shape).astype(self.dtype))

    def constant(self, value: float, *shape: int) -> Parameter:
        if not self.materialize:
            return Parameter(meta_array(shape, self.dtype))
        return Parameter(np.full(shape, value, dtype=self.dtype))


class Module:
    """Parameter container; names follow attribute definition order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for attr, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + attr, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{attr}.")
            elif isinstance(value, list):
                for index, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{attr}.{index}.")

    def parameters(self) -> list[Parameter]:
        return [param for _, param in self.named_parameters()]

    def zero_grad(self) -> None:
        for param in self.parameters():
            param.zero_grad()

    def num_parameters(self) -> int:
        return sum(param.size for param in self.parameters())


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, init: _Initializer) -> None:
        self.weight = init.normal(d_in, d_out)
        self.bias = init.constant(0.0, d_out)

    def __call__(self, x: Tensor) -> Tensor:
        return matmul(x, self.weight) + self.bias


class LayerNorm(Module):
    def __init__(self, d: int, eps: float, init: _Initializer) -> None:
        self.gamma = init.constant(1.0, d)
        self.beta = init.constant(0.0, d)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layernorm(x, self.gamma, self.beta, self.eps)


class SelfAttention(Module):
    """Multi-head scaled dot-product self-attention with a key padding mask."""

    def __init__(self, config: ModelConfig, init: _Initializer) -> None:
        self.query = Linear(config.d, config.d, init)
        self.key = Linear(config.d, config.d, init)
        self.value = Linear(config.d, config.d, init)
        self.output = Linear(config.d, config.d, init)
        self.n_heads = config.n_heads
        self.head_dim = config.head_dim
        self.dropout_p = config.dropout_p

    def __call__(
        self,
        x: Tensor,
        mask_bias: np.ndarray,
        training: bool,
        rng: Optional[np.random.Generator],
    ) -> Tensor:
        batch, n, d = x.shape

        def split_heads(t: Tensor) -> Tensor:
            return t.reshape(batch, n, self.n_heads, self.head_dim).transpose(0, 2, 1, 3)

        q = split_heads(self.query(x))
        k = split_heads(self.key(x))
        v = split_heads(self.value(x))
        scores = matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(self.head_dim)) + mask_bias
        probs = dropout(softmax(scores, axis=-1), self.dropout_p, training, rng)
        context = matmul(probs, v).transpose(0, 2, 1, 3).reshape(batch, n, d)
        return self.output(context)


class TransformerLayer(Module):
    """Post-norm block: attention, add & norm, GELU feed-forward, add & norm."""

    def __init__(self, config: ModelConfig, init: _Initializer) -> None:
        self.attention = SelfAttention(config, init)
        self.attention_norm = LayerNorm(config.d, config.layernorm_eps, init)
        self.intermediate = Linear(config.d, config.ffn_dim, init)
        self.output = Linear(config.ffn_dim, config.d, init)
        self.output_norm = LayerNorm(config.d, config.layernorm_eps, init)
        self.dropout_p = config.dropout_p

    def __call__(
        self,
        x: Tensor,
        mask_bias: np.ndarray,
        training: bool,
        rng: Optional[np.random.Generator],
    ) -> Tensor:
        x = self.attention_norm(x + self.attention(x, mask_bias, training, rng))
        hidden = dropout(self.output(gelu(self.intermediate(x))), self.dropout_p, training, rng)
        return self.output_norm(x + hidden)


def _key_padding_bias(lengths: np.ndarray, n: int, dtype: np.dtype) -> np.ndarray:
    valid = np.arange(n)[None, :] < lengths[:, None]
    return np.where(valid, 0.0, MASK_VALUE).astype(dtype)[:, None, None, :]


def _repeat_counts(lengths: np.ndarray, m: Multiplier) -> np.ndarray:
    return lengths.copy() if m == INF else np.minimum(lengths, m)


def _bottleneck_rows(e: Tensor, lengths: np.ndarray, n: int, m: Multiplier) -> Tensor:
    """``[b, n, d]`` decoder input: row i is e while i < repeats, else all ones."""
    batch, d = e.shape
    carried = (np.arange(n)[None, :] < _repeat_counts(lengths, m)[:, None]).astype(e.dtype)[:, :, None]
    return e.reshape(batch, 1, d) * carried + (1.0 - carried)


def expand_bottleneck(e: Tensor, n: int, m: Multiplier) -> Tensor:
    """Decoder input ``[n, d]`` for one sentence: min(m, n) copies of ``e``, then rows of ones."""
    if n < 1:
        raise ShapeError(f"sentence length must be positive, got {n}")
    if e.ndim != 1:
        raise ShapeError(f"bottleneck must be a vector, got shape {e.shape}")
    rows = _bottleneck_rows(e.reshape(1, e.shape[0]), np.array([n]), n, m)
    return rows.reshape(n, e.shape[0])


class Autoencoder(Module):
    """Encoder stack, position-0 bottleneck, decoder stack, language-model head.

    Both stacks share the token-independent position table. The encoder
    sees token plus position embeddings; the decoder sees the expanded
    bottleneck plus position embeddings. ``encoder_output_hook`` may
    replace the encoder's output states before the bottleneck is read.
    """

    def __init__(self, config: ModelConfig, seed: int = 0, materialize: bool = True) -> None:
        init = _Initializer(seed, config.init_std, materialize)
        self.token_embedding = init.normal(config.vocab_size, config.d)
        self.position_embedding = init.normal(config.max_seq_len, config.d)
        self.encoder = [TransformerLayer(config, init) for _ in range(config.ell)]
        self.decoder = [TransformerLayer(config, init) for _ in range(config.ell)]
        self.lm_head = Linear(config.d, config.vocab_size, init)
        self.config = config
        self.materialized = materialize
        self.dropout_rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, 1])
        self.encoder_output_hook: Optional[Callable[[Tensor], Tensor]] = None
        for name, param in self.named_parameters():
            param.name = name
        logger.debug("built %s with %d parameters", config, self.num_parameters())

    @property
    def dtype(self) -> np.dtype:
        return self.token_embedding.dtype

    def _check_batch(self, ids: np.ndarray, lengths: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if not self.materialized:
            raise ShapeError("shape-only model cannot run")
        ids = np.asarray(ids, dtype=np.int64)
        lengths = np.asarray(lengths, dtype=np.int64)
        if ids.ndim != 2 or lengths.shape != (ids.shape[0],):
            raise ShapeError(f"expected ids [b, n] with b lengths, got {ids.shape} and {lengths.shape}")
        self._check_length(ids.shape[1])
        if lengths.size and (lengths.min() < 1 or lengths.max() > ids.shape[1]):
            raise ShapeError(f"lengths must lie in [1, {ids.shape[1]}]")
        return ids, lengths

    def _check_length(self, n: int) -> None:
        if n > self.config.max_seq_len:
            raise ShapeError(f"sequence length {n} exceeds max_seq_len {self.config.max_seq_len}")
        if n < 1:
            raise ShapeError("sequence length must be positive")

    def _rng(self, training: bool, rng: Optional[np.random.Generator]) -> Optional[np.random.Generator]:
        if training and rng is None:
            return self.dropout_rng
        return rng

    def encoder_states(
        self,
        ids: np.ndarray,
        lengths: np.ndarray,
        training: bool = False,
        rng: Optional[np.random.Generator] = None,
    ) -> Tensor:
        """Encoder output ``[b, n, d]``; padded keys are masked out of attention."""
        ids, lengths = self._check_batch(ids, lengths)
        rng = self._rng(training, rng)
        n = ids.shape[1]
        x = embedding(self.token_embedding, ids) + self.position_embedding[:n]
        bias = _key_padding_bias(lengths, n, self.dtype)
        for layer in self.encoder:
            x = layer(x, bias, training, rng)
        if self.encoder_output_hook is not None:
            x = self.encoder_output_hook(x)
        return x

    def bottleneck(
        self,
        ids: np.ndarray,
        lengths: np.ndarray,
        training: bool = False,
        rng: Optional[np.random.Generator] = None,
    ) -> Tensor:
        """Position-0 encoder states, ``[b, d]``."""
        return self.encoder_states(ids, lengths, training, rng)[:, 0, :]

    def decode_batch(
        self,
        e: Tensor,
        lengths: np.ndarray,
        training: bool = False,
        rng: Optional[np.random.Generator] = None,
    ) -> Tensor:
        """Logits ``[b, n_max, V]`` from bottleneck vectors ``[b, d]``; nothing else reaches the decoder."""
        lengths = np.asarray(lengths, dtype=np.int64)
        if e.ndim != 2 or e.shape != (lengths.shape[0], self.config.d):
            raise ShapeError(f"expected bottleneck [{lengths.shape[0]}, {self.config.d}], got {e.shape}")
        rng = self._rng(training, rng)
        n = int(lengths.max())
        self._check_length(n)
        x = _bottleneck_rows(e, lengths, n, self.config.m) + self.position_embedding[:n]
        bias = _key_padding_bias(lengths, n, self.dtype)
        for layer in self.decoder:
            x = layer(x, bias, training, rng)
        return self.lm_head(x)

    def forward(
        self,
        ids: np.ndarray,
        lengths: np.ndarray,
        training: bool = False,
        rng: Optional[np.random.Generator] = None,
    ) -> Tensor:
        """Reconstruction logits for a padded batch of token ids."""
        rng = self._rng(training, rng)
        e = self.bottleneck(ids, lengths, training, rng)
        return self.decode_batch(e, lengths, training, rng)

    __call__ = forward

    def encode(self, sequence: TokenSequence, training: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
        ids = np.asarray(sequence.ids, dtype=np.int64)[None, :]
        return self.bottleneck(ids, np.array([ids.shape[1]]), training, rng).reshape(self.config.d)

    def decode(self, e: Tensor, n: int, training: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
        """Logits ``[n, V]`` for one sentence of length n from its bottleneck vector."""
        if e.shape != (self.config.d,):
            raise ShapeError(f"expected bottleneck of shape ({self.config.d},), got {e.shape}")
        logits = self.decode_batch(e.reshape(1, self.config.d), np.array([n]), training, rng)
        return logits.reshape(n, self.config.vocab_size)

    def predict(self, ids: np.ndarray, lengths: np.ndarray) -> np.ndarray:
        """Greedy per-position token ids ``[b, n_max]``; the lowest id wins ties."""
        with no_grad():
            logits = self.forward(ids, lengths, training=False)
        return logits.data.argmax(axis=-1)

    def reconstruct(self, sequence: TokenSequence) -> np.ndarray:
        ids = np.asarray(sequence.ids, dtype=np.int64)[None, :]
        return self.predict(ids, np.array([ids.shape[1]]))[0]


# =============================================================================
# Parameter accounting
# =============================================================================

_REFERENCE_EMBEDDING = {768: 23.44, 1024: 31.25, 2048: 62.51}
_REFERENCE_BODY = {
    (768, 1): 5.36,
    (1024, 1): 7.41,
    (2048, 1): 17.04,
    (768, 2): 10.72,
    (1024, 2): 14.82,
    (2048, 2): 34.09,
    (768, 3): 16.08,
    (1024, 3): 22.23,
    (2048, 3): 51.13,
}
REFERENCE_VOCAB_SIZE = 30522


class ParamRow(BaseModel):
    part: str
    count: int
    millions: float
    reference_millions: Optional[float] = None


class ParamReport(BaseModel):
    d: int
    ell: int
    vocab_size: int
    rows: list[ParamRow]

    def count(self, part: str) -> int:
        for row in self.rows:
            if row.part == part:
                return row.count
        raise KeyError(part)

    def as_table(self) -> str:
        lines = [f"{'part':<20} {'count':>14} {'millions':>10} {'reference':>10}"]
        for row in self.rows:
            reference = f"{row.reference_millions:.2f}" if row.reference_millions is not None else "-"
            lines.append(f"{row.part:<20} {row.count:>14,} {row.millions:>10.2f} {reference:>10}")
        return "\n".join(lines)


def _millions(count: int) -> float:
    return round(count / 1e6, 2)


def count_params(config: ModelConfig) -> ParamReport:
    """Parameter counts per component, from a shape-only model.

    The encoder and decoder bodies have equal size, reported once as
    ``body_per_group``. ``lm_head`` counts the projection matrix; its bias
    has a row of its own. Reference figures are attached when
    the vocabulary is BERT's.
    """
    model = Autoencoder(config, materialize=False)
    sizes: dict[str, int] = {}
    for name, param in model.named_parameters():
        sizes[name] = param.size

    def total(prefix: str) -> int:
        return sum(size for name, size in sizes.items() if name.startswith(prefix))

    reference = config.vocab_size == REFERENCE_VOCAB_SIZE
    embedding_ref = _REFERENCE_EMBEDDING.get(config.d) if reference else None
    body_ref = _REFERENCE_BODY.get((config.d, config.ell)) if reference else None
    parts: Sequence[tuple[str, int, Optional[float]]] = (
        ("embedding_table", sizes["token_embedding"], embedding_ref),
        ("position_embedding", sizes["position_embedding"], None),
        ("body_per_group", total("encoder."), body_ref),
        ("lm_head", sizes["lm_head.weight"], embedding_ref),
        ("lm_head_bias", sizes["lm_head.bias"], None),
        ("total", sum(sizes.values()), None),
    )
    return ParamReport(
        d=config.d,
        ell=config.ell,
        vocab_size=config.vocab_size,
        rows=[ParamRow(part=part, count=count, millions=_millions(count), reference_millions=ref) for part, count, ref in parts],
    )
