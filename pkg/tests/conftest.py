"""Shared fixtures: small committed files plus a seeded synthetic corpus."""

from pathlib import Path

import pytest

from sbae.config import ModelConfig
from sbae.corpus import ingest_documents
from sbae.synthetic import generate_documents
from sbae.tokenizer import Tokenizer, Vocab, build_vocab
from sbae.workspace import Workspace

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def tiny_vocab() -> Vocab:
    return Vocab.load(FIXTURES / "vocab.txt")


@pytest.fixture(scope="session")
def synthetic_records():
    """1000 sentences from 100 seeded synthetic documents."""
    result = ingest_documents(generate_documents(100, 10, seed=3))
    assert result.n_kept == 1000
    return result.records


@pytest.fixture(scope="session")
def synthetic_tokenizer(synthetic_records) -> Tokenizer:
    return Tokenizer(build_vocab(synthetic_records, 400), max_seq_len=32)


@pytest.fixture
def small_config() -> ModelConfig:
    """Tiny architecture for fast forward/backward checks."""
    return ModelConfig(d=16, ell=1, n_heads=2, vocab_size=23, max_seq_len=16, dropout_p=0.0)


@pytest.fixture
def workspace(tmp_path, monkeypatch) -> Workspace:
    monkeypatch.delenv("SBAE_VOCAB_PATH", raising=False)
    return Workspace(
        data_dir=tmp_path / "data",
        runs_dir=tmp_path / "runs",
        checkpoint_dir=tmp_path / "checkpoints",
    )

