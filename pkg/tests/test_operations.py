"""Tests for the workspace and the corpus, training, evaluation and sizing operations."""

import json
import shutil

import pytest

from sbae.config import EvalConfig, ModelConfig, TrainConfig
from sbae.corpus import read_jsonl
from sbae.errors import ArtifactError, CheckpointError, ConfigError, CorpusError
from sbae.operations import data, evaluation, sizes, training
from sbae.workspace import Workspace, format_result


@pytest.fixture
def corpus(workspace, fixtures_dir):
    """The fixture documents ingested into the workspace."""
    result = data.ingest(workspace, [fixtures_dir / "documents.txt"])
    return result["artifacts"][0]


@pytest.fixture
def trained(workspace, tmp_path):
    """A split synthetic corpus, its vocabulary and a checkpoint after a few updates."""
    raw = data.synth(workspace, 20, 5, seed=1)["artifacts"][0]
    corpus = data.ingest(workspace, [raw])["artifacts"][0]
    data.split(workspace, corpus, n_test=10, seed=2)
    vocab = data.vocab(workspace, corpus, 300)["artifacts"][0]
    result = training.train_model(
        workspace,
        corpus,
        ModelConfig(d=16, ell=1, n_heads=2, max_seq_len=32, dropout_p=0.0),
        TrainConfig(micro_batch=4, accum_steps=2, lr=1e-3, max_steps=3),
        vocab=vocab,
        output_dir=tmp_path / "run",
    )
    return corpus, vocab, result


# =============================================================================
# Workspace tests
# =============================================================================


def test_workspace_not_configured(workspace):
    assert workspace.configured is False
    with pytest.raises(ConfigError, match="no vocabulary given"):
        workspace.resolve_vocab()


def test_workspace_configured_from_env(tmp_path, monkeypatch, fixtures_dir):
    monkeypatch.setenv("SBAE_VOCAB_PATH", str(fixtures_dir / "vocab.txt"))
    monkeypatch.setenv("SBAE_DATA_DIR", str(tmp_path / "elsewhere"))
    ws = Workspace()
    assert ws.configured is True
    assert ws.data_dir == tmp_path / "elsewhere"
    assert len(ws.tokenizer().vocab) == 23


def test_workspace_caches_tokenizers(workspace, fixtures_dir):
    path = fixtures_dir / "vocab.txt"
    assert workspace.tokenizer(path) is workspace.tokenizer(path)
    assert workspace.tokenizer(path, 16) is not workspace.tokenizer(path, 32)
    workspace.close()
    assert workspace._tokenizers == {}


def test_workspace_missing_checkpoint(workspace, tmp_path):
    with pytest.raises(CheckpointError):
        workspace.model(tmp_path / "absent.sbae")


def test_format_result_success():
    assert format_result({"success": True, "output": "hello\n"}) == "hello"


def test_format_result_warnings():
    text = format_result({"success": True, "output": "done", "warnings": ["careful"]})
    assert text == "done\nWARNING: careful"


def test_format_result_data_only():
    assert json.loads(format_result({"success": True, "count": 3})) == {"count": 3}
    assert format_result({"success": True}) == "Completed successfully (no output)"


def test_format_result_error():
    result = {"success": False, "error": "corpus missing", "detail": "see --input"}
    assert format_result(result) == "Error: corpus missing\nsee --input"


# =============================================================================
# Corpus operations
# =============================================================================


def test_ingest(workspace, fixtures_dir):
    result = data.ingest(workspace, [fixtures_dir / "documents.txt"])
    assert result["success"] is True
    assert (result["documents"], result["kept"], result["dropped"]) == (3, 8, 0)
    assert read_jsonl(result["artifacts"][0]) == read_jsonl(fixtures_dir / "documents.golden.jsonl")


def test_ingest_drops_long_sentences(workspace, fixtures_dir):
    result = data.ingest(workspace, [fixtures_dir / "documents.txt"], max_chars=14)
    assert result["kept"] == 5
    assert result["dropped"] == 3


def test_ingest_missing_input(workspace, tmp_path):
    with pytest.raises(ArtifactError):
        data.ingest(workspace, [tmp_path / "missing.txt"])


def test_stats_writes_report_and_histograms(workspace, corpus, fixtures_dir):
    result = data.stats(workspace, corpus, vocab=fixtures_dir / "vocab.txt")
    names = sorted(path.name for path in result["artifacts"])
    assert names == [
        "corpus.hist_chars.csv",
        "corpus.hist_tokens.csv",
        "corpus.hist_words.csv",
        "corpus.stats.json",
    ]
    report = json.loads(result["artifacts"][0].read_text(encoding="utf-8"))
    assert report["n_sentences"] == 8
    assert report["n_documents"] == 3
    assert "chars/word" in result["output"]


def test_stats_charts(workspace, corpus, fixtures_dir):
    pytest.importorskip("matplotlib")
    result = data.stats(workspace, corpus, vocab=fixtures_dir / "vocab.txt", svg=True)
    charts = sorted(path.name for path in result["artifacts"] if path.suffix == ".svg")
    assert charts == ["corpus.hist_chars.svg", "corpus.hist_tokens.svg", "corpus.hist_words.svg"]
    assert all(path.read_text(encoding="utf-8").lstrip().startswith("<?xml") for path in result["artifacts"] if path.suffix == ".svg")


def test_stats_without_vocab_skips_tokens(workspace, corpus):
    result = data.stats(workspace, corpus)
    assert not any("tokens" in path.name for path in result["artifacts"])
    assert result["stats"]["n_tokens"] == 0


def test_split(workspace, corpus):
    result = data.split(workspace, corpus, n_test=3, seed=4)
    assert (result["train"], result["test"]) == (5, 3)
    splits = [record.split for record in read_jsonl(corpus)]
    assert splits.count("test") == 3


def test_split_too_large(workspace, corpus):
    with pytest.raises(CorpusError):
        data.split(workspace, corpus, n_test=9)


def test_vocab_warns_when_oversized(workspace, corpus):
    result = data.vocab(workspace, corpus, 10)
    assert result["size"] > 10
    assert "above the requested 10" in format_result(result)


def test_synth(workspace):
    result = data.synth(workspace, 4, 3, seed=0)
    text = result["artifacts"][0].read_text(encoding="utf-8")
    assert len(text.strip().split("\n\n")) == 4


# =============================================================================
# Training, evaluation and sizing
# =============================================================================


def test_train_model(trained, tmp_path):
    _, vocab, result = trained
    assert result["success"] is True
    assert result["updates"] == 3
    final, *_, metrics = result["artifacts"]
    assert final == tmp_path / "run" / "final.sbae"
    assert metrics.read_text(encoding="utf-8").startswith("step,loss")


def test_train_model_needs_vocab(workspace, corpus):
    with pytest.raises(ConfigError):
        training.train_model(workspace, corpus, ModelConfig(d=16, n_heads=2), TrainConfig(max_steps=0))


def test_evaluate_checkpoint(workspace, trained):
    corpus, vocab, result = trained
    checkpoint = result["artifacts"][0]
    report = evaluation.evaluate_checkpoint(
        workspace, checkpoint, corpus, vocab=vocab, config=EvalConfig(sample_min_len=1)
    )
    assert report["n_sentences"] == 10
    assert 0.0 <= report["mean_acc"] <= 1.0
    names = sorted(path.name for path in report["artifacts"])
    assert names == [
        "final.eval.by_length.csv",
        "final.eval.json",
        "final.eval.samples.txt",
    ]
    assert "after 3 updates" in report["output"]


def test_evaluate_checkpoint_chart(workspace, trained):
    pytest.importorskip("matplotlib")
    corpus, vocab, result = trained
    report = evaluation.evaluate_checkpoint(workspace, result["artifacts"][0], corpus, vocab=vocab, svg=True)
    chart = report["artifacts"][-1]
    assert chart.name == "final.eval.by_length.svg"
    assert "<svg" in chart.read_text(encoding="utf-8")


def test_workspace_caches_models(workspace, trained, tmp_path):
    corpus, vocab, result = trained
    checkpoint = tmp_path / "copy.sbae"
    shutil.copy(result["artifacts"][0], checkpoint)
    first, _ = workspace.model(checkpoint)
    assert workspace.model(checkpoint)[0] is first


def test_reconstruct(workspace, trained):
    corpus, vocab, result = trained
    text = read_jsonl(corpus)[0].text
    outcome = evaluation.reconstruct(workspace, result["artifacts"][0], text, vocab=vocab)
    assert outcome["output"].startswith("O: ")
    assert "\nR: " in outcome["output"]
    assert 0.0 <= outcome["accuracy"] <= 1.0


def test_reconstruct_empty_sentence(workspace, trained):
    _, vocab, result = trained
    with pytest.raises(CorpusError):
        evaluation.reconstruct(workspace, result["artifacts"][0], "   ", vocab=vocab)


def test_params(workspace):
    result = sizes.params(workspace, ModelConfig(d=768))
    assert result["counts"]["embedding_table"] == 23_440_896
    assert "23.44" in result["output"]
