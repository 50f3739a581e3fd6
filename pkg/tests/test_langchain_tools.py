"""Tests for LangChain tool interfaces."""

import pytest

pytest.importorskip("langchain_core")

from langchain_core.tools import BaseTool  # noqa: E402

from sbae import langchain_tools  # noqa: E402
from sbae.config import ModelConfig  # noqa: E402
from sbae.langchain_tools import TOOLS  # noqa: E402


@pytest.fixture(autouse=True)
def fresh_workspace(tmp_path, monkeypatch):
    monkeypatch.delenv("SBAE_VOCAB_PATH", raising=False)
    monkeypatch.setenv("SBAE_DATA_DIR", str(tmp_path / "data"))
    langchain_tools._get_workspace.cache_clear()
    yield
    langchain_tools._get_workspace.cache_clear()


def test_tools_count():
    assert len(TOOLS) == 5


def test_all_tools_are_base_tool():
    for t in TOOLS:
        assert isinstance(t, BaseTool), f"{t} is not a BaseTool"


def test_tool_names_follow_convention():
    for t in TOOLS:
        assert t.name.startswith("sbae_"), f"Tool {t.name} does not follow sbae_ naming convention"


def test_tool_names_are_unique():
    names = [t.name for t in TOOLS]
    assert len(names) == len(set(names)), f"Duplicate tool names: {names}"


def test_expected_tools_present():
    names = {t.name for t in TOOLS}
    expected = {
        "sbae_ingest",
        "sbae_corpus_stats",
        "sbae_param_counts",
        "sbae_reconstruct",
        "sbae_evaluate",
    }
    assert expected == names


def test_all_tools_have_descriptions():
    for t in TOOLS:
        assert t.description, f"Tool {t.name} has no description"


def test_param_counts_tool():
    out = langchain_tools.sbae_param_counts.invoke({"d": 2048})
    assert "62.51" in out


def test_param_counts_tool_reports_bad_config():
    out = langchain_tools.sbae_param_counts.invoke({"d": 16, "heads": 5})
    assert out.startswith("Error:")


def test_ingest_and_stats_tools(tmp_path, fixtures_dir):
    corpus = tmp_path / "corpus.jsonl"
    out = langchain_tools.sbae_ingest.invoke({"inputs": [str(fixtures_dir / "documents.txt")], "output": str(corpus)})
    assert "8 sentences" in out
    stats = langchain_tools.sbae_corpus_stats.invoke({"corpus": str(corpus)})
    assert "sentences 8" in stats


def test_errors_become_text(tmp_path):
    out = langchain_tools.sbae_reconstruct.invoke({"checkpoint": str(tmp_path / "absent.sbae"), "sentence": "hi"})
    assert out.startswith("Error:")
    out = langchain_tools.sbae_evaluate.invoke(
        {"checkpoint": str(tmp_path / "absent.sbae"), "corpus": "c.jsonl", "split": "dev"}
    )
    assert "unknown split" in out


def test_os_errors_become_text(tmp_path, monkeypatch):
    def unreadable(*args, **kwargs):
        raise PermissionError(13, "Permission denied", str(tmp_path / "locked.txt"))

    monkeypatch.setattr(langchain_tools.data, "ingest", unreadable)
    out = langchain_tools.sbae_ingest.invoke({"inputs": [str(tmp_path / "locked.txt")], "output": str(tmp_path / "c.jsonl")})
    assert out.startswith("Error:")
    assert "Permission denied" in out


def test_validation_errors_become_text(tmp_path, monkeypatch):
    def malformed(*args, **kwargs):
        return ModelConfig(d="wide")

    monkeypatch.setattr(langchain_tools.data, "stats", malformed)
    out = langchain_tools.sbae_corpus_stats.invoke({"corpus": str(tmp_path / "c.jsonl")})
    assert out.startswith("Error:")
    assert "validation error" in out
