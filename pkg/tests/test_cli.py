"""Tests for the sbae command line."""

import json
from pathlib import Path

import pytest

from sbae.cli import build_parser, main


@pytest.fixture
def in_tmp(tmp_path, monkeypatch):
    """Run commands from an empty directory with no SBAE_* environment."""
    for name in ("SBAE_VOCAB_PATH", "SBAE_DATA_DIR", "SBAE_RUNS_DIR", "SBAE_CHECKPOINT_DIR", "SBAE_LOG_LEVEL"):
        monkeypatch.delenv(name, raising=False)
    monkeypatch.chdir(tmp_path)
    return tmp_path


SMALL_MODEL = ["--d", "16", "--heads", "2", "--ell", "1", "--max-len", "32", "--dropout", "0"]


# =============================================================================
# Parser
# =============================================================================


def test_parser_knows_every_command():
    parser = build_parser()
    for command in ("ingest", "stats", "split", "vocab", "synth", "train", "eval", "reconstruct", "params"):
        assert parser.parse_args(_minimal(command)).command == command


def _minimal(command):
    return {
        "ingest": ["ingest", "--input", "a.txt"],
        "stats": ["stats", "--corpus", "c.jsonl"],
        "split": ["split", "--corpus", "c.jsonl", "--n-test", "1"],
        "vocab": ["vocab", "--corpus", "c.jsonl", "--size", "100"],
        "synth": ["synth", "--documents", "2"],
        "train": ["train", "--corpus", "c.jsonl"],
        "eval": ["eval", "--ckpt", "m.sbae", "--corpus", "c.jsonl"],
        "reconstruct": ["reconstruct", "--ckpt", "m.sbae", "hello"],
        "params": ["params"],
    }[command]


def test_multiplier_flag():
    parser = build_parser()
    assert parser.parse_args(["params", "--m", "inf"]).m == "inf"
    assert parser.parse_args(["params", "--m", "4"]).m == 4


def test_usage_errors_exit_one(in_tmp, capsys):
    with pytest.raises(SystemExit) as info:
        main(["params", "--d", "0"])
    assert info.value.code == 1
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 1


# =============================================================================
# Commands
# =============================================================================


def test_params_prints_embedding_size(in_tmp, capsys):
    assert main(["params", "--d", "768"]) == 0
    out = capsys.readouterr().out
    assert "23.44" in out
    manifest = json.loads((in_tmp / "runs" / "params.manifest.json").read_text(encoding="utf-8"))
    assert manifest["command"] == "params"
    assert manifest["artifacts"] == []


def test_config_errors_name_flags(in_tmp, capsys):
    assert main(["params", "--d", "16", "--heads", "5"]) == 1
    err = capsys.readouterr().err
    assert "--heads" in err
    assert "not divisible" in err


def test_config_file_is_merged_under_flags(in_tmp, capsys):
    (in_tmp / "sizes.json").write_text(json.dumps({"model": {"d": 1024, "ell": 3}}), encoding="utf-8")
    assert main(["params", "--config", "sizes.json", "--ell", "2"]) == 0
    assert "d=1024 ell=2" in capsys.readouterr().out


def test_bad_config_file(in_tmp, capsys):
    (in_tmp / "bad.json").write_text("{not json", encoding="utf-8")
    assert main(["params", "--config", "bad.json"]) == 1
    assert main(["params", "--config", "missing.json"]) == 2


def test_missing_checkpoint_exits_two(in_tmp, capsys, fixtures_dir):
    code = main(["reconstruct", "--ckpt", "absent.sbae", "--vocab", str(fixtures_dir / "vocab.txt"), "it rained"])
    assert code == 2
    assert capsys.readouterr().err.startswith("Error: ")


def test_missing_input_exits_two(in_tmp, capsys):
    assert main(["ingest", "--input", "nope.txt"]) == 2


def test_end_to_end(in_tmp, capsys):
    assert main(["synth", "--documents", "12", "--sentences-per-document", "5", "--seed", "3", "--quiet"]) == 0
    assert main(["ingest", "--input", "data/synthetic.txt", "--quiet"]) == 0
    assert main(["split", "--corpus", "data/corpus.jsonl", "--n-test", "10", "--quiet"]) == 0
    assert main(["stats", "--corpus", "data/corpus.jsonl", "--quiet"]) == 0
    assert main(["vocab", "--corpus", "data/corpus.jsonl", "--size", "200", "--quiet"]) == 0
    capsys.readouterr()

    train_args = ["train", "--corpus", "data/corpus.jsonl", "--vocab", "data/vocab.txt", "--max-steps", "0"]
    assert main([*train_args, *SMALL_MODEL, "--quiet"]) == 0
    assert "0 updates" in capsys.readouterr().out
    checkpoint = in_tmp / "checkpoints" / "final.sbae"
    assert checkpoint.exists()
    manifest = json.loads((in_tmp / "checkpoints" / "final.sbae.manifest.json").read_text(encoding="utf-8"))
    assert manifest["command"] == "train"
    assert manifest["seed"] == 0
    assert len(manifest["config_digest"]) == 64
    assert manifest["corpus_digest"] is not None

    eval_args = ["eval", "--ckpt", str(checkpoint), "--corpus", "data/corpus.jsonl", "--vocab", "data/vocab.txt"]
    assert main([*eval_args, "--quiet"]) == 0
    assert "10 sentences" in capsys.readouterr().out
    report = json.loads((in_tmp / "checkpoints" / "final.eval.json").read_text(encoding="utf-8"))
    assert report["n_sentences"] == 10
    assert (in_tmp / "checkpoints" / "final.eval.json.manifest.json").exists()

    assert main(["reconstruct", "--ckpt", str(checkpoint), "--vocab", "data/vocab.txt", "A sentence.", "--quiet"]) == 0
    assert "O: " in capsys.readouterr().out


def test_same_config_same_digest(in_tmp, capsys):
    main(["params", "--d", "32", "--heads", "4", "--vocab-size", "100"])
    first = json.loads((in_tmp / "runs" / "params.manifest.json").read_text(encoding="utf-8"))
    main(["params", "--d", "32", "--heads", "4", "--vocab-size", "100"])
    second = json.loads((in_tmp / "runs" / "params.manifest.json").read_text(encoding="utf-8"))
    assert first["config_digest"] == second["config_digest"]


# =============================================================================
# Committed corpus fixture (oracle files built by tests/fixtures/regenerate.sh)
# =============================================================================


def _assert_matches_oracle(actual, expected, where="stats"):
    assert actual.keys() == expected.keys(), where
    for key, value in expected.items():
        if isinstance(value, dict):
            _assert_matches_oracle(actual[key], value, f"{where}.{key}")
        elif isinstance(value, int):
            assert actual[key] == value, f"{where}.{key}"
        else:
            assert actual[key] == pytest.approx(value, rel=1e-12), f"{where}.{key}"


def test_ingest_fixture_drops_overlong_sentence(in_tmp, capsys, fixtures_dir):
    source = str(fixtures_dir / "fixture_corpus.txt")
    assert main(["ingest", "--input", source, "--output", "corpus/fixture_corpus.jsonl", "--quiet"]) == 0
    assert "100 documents -> 1000 sentences (1 dropped at 512 chars)" in capsys.readouterr().out
    assert len((in_tmp / "corpus" / "fixture_corpus.jsonl").read_text(encoding="utf-8").splitlines()) == 1000

    assert main(["ingest", "--input", source, "--output", "wide.jsonl", "--max-chars", "601", "--quiet"]) == 0
    assert "1001 sentences (0 dropped at 601 chars)" in capsys.readouterr().out


def test_stats_fixture_matches_oracle(in_tmp, capsys, fixtures_dir):
    corpus = in_tmp / "corpus" / "fixture_corpus.jsonl"
    assert main(["ingest", "--input", str(fixtures_dir / "fixture_corpus.txt"), "--output", str(corpus), "--quiet"]) == 0
    stats_args = ["stats", "--corpus", str(corpus), "--vocab", str(fixtures_dir / "fixture_vocab.txt")]
    assert main([*stats_args, "--bin-width", "8", "--quiet"]) == 0
    assert "sentences 1000" in capsys.readouterr().out

    expected = json.loads((fixtures_dir / "fixture_corpus.stats.json").read_text(encoding="utf-8"))
    actual = json.loads((in_tmp / "corpus" / "fixture_corpus.stats.json").read_text(encoding="utf-8"))
    _assert_matches_oracle(actual, expected)
    for dimension in ("chars", "words", "tokens"):
        name = f"fixture_corpus.hist_{dimension}.csv"
        assert (in_tmp / "corpus" / name).read_bytes() == (fixtures_dir / name).read_bytes(), name


def test_stats_writes_manifest_in_every_artifact_directory(in_tmp, capsys, fixtures_dir):
    corpus = in_tmp / "corpus" / "fixture_corpus.jsonl"
    assert main(["ingest", "--input", str(fixtures_dir / "fixture_corpus.txt"), "--output", str(corpus), "--quiet"]) == 0
    assert main(["stats", "--corpus", str(corpus), "--histograms", "hist", "--bin-width", "8", "--quiet"]) == 0

    beside_stats = in_tmp / "corpus" / "fixture_corpus.stats.json.manifest.json"
    beside_histograms = in_tmp / "hist" / "fixture_corpus.hist_chars.csv.manifest.json"
    assert beside_stats.exists()
    assert beside_histograms.exists()
    first = json.loads(beside_stats.read_text(encoding="utf-8"))
    second = json.loads(beside_histograms.read_text(encoding="utf-8"))
    assert first == second
    assert first["command"] == "stats"
    assert sorted((Path(path).parent.name, Path(path).name) for path in first["artifacts"]) == [
        ("corpus", "fixture_corpus.stats.json"),
        ("hist", "fixture_corpus.hist_chars.csv"),
        ("hist", "fixture_corpus.hist_words.csv"),
    ]
    assert not (in_tmp / "runs").exists()
