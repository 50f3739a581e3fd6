"""Command line: ``sbae <command> [flags]``.

Every command runs one operation, prints its summary to stdout and writes
a run manifest in each directory it wrote artifacts to.
"""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

from .config import EvalConfig, ModelConfig, TrainConfig, config_digest_payload, get_settings, load_config_file, merge_config
from .errors import ArtifactError, ConfigError, SbaeError
from .manifest import RunManifest, manifest_paths, sha256_files, sha256_text, write_manifest
from .operations import data, evaluation, sizes, training
from .workspace import Workspace, format_result

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

# command-line spelling of config fields, used in error messages
FLAG_FOR_FIELD = {
    "d": "--d",
    "ell": "--ell",
    "m": "--m",
    "n_heads": "--heads",
    "dropout_p": "--dropout",
    "max_seq_len": "--max-len",
    "include_specials": "--include-specials",
    "micro_batch": "--micro-batch",
    "accum_steps": "--accum",
    "lr": "--lr",
    "epochs": "--epochs",
    "seed": "--seed",
    "checkpoint_every": "--checkpoint-every",
    "max_steps": "--max-steps",
    "dtype": "--dtype",
    "bin_width": "--bin-width",
    "n_samples": "--samples",
}
_FIELD_PATTERN = re.compile(r"\b(" + "|".join(sorted(FLAG_FOR_FIELD, key=len, reverse=True)) + r")(?=[:=])")


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with 1 rather than argparse's 2, which is reserved for I/O failures."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return value


def _multiplier(text: str) -> Any:
    if text.strip().lower() in ("inf", "infinity"):
        return "inf"
    return _positive_int(text)


def _add_model_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("model")
    group.add_argument("--d", type=_positive_int, help="hidden size (default 768)")
    group.add_argument("--ell", type=_positive_int, help="layers per stack (default 1)")
    group.add_argument("--m", type=_multiplier, help="bottleneck repeats: an integer or 'inf' (default 1)")
    group.add_argument("--heads", type=_positive_int, help="attention heads (default 12 if d%%12==0 else 16)")
    group.add_argument("--dropout", type=float, help="dropout probability (default 0.1)")
    group.add_argument("--max-len", type=_positive_int, help="maximum sequence length with specials (default 128)")
    group.add_argument(
        "--include-specials",
        action="store_const",
        const=True,
        default=None,
        help="score [CLS] and [SEP] in loss and accuracy",
    )


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON file with model/train/eval sections")
    common.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR")
    common.add_argument("--quiet", action="store_true", help="only warnings and errors, no progress bars")

    parser = _Parser(prog="sbae", description="Sentence bottleneck autoencoder experiments.")
    commands = parser.add_subparsers(dest="command", required=True, metavar="command")

    ingest = commands.add_parser("ingest", parents=[common], help="split raw text into a sentence corpus")
    ingest.add_argument("--input", dest="inputs", type=Path, nargs="+", required=True)
    ingest.add_argument("--output", type=Path)
    ingest.add_argument("--max-chars", type=_positive_int, default=512)
    ingest.add_argument("--workers", type=_positive_int, default=1)

    stats = commands.add_parser("stats", parents=[common], help="corpus length statistics and histograms")
    stats.add_argument("--corpus", type=Path, required=True)
    stats.add_argument("--vocab", type=Path)
    stats.add_argument("--output", type=Path)
    stats.add_argument("--histograms", type=Path, help="directory for histogram CSVs")
    stats.add_argument("--bin-width", type=_positive_int, default=1)
    stats.add_argument("--svg", action="store_true", help="also draw histograms as SVG")

    split = commands.add_parser("split", parents=[common], help="mark a seeded test split")
    split.add_argument("--corpus", type=Path, required=True)
    split.add_argument("--n-test", type=int, required=True)
    split.add_argument("--seed", type=int, default=0)
    split.add_argument("--output", type=Path)

    vocab = commands.add_parser("vocab", parents=[common], help="build a vocabulary from a corpus")
    vocab.add_argument("--corpus", type=Path, required=True)
    vocab.add_argument("--size", type=_positive_int, required=True)
    vocab.add_argument("--output", type=Path)

    synth = commands.add_parser("synth", parents=[common], help="write synthetic documents")
    synth.add_argument("--documents", type=_positive_int, required=True)
    synth.add_argument("--sentences-per-document", type=_positive_int, default=10)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--output", type=Path)

    train = commands.add_parser("train", parents=[common], help="train an autoencoder")
    train.add_argument("--corpus", type=Path, required=True)
    train.add_argument("--vocab", type=Path)
    train.add_argument("--output-dir", type=Path)
    train.add_argument("--split", default="train", choices=("train", "test", "unassigned"))
    _add_model_flags(train)
    group = train.add_argument_group("optimization")
    group.add_argument("--seed", type=int)
    group.add_argument("--lr", type=float, help="override the width-dependent default")
    group.add_argument("--micro-batch", type=_positive_int)
    group.add_argument("--accum", type=_positive_int)
    group.add_argument("--epochs", type=_positive_int)
    group.add_argument("--max-steps", type=int)
    group.add_argument("--checkpoint-every", type=int)
    group.add_argument("--dtype", choices=("float32", "float64"))

    evaluate = commands.add_parser("eval", parents=[common], help="score reconstructions of a checkpoint")
    evaluate.add_argument("--ckpt", type=Path, required=True)
    evaluate.add_argument("--corpus", type=Path, required=True)
    evaluate.add_argument("--vocab", type=Path)
    evaluate.add_argument("--output", type=Path)
    evaluate.add_argument("--split", default="test", choices=("train", "test", "unassigned"))
    evaluate.add_argument("--bin-width", type=_positive_int)
    evaluate.add_argument("--samples", type=int)
    evaluate.add_argument("--svg", action="store_true", help="also draw accuracy by length as SVG")

    reconstruct = commands.add_parser("reconstruct", parents=[common], help="reconstruct one sentence")
    reconstruct.add_argument("--ckpt", type=Path, required=True)
    reconstruct.add_argument("--vocab", type=Path)
    reconstruct.add_argument("sentence")

    params = commands.add_parser("params", parents=[common], help="parameter counts of a configuration")
    _add_model_flags(params)
    params.add_argument("--vocab-size", type=_positive_int, default=30522)
    return parser


def _labelled(error: ConfigError) -> ConfigError:
    """Rename config fields to the flags that set them."""
    message = _FIELD_PATTERN.sub(lambda match: FLAG_FOR_FIELD[match.group(1)], str(error))
    return ConfigError(message)


def _merge(cls: type, file_values: dict, overrides: dict) -> Any:
    try:
        return merge_config(cls, file_values, overrides)
    except ConfigError as exc:
        raise _labelled(exc) from exc


def _model_config(args: argparse.Namespace, file_values: dict, **extra: Any) -> ModelConfig:
    return _merge(
        ModelConfig,
        file_values.get("model"),
        {
            "d": args.d,
            "ell": args.ell,
            "m": args.m,
            "n_heads": args.heads,
            "dropout_p": args.dropout,
            "max_seq_len": args.max_len,
            "include_specials": args.include_specials,
            **extra,
        },
    )


class _Run:
    """What the dispatcher needs to know about one command invocation."""

    def __init__(self, result: dict, configs: Sequence[Any] = (), corpus: Sequence[Path] = (), seed: Optional[int] = None):
        self.result = result
        self.configs = configs
        self.corpus = corpus
        self.seed = seed


def _run_ingest(ws: Workspace, args: argparse.Namespace, file_values: dict) -> _Run:
    result = data.ingest(ws, args.inputs, args.output, max_chars=args.max_chars, workers=args.workers)
    return _Run(result, corpus=args.inputs)


def _run_stats(ws: Workspace, args: argparse.Namespace, file_values: dict) -> _Run:
    result = data.stats(ws, args.corpus, args.vocab, args.output, args.histograms, args.bin_width, args.svg)
    return _Run(result, corpus=[args.corpus])


def _run_split(ws: Workspace, args: argparse.Namespace, file_values: dict) -> _Run:
    return _Run(data.split(ws, args.corpus, args.n_test, args.seed, args.output), corpus=[args.corpus], seed=args.seed)


def _run_vocab(ws: Workspace, args: argparse.Namespace, file_values: dict) -> _Run:
    return _Run(data.vocab(ws, args.corpus, args.size, args.output), corpus=[args.corpus])


def _run_synth(ws: Workspace, args: argparse.Namespace, file_values: dict) -> _Run:
    result = data.synth(ws, args.documents, args.sentences_per_document, args.seed, args.output)
    return _Run(result, seed=args.seed)


def _run_train(ws: Workspace, args: argparse.Namespace, file_values: dict) -> _Run:
    model_config = _model_config(args, file_values)
    train_config = _merge(
        TrainConfig,
        file_values.get("train"),
        {
            "seed": args.seed,
            "lr": args.lr,
            "micro_batch": args.micro_batch,
            "accum_steps": args.accum,
            "epochs": args.epochs,
            "max_steps": args.max_steps,
            "checkpoint_every": args.checkpoint_every,
            "dtype": args.dtype,
        },
    )
    result = training.train_model(
        ws,
        args.corpus,
        model_config,
        train_config,
        vocab=args.vocab,
        output_dir=args.output_dir,
        split=args.split,
        progress=args.progress,
    )
    return _Run(result, configs=[model_config, train_config], corpus=[args.corpus], seed=train_config.seed)


def _run_eval(ws: Workspace, args: argparse.Namespace, file_values: dict) -> _Run:
    config = _merge(EvalConfig, file_values.get("eval"), {"bin_width": args.bin_width, "n_samples": args.samples})
    result = evaluation.evaluate_checkpoint(
        ws,
        args.ckpt,
        args.corpus,
        vocab=args.vocab,
        config=config,
        split=args.split,
        output=args.output,
        svg=args.svg,
        progress=args.progress,
    )
    return _Run(result, configs=[config], corpus=[args.corpus, args.ckpt], seed=config.sample_seed)


def _run_reconstruct(ws: Workspace, args: argparse.Namespace, file_values: dict) -> _Run:
    return _Run(evaluation.reconstruct(ws, args.ckpt, args.sentence, vocab=args.vocab), corpus=[args.ckpt])


def _run_params(ws: Workspace, args: argparse.Namespace, file_values: dict) -> _Run:
    config = _model_config(args, file_values, vocab_size=args.vocab_size)
    return _Run(sizes.params(ws, config), configs=[config])


COMMANDS: dict[str, Callable[[Workspace, argparse.Namespace, dict], _Run]] = {
    "ingest": _run_ingest,
    "stats": _run_stats,
    "split": _run_split,
    "vocab": _run_vocab,
    "synth": _run_synth,
    "train": _run_train,
    "eval": _run_eval,
    "reconstruct": _run_reconstruct,
    "params": _run_params,
}


def _configure_logging(args: argparse.Namespace) -> None:
    level = args.log_level or ("WARNING" if args.quiet else get_settings().log_level)
    numeric = logging.getLevelName(level.upper())
    if not isinstance(numeric, int):
        raise ConfigError(f"--log-level: unknown level {level!r}")
    logging.basicConfig(level=numeric, format=LOG_FORMAT, stream=sys.stderr, force=True)


def _flags(args: argparse.Namespace) -> dict[str, Any]:
    return {
        key: [str(item) for item in value] if isinstance(value, list) else (str(value) if isinstance(value, Path) else value)
        for key, value in sorted(vars(args).items())
        if key != "progress"
    }


def _write_manifests(ws: Workspace, args: argparse.Namespace, run: _Run, started: datetime) -> list[Path]:
    flags = _flags(args)
    payload = config_digest_payload(*run.configs) if run.configs else json.dumps(flags, sort_keys=True)
    artifacts = [Path(path) for path in run.result.get("artifacts", []) if path is not None]
    manifest = RunManifest(
        command=args.command,
        flags=flags,
        seed=run.seed,
        config_digest=sha256_text(payload),
        corpus_digest=sha256_files(run.corpus) if run.corpus else None,
        artifacts=[str(path) for path in artifacts],
        started_at=started,
    )
    return [write_manifest(manifest, path) for path in manifest_paths(artifacts, ws.runs_dir, args.command)]


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.progress = not args.quiet and sys.stderr.isatty()
    try:
        _configure_logging(args)
        file_values = load_config_file(args.config)
        workspace = Workspace()
        started = datetime.now(timezone.utc)
        run = COMMANDS[args.command](workspace, args, file_values)
        _write_manifests(workspace, args, run, started)
    except SbaeError as exc:
        print(format_result({"success": False, "error": str(exc)}), file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(format_result({"success": False, "error": str(exc)}), file=sys.stderr)
        return ArtifactError.exit_code
    print(format_result(run.result))
    return 0


if __name__ == "__main__":
    sys.exit(main())
