"""Run manifests: what produced an artifact, from which inputs, with which settings."""

from __future__ import annotations

import hashlib
import logging
from datetime import datetime, timezone
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Any, Iterable, Optional

from pydantic import BaseModel, Field

from .corpus import atomic_write_text
from .errors import ArtifactError

logger = logging.getLogger(__name__)

MANIFEST_SUFFIX = ".manifest.json"


def package_version() -> str:
    try:
        return version("sentence-bottleneck-ae")
    except PackageNotFoundError:
        return "0+unknown"


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def sha256_files(paths: Iterable[Path]) -> str:
    """Digest over the bytes of every file, in the order given."""
    digest = hashlib.sha256()
    for path in paths:
        try:
            with open(path, "rb") as handle:
                for chunk in iter(lambda: handle.read(1 << 20), b""):
                    digest.update(chunk)
        except OSError as exc:
            raise ArtifactError(f"cannot read {path}: {exc}") from exc
    return digest.hexdigest()


class RunManifest(BaseModel):
    command: str
    flags: dict[str, Any]
    seed: Optional[int] = None
    config_digest: str
    corpus_digest: Optional[str] = None
    artifacts: list[str] = Field(default_factory=list)
    package_version: str = Field(default_factory=package_version)
    started_at: datetime
    finished_at: datetime = Field(default_factory=lambda: datetime.now(timezone.utc))


def manifest_paths(artifacts: list[Path], runs_dir: Path, command: str) -> list[Path]:
    """One manifest per artifact directory, named after that directory's first artifact.

    Commands without artifacts write a single manifest into ``runs_dir``.
    """
    if not artifacts:
        return [runs_dir / f"{command}{MANIFEST_SUFFIX}"]
    first_in_dir: dict[Path, Path] = {}
    for artifact in artifacts:
        first_in_dir.setdefault(artifact.parent, artifact)
    return [primary.with_name(primary.name + MANIFEST_SUFFIX) for primary in first_in_dir.values()]


def write_manifest(manifest: RunManifest, path: Path) -> Path:
    atomic_write_text(path, manifest.model_dump_json(indent=2) + "\n")
    logger.debug("manifest written to %s", path)
    return path
