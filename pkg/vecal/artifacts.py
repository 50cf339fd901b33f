"""Output artifacts with provenance and a checksum index.

Every artifact written through :class:`ArtifactStore` carries the tool
version, the configuration echo, its digest, the seeds and the metric mode.
JSON artifacts get a ``provenance`` block; CSV artifacts get one leading
``#`` comment line. The store keeps ``.vecal_artifacts.json`` in the output
root mapping each relative path to its SHA-256 checksum. Nothing written
depends on the wall clock, so identical configurations give identical trees.
"""

from __future__ import annotations

import copy
import hashlib
import io
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

import pandas as pd

from . import __version__
from .energy import frame_to_samples, samples_to_frame
from .errors import ArtifactIOError, SchemaError
from .logger import log_event
from .models import EnergySample
from .utils import canonical_json, text_digest

TOOL_NAME = "vecal"


@dataclass(frozen=True)
class Provenance:
    config: Mapping[str, Any] = field(default_factory=dict)
    seeds: Mapping[str, Any] = field(default_factory=dict)
    metric_mode: str = "conventional"

    @property
    def config_digest(self) -> str:
        return text_digest(canonical_json(self.config))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "tool": TOOL_NAME,
            "version": __version__,
            "config": copy.deepcopy(dict(self.config)),
            "config_digest": self.config_digest,
            "seeds": dict(self.seeds),
            "metric_mode": self.metric_mode,
        }

    def comment_line(self) -> str:
        return (f"# {TOOL_NAME} {__version__} config={self.config_digest[:12]} "
                f"seed={self.seeds.get('seed')} metric={self.metric_mode}\n")


class ArtifactStore:
    """Write artifacts under *root* and track their checksums."""

    INDEX_FILENAME = ".vecal_artifacts.json"

    def __init__(self, root: Union[str, Path], provenance: Optional[Provenance] = None):
        self.root = Path(root).expanduser().resolve()
        self.provenance = provenance or Provenance()
        try:
            self.root.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise ArtifactIOError(self.root, f"cannot create output directory: {e}") from e
        self.index_path = self.root / self.INDEX_FILENAME
        self._index: Dict[str, str] = {}
        self._lock = threading.Lock()
        self._load()

    def checksum(self, rel_path: Union[str, Path]) -> Optional[str]:
        return self._index.get(Path(rel_path).as_posix())

    @property
    def written(self) -> List[str]:
        with self._lock:
            return sorted(self._index)

    def write_text(self, rel_path: Union[str, Path], text: str) -> Path:
        path = self.root / rel_path
        data = text.encode("utf-8")
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(data)
        except OSError as e:
            raise ArtifactIOError(path, f"cannot write artifact: {e}") from e
        key = Path(rel_path).as_posix()
        with self._lock:
            self._index[key] = hashlib.sha256(data).hexdigest()
        self._save()
        log_event("artifact_written", path=key, bytes=len(data))
        return path

    def write_json(self, rel_path: Union[str, Path], payload: Mapping[str, Any]) -> Path:
        document = {**payload, "provenance": self.provenance.to_dict()}
        try:
            text = json.dumps(document, indent=2, allow_nan=False)
        except ValueError as e:
            raise SchemaError(f"{rel_path}: artifact contains a non-finite number: {e}") from e
        return self.write_text(rel_path, text + "\n")

    def write_csv(self, rel_path: Union[str, Path], frame: pd.DataFrame, index: bool = False) -> Path:
        body = frame.to_csv(index=index, lineterminator="\n")
        return self.write_text(rel_path, self.provenance.comment_line() + body)

    def write_samples_csv(self, rel_path: Union[str, Path], samples: Sequence[EnergySample]) -> Path:
        return self.write_csv(rel_path, samples_to_frame(samples))

    def _load(self):
        if self.index_path.exists():
            try:
                self._index = json.loads(self.index_path.read_text())
            except json.JSONDecodeError:
                self._index = {}

    def _save(self):
        with self._lock:
            snapshot = dict(sorted(self._index.items()))
        try:
            self.index_path.write_text(json.dumps(snapshot, indent=2) + "\n")
        except OSError as e:
            raise ArtifactIOError(self.index_path, f"cannot write artifact index: {e}") from e


def read_json(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ArtifactIOError(path, "file not found") from None
    except OSError as e:
        raise ArtifactIOError(path, str(e)) from e
    except json.JSONDecodeError as e:
        raise SchemaError(f"invalid JSON in {path}: {e}") from e
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: expected a JSON object")
    return doc


def read_csv(path: Union[str, Path]) -> pd.DataFrame:
    """Read a CSV artifact, skipping its leading comment lines."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines(keepends=True)
    except FileNotFoundError:
        raise ArtifactIOError(path, "file not found") from None
    except OSError as e:
        raise ArtifactIOError(path, str(e)) from e
    start = 0
    while start < len(lines) and lines[start].startswith("#"):
        start += 1
    return pd.read_csv(io.StringIO("".join(lines[start:])), float_precision="round_trip")


def read_samples_csv(path: Union[str, Path]) -> List[EnergySample]:
    return frame_to_samples(read_csv(path))
