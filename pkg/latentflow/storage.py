"""
Run directory storage for latentflow.
Writes the fixed-name outputs of a run and hashes its inputs.
"""

import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Union

import pandas as pd

from latentflow.settings import settings

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"
METRICS_FILE = "metrics.csv"
SWEEP_PLOT_FILE = "sweep.svg"
TRAIN_LOG_FILE = "train_log.csv"
TRAJECTORY_FILE = "trajectory.csv"
CHECKPOINT_FILE = "model.mlpf"


def blob_hash(payload: bytes) -> str:
    """Git blob id of a byte string: sha1 over 'blob <size>\\0' + payload."""
    header = f"blob {len(payload)}\0".encode("ascii")
    return hashlib.sha1(header + payload).hexdigest()


def tree_hash(entries: Dict[str, str]) -> str:
    """Order-independent combination of named blob ids."""
    lines = "".join(f"{name} {digest}\n" for name, digest in sorted(entries.items()))
    return hashlib.sha1(lines.encode("utf-8")).hexdigest()


def file_hash(path: Union[str, Path]) -> str:
    return blob_hash(Path(path).read_bytes())


class RunStorage:
    """Handles the files of one run directory."""

    def __init__(self, out_dir: Optional[Union[str, Path]] = None):
        """
        Initialize run storage.

        Args:
            out_dir: Run directory, created on demand (settings default)
        """
        self.root = Path(out_dir if out_dir is not None else settings.out_dir)
        self.written: list = []
        logger.info(f"Run storage at {self.root}")

    def path(self, name: str) -> Path:
        """Path of a file inside the run directory (directory created)."""
        self.root.mkdir(parents=True, exist_ok=True)
        return self.root / name

    def _record(self, path: Path) -> Path:
        if path.name not in self.written:
            self.written.append(path.name)
        logger.info(f"Wrote {path}")
        return path

    def write_json(self, name: str, payload: Dict[str, Any]) -> Path:
        path = self.path(name)
        path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=str), encoding="utf-8")
        return self._record(path)

    def write_manifest(self, payload: Dict[str, Any]) -> Path:
        return self.write_json(MANIFEST_FILE, payload)

    def write_table(self, table: pd.DataFrame, name: str = METRICS_FILE) -> Path:
        """
        Write a table as CSV.

        Args:
            table: Rows to write
            name: File name inside the run directory

        Returns:
            Path written
        """
        path = self.path(name)
        table.to_csv(path, index=False)
        return self._record(path)

    def write_metrics(self, metrics: Dict[str, Any]) -> Path:
        """Single-row metrics.csv from a flat metrics dict."""
        return self.write_table(pd.DataFrame([metrics]), METRICS_FILE)

    def write_bytes(self, name: str, payload: bytes) -> Path:
        path = self.path(name)
        path.write_bytes(payload)
        return self._record(path)

    def write_svg(self, svg: bytes, name: str = SWEEP_PLOT_FILE) -> Path:
        return self.write_bytes(name, svg)

    def register(self, path: Union[str, Path]) -> Path:
        """Record a file written by another module (checkpoint, latents)."""
        return self._record(Path(path))

    def read_manifest(self) -> Dict[str, Any]:
        return json.loads((self.root / MANIFEST_FILE).read_text(encoding="utf-8"))

    @staticmethod
    def hash_inputs(paths: Dict[str, Optional[Union[str, Path]]], extra: Iterable[tuple] = ()) -> Dict[str, str]:
        """
        Content hashes of the run inputs.

        Args:
            paths: Named input files (None entries skipped)
            extra: (name, bytes) pairs hashed as blobs, e.g. the resolved config

        Returns:
            Per-input blob ids plus their combination under "inputs"
        """
        entries = {name: file_hash(p) for name, p in paths.items() if p is not None and Path(p).exists()}
        for name, payload in extra:
            entries[name] = blob_hash(payload)
        return {**entries, "inputs": tree_hash(entries)}
