"""Byte-stable output files.

Floats are written as their shortest round-trip decimal (``repr``), CSV rows
use RFC 4180 quoting with ``\\n`` line ends, and every written file is
registered with its SHA-256 for the run manifest.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np


def fmt(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (np.integer,)):
        return str(int(value))
    if value is None:
        return ""
    return str(value)


def csv_text(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class OutputDir:
    """Single writer for one run directory; tracks relative paths and checksums."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.files: dict[str, str] = {}

    def path(self, rel: str) -> Path:
        p = self.root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def register(self, rel: str) -> Path:
        p = self.path(rel)
        self.files[rel] = sha256_file(p)
        return p

    def write_text(self, rel: str, text: str) -> Path:
        self.path(rel).write_text(text, encoding="utf-8")
        return self.register(rel)

    def write_bytes(self, rel: str, blob: bytes) -> Path:
        self.path(rel).write_bytes(blob)
        return self.register(rel)

    def write_csv(self, rel: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        return self.write_text(rel, csv_text(header, rows))

    def write_json(self, rel: str, obj: Any) -> Path:
        return self.write_text(rel, json.dumps(obj, indent=2, sort_keys=True) + "\n")
