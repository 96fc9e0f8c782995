"""Delimited table I/O with key=value provenance headers.

Every CSV the package writes starts with '# key=value' comment lines (grid
provenance at minimum) followed by a regular header row.  Floats are written
with repr-level precision so identical runs produce identical bytes.
"""

from __future__ import annotations

import csv
import hashlib
from pathlib import Path

import numpy as np


def format_value(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_table(path, columns: dict, header: dict | None = None) -> None:
    """Write named columns as CSV, preceded by '# key=value' comment lines."""
    path = Path(path)
    names = list(columns)
    arrays = [np.asarray(columns[name]) for name in names]
    length = len(arrays[0]) if arrays else 0
    for name, arr in zip(names, arrays):
        if len(arr) != length:
            raise ValueError(f"column {name!r} has length {len(arr)}, expected {length}")
    with path.open("w", newline="", encoding="utf-8") as f:
        for key, value in (header or {}).items():
            f.write(f"# {key}={value}\n")
        writer = csv.writer(f)
        writer.writerow(names)
        for row in range(length):
            writer.writerow([format_value(arr[row]) for arr in arrays])


def read_table(path) -> tuple[dict, dict]:
    """Read a CSV written by write_table; returns (header dict, column dict).

    Columns parse to float arrays when possible, otherwise stay as string
    arrays.
    """
    path = Path(path)
    header: dict[str, str] = {}
    rows: list[list[str]] = []
    with path.open("r", newline="", encoding="utf-8") as f:
        for line in f:
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    key, _, value = body.partition("=")
                    header[key.strip()] = value.strip()
                continue
            reader = csv.reader([line] + list(f))
            rows = [r for r in reader if r]
            break
    if not rows:
        return header, {}
    names = rows[0]
    data = rows[1:]
    columns: dict[str, np.ndarray] = {}
    for j, name in enumerate(names):
        raw = [row[j] for row in data]
        try:
            columns[name] = np.array([float(v) for v in raw])
        except ValueError:
            columns[name] = np.array(raw)
    return header, columns


def write_key_values(path, entries: dict) -> None:
    """Plain key=value text file (processing reports, summaries)."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as f:
        for key, value in entries.items():
            f.write(f"{key}={format_value(value)}\n")


def read_key_values(path) -> dict:
    out: dict[str, str] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def sha256_of_file(path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as f:
        while True:
            chunk = f.read(1 << 20)
            if not chunk:
                break
            digest.update(chunk)
    return digest.hexdigest()
