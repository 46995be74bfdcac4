"""Canonical text formatting shared by all artifact writers.

Every file the pipeline emits goes through these helpers so that re-running
with identical inputs produces byte-identical artifacts.
"""

import hashlib
import json
from pathlib import Path


def fmt_float(x: float) -> str:
    """Shortest decimal that round-trips to the same float."""
    return repr(float(x))


def write_csv(path: Path, header: list[str], rows) -> None:
    """Write rows of already-formatted strings with a fixed line terminator.

    The format is deliberately quote-free, so cells must not contain the
    delimiter or newlines.
    """
    def check(cells):
        for cell in cells:
            if "," in cell or "\n" in cell or "\r" in cell:
                raise ValueError(f"cell {cell!r} contains a delimiter or newline")
        return cells

    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(",".join(check(header)) + "\n")
        for row in rows:
            f.write(",".join(check(row)) + "\n")


def read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    header = lines[0].split(",") if lines else []
    return header, [line.split(",") for line in lines[1:]]


def dump_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(obj, sort_keys=True, indent=2))
        f.write("\n")


def dump_jsonl(path: Path, records) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True))
            f.write("\n")


def load_jsonl(path: Path) -> list:
    with open(path, "r", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()
