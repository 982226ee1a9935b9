"""Text dumps of chip IDs and small file helpers shared by the CLI."""

from __future__ import annotations

import json
from pathlib import Path

from .chip_identity import ChipId

LINE_WIDTH = 64
MANIFEST_FORMAT = "idlink-chip-manifest"
MANIFEST_VERSION = 1


class DumpParseError(ValueError):
    def __init__(self, line: int, column: int, char: str):
        super().__init__(f"unexpected character {char!r} at line {line}, column {column}")
        self.line = line
        self.column = column


def emit_chip_dump(chip_id: ChipId, width: int = LINE_WIDTH) -> str:
    bits = chip_id.bits
    return "".join(bits[i:i + width] + "\n" for i in range(0, len(bits), width))


def parse_chip_dump(text: str) -> ChipId:
    """Parse '0'/'1' lines; line and column in errors are 1-based."""
    bits = []
    for ln, line in enumerate(text.split("\n"), start=1):
        for col, ch in enumerate(line, start=1):
            if ch not in "01":
                raise DumpParseError(ln, col, ch)
        bits.append(line)
    joined = "".join(bits)
    if not joined:
        raise ValueError("chip dump contains no bits")
    return ChipId.from_bits(joined)


def read_chip_dump(path) -> ChipId:
    return parse_chip_dump(Path(path).read_text())


def write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # newline="" keeps "\n" on every platform so files are byte-identical
    with open(path, "w", newline="") as fh:
        fh.write(text)
    return path


def write_json(path, doc) -> Path:
    return write_text(path, json.dumps(doc, indent=1, sort_keys=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())
