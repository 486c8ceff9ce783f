"""Fixed CSV dialect for every artifact: UTF-8, LF, comma, header row, shortest round-trip floats."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def format_value(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv(path, header, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(format_value(v) for v in row))
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("utf-8"))


def read_csv(path) -> tuple[list[str], np.ndarray]:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    header = text[0].split(",")
    data = np.array([[float(v) for v in ln.split(",")] for ln in text[1:] if ln], dtype=float)
    return header, data.reshape(-1, len(header))
