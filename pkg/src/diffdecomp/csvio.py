"""Deterministic CSV emission with a provenance comment line.

Every CSV written by the package starts with

    # tool=diffdecomp version=<pkg version> seed=<seed> config=<sha256[:12]>

followed by a header row and data rows.  Values are formatted to six
significant digits, line endings are "\\n", missing values are empty cells,
and nothing time- or locale-dependent is ever written, so a fixed seed and
config reproduce the bytes exactly.
"""

from __future__ import annotations

import hashlib
import io

__all__ = ["TOOL_NAME", "TOOL_VERSION", "fmt", "config_hash", "render_csv", "write_csv"]

TOOL_NAME = "diffdecomp"
TOOL_VERSION = "0.1.0"


def fmt(value) -> str:
    """Six-significant-digit cell formatting; None becomes an empty cell."""
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (int,)) and not isinstance(value, bool):
        return str(value)
    return f"{float(value):.6g}"


def config_hash(text: str) -> str:
    """First 12 hex chars of the sha256 of the canonical config text."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]


def render_csv(columns, rows, seed, config_text: str = "") -> str:
    """Render rows (sequences or dicts keyed by column) to a CSV string."""
    buf = io.StringIO()
    buf.write(
        f"# tool={TOOL_NAME} version={TOOL_VERSION} seed={int(seed)} "
        f"config={config_hash(config_text)}\n"
    )
    buf.write(",".join(columns) + "\n")
    for row in rows:
        if isinstance(row, dict):
            cells = [fmt(row.get(col)) for col in columns]
        else:
            cells = [fmt(v) for v in row]
        buf.write(",".join(cells) + "\n")
    return buf.getvalue()


def write_csv(path, columns, rows, seed, config_text: str = "") -> None:
    text = render_csv(columns, rows, seed, config_text)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
