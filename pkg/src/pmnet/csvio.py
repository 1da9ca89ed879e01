"""CSV helpers shared by every stage that reads or writes files."""

from __future__ import annotations

import csv
import functools
import io
from datetime import datetime, timezone


class SchemaError(ValueError):
    """A CSV file does not carry the columns a stage expects."""


def iso(t: int) -> str:
    return datetime.fromtimestamp(int(t), tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_time(text) -> int:
    """Epoch seconds from an ISO-8601 string (``Z`` or offset) or a plain integer."""
    if isinstance(text, (int, float)):
        return int(text)
    return _parse_text(str(text))


@functools.lru_cache(maxsize=1 << 16)
def _parse_text(text: str) -> int:
    s = text.strip()
    if s.lstrip("-").isdigit():
        return int(s)
    if s.endswith("Z"):
        s = s[:-1] + "+00:00"
    dt = datetime.fromisoformat(s)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def fmt(x: float) -> str:
    # repr is the shortest string that round-trips the float exactly
    return repr(float(x))


def read_rows(source, required: tuple[str, ...], name: str = "input") -> list[dict]:
    """Read a CSV (path or text stream) and check that ``required`` columns exist."""
    if hasattr(source, "read"):
        text = source.read()
    else:
        with open(source, newline="") as fh:
            text = fh.read()
    reader = csv.DictReader(io.StringIO(text))
    cols = reader.fieldnames or []
    missing = [c for c in required if c not in cols]
    if missing:
        raise SchemaError(f"{name}: missing column(s) {', '.join(missing)}; found {', '.join(cols) or 'none'}")
    return list(reader)


def write_rows(dest, header: list[str], rows) -> None:
    """Write rows (sequences of already-formatted cells) with a fixed header."""
    def _write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)

    if hasattr(dest, "write"):
        _write(dest)
    else:
        with open(dest, "w", newline="") as fh:
            _write(fh)
