"""CSV conventions shared by all writers: ``#``-prefixed header comments, then a plain table."""
from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import __version__


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path, columns: Sequence[str], rows: Iterable[Sequence], header: Optional[dict] = None) -> str:
    """Write (or just return, if ``path`` is None) a CSV table with a comment header.

    Floats are written with ``repr`` so values round-trip exactly.
    """
    buf = io.StringIO()
    buf.write(f"# optokerr {__version__}\n")
    for k, v in (header or {}).items():
        buf.write(f"# {k}: {_cell(v)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_csv(source):
    """Parse a CSV written by :func:`write_csv` (or any CSV with ``#`` comments).

    Returns ``(meta, columns)``: ``meta`` maps header-comment keys to strings
    and ``columns`` maps column names to numpy arrays (float where possible).
    """
    if isinstance(source, (str, Path)) and "\n" not in str(source):
        text = Path(source).read_text()
    else:
        text = str(source)
    meta = {}
    body = []
    for line in text.splitlines():
        if line.startswith("#"):
            content = line[1:].strip()
            if ":" in content:
                k, v = content.split(":", 1)
                meta[k.strip()] = v.strip()
        elif line.strip():
            body.append(line)
    reader = csv.reader(body)
    names = next(reader)
    raw = list(reader)
    cols = {}
    for j, name in enumerate(names):
        vals = [r[j] if j < len(r) else "" for r in raw]
        try:
            cols[name] = np.array([float(v) if v != "" else np.nan for v in vals])
        except ValueError:
            cols[name] = np.array(vals, dtype=object)
    return meta, cols
