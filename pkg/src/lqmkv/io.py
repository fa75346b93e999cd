"""Deterministic CSV and JSON writers with a provenance footer."""

import hashlib
import json
import math
from pathlib import Path

import numpy as np


def fmt(x):
    """Shortest round-trip text for a number."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    x = float(x)
    if math.isnan(x):
        return "nan"
    return repr(x)


def content_hash(obj):
    """SHA-256 of a canonical JSON rendering."""
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_json_default)
    return hashlib.sha256(text.encode()).hexdigest()


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"not serializable: {type(obj).__name__}")


def write_csv(path, header, rows, provenance):
    """Write rows with a header line and a trailing ``# key=value`` comment."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    lines.append("# " + " ".join(f"{k}={provenance[k]}" for k in sorted(provenance)))
    Path(path).write_text("\n".join(lines) + "\n")


def read_csv(path):
    """Read a file written by :func:`write_csv`.

    Returns the header, the rows as lists of strings, and the footer as a dict.
    """
    header, rows, footer = None, [], {}
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            footer.update(item.split("=", 1) for item in line[1:].split())
        elif header is None:
            header = line.split(",")
        else:
            rows.append(line.split(","))
    return header, rows, footer


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2, default=_json_default) + "\n")
