"""Small helpers shared by the CSV/JSON writers."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from pathlib import Path
from typing import Any, Iterable, Sequence

from . import __version__


def config_hash(config: Any) -> str:
    """Stable short hash of a JSON-serializable configuration."""
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def manifest_line(config: Any) -> str:
    return f"# aquactrl version={__version__} config_hash={config_hash(config)}"


def fmt(x) -> str:
    if x is None:
        return "nan"
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        return repr(float(x))
    return str(x)


def csv_text(header: Sequence[str], rows: Iterable[Sequence[Any]], config: Any = None) -> str:
    buf = io.StringIO()
    buf.write(manifest_line(config or {}) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def json_text(obj: Any, config: Any = None) -> str:
    doc = {"manifest": {"version": __version__, "config_hash": config_hash(config or {})}}
    doc.update(obj)
    return json.dumps(doc, indent=2, sort_keys=True, default=_jsonable)


def _jsonable(x):
    try:
        import numpy as np

        if isinstance(x, np.ndarray):
            return x.tolist()
        if isinstance(x, np.generic):
            return x.item()
    except ImportError:  # pragma: no cover
        pass
    return str(x)
