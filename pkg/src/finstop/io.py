"""Self-describing CSV tables and ``key: value`` reports."""

from pathlib import Path

import numpy as np

TRANSFORM_CONVENTION = "F(f)(w) = int f(t) exp(+i 2 pi w t) dt; F(f') = (-i 2 pi w) F(f)"


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def write_csv(path, columns, meta=None):
    """Write ``columns`` (name -> 1D array) with ``# key: value`` header lines.

    Output is byte-identical for identical inputs.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(columns)
    data = [np.asarray(columns[k]).ravel() for k in names]
    lengths = {len(d) for d in data}
    if len(lengths) > 1:
        raise ValueError(f"column lengths differ: {sorted(lengths)}")
    lines = [f"# {k}: {_fmt(v)}" for k, v in (meta or {}).items()]
    lines.append(",".join(names))
    for row in zip(*data):
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_csv(path):
    """Read a table written by :func:`write_csv` into ``(meta, columns)``."""
    meta, header, rows = {}, None, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition(":")
            meta[key.strip()] = value.strip()
        elif header is None:
            header = line.split(",")
        elif line:
            rows.append([float(v) for v in line.split(",")])
    arr = np.array(rows, dtype=float).reshape(-1, len(header))
    return meta, {name: arr[:, i] for i, name in enumerate(header)}


def format_report(items):
    """Render a mapping as ``key: value`` lines."""
    return "".join(f"{k}: {_fmt(v)}\n" for k, v in items.items())


def parse_report(text):
    out = {}
    for line in text.splitlines():
        if ":" in line:
            k, _, v = line.partition(":")
            out[k.strip()] = v.strip()
    return out
