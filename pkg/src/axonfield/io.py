"""CSV and hashing helpers shared by every exporter."""
from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Sequence

import numpy as np

CSV_FLOAT_FMT = "%.16e"   # 17 significant digits, round-trips doubles


def write_csv(path: str | Path, header: Sequence[str], columns: Sequence) -> Path:
    """Write equal-length columns as comma-separated text with a header row."""
    path = Path(path)
    cols = [np.asarray(c) for c in columns]
    n = {c.shape[0] for c in cols}
    if len(n) != 1:
        raise ValueError(f"columns differ in length: {sorted(n)}")
    fmts = []
    for c in cols:
        fmts.append("%d" if np.issubdtype(c.dtype, np.integer) else CSV_FLOAT_FMT)
    data = np.column_stack([c.astype(float) if f != "%d" else c for c, f in zip(cols, fmts)])
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        np.savetxt(fh, data, fmt=fmts, delimiter=",", header=",".join(header), comments="")
    return path


def read_csv(path: str | Path) -> dict[str, np.ndarray]:
    """Read a file written by :func:`write_csv` into a column dict."""
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {name: data[:, i] for i, name in enumerate(header)}


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()
