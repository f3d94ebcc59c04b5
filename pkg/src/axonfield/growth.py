"""Neurite ordering metric from skeleton polylines.

Lengths are in micrometres.  A segment is aligned when its undirected
tangent lies within ``threshold`` of either grid axis.
"""
from __future__ import annotations

import csv
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InputError
from .io import write_csv

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = math.pi / 36
DEFAULT_AXES = ((1.0, 0.0), (0.0, 1.0))


@dataclass(frozen=True, eq=False)
class Polyline:
    points: np.ndarray      # (n, 2) in um

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float)
        if p.ndim != 2 or p.shape[1] != 2:
            raise ValueError("points must have shape (n, 2)")
        if p.shape[0] < 2:
            raise ValueError("a polyline needs at least 2 points")
        if not np.all(np.isfinite(p)):
            raise ValueError("points must be finite")
        if np.any(np.all(np.diff(p, axis=0) == 0, axis=1)):
            raise ValueError("consecutive points must be distinct")
        object.__setattr__(self, "points", p)

    @property
    def segments(self) -> np.ndarray:
        return np.diff(self.points, axis=0)


@dataclass(frozen=True)
class GrowthReport:
    total_length: float
    ordered_length: float
    ratio: float
    per_path: tuple[tuple[float, float], ...]

    def as_dict(self) -> dict:
        return {"total_length_um": self.total_length, "ordered_length_um": self.ordered_length,
                "ratio": self.ratio,
                "per_path": [{"length_um": a, "ordered_um": b} for a, b in self.per_path]}


def _check_axes(axes) -> np.ndarray:
    ax = np.asarray(axes, dtype=float)
    if ax.shape != (2, 2):
        raise ValueError("axes must be two 2-vectors")
    if not np.allclose(ax @ ax.T, np.eye(2), atol=1e-12):
        raise ValueError("axes must be orthonormal")
    return ax


def axes_from_angle(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, s], [-s, c]])


def path_length(p: Polyline) -> float:
    # exactly rounded sums do not depend on traversal direction
    return math.fsum(np.hypot(*p.segments.T))


def segment_angles(p: Polyline, axes=DEFAULT_AXES) -> np.ndarray:
    """Undirected angle (rad) between each segment and the nearest axis direction."""
    ax = _check_axes(axes)
    seg = p.segments
    comp = np.abs(seg @ ax.T)            # |projection| on each axis
    # atan2 of the perpendicular over the parallel part stays accurate near 0
    return np.minimum(np.arctan2(comp[:, 1], comp[:, 0]), np.arctan2(comp[:, 0], comp[:, 1]))


def ordered_length(p: Polyline, threshold: float = DEFAULT_THRESHOLD,
                   axes=DEFAULT_AXES) -> float:
    """Summed length of segments within ``threshold`` of an axis (inclusive)."""
    if not 0 < threshold < math.pi / 4:
        raise ValueError("threshold must lie in (0, pi/4)")
    lengths = np.hypot(*p.segments.T)
    return math.fsum(lengths[segment_angles(p, axes) <= threshold])


def growth_report(paths: Sequence[Polyline], threshold: float = DEFAULT_THRESHOLD,
                  axes=DEFAULT_AXES) -> GrowthReport:
    if len(paths) == 0:
        raise ValueError("no paths given")
    per = tuple((path_length(p), ordered_length(p, threshold, axes)) for p in paths)
    total = math.fsum(a for a, _ in per)
    ordered = math.fsum(b for _, b in per)
    if total <= 0:
        raise ValueError("all paths are degenerate")
    return GrowthReport(total, ordered, ordered / total, per)


def read_paths_csv(path: str | Path) -> tuple[list[str], list[Polyline]]:
    """Read ``path_id,x_um,y_um`` rows; points keep file order within a path.

    Raises
    ------
    InputError
        With the offending line number for malformed rows or polylines.
    """
    path = Path(path)
    groups: "OrderedDict[str, list]" = OrderedDict()
    first_line: dict[str, int] = {}
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["path_id", "x_um", "y_um"]:
            raise InputError(f"{path}:1: header must be 'path_id,x_um,y_um'")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise InputError(f"{path}:{line}: expected 3 fields, got {len(row)}")
            pid = row[0].strip()
            try:
                x, y = float(row[1]), float(row[2])
            except ValueError:
                raise InputError(f"{path}:{line}: non-numeric coordinate") from None
            if not (math.isfinite(x) and math.isfinite(y)):
                raise InputError(f"{path}:{line}: non-finite coordinate")
            groups.setdefault(pid, []).append((x, y))
            first_line.setdefault(pid, line)
    if not groups:
        raise InputError(f"{path}: no paths")
    polys = []
    for pid, pts in groups.items():
        try:
            polys.append(Polyline(np.array(pts)))
        except ValueError as exc:
            raise InputError(f"{path}:{first_line[pid]}: path {pid!r}: {exc}") from None
    return list(groups), polys


def write_growth_csv(path: str | Path, ids: Sequence[str], report: GrowthReport) -> Path:
    lengths = np.array([a for a, _ in report.per_path])
    ordered = np.array([b for _, b in report.per_path])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path_id", "length_um", "ordered_um"])
        for pid, a, b in zip(ids, lengths, ordered):
            w.writerow([pid, f"{a:.16e}", f"{b:.16e}"])
    return path
