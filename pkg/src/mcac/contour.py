"""Zero level-set extraction by marching squares."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ScalarField2D
from .errors import EmptyContour


@dataclass(frozen=True, eq=False)
class ContourPolyline:
    """Ordered vertices; a closed polyline does not repeat its first point."""

    points: np.ndarray
    closed: bool

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, 2)
        if len(pts) > 1 and np.any(np.all(pts[1:] == pts[:-1], axis=1)):
            raise ValueError("consecutive polyline points must be distinct")
        if self.closed and len(pts) > 1 and np.all(pts[0] == pts[-1]):
            raise ValueError("closed polyline must not repeat its first point")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)

    def segments(self) -> np.ndarray:
        """Segment vectors, including the closing segment when closed."""
        p = self.points
        nxt = np.roll(p, -1, axis=0) if self.closed else p[1:]
        return nxt - (p if self.closed else p[:-1])

    def length(self) -> float:
        return float(np.linalg.norm(self.segments(), axis=1).sum())


# Corner order inside a cell: 0=(x,y) 1=(x+1,y) 2=(x+1,y+1) 3=(x,y+1).
# Edge order: 0=top (0-1), 1=right (1-2), 2=bottom (3-2), 3=left (0-3).
_EDGE_CORNERS = ((0, 1), (1, 2), (3, 2), (0, 3))
_CORNER_OFFSETS = ((0, 0), (1, 0), (1, 1), (0, 1))
# Edges adjacent to each corner, used to cut a corner off in saddle cells.
_CORNER_EDGES = ((0, 3), (0, 1), (1, 2), (2, 3))


def _edge_key(x: int, y: int, e: int, w: int, h: int) -> int:
    # Horizontal edges (x..x+1, row y) first, then vertical edges (column x, y..y+1).
    if e == 0:
        return y * w + x
    if e == 2:
        return (y + 1) * w + x
    if e == 3:
        return h * w + y * w + x
    return h * w + y * w + x + 1


def _crossing(v, x, y, e) -> tuple[float, float]:
    c0, c1 = _EDGE_CORNERS[e]
    f0, f1 = v[c0], v[c1]
    t = f0 / (f0 - f1)
    (ox0, oy0), (ox1, oy1) = _CORNER_OFFSETS[c0], _CORNER_OFFSETS[c1]
    return (x + ox0 + t * (ox1 - ox0), y + oy0 + t * (oy1 - oy0))


def extract_contour(f: ScalarField2D, level: float = 0.0) -> list[ContourPolyline]:
    """Polylines along ``f == level``.

    Crossings are linearly interpolated on cell edges.  Values ``> level`` count
    as positive.  Saddle cells are resolved by the sign of the mean of the four
    corners.  Each polyline is traced until it closes or reaches the border.
    """
    vals = np.asarray(f.values, dtype=float) - level
    h, w = vals.shape
    pos = vals > 0
    case = (pos[:-1, :-1].astype(np.uint8) | (pos[:-1, 1:] << 1)
            | (pos[1:, 1:] << 2) | (pos[1:, :-1] << 3))
    active_y, active_x = np.nonzero((case != 0) & (case != 15))
    if active_y.size == 0:
        raise EmptyContour("field has uniform sign; no zero level set")

    coords: dict[int, tuple[float, float]] = {}
    adj: dict[int, list[int]] = {}

    def link(a, b):
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, []).append(a)

    for y, x in zip(active_y.tolist(), active_x.tolist()):
        v = (vals[y, x], vals[y, x + 1], vals[y + 1, x + 1], vals[y + 1, x])
        s = [vi > 0 for vi in v]
        crossed = [e for e, (a, b) in enumerate(_EDGE_CORNERS) if s[a] != s[b]]
        for e in crossed:
            key = _edge_key(x, y, e, w, h)
            if key not in coords:
                coords[key] = _crossing(v, x, y, e)
        keys = {e: _edge_key(x, y, e, w, h) for e in crossed}
        if len(crossed) == 2:
            link(keys[crossed[0]], keys[crossed[1]])
        else:
            center_pos = sum(v) / 4.0 > 0
            # Corners whose sign differs from the center are isolated.
            for c in range(4):
                if s[c] != center_pos:
                    e0, e1 = _CORNER_EDGES[c]
                    link(keys[e0], keys[e1])

    polylines = []
    seen: set[int] = set()

    def trace(start):
        path = [start]
        seen.add(start)
        cur = start
        while True:
            nxt = next((n for n in adj[cur] if n not in seen), None)
            if nxt is None:
                return path, len(path) > 2 and start in adj[cur]
            path.append(nxt)
            seen.add(nxt)
            cur = nxt

    # Open chains start at border crossings (degree 1).
    for key in sorted(k for k, n in adj.items() if len(n) == 1):
        if key not in seen:
            path, _ = trace(key)
            polylines.append((path, False))
    for key in sorted(adj):
        if key not in seen:
            polylines.append(trace(key))

    out = []
    for path, closed in polylines:
        pts = np.array([coords[k] for k in path])
        keep = np.ones(len(pts), dtype=bool)
        keep[1:] = np.any(pts[1:] != pts[:-1], axis=1)
        pts = pts[keep]
        if closed and len(pts) > 1 and np.all(pts[0] == pts[-1]):
            pts = pts[:-1]
        if len(pts) >= 2:
            out.append(ContourPolyline(pts, closed and len(pts) > 2))
    if not out:
        raise EmptyContour("zero level set degenerates to isolated points")
    return out


def all_vertices(contours) -> np.ndarray:
    if isinstance(contours, ContourPolyline):
        return contours.points
    return np.concatenate([c.points for c in contours], axis=0)


def write_contours_csv(path, contours) -> None:
    with open(Path(path), "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["x", "y", "polyline_id", "closed"])
        for pid, c in enumerate(contours):
            for x, y in c.points.tolist():
                wr.writerow([f"{x:.6f}", f"{y:.6f}", pid, int(c.closed)])


def read_contours_csv(path) -> list[ContourPolyline]:
    groups: dict[int, tuple[list, bool]] = {}
    with open(Path(path), newline="") as fh:
        for row in csv.DictReader(fh):
            pid = int(row["polyline_id"])
            pts, _ = groups.setdefault(pid, ([], bool(int(row["closed"]))))
            pts.append((float(row["x"]), float(row["y"])))
    return [ContourPolyline(np.array(p), c) for _, (p, c) in sorted(groups.items())]
